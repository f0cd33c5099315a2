#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mmfuse/metrics.hpp"
#include "mmfuse/rng.hpp"

using namespace mmfuse;

namespace {

// Oracle AUC over a flat binary pool: every (positive, negative) pair scores
// 1 for a win, 0.5 for a tie. O(P*N), no ranks involved.
double pairwise_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    double wins = 0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        pos += 1;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    for (std::uint8_t l : labels) neg += l ? 0 : 1;
    return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

// Oracle average precision: rank of an entry = 1 + count of entries that sort
// strictly before it under (score desc, index asc). O(n^2) by direct counting.
double counting_ap(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    const std::size_t n = scores.size();
    double precision_sum = 0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!labels[i]) continue;
        positives += 1;
        std::size_t rank = 1, pos_at_or_before = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const bool before = scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
            if (before) {
                rank += 1;
                if (labels[j]) pos_at_or_before += 1;
            }
        }
        pos_at_or_before += 1;  // the entry itself
        precision_sum += static_cast<double>(pos_at_or_before) / static_cast<double>(rank);
    }
    return precision_sum / static_cast<double>(positives);
}

// Random multilabel instance with deliberate score ties (quarter grid).
Predictions random_multilabel(std::uint64_t seed, std::size_t n, std::size_t k) {
    Predictions p;
    p.n = n;
    p.k = k;
    p.kind = LabelKind::multilabel;
    SplitMix64 g(seed);
    p.scores.resize(n * k);
    p.hot.resize(n * k);
    for (auto& s : p.scores) s = static_cast<double>(uniform_below(g, 5)) / 4.0;
    for (auto& h : p.hot) h = static_cast<std::uint8_t>(uniform_below(g, 2));
    return p;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("argmax picks the first maximum") {
    Predictions p;
    p.n = 3;
    p.k = 4;
    p.kind = LabelKind::multiclass;
    p.scores = {0.1, 0.7, 0.7, 0.1,
                0.4, 0.4, 0.4, 0.4,
                0.0, 0.1, 0.2, 0.9};
    p.cls = {1, 0, 3};
    CHECK(argmax_row(p, 0) == 1);
    CHECK(argmax_row(p, 1) == 0);
    CHECK(argmax_row(p, 2) == 3);
    CHECK(accuracy(p) == 1.0);
}

TEST_CASE("binary accuracy thresholds at 0.5, boundary counts as positive") {
    Predictions p;
    p.n = 4;
    p.k = 1;
    p.kind = LabelKind::binary;
    p.scores = {0.5, 0.49999, 0.9, 0.1};
    p.cls = {1, 0, 0, 0};
    // predictions: 1, 0, 1, 0 -> 3 of 4 right
    CHECK(accuracy(p) == doctest::Approx(0.75));
}

TEST_CASE("accuracy rejects multilabel and empty input") {
    Predictions p;
    p.kind = LabelKind::multilabel;
    p.n = 2;
    p.k = 2;
    p.scores = {0.1, 0.2, 0.3, 0.4};
    p.hot = {0, 1, 1, 0};
    CHECK_THROWS_AS(accuracy(p), SpecError);

    Predictions empty;
    empty.kind = LabelKind::multiclass;
    empty.k = 3;
    CHECK_THROWS_AS(accuracy(empty), UndefinedMetric);
}

TEST_CASE("per-class accuracy reports nullopt for unseen classes") {
    Predictions p;
    p.n = 4;
    p.k = 3;
    p.kind = LabelKind::multiclass;
    p.scores = {0.9, 0.05, 0.05,
                0.8, 0.1, 0.1,
                0.2, 0.7, 0.1,
                0.3, 0.6, 0.1};
    p.cls = {0, 1, 1, 0};
    const auto per = per_class_accuracy(p);
    REQUIRE(per.size() == 3);
    CHECK(*per[0] == doctest::Approx(0.5));  // items 0 (right) and 3 (wrong)
    CHECK(*per[1] == doctest::Approx(0.5));  // items 1 (wrong) and 2 (right)
    CHECK(!per[2].has_value());              // class 2 never appears
}

TEST_CASE("micro AUC matches the pairwise oracle, ties included") {
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        SplitMix64 g(seed);
        const std::size_t n = 1 + uniform_below(g, 25);
        const std::size_t k = 1 + uniform_below(g, 20);
        Predictions p = random_multilabel(seed * 31 + 7, n, k);
        const bool has_pos = std::find(p.hot.begin(), p.hot.end(), 1) != p.hot.end();
        const bool has_neg = std::find(p.hot.begin(), p.hot.end(), 0) != p.hot.end();
        CAPTURE(seed);
        if (!has_pos || !has_neg) {
            CHECK_THROWS_AS(micro_auc(p), UndefinedMetric);
            continue;
        }
        std::vector<std::uint8_t> labels(p.hot.begin(), p.hot.end());
        REQUIRE(micro_auc(p) == doctest::Approx(pairwise_auc(p.scores, labels)).epsilon(1e-12));
    }
}

TEST_CASE("micro AUC midrank handling on a hand case") {
    // scores: pos {0.5, 0.5}, neg {0.5, 0.2}. Pairs: (p1,n1) tie 0.5,
    // (p1,n2) win, (p2,n1) tie 0.5, (p2,n2) win -> (0.5+1+0.5+1)/4 = 0.75.
    Predictions p;
    p.n = 4;
    p.k = 1;
    p.kind = LabelKind::multilabel;
    p.scores = {0.5, 0.5, 0.5, 0.2};
    p.hot = {1, 0, 1, 0};
    CHECK(micro_auc(p) == doctest::Approx(0.75));
}

TEST_CASE("micro mAP matches the counting oracle, ties ranked by index") {
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        SplitMix64 g(seed ^ 0xabcdef);
        const std::size_t n = 1 + uniform_below(g, 25);
        const std::size_t k = 1 + uniform_below(g, 20);
        Predictions p = random_multilabel(seed * 97 + 3, n, k);
        const bool has_pos = std::find(p.hot.begin(), p.hot.end(), 1) != p.hot.end();
        CAPTURE(seed);
        if (!has_pos) {
            CHECK_THROWS_AS(micro_map(p), UndefinedMetric);
            continue;
        }
        std::vector<std::uint8_t> labels(p.hot.begin(), p.hot.end());
        REQUIRE(micro_map(p) == doctest::Approx(counting_ap(p.scores, labels)).epsilon(1e-12));
    }
}

TEST_CASE("micro mAP hand case") {
    // Ranking by (score desc, index asc): idx2(0.9,+), idx0(0.7,+),
    // idx3(0.7,-), idx1(0.1,+). Precisions at positives: 1/1, 2/2, 3/4.
    Predictions p;
    p.n = 4;
    p.k = 1;
    p.kind = LabelKind::multilabel;
    p.scores = {0.7, 0.1, 0.9, 0.7};
    p.hot = {1, 1, 1, 0};
    CHECK(micro_map(p) == doctest::Approx((1.0 + 1.0 + 0.75) / 3.0));
}

TEST_CASE("micro AUC refuses multiclass predictions") {
    Predictions p;
    p.n = 2;
    p.k = 2;
    p.kind = LabelKind::multiclass;
    p.scores = {0.6, 0.4, 0.3, 0.7};
    p.cls = {0, 1};
    CHECK_THROWS_AS(micro_auc(p), SpecError);
}

TEST_CASE("mcc matches direct confusion-matrix computation") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        SplitMix64 g(seed * 13);
        const std::size_t n = 2 + uniform_below(g, 40);
        Predictions p;
        p.n = n;
        p.k = 1;
        p.kind = LabelKind::binary;
        for (std::size_t i = 0; i < n; ++i) {
            p.scores.push_back(static_cast<double>(uniform_below(g, 5)) / 4.0);
            p.cls.push_back(static_cast<int>(uniform_below(g, 2)));
        }
        double tp = 0, tn = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool pred = p.scores[i] >= 0.5;
            if (pred && p.cls[i] == 1) tp += 1;
            else if (pred && p.cls[i] == 0) fp += 1;
            else if (!pred && p.cls[i] == 1) fn += 1;
            else tn += 1;
        }
        const double denom =
            std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
        const double expected = denom == 0 ? 0.0 : (tp * tn - fp * fn) / denom;
        CAPTURE(seed);
        REQUIRE(mcc(p) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("mcc is 0 when a confusion marginal is empty") {
    Predictions p;
    p.n = 3;
    p.k = 1;
    p.kind = LabelKind::binary;
    p.scores = {0.9, 0.8, 0.7};  // everything predicted positive
    p.cls = {1, 1, 0};
    CHECK(mcc(p) == 0.0);
}

TEST_CASE("mcc respects a custom threshold") {
    Predictions p;
    p.n = 4;
    p.k = 1;
    p.kind = LabelKind::binary;
    p.scores = {0.9, 0.8, 0.3, 0.2};
    p.cls = {1, 1, 0, 0};
    CHECK(mcc(p, 0.5) == doctest::Approx(1.0));
    CHECK(mcc(p, 0.85) != doctest::Approx(1.0));  // 0.8 flips to negative
}

TEST_CASE("prediction shape checks fire") {
    Predictions p;
    p.n = 2;
    p.k = 2;
    p.kind = LabelKind::multiclass;
    p.scores = {0.1, 0.2, 0.3};  // one short
    p.cls = {0, 1};
    CHECK_THROWS_AS(p.check(), DimError);

    p.scores = {0.1, 0.2, 0.3, std::nan("")};
    CHECK_THROWS_AS(p.check(), NonFiniteError);

    p.scores = {0.1, 0.2, 0.3, 0.4};
    p.cls = {0, 2};  // label out of range
    CHECK_THROWS_AS(p.check(), SpecError);
}

}  // TEST_SUITE
