#include "mmfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmfuse {

void Predictions::check() const {
    if (k == 0) throw SpecError("predictions need at least one score column");
    if (scores.size() != n * k) throw DimError(-1, scores.size(), n * k);
    for (double s : scores) {
        if (!std::isfinite(s)) throw NonFiniteError("non-finite score in predictions");
    }
    switch (kind) {
        case LabelKind::multiclass:
            if (cls.size() != n) throw DimError(-1, cls.size(), n);
            for (std::size_t i = 0; i < n; ++i) {
                if (cls[i] < 0 || static_cast<std::size_t>(cls[i]) >= k) {
                    throw SpecError("multiclass label out of range at row " + std::to_string(i));
                }
            }
            break;
        case LabelKind::binary:
            if (k != 1) throw DimError(-1, k, 1);
            if (cls.size() != n) throw DimError(-1, cls.size(), n);
            for (std::size_t i = 0; i < n; ++i) {
                if (cls[i] != 0 && cls[i] != 1) {
                    throw SpecError("binary label must be 0/1 at row " + std::to_string(i));
                }
            }
            break;
        case LabelKind::multilabel:
            if (hot.size() != n * k) throw DimError(-1, hot.size(), n * k);
            for (std::size_t i = 0; i < hot.size(); ++i) {
                if (hot[i] > 1) throw SpecError("multilabel ground truth must be 0/1");
            }
            break;
    }
}

std::size_t argmax_row(const Predictions& pred, std::size_t i) {
    std::size_t best = 0;
    double best_score = pred.score(i, 0);
    for (std::size_t j = 1; j < pred.k; ++j) {
        const double s = pred.score(i, j);
        if (s > best_score) {  // strict: ties keep the lowest index
            best_score = s;
            best = j;
        }
    }
    return best;
}

double accuracy(const Predictions& pred) {
    pred.check();
    if (pred.n == 0) throw UndefinedMetric("accuracy over zero rows");
    if (pred.kind == LabelKind::multilabel) {
        throw SpecError("accuracy needs one-of-K or binary labels");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.n; ++i) {
        const int predicted = pred.kind == LabelKind::binary
                                  ? (pred.score(i, 0) >= 0.5 ? 1 : 0)
                                  : static_cast<int>(argmax_row(pred, i));
        if (predicted == pred.cls[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(pred.n);
}

std::vector<std::optional<double>> per_class_accuracy(const Predictions& pred) {
    pred.check();
    if (pred.kind == LabelKind::multilabel) {
        throw SpecError("per-class accuracy needs one-of-K or binary labels");
    }
    const std::size_t classes = pred.kind == LabelKind::binary ? 2 : pred.k;
    std::vector<std::size_t> total(classes, 0), correct(classes, 0);
    for (std::size_t i = 0; i < pred.n; ++i) {
        const auto label = static_cast<std::size_t>(pred.cls[i]);
        const int predicted = pred.kind == LabelKind::binary
                                  ? (pred.score(i, 0) >= 0.5 ? 1 : 0)
                                  : static_cast<int>(argmax_row(pred, i));
        ++total[label];
        if (static_cast<std::size_t>(predicted) == label) ++correct[label];
    }
    std::vector<std::optional<double>> out(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        if (total[c] > 0) {
            out[c] = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
        }
    }
    return out;
}

namespace {

// Flattens (row, label) cells into one binary scoring problem, preserving
// row-major order so tie handling is reproducible.
struct FlatPool {
    std::vector<double> score;
    std::vector<std::uint8_t> truth;
};

FlatPool flatten_pool(const Predictions& pred) {
    pred.check();
    FlatPool pool;
    switch (pred.kind) {
        case LabelKind::multilabel:
            pool.score = pred.scores;
            pool.truth = pred.hot;
            break;
        case LabelKind::binary:
            pool.score = pred.scores;
            pool.truth.resize(pred.n);
            for (std::size_t i = 0; i < pred.n; ++i) {
                pool.truth[i] = static_cast<std::uint8_t>(pred.cls[i]);
            }
            break;
        case LabelKind::multiclass:
            throw SpecError("micro-averaged ranking metrics need per-label binary ground truth");
    }
    return pool;
}

}  // namespace

double micro_auc(const Predictions& pred) {
    const FlatPool pool = flatten_pool(pred);
    const std::size_t m = pool.score.size();

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pool.score[a] < pool.score[b];
    });

    double positives = 0, negatives = 0, rank_sum_pos = 0;
    std::size_t i = 0;
    while (i < m) {
        std::size_t j = i;
        while (j < m && pool.score[order[j]] == pool.score[order[i]]) ++j;
        // 1-based ranks i+1 .. j share the midrank.
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t) {
            if (pool.truth[order[t]]) rank_sum_pos += midrank;
        }
        i = j;
    }
    for (std::size_t t = 0; t < m; ++t) {
        (pool.truth[t] ? positives : negatives) += 1.0;
    }
    if (positives == 0 || negatives == 0) {
        throw UndefinedMetric("micro AUC needs both positives and negatives");
    }
    return (rank_sum_pos - positives * (positives + 1) / 2.0) / (positives * negatives);
}

double micro_map(const Predictions& pred) {
    const FlatPool pool = flatten_pool(pred);
    const std::size_t m = pool.score.size();

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    // Descending score; equal scores keep ascending original index.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pool.score[a] > pool.score[b];
    });

    double positives_seen = 0, precision_sum = 0;
    for (std::size_t r = 0; r < m; ++r) {
        if (pool.truth[order[r]]) {
            positives_seen += 1.0;
            precision_sum += positives_seen / static_cast<double>(r + 1);
        }
    }
    if (positives_seen == 0) {
        throw UndefinedMetric("micro mAP needs at least one positive");
    }
    return precision_sum / positives_seen;
}

double mcc(const Predictions& pred, double threshold) {
    pred.check();
    if (pred.kind != LabelKind::binary) {
        throw SpecError("MCC is defined for binary predictions");
    }
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.n; ++i) {
        const bool predicted = pred.score(i, 0) >= threshold;
        const bool actual = pred.cls[i] == 1;
        if (predicted && actual) ++tp;
        else if (predicted && !actual) ++fp;
        else if (!predicted && actual) ++fn;
        else ++tn;
    }
    const double denom2 = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom2 == 0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(denom2);
}

}  // namespace mmfuse
