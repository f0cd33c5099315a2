#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "mmfuse/rng.hpp"
#include "mmfuse/sketch.hpp"

using namespace mmfuse;

namespace {

// Planted pair with a known angle: u along e0, v rotated by theta in the
// (e0, e1) plane. Extra coordinates are zero and do not change the angle.
std::pair<std::vector<double>, std::vector<double>> planted_pair(double theta, std::size_t dim) {
    std::vector<double> u(dim, 0.0), v(dim, 0.0);
    u[0] = 1.0;
    v[0] = std::cos(theta);
    v[1] = std::sin(theta);
    return {u, v};
}

double bit_match_fraction(const BinarySketch& a, const BinarySketch& b) {
    std::size_t matches = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) matches += a.data[i] == b.data[i] ? 1 : 0;
    return static_cast<double>(matches) / static_cast<double>(a.data.size());
}

}  // namespace

TEST_SUITE("sketch") {

TEST_CASE("spec validation") {
    const SketchSpec zero_depth{0, 8, 1}, zero_width{4, 0, 1}, width_one{4, 1, 1},
        not_pow2{4, 12, 1}, w16{4, 16, 1}, w2{4, 2, 1};
    CHECK_THROWS_AS(zero_depth.validate(), SpecError);
    CHECK_THROWS_AS(zero_width.validate(), SpecError);
    CHECK_THROWS_AS(width_one.validate(), SpecError);
    CHECK_THROWS_AS(not_pow2.validate(), SpecError);
    CHECK(w16.bits_per_row() == 4);
    CHECK(w2.bits_per_row() == 1);
}

TEST_CASE("bank generation is deterministic and seed-sensitive") {
    const SketchSpec spec{6, 8, 42};
    const HyperplaneBank a = build_bank(spec, 5);
    const HyperplaneBank b = build_bank(spec, 5);
    CHECK(a.coefficients() == b.coefficients());

    const HyperplaneBank c = build_bank(SketchSpec{6, 8, 43}, 5);
    CHECK(a.coefficients() != c.coefficients());

    // Counter addressing: a wider bank embeds the narrow bank's coefficients
    // for shared (row, bit, coord) triples.
    const HyperplaneBank wide = build_bank(SketchSpec{7, 8, 42}, 5);
    for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t j = 0; j < 3; ++j) {
            const auto na = a.normal(r, j);
            const auto nw = wide.normal(r, j);
            for (std::size_t k = 0; k < 5; ++k) REQUIRE(na[k] == nw[k]);
        }
    }
}

TEST_CASE("hand-built hyperplanes: sign rule, tie handling, MSB bucket order") {
    // depth 1, width 4 (2 bits), input_dim 1.
    // bit 0 hyperplane: +1  -> x=1 gives dot +1 -> bit 1 (MSB)
    // bit 1 hyperplane: -1  -> x=1 gives dot -1 -> bit 0
    const SketchSpec spec{1, 4, 0};
    const HyperplaneBank bank(spec, 1, {1.0, -1.0});

    const std::vector<double> x{1.0};
    const BinarySketch bs = sketch_binary(bank, x);
    CHECK(bs.bit(0, 0) == 1);
    CHECK(bs.bit(0, 1) == 0);
    CHECK(classical_from_binary(bs).buckets[0] == 2);  // binary 10

    // Zero dot product counts as 1: use a hyperplane orthogonal to the input.
    const HyperplaneBank tie_bank(spec, 2, {0.0, 1.0, 1.0, 0.0});
    const BinarySketch tie = sketch_binary(tie_bank, std::vector<double>{1.0, 0.0});
    CHECK(tie.bit(0, 0) == 1);  // dot exactly 0
    CHECK(tie.bit(0, 1) == 1);  // dot +1
}

TEST_CASE("sketching rejects bad inputs") {
    const HyperplaneBank bank(SketchSpec{4, 8, 1}, 6);
    CHECK_THROWS_AS(sketch_binary(bank, std::vector<double>{1.0, 2.0}), DimError);
    CHECK_THROWS_AS(sketch_binary(bank, std::vector<double>(6, 0.0)), MissingInput);
}

TEST_CASE("sketches are invariant to positive scaling") {
    const HyperplaneBank bank(SketchSpec{16, 8, 9}, 12);
    SplitMix64 g(4);
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        std::vector<double> x(12);
        for (std::size_t c = 0; c < x.size(); ++c) x[c] = normal_at(stream_key(5, {trial}), c);
        const double alpha = g.next_unit() * 10 + 1e-3;
        std::vector<double> xs = x;
        for (auto& v : xs) v *= alpha;
        CAPTURE(trial);
        REQUIRE(sketch_binary(bank, x).data == sketch_binary(bank, xs).data);
    }
}

TEST_CASE("bit collision rate follows the angle law") {
    // P(bits agree) = 1 - theta/pi. 20 banks x 200 rows x 1 bit = 4000
    // Bernoulli draws; 0.03 is about four standard deviations.
    for (double theta : {0.4, 1.0, 1.8, 2.6}) {
        const auto [u, v] = planted_pair(theta, 8);
        double matches = 0, total = 0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const HyperplaneBank bank(SketchSpec{200, 2, seed}, 8);
            const BinarySketch su = sketch_binary(bank, u);
            const BinarySketch sv = sketch_binary(bank, v);
            matches += bit_match_fraction(su, sv) * static_cast<double>(su.data.size());
            total += static_cast<double>(su.data.size());
        }
        const double expected = 1.0 - theta / std::numbers::pi;
        CAPTURE(theta);
        CHECK(std::abs(matches / total - expected) < 0.03);
    }
}

TEST_CASE("estimate_angle inverts the collision law") {
    const double theta = 1.1;
    const auto [u, v] = planted_pair(theta, 8);
    const HyperplaneBank bank(SketchSpec{5000, 4, 3}, 8);  // 10000 bits
    const double est = estimate_angle(sketch_binary(bank, u), sketch_binary(bank, v));
    CHECK(std::abs(est - theta) < 0.05);

    // Identical inputs give angle exactly 0.
    CHECK(estimate_angle(sketch_binary(bank, u), sketch_binary(bank, u)) == 0.0);

    BinarySketch other = sketch_binary(HyperplaneBank(SketchSpec{5000, 4, 4}, 8), u);
    CHECK_THROWS_AS(estimate_angle(sketch_binary(bank, u), other), MixedBank);
}

TEST_CASE("classical one-hot rows and aggregation counts") {
    const SketchSpec spec{10, 16, 21};
    const HyperplaneBank bank(spec, 7);

    std::vector<ClassicalSketch> sketches;
    for (std::uint64_t i = 0; i < 33; ++i) {
        std::vector<double> x(7);
        for (std::size_t c = 0; c < x.size(); ++c) x[c] = normal_at(stream_key(60, {i}), c);
        sketches.push_back(sketch_classical(bank, x));
        const SketchMatrix onehot = materialize_onehot(sketches.back());
        for (std::size_t r = 0; r < onehot.rows; ++r) {
            double sum = 0;
            for (std::size_t c = 0; c < onehot.cols; ++c) sum += onehot.at(r, c);
            REQUIRE(sum == 1.0);
        }
    }

    const CountSketch agg = aggregate(sketches);
    CHECK(agg.n_items == 33);
    for (std::size_t r = 0; r < spec.depth; ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < spec.width; ++c) sum += agg.counts[r * spec.width + c];
        REQUIRE(sum == 33.0);  // every sketch lands in exactly one bucket per row
    }

    // Aggregation is a plain sum: splitting the list and adding matches.
    const std::span<const ClassicalSketch> all(sketches);
    const CountSketch left = aggregate(all.subspan(0, 20));
    const CountSketch right = aggregate(all.subspan(20));
    for (std::size_t i = 0; i < agg.counts.size(); ++i) {
        REQUIRE(agg.counts[i] == left.counts[i] + right.counts[i]);
    }

    ClassicalSketch foreign = sketches.front();
    foreign.spec.seed += 1;
    std::vector<ClassicalSketch> mixed{sketches.front(), foreign};
    CHECK_THROWS_AS(aggregate(mixed), MixedBank);
    CHECK_THROWS_AS(aggregate(std::span<const ClassicalSketch>{}), MissingInput);
}

TEST_CASE("binary aggregation sums bit matrices") {
    const HyperplaneBank bank(SketchSpec{6, 8, 2}, 5);
    std::vector<BinarySketch> sketches;
    for (std::uint64_t i = 0; i < 9; ++i) {
        std::vector<double> x(5);
        for (std::size_t c = 0; c < x.size(); ++c) x[c] = normal_at(stream_key(61, {i}), c);
        sketches.push_back(sketch_binary(bank, x));
    }
    const SketchMatrix sum = aggregate_binary(sketches);
    CHECK(sum.rows == 6);
    CHECK(sum.cols == 3);
    for (std::size_t r = 0; r < sum.rows; ++r) {
        for (std::size_t c = 0; c < sum.cols; ++c) {
            double expect = 0;
            for (const auto& s : sketches) expect += s.bit(r, c);
            REQUIRE(sum.at(r, c) == expect);
        }
    }
}

TEST_CASE("row normalization produces unit rows and keeps zero rows zero") {
    SketchMatrix m;
    m.rows = 3;
    m.cols = 4;
    m.values = {3, 4, 0, 0,
                0, 0, 0, 0,
                1, 1, 1, 1};
    const SketchMatrix n = normalize_rows(m);
    CHECK(n.at(0, 0) == doctest::Approx(0.6));
    CHECK(n.at(0, 1) == doctest::Approx(0.8));
    for (std::size_t c = 0; c < 4; ++c) CHECK(n.at(1, c) == 0.0);
    for (std::size_t c = 0; c < 4; ++c) CHECK(n.at(2, c) == doctest::Approx(0.5));

    // Count sketches always normalize to unit rows (no row can be zero).
    const HyperplaneBank bank(SketchSpec{5, 4, 11}, 4);
    std::vector<ClassicalSketch> sketches;
    for (std::uint64_t i = 0; i < 12; ++i) {
        std::vector<double> x(4);
        for (std::size_t c = 0; c < x.size(); ++c) x[c] = normal_at(stream_key(62, {i}), c);
        sketches.push_back(sketch_classical(bank, x));
    }
    const SketchMatrix normed = normalize_widthwise(aggregate(sketches));
    for (std::size_t r = 0; r < normed.rows; ++r) {
        double norm2 = 0;
        for (std::size_t c = 0; c < normed.cols; ++c) norm2 += normed.at(r, c) * normed.at(r, c);
        REQUIRE(norm2 == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("flatten preserves row-major order") {
    SketchMatrix m;
    m.rows = 2;
    m.cols = 3;
    m.values = {1, 2, 3, 4, 5, 6};
    CHECK(flatten(m) == std::vector<double>{1, 2, 3, 4, 5, 6});

    BinarySketch b;
    b.spec = SketchSpec{2, 4, 0};
    b.depth = 2;
    b.bits = 2;
    b.data = {1, 0, 0, 1};
    CHECK(flatten(b) == std::vector<double>{1.0, 0.0, 0.0, 1.0});
}

TEST_CASE("bank round trip is bitwise") {
    const HyperplaneBank bank(SketchSpec{4, 8, 77}, 9);
    std::stringstream ss;
    save_bank(ss, bank);
    const HyperplaneBank back = load_bank(ss);
    CHECK(back.spec() == bank.spec());
    CHECK(back.input_dim() == bank.input_dim());
    CHECK(back.coefficients() == bank.coefficients());
}

TEST_CASE("sketch dumps round trip, binary bits packed LSB-first") {
    BinarySketch b;
    b.spec = SketchSpec{2, 32, 0};
    b.depth = 2;
    b.bits = 5;
    b.data = {1, 0, 1, 1, 0, 0, 1, 0, 1, 1};
    std::stringstream ss;
    save_sketch(ss, b);
    const std::string bytes = ss.str();
    // 4 magic + 1 kind + 4 depth + 4 bits + ceil(10/8) payload
    REQUIRE(bytes.size() == 15);
    CHECK(static_cast<unsigned char>(bytes[13]) == 0b01001101);  // bits 0..7, LSB first
    CHECK(static_cast<unsigned char>(bytes[14]) == 0b00000011);  // bits 8..9

    const AnySketch loaded = load_sketch(ss);
    const auto& lb = std::get<BinarySketch>(loaded);
    CHECK(lb.depth == b.depth);
    CHECK(lb.bits == b.bits);
    CHECK(lb.data == b.data);
    CHECK(lb.spec.width == 32);
    CHECK(lb.spec.seed == 0);  // dumps carry geometry only

    ClassicalSketch c;
    c.spec = SketchSpec{3, 8, 0};
    c.buckets = {7, 0, 5};
    std::stringstream cs;
    save_sketch(cs, c);
    const AnySketch cl = load_sketch(cs);
    CHECK(std::get<ClassicalSketch>(cl).buckets == c.buckets);

    CountSketch k;
    k.spec = SketchSpec{2, 2, 0};
    k.n_items = 5;
    k.counts = {3, 2, 0, 5};
    std::stringstream ks;
    save_sketch(ks, k);
    const AnySketch kl = load_sketch(ks);
    CHECK(std::get<CountSketch>(kl).n_items == 5);
    CHECK(std::get<CountSketch>(kl).counts == k.counts);
}

TEST_CASE("binary dumps are far smaller than count dumps") {
    const SketchSpec spec{128, 512, 1};
    const HyperplaneBank bank(spec, 16);
    std::vector<double> x(16);
    for (std::size_t c = 0; c < x.size(); ++c) x[c] = normal_at(stream_key(63, {1}), c);

    const BinarySketch b = sketch_binary(bank, x);
    CountSketch k = aggregate(std::vector<ClassicalSketch>{classical_from_binary(b)});

    std::stringstream bs, ks;
    save_sketch(bs, b);
    save_sketch(ks, k);
    CHECK(ks.str().size() >= 50 * bs.str().size());
}

TEST_CASE("corrupt streams are rejected") {
    std::stringstream bad("NOPE");
    CHECK_THROWS_AS(load_sketch(bad), FormatError);

    std::stringstream truncated;
    BinarySketch b;
    b.spec = SketchSpec{4, 4, 0};
    b.depth = 4;
    b.bits = 2;
    b.data.assign(8, 1);
    save_sketch(truncated, b);
    std::string body = truncated.str();
    body.resize(body.size() - 1);
    std::stringstream cut(body);
    CHECK_THROWS_AS(load_sketch(cut), FormatError);

    // Classical dump with a bucket outside the advertised width.
    ClassicalSketch c;
    c.spec = SketchSpec{1, 4, 0};
    c.buckets = {3};
    std::stringstream cs;
    save_sketch(cs, c);
    std::string raw = cs.str();
    raw[raw.size() - 4] = 9;  // little-endian low byte of the bucket
    std::stringstream evil(raw);
    CHECK_THROWS_AS(load_sketch(evil), FormatError);
}

}  // TEST_SUITE
