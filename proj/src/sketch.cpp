#include "mmfuse/sketch.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mmfuse/binio.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

namespace {
constexpr std::uint64_t kBankStream = 0x68706c6e;  // hyperplane coefficient streams
}

std::size_t SketchSpec::bits_per_row() const {
    validate();
    return static_cast<std::size_t>(std::countr_zero(width));
}

void SketchSpec::validate() const {
    if (depth == 0) throw SpecError("sketch depth must be positive");
    if (width < 2 || !std::has_single_bit(width)) {
        throw SpecError("sketch width must be a power of two >= 2, got " + std::to_string(width));
    }
}

HyperplaneBank::HyperplaneBank(const SketchSpec& spec, std::size_t input_dim)
    : spec_(spec), input_dim_(input_dim), bits_(spec.bits_per_row()) {
    if (input_dim == 0) throw SpecError("hyperplane bank needs a positive input dimension");
    coeffs_.resize(spec_.depth * bits_ * input_dim_);
    std::size_t at = 0;
    for (std::size_t r = 0; r < spec_.depth; ++r) {
        for (std::size_t j = 0; j < bits_; ++j) {
            for (std::size_t c = 0; c < input_dim_; ++c) {
                coeffs_[at++] = normal_at(stream_key(spec_.seed, {kBankStream, r, j, c}), 0);
            }
        }
    }
}

HyperplaneBank::HyperplaneBank(const SketchSpec& spec, std::size_t input_dim,
                               std::vector<double> coefficients)
    : spec_(spec), input_dim_(input_dim), bits_(spec.bits_per_row()), coeffs_(std::move(coefficients)) {
    if (input_dim == 0) throw SpecError("hyperplane bank needs a positive input dimension");
    const std::size_t want = spec_.depth * bits_ * input_dim_;
    if (coeffs_.size() != want) throw DimError(-1, coeffs_.size(), want);
}

std::span<const double> HyperplaneBank::normal(std::size_t row, std::size_t bit) const {
    return {coeffs_.data() + (row * bits_ + bit) * input_dim_, input_dim_};
}

HyperplaneBank build_bank(const SketchSpec& spec, std::size_t input_dim) {
    return HyperplaneBank(spec, input_dim);
}

BinarySketch sketch_binary(const HyperplaneBank& bank, std::span<const double> vec) {
    if (vec.size() != bank.input_dim()) throw DimError(-1, vec.size(), bank.input_dim());
    bool all_zero = true;
    for (double v : vec) {
        if (v != 0.0) {
            all_zero = false;
            break;
        }
    }
    if (all_zero) throw MissingInput("cannot sketch an all-zero vector");

    BinarySketch out;
    out.spec = bank.spec();
    out.depth = bank.spec().depth;
    out.bits = bank.bits();
    out.data.resize(out.depth * out.bits);
    for (std::size_t r = 0; r < out.depth; ++r) {
        for (std::size_t j = 0; j < out.bits; ++j) {
            const auto h = bank.normal(r, j);
            double dot = 0;
            for (std::size_t c = 0; c < vec.size(); ++c) dot += h[c] * vec[c];
            out.data[r * out.bits + j] = dot >= 0 ? 1 : 0;  // tie lands on 1
        }
    }
    return out;
}

ClassicalSketch classical_from_binary(const BinarySketch& sketch) {
    ClassicalSketch out;
    out.spec = sketch.spec;
    out.buckets.resize(sketch.depth);
    for (std::size_t r = 0; r < sketch.depth; ++r) {
        std::uint32_t bucket = 0;
        for (std::size_t j = 0; j < sketch.bits; ++j) {
            bucket = (bucket << 1) | sketch.bit(r, j);  // first hyperplane is the MSB
        }
        out.buckets[r] = bucket;
    }
    return out;
}

ClassicalSketch sketch_classical(const HyperplaneBank& bank, std::span<const double> vec) {
    return classical_from_binary(sketch_binary(bank, vec));
}

CountSketch aggregate(std::span<const ClassicalSketch> sketches) {
    if (sketches.empty()) throw MissingInput("aggregate needs at least one sketch");
    const SketchSpec& spec = sketches.front().spec;
    CountSketch out;
    out.spec = spec;
    out.n_items = sketches.size();
    out.counts.assign(spec.depth * spec.width, 0.0);
    for (const auto& s : sketches) {
        if (!(s.spec == spec)) throw MixedBank("aggregating sketches from different banks");
        for (std::size_t r = 0; r < spec.depth; ++r) {
            out.counts[r * spec.width + s.buckets[r]] += 1.0;
        }
    }
    return out;
}

SketchMatrix aggregate_binary(std::span<const BinarySketch> sketches) {
    if (sketches.empty()) throw MissingInput("aggregate needs at least one sketch");
    const SketchSpec& spec = sketches.front().spec;
    SketchMatrix out;
    out.rows = sketches.front().depth;
    out.cols = sketches.front().bits;
    out.values.assign(out.rows * out.cols, 0.0);
    for (const auto& s : sketches) {
        if (!(s.spec == spec)) throw MixedBank("aggregating sketches from different banks");
        for (std::size_t i = 0; i < s.data.size(); ++i) out.values[i] += s.data[i];
    }
    return out;
}

SketchMatrix materialize_onehot(const ClassicalSketch& sketch) {
    SketchMatrix out;
    out.rows = sketch.spec.depth;
    out.cols = sketch.spec.width;
    out.values.assign(out.rows * out.cols, 0.0);
    for (std::size_t r = 0; r < out.rows; ++r) {
        out.values[r * out.cols + sketch.buckets[r]] = 1.0;
    }
    return out;
}

SketchMatrix counts_matrix(const CountSketch& sketch) {
    SketchMatrix out;
    out.rows = sketch.spec.depth;
    out.cols = sketch.spec.width;
    out.values = sketch.counts;
    return out;
}

SketchMatrix normalize_rows(SketchMatrix m) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        double norm2 = 0;
        for (std::size_t c = 0; c < m.cols; ++c) {
            const double v = m.at(r, c);
            norm2 += v * v;
        }
        if (norm2 > 0) {
            const double inv = 1.0 / std::sqrt(norm2);
            for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) *= inv;
        }
    }
    return m;
}

SketchMatrix normalize_widthwise(const CountSketch& sketch) {
    return normalize_rows(counts_matrix(sketch));
}

std::vector<double> flatten(const SketchMatrix& m) {
    return m.values;
}

std::vector<double> flatten(const BinarySketch& sketch) {
    std::vector<double> out(sketch.data.size());
    for (std::size_t i = 0; i < sketch.data.size(); ++i) out[i] = sketch.data[i] ? 1.0 : 0.0;
    return out;
}

double estimate_angle(const BinarySketch& a, const BinarySketch& b) {
    if (!(a.spec == b.spec)) throw MixedBank("comparing sketches from different banks");
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (a.data[i] != b.data[i]) ++mismatches;
    }
    const double angle =
        std::numbers::pi * static_cast<double>(mismatches) / static_cast<double>(a.data.size());
    return std::min(std::max(angle, 0.0), std::numbers::pi);
}

void save_bank(std::ostream& os, const HyperplaneBank& bank) {
    binio::put_magic(os, "LSHB");
    binio::put_u32(os, 1);
    binio::put_u32(os, static_cast<std::uint32_t>(bank.spec().depth));
    binio::put_u32(os, static_cast<std::uint32_t>(bank.spec().width));
    binio::put_u64(os, bank.spec().seed);
    binio::put_u32(os, static_cast<std::uint32_t>(bank.input_dim()));
    for (double c : bank.coefficients()) binio::put_f64(os, c);
}

HyperplaneBank load_bank(std::istream& is) {
    binio::expect_magic(is, "LSHB");
    const std::uint32_t version = binio::get_u32(is, "bank version");
    if (version != 1) throw FormatError("unsupported bank version " + std::to_string(version));
    SketchSpec spec;
    spec.depth = binio::get_u32(is, "bank depth");
    spec.width = binio::get_u32(is, "bank width");
    spec.seed = binio::get_u64(is, "bank seed");
    const std::size_t input_dim = binio::get_u32(is, "bank input dim");
    spec.validate();
    std::vector<double> coeffs(spec.depth * spec.bits_per_row() * input_dim);
    for (double& c : coeffs) c = binio::get_f64(is, "bank coefficient");
    return HyperplaneBank(spec, input_dim, std::move(coeffs));
}

void save_sketch(std::ostream& os, const BinarySketch& sketch) {
    binio::put_magic(os, "SKCH");
    binio::put_u8(os, 0);
    binio::put_u32(os, static_cast<std::uint32_t>(sketch.depth));
    binio::put_u32(os, static_cast<std::uint32_t>(sketch.bits));
    const std::size_t total = sketch.depth * sketch.bits;
    for (std::size_t base = 0; base < total; base += 8) {
        std::uint8_t packed = 0;
        for (std::size_t o = 0; o < 8 && base + o < total; ++o) {
            packed |= static_cast<std::uint8_t>(sketch.data[base + o] << o);
        }
        binio::put_u8(os, packed);
    }
}

void save_sketch(std::ostream& os, const ClassicalSketch& sketch) {
    binio::put_magic(os, "SKCH");
    binio::put_u8(os, 1);
    binio::put_u32(os, static_cast<std::uint32_t>(sketch.spec.depth));
    binio::put_u32(os, static_cast<std::uint32_t>(sketch.spec.width));
    for (std::uint32_t b : sketch.buckets) binio::put_u32(os, b);
}

void save_sketch(std::ostream& os, const CountSketch& sketch) {
    binio::put_magic(os, "SKCH");
    binio::put_u8(os, 2);
    binio::put_u32(os, static_cast<std::uint32_t>(sketch.spec.depth));
    binio::put_u32(os, static_cast<std::uint32_t>(sketch.spec.width));
    binio::put_u64(os, sketch.n_items);
    for (double c : sketch.counts) binio::put_f64(os, c);
}

AnySketch load_sketch(std::istream& is) {
    binio::expect_magic(is, "SKCH");
    const std::uint8_t kind = binio::get_u8(is, "sketch kind");
    switch (kind) {
        case 0: {
            BinarySketch s;
            s.depth = binio::get_u32(is, "sketch depth");
            s.bits = binio::get_u32(is, "sketch bits");
            if (s.bits == 0 || s.bits >= 32 || s.depth == 0) {
                throw FormatError("implausible binary sketch geometry");
            }
            s.spec = SketchSpec{s.depth, std::size_t{1} << s.bits, 0};
            const std::size_t total = s.depth * s.bits;
            s.data.resize(total);
            for (std::size_t base = 0; base < total; base += 8) {
                const std::uint8_t packed = binio::get_u8(is, "sketch bits");
                for (std::size_t o = 0; o < 8 && base + o < total; ++o) {
                    s.data[base + o] = (packed >> o) & 1;
                }
            }
            return s;
        }
        case 1: {
            ClassicalSketch s;
            const std::size_t depth = binio::get_u32(is, "sketch depth");
            const std::size_t width = binio::get_u32(is, "sketch width");
            s.spec = SketchSpec{depth, width, 0};
            s.spec.validate();
            s.buckets.resize(depth);
            for (auto& b : s.buckets) {
                b = binio::get_u32(is, "sketch bucket");
                if (b >= width) throw FormatError("bucket index out of range");
            }
            return s;
        }
        case 2: {
            CountSketch s;
            const std::size_t depth = binio::get_u32(is, "sketch depth");
            const std::size_t width = binio::get_u32(is, "sketch width");
            s.spec = SketchSpec{depth, width, 0};
            s.spec.validate();
            s.n_items = binio::get_u64(is, "sketch item count");
            s.counts.resize(depth * width);
            for (auto& c : s.counts) c = binio::get_f64(is, "sketch count");
            return s;
        }
        default:
            throw FormatError("unknown sketch kind " + std::to_string(kind));
    }
}

}  // namespace mmfuse
