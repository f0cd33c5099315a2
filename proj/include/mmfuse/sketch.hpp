#pragma once

// Random-hyperplane sketching. A bank of depth x log2(width) hyperplanes
// maps a real vector to sign bits; each row's bit group indexes one of
// `width` buckets. Binary sketches keep the raw bits, classical sketches
// keep the bucket per row, count sketches accumulate bucket hits over many
// vectors. Banks and sketches are immutable after construction, so sharing
// them across threads is safe.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <variant>
#include <vector>

#include "mmfuse/errors.hpp"

namespace mmfuse {

/// Sketch geometry. Width must be a power of two (>= 2) so a row's sign
/// pattern maps bijectively onto bucket indices.
struct SketchSpec {
    std::size_t depth = 0;
    std::size_t width = 0;
    std::uint64_t seed = 0;

    std::size_t bits_per_row() const;  // log2(width)
    void validate() const;             // throws SpecError

    friend bool operator==(const SketchSpec&, const SketchSpec&) = default;
};

/// depth x bits_per_row hyperplanes through the origin. Coefficient
/// (row, bit, coord) is a standard normal drawn from a stream keyed by
/// (seed, row, bit, coord): the bank content is independent of generation
/// order and identical on every platform.
class HyperplaneBank {
public:
    HyperplaneBank(const SketchSpec& spec, std::size_t input_dim);
    /// Explicit coefficients, (row, bit, coord) order. Used by the file
    /// loader and by tests that pin hand-built hyperplanes.
    HyperplaneBank(const SketchSpec& spec, std::size_t input_dim, std::vector<double> coefficients);

    const SketchSpec& spec() const { return spec_; }
    std::size_t input_dim() const { return input_dim_; }
    std::size_t bits() const { return bits_; }

    /// Coefficients of hyperplane (row, bit); length input_dim.
    std::span<const double> normal(std::size_t row, std::size_t bit) const;
    const std::vector<double>& coefficients() const { return coeffs_; }

private:
    SketchSpec spec_;
    std::size_t input_dim_ = 0;
    std::size_t bits_ = 0;
    std::vector<double> coeffs_;
};

/// Raw sign bits, depth x bits_per_row row-major. bit == 1 iff the dot
/// product with the hyperplane normal is >= 0 (ties count as 1).
struct BinarySketch {
    SketchSpec spec;
    std::size_t depth = 0;
    std::size_t bits = 0;
    std::vector<std::uint8_t> data;  // one byte per bit, depth * bits

    std::uint8_t bit(std::size_t row, std::size_t j) const { return data[row * bits + j]; }
};

/// One bucket index per row. Buckets read the row's bits most significant
/// first: bucket = sum_j bit_j << (bits_per_row - 1 - j).
struct ClassicalSketch {
    SketchSpec spec;
    std::vector<std::uint32_t> buckets;  // depth entries, each < width
};

/// Bucket hit counts accumulated over n_items classical sketches.
struct CountSketch {
    SketchSpec spec;
    std::size_t n_items = 0;
    std::vector<double> counts;  // depth * width, row-major
};

/// Small dense matrix used for sketch post-processing.
struct SketchMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // row-major

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

/// Deterministically generates the bank for `spec` over `input_dim` coords.
HyperplaneBank build_bank(const SketchSpec& spec, std::size_t input_dim);

/// Sign bits of `vec` under every hyperplane. All-zero input has no
/// direction to hash and raises MissingInput; a dimension mismatch raises
/// DimError.
BinarySketch sketch_binary(const HyperplaneBank& bank, std::span<const double> vec);

/// Bucket per row for `vec` (the binary sketch folded row-wise).
ClassicalSketch sketch_classical(const HyperplaneBank& bank, std::span<const double> vec);

/// Bucket view of an existing binary sketch.
ClassicalSketch classical_from_binary(const BinarySketch& sketch);

/// Per-row bucket histogram of several classical sketches. All sketches
/// must come from the same bank (same spec including seed) or MixedBank is
/// raised; an empty list raises MissingInput.
CountSketch aggregate(std::span<const ClassicalSketch> sketches);

/// Sum of several binary sketches as a depth x bits count matrix. Same
/// bank-compatibility rules as aggregate().
SketchMatrix aggregate_binary(std::span<const BinarySketch> sketches);

/// One-hot depth x width matrix of a classical sketch (exactly one 1 per row).
SketchMatrix materialize_onehot(const ClassicalSketch& sketch);

/// Count matrix of a count sketch.
SketchMatrix counts_matrix(const CountSketch& sketch);

/// L2-normalizes every row independently; all-zero rows stay zero.
SketchMatrix normalize_rows(SketchMatrix m);

/// Row-normalized bucket histogram (depth x width) of a count sketch.
SketchMatrix normalize_widthwise(const CountSketch& sketch);

/// Row-major flattening to a plain feature vector.
std::vector<double> flatten(const SketchMatrix& m);
std::vector<double> flatten(const BinarySketch& sketch);  // bits as 0.0 / 1.0

/// Estimates the angle between the two pre-images from bit disagreement:
/// angle ~= pi * mismatched_bits / total_bits, clamped to [0, pi].
/// Sketches from different banks raise MixedBank.
double estimate_angle(const BinarySketch& a, const BinarySketch& b);

// On-disk formats (little endian):
//   bank:   "LSHB" u32 version=1 | u32 depth | u32 width | u64 seed |
//           u32 input_dim | f64 coefficients in (row, bit, coord) order
//   sketch: "SKCH" u8 kind | u32 depth | u32 (bits|width) | payload
//           kind 0 binary:    bits packed 8 per byte, row-major bit order,
//                             LSB of each byte first
//           kind 1 classical: u32 bucket per row
//           kind 2 counts:    u64 n_items | f64 count per cell
// Sketch dumps carry geometry only (the 16-byte header budget has no room
// for the bank seed); loaded sketches report seed 0.
void save_bank(std::ostream& os, const HyperplaneBank& bank);
HyperplaneBank load_bank(std::istream& is);

void save_sketch(std::ostream& os, const BinarySketch& sketch);
void save_sketch(std::ostream& os, const ClassicalSketch& sketch);
void save_sketch(std::ostream& os, const CountSketch& sketch);

using AnySketch = std::variant<BinarySketch, ClassicalSketch, CountSketch>;
AnySketch load_sketch(std::istream& is);

}  // namespace mmfuse
