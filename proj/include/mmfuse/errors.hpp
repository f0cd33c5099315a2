#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmfuse {

/// Base class for every error the library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A vector/matrix shape disagrees with the declared one. row() is the
/// offending record index, or -1 for a header-level mismatch.
class DimError : public Error {
public:
    DimError(std::ptrdiff_t row, std::size_t got, std::size_t want)
        : Error(describe(row, got, want)), row_(row), got_(got), want_(want) {}
    explicit DimError(const std::string& what) : Error(what) {}

    std::ptrdiff_t row() const { return row_; }
    std::size_t got() const { return got_; }
    std::size_t want() const { return want_; }

private:
    static std::string describe(std::ptrdiff_t row, std::size_t got, std::size_t want) {
        std::string where = row < 0 ? "header" : "record " + std::to_string(row);
        return "dimension mismatch at " + where + ": got " + std::to_string(got) +
               ", want " + std::to_string(want);
    }

    std::ptrdiff_t row_ = -1;
    std::size_t got_ = 0;
    std::size_t want_ = 0;
};

/// Malformed or truncated byte stream / text input.
class FormatError : public Error {
public:
    using Error::Error;
};

/// The same item id appeared twice in one source.
class DuplicateError : public Error {
public:
    using Error::Error;
};

/// Manifest is internally inconsistent (undeclared ids, label arity, ...).
class ManifestError : public Error {
public:
    using Error::Error;
};

/// Split request cannot be satisfied (bad fractions, too few items, ...).
class SplitError : public Error {
public:
    using Error::Error;
};

/// A declarative spec (sketch geometry, network, synthetic dataset) is invalid.
class SpecError : public Error {
public:
    using Error::Error;
};

/// An operation was asked to run on input that is absent or all-zero.
class MissingInput : public Error {
public:
    using Error::Error;
};

/// Sketches from banks with different geometry or seed were combined.
class MixedBank : public Error {
public:
    using Error::Error;
};

/// A requested modality is not part of the dataset.
class MissingModality : public Error {
public:
    using Error::Error;
};

/// Loss or gradients stopped being finite during optimization.
class TrainingDiverged : public Error {
public:
    explicit TrainingDiverged(std::size_t epoch)
        : Error("training diverged at epoch " + std::to_string(epoch)), epoch_(epoch) {}
    std::size_t epoch() const { return epoch_; }

private:
    std::size_t epoch_ = 0;
};

/// Classifier training needs both classes present in the labels.
class DegenerateLabels : public Error {
public:
    using Error::Error;
};

/// The metric has no defined value on this input (e.g. single-class AUC).
class UndefinedMetric : public Error {
public:
    using Error::Error;
};

/// NaN or infinity where a finite value is required.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// Experiment configuration is invalid or unsupported.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Dataset content failed validation at experiment start.
class DataError : public Error {
public:
    using Error::Error;
};

}  // namespace mmfuse
