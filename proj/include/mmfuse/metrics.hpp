#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "mmfuse/errors.hpp"

namespace mmfuse {

enum class LabelKind { multiclass, multilabel, binary };

/// One evaluation pass: an n x k score matrix plus ground truth.
///  - multiclass: cls holds one label in [0, k) per row, scores are class scores
///  - multilabel: hot is an n x k 0/1 matrix, scores are per-label scores
///  - binary: k == 1, cls holds 0/1 per row, scores are positive-class scores
struct Predictions {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<double> scores;  // n * k, row-major
    LabelKind kind = LabelKind::multiclass;
    std::vector<int> cls;
    std::vector<std::uint8_t> hot;

    double score(std::size_t i, std::size_t j) const { return scores[i * k + j]; }

    /// Shape and finiteness checks; throws DimError / NonFiniteError / SpecError.
    void check() const;
};

/// Row index of the winning class; ties resolve to the lowest index.
std::size_t argmax_row(const Predictions& pred, std::size_t i);

/// Fraction of rows whose predicted class equals the label.
/// multiclass (argmax) or binary (threshold 0.5). Empty input -> UndefinedMetric.
double accuracy(const Predictions& pred);

/// Per-class accuracy over the rows labeled with each class. Classes with no
/// labeled rows yield nullopt rather than a fake zero.
std::vector<std::optional<double>> per_class_accuracy(const Predictions& pred);

/// Micro-averaged ROC AUC: every (row, label) pair is flattened into one
/// binary problem; ties in score get midrank credit. Throws UndefinedMetric
/// when the flattened pool lacks positives or negatives.
double micro_auc(const Predictions& pred);

/// Micro-averaged mean average precision over the same flattened pool.
/// Ties rank by ascending original (row-major) index. Throws UndefinedMetric
/// when there are no positives.
double micro_map(const Predictions& pred);

/// Matthews correlation coefficient for binary predictions at `threshold`.
/// Returns 0 when any marginal of the confusion matrix is empty.
double mcc(const Predictions& pred, double threshold = 0.5);

}  // namespace mmfuse
