#pragma once

// Combining per-modality information into one representation.
//  - early_fuse: concatenate raw embedding vectors in plan order
//  - sketch_fuse: concatenate flattened per-modality sketches
//  - late_combine: merge per-modality class-probability vectors
// FusedVector keeps per-segment provenance so a feature index can always be
// traced back to its modality.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmfuse/embedding.hpp"

namespace mmfuse {

enum class MissingPolicy { zeros, skip_item, error };

enum class LateCombiner { mean, majority_vote, concat_head };

struct FusionPlan {
    std::vector<ModalityId> modalities;  // fusion order
    MissingPolicy missing_policy = MissingPolicy::zeros;
};

struct Segment {
    ModalityId modality;
    std::size_t offset = 0;
    std::size_t length = 0;
    bool present = true;
};

struct FusedVector {
    std::string item_id;
    std::vector<double> values;
    std::vector<Segment> segments;
};

/// Concatenates one record per plan modality (same item, plan order).
/// Missing modalities follow the plan policy: zeros keeps a zero segment,
/// skip_item yields nullopt, error throws MissingInput. Wrong dimensions
/// throw DimError, non-finite values NonFiniteError.
std::optional<FusedVector> early_fuse(std::span<const EmbeddingRecord> records,
                                      const FusionPlan& plan);

/// Concatenates pre-flattened sketch vectors in the given order.
FusedVector sketch_fuse(const std::vector<std::pair<ModalityId, std::vector<double>>>& parts,
                        const std::string& item_id);

/// Merges per-modality probability vectors:
///  - mean: elementwise average (inputs must be distributions)
///  - majority_vote: fraction of modalities voting for each class (argmax
///    votes, ties to the lowest index)
///  - concat_head: plain concatenation, to be consumed by a trained head
/// mean and majority_vote require equal lengths (DimError) and rows that
/// sum to 1 within 1e-6 (SpecError). An empty list throws MissingInput.
std::vector<double> late_combine(const std::vector<std::vector<double>>& outputs,
                                 LateCombiner combiner);

}  // namespace mmfuse
