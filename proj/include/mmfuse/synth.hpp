#pragma once

// Seeded synthetic datasets with controllable class signal per modality.
// Each class owns a fixed random unit direction per modality; an item's
// embedding is informativeness-scaled class direction(s) plus unit Gaussian
// noise. informativeness 0 makes the modality pure noise. Optional user
// mode emits user->item interactions where each user prefers one half of
// the class space, and the user's label is that preference group.
//
// Everything is derived from counter-based streams keyed off spec.seed,
// so generation is order-independent and bitwise reproducible. Values are
// quantized to f32 at generation time: runs on an in-memory dataset and on
// a saved-then-reloaded one produce identical numbers.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfuse/embedding.hpp"

namespace mmfuse {

struct SynthModality {
    std::string name;
    std::size_t dim = 0;
    double informativeness = 1.0;          // [0, 1]: 0 = noise only
    double missing_rate = 0.0;             // [0, 1): per-item absence probability
    std::vector<std::size_t> signal_coords;  // classes this modality can see; empty = all
};

struct SynthUsers {
    std::size_t n_users = 0;
    std::size_t min_items = 1;
    std::size_t max_items = 1;
    /// Probability that a sampled item comes from the user's own class half.
    double preference_strength = 0.8;
};

struct SynthSpec {
    Task task = Task::multiclass;
    std::size_t n_items = 0;
    std::size_t classes = 0;
    std::uint64_t seed = 0;
    double label_density = 0.3;  // multilabel: per-class positive rate
    std::vector<SynthModality> modalities;
    std::optional<SynthUsers> users;  // binary task only

    void validate() const;  // throws SpecError
};

Dataset synth_generate(const SynthSpec& spec);

SynthSpec synth_spec_from_json(const nlohmann::json& j);

}  // namespace mmfuse
