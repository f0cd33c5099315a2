#pragma once

// Benchmark runner: trains and evaluates representation techniques over
// modality subsets, with repeated seeded runs, aggregation, reports, and
// ablation verdicts. Cells (technique x subset) are independent, so they
// may be computed in parallel; results land in preassigned slots and every
// random stream is keyed by (run seed, technique, subset), which makes the
// canonical records byte-identical for any thread count.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfuse/embedding.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/neural.hpp"
#include "mmfuse/sketch.hpp"
#include "mmfuse/synth.hpp"

namespace mmfuse {

/// How per-modality information reaches the classifier:
///  - late: one model per modality, probability vectors merged afterwards
///  - early: embeddings concatenated before one model
///  - sketch: per-modality bucket sketches, row-normalized and concatenated
///  - sketch_binarized: raw sketch bits concatenated
enum class Technique { late, early, sketch, sketch_binarized };

std::string technique_name(Technique t);
Technique technique_from_name(const std::string& name);

/// Partial override of the per-technique training preset.
struct TrainOverride {
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> learning_rate;
    /// Shrink every hidden layer of the canned nets to at most this many
    /// units; meant for small-scale datasets.
    std::optional<std::size_t> width_cap;
};

struct ExperimentConfig {
    // Exactly one dataset source.
    std::optional<std::filesystem::path> manifest_path;
    std::optional<SynthSpec> synth;

    std::vector<Technique> techniques;
    /// Modality subsets to ablate. Empty = every non-empty subset of the
    /// declared modalities, ordered by size then declaration order.
    std::vector<std::vector<std::string>> modality_subsets;
    std::map<std::string, SketchSpec> sketch_specs;  // per modality
    std::map<std::string, TrainOverride> train_overrides;  // keyed by technique name
    LogRegConfig logreg;
    LateCombiner late_combiner = LateCombiner::concat_head;
    SplitPlan split;
    std::size_t n_runs = 1;
    std::uint64_t base_seed = 0;
    std::size_t threads = 1;
};

ExperimentConfig config_from_json(const nlohmann::json& j);  // throws ConfigError
ExperimentConfig load_config(const std::filesystem::path& path);

/// One (technique, subset, run) evaluation. seed is base_seed + run_index.
struct RunRecord {
    std::string technique;
    std::vector<std::string> subset;
    std::size_t run_index = 0;
    std::uint64_t seed = 0;
    std::map<std::string, double> metrics;
    bool failed = false;
    std::string error;
    double wall_ms = 0;  // informational only; never serialized into records
};

struct CellStats {
    std::string technique;
    std::vector<std::string> subset;
    std::size_t n_ok = 0;
    std::map<std::string, std::pair<double, double>> metrics;  // name -> (mean, sample std)
};

struct ExperimentResult {
    Task task = Task::multiclass;
    std::vector<RunRecord> records;
    std::vector<CellStats> cells;
    nlohmann::json audit;
    bool any_cell_all_failed = false;
    double wall_ms_total = 0;
};

/// Runs the full grid. `dataset` overrides the config's dataset source when
/// given (the dataset is used as-is after validation). Configuration
/// problems throw ConfigError; dataset problems ManifestError/DataError.
/// Per-run training failures are captured as failed records instead.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset* dataset = nullptr);

/// Canonical records serialization: stable key order, no timings, byte
/// identical for identical configs regardless of thread count.
nlohmann::json records_to_json(const std::vector<RunRecord>& records);
std::vector<RunRecord> records_from_json(const nlohmann::json& j);

std::vector<CellStats> aggregate_records(const std::vector<RunRecord>& records);

/// Markdown table: one row per subset, one column per technique/metric,
/// cells "mean ± std", best cell per column bold.
std::string emit_report_markdown(const std::vector<RunRecord>& records);
nlohmann::json emit_report_json(const ExperimentResult& result);

/// Fusion beats its parts / a modality helps or hurts, judged on cell means.
struct SubsetVerdict {
    std::string technique;
    std::vector<std::string> subset;
    double fused = 0;
    double best_single = 0;
    std::string best_single_name;
    bool boost = false;  // fused strictly above the best constituent alone
};

struct ModalityVerdict {
    std::string technique;
    std::string modality;
    std::size_t pairs = 0;     // subset pairs (S without m) -> S that exist
    double mean_delta = 0;     // mean metric change when the modality joins
    bool contributing = false; // mean_delta > 0
};

struct AblationVerdict {
    std::string metric;
    std::vector<SubsetVerdict> subsets;
    std::vector<ModalityVerdict> modalities;
};

AblationVerdict ablation_verdict(const std::vector<RunRecord>& records, const std::string& metric);
nlohmann::json ablation_verdict_to_json(const AblationVerdict& v);

/// Headline metric per task: accuracy / micro_auc / mcc.
std::string primary_metric_for(Task task);

/// Training preset for a technique on a task (learning rate, epochs, batch
/// size). Multilabel runs train longer on multimodal early fusion and on
/// the "graph" modality alone.
TrainConfig training_preset(Technique t, Task task, const std::vector<std::string>& subset);

}  // namespace mmfuse
