#pragma once

// Dataset model: per-modality embedding tables aligned to a manifest of
// item ids, labels, and optional user->item interactions.
//
// Binary embedding table format ("EMB1", little endian):
//   "EMB1" | u32 dim | u64 count | count records of
//   { u16 id_len | id bytes (UTF-8) | u8 present | f32 values[dim] }
// Absent records still carry dim values, all zero. Values are stored as
// 32-bit floats; in-memory math uses doubles.
//
// CSV fallback: header "item_id,present,v0,...,v{dim-1}", one record per
// line, present in {0,1}.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfuse/errors.hpp"

namespace mmfuse {

enum class Task { multiclass, multilabel, binary };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

struct ModalityId {
    std::string name;
    std::size_t dim = 0;

    friend bool operator==(const ModalityId&, const ModalityId&) = default;
};

struct EmbeddingRecord {
    std::string item_id;
    std::vector<double> values;
    bool present = true;
};

/// Ground truth per unit (item, or user when interactions drive the task).
struct LabelSet {
    Task task = Task::multiclass;
    std::size_t num_classes = 0;
    std::map<std::string, int> cls;                        // multiclass / binary
    std::map<std::string, std::vector<std::uint8_t>> hot;  // multilabel, one row per unit
};

struct DatasetManifest {
    Task task = Task::multiclass;
    std::vector<ModalityId> modalities;
    std::map<std::string, std::string> modality_files;  // name -> path relative to manifest
    std::vector<std::string> items;
    LabelSet labels;
    std::map<std::string, std::vector<std::string>> interactions;  // user -> item ids

    bool has_interactions() const { return !interactions.empty(); }
    const ModalityId& modality(const std::string& name) const;  // throws MissingModality
};

/// Manifest plus one record per (item, modality), aligned with manifest.items.
struct Dataset {
    DatasetManifest manifest;
    std::map<std::string, std::vector<EmbeddingRecord>> embeddings;  // by modality name

    const std::vector<EmbeddingRecord>& records(const std::string& modality) const;
};

struct LoadOptions {
    /// Accept vectors that are present yet exactly zero. Off by default:
    /// an all-zero present vector is indistinguishable from a decode bug.
    bool allow_zero = false;
};

/// EMB1 reader. `expected` pins the dimensionality; a header mismatch throws
/// DimError with row() == -1. Duplicate ids throw DuplicateError; a record
/// flagged absent with nonzero values throws FormatError.
std::vector<EmbeddingRecord> load_embeddings(std::istream& in, const ModalityId& expected,
                                             const LoadOptions& opts = {});
void save_embeddings(std::ostream& out, const std::vector<EmbeddingRecord>& records,
                     const ModalityId& modality);

/// CSV reader with the same checks; short or long rows throw DimError with
/// the offending record index.
std::vector<EmbeddingRecord> load_embeddings_csv(std::istream& in, const ModalityId& expected,
                                                 const LoadOptions& opts = {});

/// Dispatches on extension: ".csv" -> CSV, anything else -> EMB1.
std::vector<EmbeddingRecord> load_embeddings_file(const std::filesystem::path& path,
                                                  const ModalityId& expected,
                                                  const LoadOptions& opts = {});

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Reads manifest.json plus every modality table, checks alignment (exactly
/// one record per declared item, no strays), and reorders records to follow
/// manifest.items.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes manifest.json and one EMB1 file per modality into `dir`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Splits

struct SplitPlan {
    enum class Kind { fractions, holdout_kfold };
    Kind kind = Kind::fractions;
    // fractions
    double train = 0.6, val = 0.2, test = 0.2;
    // holdout_kfold: carve test off first, then k-fold the rest
    double test_fraction = 0.2;
    std::size_t k = 5;
    std::uint64_t seed = 0;
};

struct Fold {
    std::vector<std::size_t> train, val;
};

/// Index sets over [0, n). Sorted ascending within each set.
struct SplitIndices {
    SplitPlan::Kind kind = SplitPlan::Kind::fractions;
    std::vector<std::size_t> train, val, test;
    std::vector<Fold> folds;  // holdout_kfold only
};

/// Seeded split. Fractions must sum to 1 (1e-9 tolerance); val and test
/// sizes round down and train takes the remainder. K-fold sizes differ by
/// at most one. Throws SplitError on unsatisfiable requests (including
/// n_items < 10 for fractions and fewer pool items than folds).
SplitIndices make_split(std::size_t n_items, const SplitPlan& plan);

SplitPlan split_plan_from_json(const nlohmann::json& j);
nlohmann::json split_plan_to_json(const SplitPlan& plan);

// ---------------------------------------------------------------------------
// Validation

struct ValidationReport {
    std::size_t n_items = 0;
    std::size_t n_users = 0;
    std::map<std::string, std::size_t> dims;          // modality -> dim
    std::map<std::string, double> missing_rate;       // modality -> absent fraction
    std::map<int, std::size_t> class_counts;          // class/label -> labeled units (positives for multilabel)
    std::vector<std::string> notes;
};

/// Structural checks (labels cover every unit, label arity, interaction ids
/// declared, record alignment) plus summary statistics. Throws
/// ManifestError on inconsistency.
ValidationReport validate_manifest(const Dataset& ds);

nlohmann::json validation_report_to_json(const ValidationReport& r);

}  // namespace mmfuse
