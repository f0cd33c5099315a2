#include "mmfuse/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "mmfuse/rng.hpp"

namespace mmfuse {

namespace {
constexpr std::uint64_t kCellStream = 0x63656c6c;  // per-cell seed derivation
constexpr std::uint64_t kInitSub = 1;              // model init seeds
constexpr std::uint64_t kShuffleSub = 2;           // training shuffle seeds
}  // namespace

std::string technique_name(Technique t) {
    switch (t) {
        case Technique::late: return "late";
        case Technique::early: return "early";
        case Technique::sketch: return "sketch";
        case Technique::sketch_binarized: return "sketch_binarized";
    }
    return "?";
}

Technique technique_from_name(const std::string& name) {
    if (name == "late") return Technique::late;
    if (name == "early") return Technique::early;
    if (name == "sketch") return Technique::sketch;
    if (name == "sketch_binarized") return Technique::sketch_binarized;
    throw ConfigError("unknown technique '" + name + "'");
}

std::string primary_metric_for(Task task) {
    switch (task) {
        case Task::multiclass: return "accuracy";
        case Task::multilabel: return "micro_auc";
        case Task::binary: return "mcc";
    }
    return "?";
}

TrainConfig training_preset(Technique t, Task task, const std::vector<std::string>& subset) {
    TrainConfig cfg;
    if (task == Task::multilabel) {
        cfg.adam.learning_rate = 1e-5;
        cfg.batch_size = 64;
        // Multimodal early fusion and the lone "graph" modality warrant a
        // longer schedule; everything else converges in 20 epochs.
        const bool longer =
            t == Technique::early &&
            (subset.size() >= 2 || (subset.size() == 1 && subset[0] == "graph"));
        cfg.epochs = longer ? 30 : 20;
        return cfg;
    }
    cfg.batch_size = 32;
    switch (t) {
        case Technique::late:
            cfg.adam.learning_rate = 1e-4;
            cfg.epochs = 10;
            break;
        case Technique::early:
            cfg.adam.learning_rate = 1e-3;
            cfg.epochs = 10;
            break;
        case Technique::sketch:
            cfg.adam.learning_rate = 1e-5;
            cfg.epochs = 10;
            break;
        case Technique::sketch_binarized:
            cfg.adam.learning_rate = 1e-4;
            cfg.epochs = 20;
            break;
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig config_from_json(const nlohmann::json& j) {
    try {
        ExperimentConfig cfg;
        if (!j.contains("dataset")) throw ConfigError("config needs a dataset section");
        const auto& ds = j.at("dataset");
        if (ds.contains("manifest") == ds.contains("synth")) {
            throw ConfigError("dataset needs exactly one of manifest/synth");
        }
        if (ds.contains("manifest")) {
            cfg.manifest_path = std::filesystem::path(ds.at("manifest").get<std::string>());
        } else {
            try {
                cfg.synth = synth_spec_from_json(ds.at("synth"));
            } catch (const SpecError& e) {
                throw ConfigError(e.what());
            }
        }

        if (!j.contains("techniques")) throw ConfigError("config needs a techniques list");
        for (const auto& t : j.at("techniques")) {
            cfg.techniques.push_back(technique_from_name(t.get<std::string>()));
        }
        if (cfg.techniques.empty()) throw ConfigError("techniques list is empty");

        if (j.contains("modality_subsets")) {
            for (const auto& s : j.at("modality_subsets")) {
                std::vector<std::string> subset = s.get<std::vector<std::string>>();
                if (subset.empty()) throw ConfigError("empty modality subset");
                std::set<std::string> uniq(subset.begin(), subset.end());
                if (uniq.size() != subset.size()) {
                    throw ConfigError("modality subset lists a modality twice");
                }
                cfg.modality_subsets.push_back(std::move(subset));
            }
        }

        if (j.contains("sketch")) {
            for (const auto& [name, sj] : j.at("sketch").items()) {
                SketchSpec spec;
                spec.depth = sj.value("depth", std::size_t{128});
                spec.width = sj.value("width", std::size_t{512});
                spec.seed = sj.value("seed", std::uint64_t{1});
                try {
                    spec.validate();
                } catch (const SpecError& e) {
                    throw ConfigError(std::string("sketch spec for '") + name + "': " + e.what());
                }
                cfg.sketch_specs[name] = spec;
            }
        }

        if (j.contains("train")) {
            for (const auto& [name, tj] : j.at("train").items()) {
                technique_from_name(name);  // reject unknown keys
                TrainOverride ov;
                if (tj.contains("epochs")) ov.epochs = tj.at("epochs").get<std::size_t>();
                if (tj.contains("batch_size")) ov.batch_size = tj.at("batch_size").get<std::size_t>();
                if (tj.contains("learning_rate")) ov.learning_rate = tj.at("learning_rate").get<double>();
                if (tj.contains("width_cap")) ov.width_cap = tj.at("width_cap").get<std::size_t>();
                cfg.train_overrides[name] = ov;
            }
        }

        if (j.contains("logreg")) {
            const auto& lj = j.at("logreg");
            cfg.logreg.c = lj.value("c", 0.1);
            cfg.logreg.max_iters = lj.value("max_iters", std::size_t{2000});
            cfg.logreg.tolerance = lj.value("tolerance", 1e-7);
            cfg.logreg.learning_rate = lj.value("learning_rate", 0.05);
            if (cfg.logreg.c <= 0) throw ConfigError("logreg c must be positive");
        }

        if (j.contains("late_combiner")) {
            const auto name = j.at("late_combiner").get<std::string>();
            if (name == "concat_head") cfg.late_combiner = LateCombiner::concat_head;
            else if (name == "mean") cfg.late_combiner = LateCombiner::mean;
            else if (name == "majority_vote") cfg.late_combiner = LateCombiner::majority_vote;
            else throw ConfigError("unknown late_combiner '" + name + "'");
        }

        if (j.contains("split")) cfg.split = split_plan_from_json(j.at("split"));
        cfg.n_runs = j.value("n_runs", std::size_t{1});
        if (cfg.n_runs == 0) throw ConfigError("n_runs must be positive");
        cfg.base_seed = j.value("base_seed", std::uint64_t{0});
        cfg.threads = j.value("threads", std::size_t{1});
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse: ") + e.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse: ") + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Problem setup

namespace {

struct Problem {
    const Dataset* ds = nullptr;
    Task task = Task::multiclass;
    bool user_mode = false;
    std::size_t classes = 0;  // label arity (binary -> 2)
    std::vector<std::string> units;
    std::vector<int> cls_labels;                        // multiclass / binary
    std::vector<std::vector<std::uint8_t>> hot_labels;  // multilabel
    std::vector<std::vector<std::size_t>> user_items;   // user mode: item indices per unit
    SplitIndices split;
};

struct RunLayout {
    std::vector<std::size_t> train, val, test;
};

struct CellPlan {
    Technique technique;
    std::vector<std::string> subset;
    std::uint64_t subset_mask = 0;
};

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), x.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(x.v.data() + rows[i] * x.cols, x.cols, out.v.data() + i * x.cols);
    }
    return out;
}

std::size_t overlap_count(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::vector<std::size_t> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    return both.size();
}

Problem build_problem(const Dataset& ds, const ExperimentConfig& cfg) {
    Problem p;
    p.ds = &ds;
    p.task = ds.manifest.task;
    p.user_mode = p.task == Task::binary && ds.manifest.has_interactions();

    if (p.user_mode) {
        std::map<std::string, std::size_t> item_pos;
        for (std::size_t i = 0; i < ds.manifest.items.size(); ++i) {
            item_pos[ds.manifest.items[i]] = i;
        }
        for (const auto& [user, item_ids] : ds.manifest.interactions) {
            p.units.push_back(user);
            std::vector<std::size_t> idx;
            idx.reserve(item_ids.size());
            for (const auto& id : item_ids) idx.push_back(item_pos.at(id));
            p.user_items.push_back(std::move(idx));
        }
    } else {
        p.units = ds.manifest.items;
    }

    p.classes = ds.manifest.labels.num_classes;
    if (p.task == Task::multilabel) {
        p.hot_labels.reserve(p.units.size());
        for (const auto& id : p.units) p.hot_labels.push_back(ds.manifest.labels.hot.at(id));
    } else {
        p.cls_labels.reserve(p.units.size());
        for (const auto& id : p.units) p.cls_labels.push_back(ds.manifest.labels.cls.at(id));
    }
    if (p.classes < (p.task == Task::multilabel ? std::size_t{1} : std::size_t{2})) {
        throw DataError("dataset has a degenerate label space");
    }

    p.split = make_split(p.units.size(), cfg.split);
    return p;
}

RunLayout layout_for_run(const Problem& p, std::size_t run_index) {
    RunLayout l;
    if (p.split.kind == SplitPlan::Kind::fractions) {
        l.train = p.split.train;
        l.val = p.split.val;
    } else {
        const auto& fold = p.split.folds[run_index % p.split.folds.size()];
        l.train = fold.train;
        l.val = fold.val;
    }
    l.test = p.split.test;
    return l;
}

void check_supported(const ExperimentConfig& cfg, const Problem& p) {
    for (Technique t : cfg.techniques) {
        bool ok = true;
        switch (p.task) {
            case Task::multiclass:
                break;  // every technique applies
            case Task::multilabel:
                ok = t != Technique::late;
                break;
            case Task::binary:
                if (p.user_mode) ok = t == Technique::sketch || t == Technique::sketch_binarized;
                break;
        }
        if (!ok) {
            throw ConfigError("technique '" + technique_name(t) + "' is not supported for the " +
                              task_name(p.task) + (p.user_mode ? " (interaction)" : "") + " task");
        }
    }
}

std::vector<std::vector<std::string>> resolve_subsets(const ExperimentConfig& cfg,
                                                      const DatasetManifest& m) {
    std::vector<std::vector<std::string>> subsets;
    if (!cfg.modality_subsets.empty()) {
        for (const auto& s : cfg.modality_subsets) {
            for (const auto& name : s) {
                try {
                    m.modality(name);
                } catch (const MissingModality&) {
                    throw ConfigError("modality_subsets references undeclared modality '" + name +
                                      "'");
                }
            }
            subsets.push_back(s);
        }
        return subsets;
    }
    const std::size_t n = m.modalities.size();
    if (n > 10) {
        throw ConfigError("too many modalities to enumerate all subsets; list modality_subsets");
    }
    // Every non-empty subset, smallest first, then declaration order.
    std::vector<std::uint64_t> masks;
    for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << n); ++mask) masks.push_back(mask);
    std::stable_sort(masks.begin(), masks.end(), [](std::uint64_t a, std::uint64_t b) {
        const int pa = std::popcount(a), pb = std::popcount(b);
        return pa != pb ? pa < pb : a < b;
    });
    for (std::uint64_t mask : masks) {
        std::vector<std::string> subset;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (std::uint64_t{1} << i)) subset.push_back(m.modalities[i].name);
        }
        subsets.push_back(std::move(subset));
    }
    return subsets;
}

std::uint64_t subset_mask_of(const std::vector<std::string>& subset, const DatasetManifest& m) {
    std::uint64_t mask = 0;
    for (const auto& name : subset) {
        for (std::size_t i = 0; i < m.modalities.size(); ++i) {
            if (m.modalities[i].name == name) {
                mask |= std::uint64_t{1} << i;
                break;
            }
        }
    }
    return mask;
}

SketchSpec sketch_spec_for(const ExperimentConfig& cfg, const std::string& modality) {
    const auto it = cfg.sketch_specs.find(modality);
    if (it != cfg.sketch_specs.end()) return it->second;
    return SketchSpec{128, 512, 1};
}

TrainConfig cell_train_config(const ExperimentConfig& cfg, Technique t, Task task,
                              const std::vector<std::string>& subset, std::uint64_t shuffle_seed) {
    TrainConfig tc = training_preset(t, task, subset);
    const auto it = cfg.train_overrides.find(technique_name(t));
    if (it != cfg.train_overrides.end()) {
        if (it->second.epochs) tc.epochs = *it->second.epochs;
        if (it->second.batch_size) tc.batch_size = *it->second.batch_size;
        if (it->second.learning_rate) tc.adam.learning_rate = *it->second.learning_rate;
    }
    tc.shuffle_seed = shuffle_seed;
    return tc;
}

std::size_t width_cap_for(const ExperimentConfig& cfg, Technique t) {
    const auto it = cfg.train_overrides.find(technique_name(t));
    return it != cfg.train_overrides.end() && it->second.width_cap ? *it->second.width_cap : 0;
}

Matrix targets_for(const Problem& p, const std::vector<std::size_t>& unit_idx) {
    if (p.task == Task::multilabel) {
        Matrix y(unit_idx.size(), p.classes);
        for (std::size_t i = 0; i < unit_idx.size(); ++i) {
            const auto& row = p.hot_labels[unit_idx[i]];
            for (std::size_t c = 0; c < p.classes; ++c) y.at(i, c) = row[c];
        }
        return y;
    }
    Matrix y(unit_idx.size(), p.classes);
    for (std::size_t i = 0; i < unit_idx.size(); ++i) {
        y.at(i, static_cast<std::size_t>(p.cls_labels[unit_idx[i]])) = 1.0;
    }
    return y;
}

std::map<std::string, double> eval_metrics(const Problem& p,
                                           const std::vector<std::size_t>& test_units,
                                           const Matrix& probs) {
    std::map<std::string, double> out;
    switch (p.task) {
        case Task::multiclass: {
            Predictions pred;
            pred.n = probs.rows;
            pred.k = probs.cols;
            pred.scores = probs.v;
            pred.kind = LabelKind::multiclass;
            for (std::size_t i = 0; i < test_units.size(); ++i) {
                pred.cls.push_back(p.cls_labels[test_units[i]]);
            }
            out["accuracy"] = accuracy(pred);
            break;
        }
        case Task::multilabel: {
            Predictions pred;
            pred.n = probs.rows;
            pred.k = probs.cols;
            pred.scores = probs.v;
            pred.kind = LabelKind::multilabel;
            pred.hot.resize(probs.rows * probs.cols);
            for (std::size_t i = 0; i < test_units.size(); ++i) {
                const auto& row = p.hot_labels[test_units[i]];
                std::copy(row.begin(), row.end(), pred.hot.begin() + i * probs.cols);
            }
            out["micro_auc"] = micro_auc(pred);
            out["micro_map"] = micro_map(pred);
            break;
        }
        case Task::binary: {
            Predictions pred;
            pred.n = probs.rows;
            pred.k = 1;
            pred.kind = LabelKind::binary;
            pred.scores.resize(probs.rows);
            for (std::size_t i = 0; i < probs.rows; ++i) {
                pred.scores[i] = probs.cols == 2 ? probs.at(i, 1) : probs.at(i, 0);
            }
            for (std::size_t i = 0; i < test_units.size(); ++i) {
                pred.cls.push_back(p.cls_labels[test_units[i]]);
            }
            out["mcc"] = mcc(pred);
            out["accuracy"] = accuracy(pred);
            break;
        }
    }
    return out;
}

// Per-cell feature bundle, built once and reused by every run of the cell.
struct CellFeatures {
    // early / sketch / user mode: one feature row per kept unit
    Matrix x;
    std::vector<std::size_t> kept;                 // unit index per row
    std::vector<std::size_t> row_of;               // unit index -> row or npos
    // late: raw per-modality matrices over all units
    std::vector<Matrix> modality_x;
    std::vector<std::vector<std::uint8_t>> modality_present;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

CellFeatures build_features(const Problem& p, const ExperimentConfig& cfg, const CellPlan& plan) {
    const auto& m = p.ds->manifest;
    CellFeatures f;
    const std::size_t n_units = p.units.size();

    const auto keep_all = [&] {
        f.kept.resize(n_units);
        std::iota(f.kept.begin(), f.kept.end(), 0);
        f.row_of = f.kept;
    };

    switch (plan.technique) {
        case Technique::early: {
            FusionPlan fp;
            for (const auto& name : plan.subset) fp.modalities.push_back(m.modality(name));
            fp.missing_policy = MissingPolicy::zeros;
            std::size_t dim = 0;
            for (const auto& mod : fp.modalities) dim += mod.dim;
            f.x = Matrix(n_units, dim);
            keep_all();
            for (std::size_t u = 0; u < n_units; ++u) {
                std::vector<EmbeddingRecord> recs;
                recs.reserve(plan.subset.size());
                for (const auto& name : plan.subset) recs.push_back(p.ds->records(name)[u]);
                const auto fused = early_fuse(recs, fp);
                std::copy(fused->values.begin(), fused->values.end(), f.x.row(u).begin());
            }
            break;
        }
        case Technique::sketch:
        case Technique::sketch_binarized: {
            const bool binarized = plan.technique == Technique::sketch_binarized;
            std::vector<HyperplaneBank> banks;
            for (const auto& name : plan.subset) {
                const auto& mod = m.modality(name);
                banks.emplace_back(sketch_spec_for(cfg, name), mod.dim);
            }
            if (p.user_mode) {
                // Sketch every present item once, then sum per user.
                keep_all();
                std::size_t total_dim = 0;
                std::vector<std::size_t> part_dim;
                for (const auto& bank : banks) {
                    const std::size_t d = bank.spec().depth *
                                          (binarized ? bank.bits() : bank.spec().width);
                    part_dim.push_back(d);
                    total_dim += d;
                }
                f.x = Matrix(n_units, total_dim);
                std::size_t offset = 0;
                for (std::size_t mi = 0; mi < plan.subset.size(); ++mi) {
                    const auto& records = p.ds->records(plan.subset[mi]);
                    std::vector<BinarySketch> bin(records.size());
                    std::vector<std::uint8_t> has(records.size(), 0);
                    for (std::size_t i = 0; i < records.size(); ++i) {
                        if (!records[i].present) continue;
                        bin[i] = sketch_binary(banks[mi], records[i].values);
                        has[i] = 1;
                    }
                    for (std::size_t u = 0; u < n_units; ++u) {
                        std::vector<BinarySketch> mine;
                        for (std::size_t item : p.user_items[u]) {
                            if (has[item]) mine.push_back(bin[item]);
                        }
                        std::vector<double> flat;
                        if (mine.empty()) {
                            flat.assign(part_dim[mi], 0.0);  // nothing observed for this user
                        } else if (binarized) {
                            flat = flatten(normalize_rows(aggregate_binary(mine)));
                        } else {
                            std::vector<ClassicalSketch> cls;
                            cls.reserve(mine.size());
                            for (const auto& b : mine) cls.push_back(classical_from_binary(b));
                            flat = flatten(normalize_widthwise(aggregate(cls)));
                        }
                        std::copy(flat.begin(), flat.end(), f.x.row(u).begin() + offset);
                    }
                    offset += part_dim[mi];
                }
            } else {
                // Items missing any subset modality are skipped outright.
                f.row_of.assign(n_units, CellFeatures::npos);
                for (std::size_t u = 0; u < n_units; ++u) {
                    bool full = true;
                    for (const auto& name : plan.subset) {
                        if (!p.ds->records(name)[u].present) {
                            full = false;
                            break;
                        }
                    }
                    if (full) {
                        f.row_of[u] = f.kept.size();
                        f.kept.push_back(u);
                    }
                }
                if (f.kept.empty()) throw DataError("no item carries every modality of the subset");
                std::size_t total_dim = 0;
                for (const auto& bank : banks) {
                    total_dim += bank.spec().depth * (binarized ? bank.bits() : bank.spec().width);
                }
                f.x = Matrix(f.kept.size(), total_dim);
                for (std::size_t r = 0; r < f.kept.size(); ++r) {
                    const std::size_t u = f.kept[r];
                    std::vector<std::pair<ModalityId, std::vector<double>>> parts;
                    for (std::size_t mi = 0; mi < plan.subset.size(); ++mi) {
                        const auto& rec = p.ds->records(plan.subset[mi])[u];
                        const auto b = sketch_binary(banks[mi], rec.values);
                        parts.emplace_back(m.modality(plan.subset[mi]),
                                           binarized
                                               ? flatten(b)
                                               : flatten(materialize_onehot(classical_from_binary(b))));
                    }
                    const auto fused = sketch_fuse(parts, p.units[u]);
                    std::copy(fused.values.begin(), fused.values.end(), f.x.row(r).begin());
                }
            }
            break;
        }
        case Technique::late: {
            keep_all();
            for (const auto& name : plan.subset) {
                const auto& mod = m.modality(name);
                const auto& records = p.ds->records(name);
                Matrix xm(n_units, mod.dim);
                std::vector<std::uint8_t> present(n_units, 0);
                for (std::size_t u = 0; u < n_units; ++u) {
                    present[u] = records[u].present ? 1 : 0;
                    std::copy(records[u].values.begin(), records[u].values.end(), xm.row(u).begin());
                }
                f.modality_x.push_back(std::move(xm));
                f.modality_present.push_back(std::move(present));
            }
            break;
        }
    }
    return f;
}

// One (technique, subset, run): train, evaluate, return metrics.
std::map<std::string, double> execute_run(const Problem& p, const ExperimentConfig& cfg,
                                          const CellPlan& plan, const CellFeatures& f,
                                          std::size_t run_index) {
    const std::uint64_t run_seed = cfg.base_seed + run_index;
    const std::uint64_t cell_seed = stream_key(
        run_seed, {kCellStream, static_cast<std::uint64_t>(plan.technique) + 1, plan.subset_mask});
    const RunLayout layout = layout_for_run(p, run_index);

    // Restrict the split to units this cell kept, mapped to feature rows.
    const auto rows_for = [&](const std::vector<std::size_t>& unit_idx) {
        std::vector<std::size_t> rows, units;
        for (std::size_t u : unit_idx) {
            if (u < f.row_of.size() && f.row_of[u] != CellFeatures::npos) {
                rows.push_back(f.row_of[u]);
                units.push_back(u);
            }
        }
        return std::make_pair(rows, units);
    };

    if (p.user_mode) {
        const auto [train_rows, train_units] = rows_for(layout.train);
        const auto [test_rows, test_units] = rows_for(layout.test);
        if (train_rows.empty() || test_rows.empty()) {
            throw DataError("empty train or test split");
        }
        std::vector<int> y;
        y.reserve(train_units.size());
        for (std::size_t u : train_units) y.push_back(p.cls_labels[u]);
        const Model model = fit_logreg(gather_rows(f.x, train_rows), y, cfg.logreg);
        const Matrix probs = predict_proba(model, gather_rows(f.x, test_rows));
        return eval_metrics(p, test_units, probs);
    }

    if (plan.technique == Technique::late) {
        const std::size_t n_units = p.units.size();
        const std::size_t k = p.classes;
        const double uniform = 1.0 / static_cast<double>(k);

        // Per-modality base model, trained where the modality is present.
        std::vector<Matrix> unit_probs;
        for (std::size_t mi = 0; mi < plan.subset.size(); ++mi) {
            std::vector<std::size_t> train_rows;
            for (std::size_t u : layout.train) {
                if (f.modality_present[mi][u]) train_rows.push_back(u);
            }
            if (train_rows.empty()) {
                throw DataError("modality '" + plan.subset[mi] + "' has no training items");
            }
            const TrainConfig tc =
                cell_train_config(cfg, plan.technique, p.task, plan.subset,
                                  stream_key(cell_seed, {kShuffleSub, 1 + mi}));
            const NetworkSpec spec = canned_network(
                CannedNet::concat_mlp, f.modality_x[mi].cols, k,
                stream_key(cell_seed, {kInitSub, 1 + mi}), width_cap_for(cfg, plan.technique));
            const Matrix xt = gather_rows(f.modality_x[mi], train_rows);
            const Matrix yt = targets_for(p, train_rows);
            const Model model = train(spec, xt, yt, tc);

            // Predict every unit that has the modality; others stay uniform.
            std::vector<std::size_t> have;
            for (std::size_t u = 0; u < n_units; ++u) {
                if (f.modality_present[mi][u]) have.push_back(u);
            }
            Matrix probs(n_units, k);
            for (double& v : probs.v) v = uniform;
            const Matrix ph = predict_proba(model, gather_rows(f.modality_x[mi], have));
            for (std::size_t i = 0; i < have.size(); ++i) {
                std::copy_n(ph.v.data() + i * k, k, probs.v.data() + have[i] * k);
            }
            unit_probs.push_back(std::move(probs));
        }

        Matrix test_probs(layout.test.size(), k);
        if (plan.subset.size() == 1) {
            // A single modality is just its base model.
            test_probs = gather_rows(unit_probs[0], layout.test);
        } else if (cfg.late_combiner == LateCombiner::concat_head) {
            Matrix head_x(n_units, plan.subset.size() * k);
            for (std::size_t u = 0; u < n_units; ++u) {
                for (std::size_t mi = 0; mi < unit_probs.size(); ++mi) {
                    std::copy_n(unit_probs[mi].v.data() + u * k, k,
                                head_x.row(u).begin() + mi * k);
                }
            }
            const TrainConfig tc = cell_train_config(cfg, plan.technique, p.task, plan.subset,
                                                     stream_key(cell_seed, {kShuffleSub, 0}));
            const NetworkSpec spec =
                canned_network(CannedNet::prob_head, head_x.cols, k,
                               stream_key(cell_seed, {kInitSub, 0}), width_cap_for(cfg, plan.technique));
            const Model head = train(spec, gather_rows(head_x, layout.train),
                                     targets_for(p, layout.train), tc);
            test_probs = predict_proba(head, gather_rows(head_x, layout.test));
        } else {
            for (std::size_t i = 0; i < layout.test.size(); ++i) {
                const std::size_t u = layout.test[i];
                std::vector<std::vector<double>> outputs;
                outputs.reserve(unit_probs.size());
                for (const auto& probs : unit_probs) {
                    outputs.emplace_back(probs.v.begin() + u * k, probs.v.begin() + (u + 1) * k);
                }
                const auto combined = late_combine(outputs, cfg.late_combiner);
                std::copy(combined.begin(), combined.end(), test_probs.row(i).begin());
            }
        }
        return eval_metrics(p, layout.test, test_probs);
    }

    // early / sketch / sketch_binarized on item units.
    const auto [train_rows, train_units] = rows_for(layout.train);
    const auto [val_rows, val_units] = rows_for(layout.val);
    const auto [test_rows, test_units] = rows_for(layout.test);
    if (train_rows.empty() || test_rows.empty()) throw DataError("empty train or test split");

    const TrainConfig tc = cell_train_config(cfg, plan.technique, p.task, plan.subset,
                                             stream_key(cell_seed, {kShuffleSub, 0}));
    const CannedNet arch = p.task == Task::multilabel
                               ? CannedNet::multilabel_mlp
                               : (plan.technique == Technique::early ? CannedNet::concat_mlp
                                                                     : CannedNet::sketch_mlp);
    const NetworkSpec spec = canned_network(arch, f.x.cols, p.classes,
                                            stream_key(cell_seed, {kInitSub, 0}),
                                            width_cap_for(cfg, plan.technique));
    const Matrix xt = gather_rows(f.x, train_rows);
    const Matrix yt = targets_for(p, train_units);
    Model model;
    if (!val_rows.empty()) {
        const Matrix xv = gather_rows(f.x, val_rows);
        const Matrix yv = targets_for(p, val_units);
        model = train(spec, xt, yt, tc, &xv, &yv);
    } else {
        model = train(spec, xt, yt, tc);
    }
    const Matrix probs = predict_proba(model, gather_rows(f.x, test_rows));
    return eval_metrics(p, test_units, probs);
}

void run_cell(const Problem& p, const ExperimentConfig& cfg, const CellPlan& plan,
              RunRecord* out) {
    std::optional<CellFeatures> features;
    std::string build_error;
    try {
        features = build_features(p, cfg, plan);
    } catch (const Error& e) {
        build_error = e.what();
    }

    for (std::size_t r = 0; r < cfg.n_runs; ++r) {
        RunRecord& rec = out[r];
        rec.technique = technique_name(plan.technique);
        rec.subset = plan.subset;
        rec.run_index = r;
        rec.seed = cfg.base_seed + r;
        if (!features) {
            rec.failed = true;
            rec.error = build_error;
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        try {
            rec.metrics = execute_run(p, cfg, plan, *features, r);
        } catch (const Error& e) {
            rec.failed = true;
            rec.error = e.what();
        }
        rec.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset* dataset) {
    const auto t0 = std::chrono::steady_clock::now();

    Dataset owned;
    const Dataset* ds = dataset;
    if (!ds) {
        if (cfg.manifest_path) {
            owned = load_dataset(*cfg.manifest_path);
        } else if (cfg.synth) {
            owned = synth_generate(*cfg.synth);
        } else {
            throw ConfigError("config has no dataset source");
        }
        ds = &owned;
    }
    const ValidationReport vreport = validate_manifest(*ds);

    Problem p = build_problem(*ds, cfg);
    check_supported(cfg, p);
    const auto subsets = resolve_subsets(cfg, ds->manifest);

    // Leakage audit over every distinct fold layout used by the runs.
    nlohmann::json audit;
    audit["dataset"] = validation_report_to_json(vreport);
    audit["n_units"] = p.units.size();
    audit["split"] = nlohmann::json::array();
    const std::size_t distinct_layouts =
        p.split.kind == SplitPlan::Kind::fractions
            ? 1
            : std::min<std::size_t>(cfg.n_runs, p.split.folds.size());
    for (std::size_t r = 0; r < distinct_layouts; ++r) {
        const RunLayout l = layout_for_run(p, r);
        const std::size_t tt = overlap_count(l.train, l.test);
        const std::size_t tv = overlap_count(l.train, l.val);
        const std::size_t vt = overlap_count(l.val, l.test);
        if (tt || tv || vt) throw DataError("split produced overlapping index sets");
        nlohmann::json e;
        e["layout"] = r;
        e["n_train"] = l.train.size();
        e["n_val"] = l.val.size();
        e["n_test"] = l.test.size();
        e["train_test_overlap"] = tt;
        e["train_val_overlap"] = tv;
        e["val_test_overlap"] = vt;
        audit["split"].push_back(e);
    }

    std::vector<CellPlan> cells;
    for (Technique t : cfg.techniques) {
        for (const auto& s : subsets) {
            cells.push_back(CellPlan{t, s, subset_mask_of(s, ds->manifest)});
        }
    }

    ExperimentResult result;
    result.task = p.task;
    result.records.resize(cells.size() * cfg.n_runs);

    std::size_t n_threads = cfg.threads == 0 ? std::thread::hardware_concurrency() : cfg.threads;
    n_threads = std::max<std::size_t>(1, std::min(n_threads, cells.size()));
    if (n_threads <= 1) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            run_cell(p, cfg, cells[c], result.records.data() + c * cfg.n_runs);
        }
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (;;) {
                const std::size_t c = next.fetch_add(1);
                if (c >= cells.size()) break;
                run_cell(p, cfg, cells[c], result.records.data() + c * cfg.n_runs);
            }
        };
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    result.cells = aggregate_records(result.records);
    for (const auto& cell : result.cells) {
        if (cell.n_ok == 0) result.any_cell_all_failed = true;
    }
    audit["cells_total"] = cells.size();
    audit["runs_total"] = result.records.size();
    result.audit = std::move(audit);
    result.wall_ms_total =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// ---------------------------------------------------------------------------
// Records and reports

nlohmann::json records_to_json(const std::vector<RunRecord>& records) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records) {
        nlohmann::json e;
        e["technique"] = r.technique;
        e["subset"] = r.subset;
        e["run"] = r.run_index;
        e["seed"] = r.seed;
        if (r.failed) {
            e["failed"] = true;
            e["error"] = r.error;
        } else {
            e["metrics"] = r.metrics;
        }
        arr.push_back(std::move(e));
    }
    nlohmann::json j;
    j["records"] = std::move(arr);
    return j;
}

std::vector<RunRecord> records_from_json(const nlohmann::json& j) {
    try {
        std::vector<RunRecord> out;
        for (const auto& e : j.at("records")) {
            RunRecord r;
            r.technique = e.at("technique").get<std::string>();
            r.subset = e.at("subset").get<std::vector<std::string>>();
            r.run_index = e.at("run").get<std::size_t>();
            r.seed = e.at("seed").get<std::uint64_t>();
            if (e.value("failed", false)) {
                r.failed = true;
                r.error = e.value("error", std::string{});
            } else {
                for (const auto& [name, value] : e.at("metrics").items()) {
                    r.metrics[name] = value.get<double>();
                }
            }
            out.push_back(std::move(r));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("records parse: ") + e.what());
    }
}

std::vector<CellStats> aggregate_records(const std::vector<RunRecord>& records) {
    std::vector<CellStats> cells;
    std::map<std::pair<std::string, std::vector<std::string>>, std::size_t> index;
    for (const auto& r : records) {
        const auto key = std::make_pair(r.technique, r.subset);
        if (!index.contains(key)) {
            index[key] = cells.size();
            CellStats c;
            c.technique = r.technique;
            c.subset = r.subset;
            cells.push_back(std::move(c));
        }
    }
    // Collect successful runs per cell and metric.
    std::vector<std::map<std::string, std::vector<double>>> values(cells.size());
    for (const auto& r : records) {
        if (r.failed) continue;
        const std::size_t c = index.at(std::make_pair(r.technique, r.subset));
        cells[c].n_ok += 1;
        for (const auto& [name, v] : r.metrics) values[c][name].push_back(v);
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (const auto& [name, vs] : values[c]) {
            double mean = 0;
            for (double v : vs) mean += v;
            mean /= static_cast<double>(vs.size());
            double sd = 0;
            if (vs.size() > 1) {
                double acc = 0;
                for (double v : vs) acc += (v - mean) * (v - mean);
                sd = std::sqrt(acc / static_cast<double>(vs.size() - 1));
            }
            cells[c].metrics[name] = {mean, sd};
        }
    }
    return cells;
}

namespace {

std::string subset_label(const std::vector<std::string>& subset) {
    std::string out;
    for (std::size_t i = 0; i < subset.size(); ++i) {
        if (i) out += " & ";
        out += subset[i];
    }
    return out;
}

std::string format_cell(double mean, double sd, bool best) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f ± %.3f", mean, sd);
    return best ? "**" + std::string(buf) + "**" : std::string(buf);
}

}  // namespace

std::string emit_report_markdown(const std::vector<RunRecord>& records) {
    const auto cells = aggregate_records(records);

    // Column = (technique, metric); row = subset. First-appearance order for
    // techniques and subsets, alphabetical metrics within a technique.
    std::vector<std::string> techniques;
    std::vector<std::vector<std::string>> subsets;
    std::map<std::string, std::set<std::string>> tech_metrics;
    for (const auto& c : cells) {
        if (std::find(techniques.begin(), techniques.end(), c.technique) == techniques.end()) {
            techniques.push_back(c.technique);
        }
        if (std::find(subsets.begin(), subsets.end(), c.subset) == subsets.end()) {
            subsets.push_back(c.subset);
        }
        for (const auto& [name, _] : c.metrics) tech_metrics[c.technique].insert(name);
    }
    std::vector<std::pair<std::string, std::string>> columns;
    for (const auto& t : techniques) {
        for (const auto& metric : tech_metrics[t]) columns.emplace_back(t, metric);
    }

    const auto find_cell = [&](const std::string& t,
                               const std::vector<std::string>& s) -> const CellStats* {
        for (const auto& c : cells) {
            if (c.technique == t && c.subset == s) return &c;
        }
        return nullptr;
    };

    // Best mean per column, for bolding.
    std::vector<double> best(columns.size(), -std::numeric_limits<double>::infinity());
    for (std::size_t j = 0; j < columns.size(); ++j) {
        for (const auto& s : subsets) {
            const auto* c = find_cell(columns[j].first, s);
            if (c && c->metrics.contains(columns[j].second)) {
                best[j] = std::max(best[j], c->metrics.at(columns[j].second).first);
            }
        }
    }

    std::ostringstream os;
    os << "| modalities |";
    for (const auto& [t, metric] : columns) {
        if (tech_metrics[t].size() == 1) os << " " << t << " |";
        else os << " " << t << " (" << metric << ") |";
    }
    os << "\n|---|";
    for (std::size_t j = 0; j < columns.size(); ++j) os << "---|";
    os << "\n";
    for (const auto& s : subsets) {
        os << "| " << subset_label(s) << " |";
        for (std::size_t j = 0; j < columns.size(); ++j) {
            const auto* c = find_cell(columns[j].first, s);
            if (!c || c->n_ok == 0 || !c->metrics.contains(columns[j].second)) {
                os << " n/a |";
            } else {
                const auto [mean, sd] = c->metrics.at(columns[j].second);
                os << " " << format_cell(mean, sd, mean == best[j]) << " |";
            }
        }
        os << "\n";
    }
    return os.str();
}

nlohmann::json emit_report_json(const ExperimentResult& result) {
    nlohmann::json j;
    j["task"] = task_name(result.task);
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : result.cells) {
        nlohmann::json e;
        e["technique"] = c.technique;
        e["subset"] = c.subset;
        e["n_ok"] = c.n_ok;
        nlohmann::json metrics = nlohmann::json::object();
        for (const auto& [name, ms] : c.metrics) {
            metrics[name] = {{"mean", ms.first}, {"std", ms.second}};
        }
        e["metrics"] = std::move(metrics);
        cells.push_back(std::move(e));
    }
    j["cells"] = std::move(cells);
    j["verdict"] = ablation_verdict_to_json(
        ablation_verdict(result.records, primary_metric_for(result.task)));
    j["audit"] = result.audit;
    j["timings"] = {{"total_ms", result.wall_ms_total}};
    return j;
}

AblationVerdict ablation_verdict(const std::vector<RunRecord>& records, const std::string& metric) {
    const auto cells = aggregate_records(records);
    AblationVerdict verdict;
    verdict.metric = metric;

    // technique -> subset -> mean.
    std::map<std::string, std::map<std::vector<std::string>, double>> mean_of;
    std::map<std::string, std::set<std::string>> tech_modalities;
    std::vector<std::string> tech_order;
    for (const auto& c : cells) {
        if (c.n_ok == 0 || !c.metrics.contains(metric)) continue;
        if (!mean_of.contains(c.technique)) tech_order.push_back(c.technique);
        mean_of[c.technique][c.subset] = c.metrics.at(metric).first;
        for (const auto& name : c.subset) tech_modalities[c.technique].insert(name);
    }

    for (const auto& t : tech_order) {
        const auto& table = mean_of.at(t);
        for (const auto& [subset, fused] : table) {
            if (subset.size() < 2) continue;
            SubsetVerdict sv;
            sv.technique = t;
            sv.subset = subset;
            sv.fused = fused;
            bool complete = true;
            sv.best_single = -std::numeric_limits<double>::infinity();
            for (const auto& name : subset) {
                const auto it = table.find({name});
                if (it == table.end()) {
                    complete = false;
                    break;
                }
                if (it->second > sv.best_single) {
                    sv.best_single = it->second;
                    sv.best_single_name = name;
                }
            }
            if (!complete) continue;  // constituents were not evaluated alone
            sv.boost = sv.fused > sv.best_single;
            verdict.subsets.push_back(std::move(sv));
        }

        for (const auto& name : tech_modalities.at(t)) {
            ModalityVerdict mv;
            mv.technique = t;
            mv.modality = name;
            double delta_sum = 0;
            for (const auto& [subset, with] : table) {
                if (subset.size() < 2) continue;
                if (std::find(subset.begin(), subset.end(), name) == subset.end()) continue;
                std::vector<std::string> without;
                for (const auto& s : subset) {
                    if (s != name) without.push_back(s);
                }
                const auto it = table.find(without);
                if (it == table.end()) continue;
                delta_sum += with - it->second;
                mv.pairs += 1;
            }
            if (mv.pairs == 0) continue;
            mv.mean_delta = delta_sum / static_cast<double>(mv.pairs);
            mv.contributing = mv.mean_delta > 0;
            verdict.modalities.push_back(std::move(mv));
        }
    }
    return verdict;
}

nlohmann::json ablation_verdict_to_json(const AblationVerdict& v) {
    nlohmann::json j;
    j["metric"] = v.metric;
    nlohmann::json subsets = nlohmann::json::array();
    for (const auto& s : v.subsets) {
        subsets.push_back({{"technique", s.technique},
                           {"subset", s.subset},
                           {"fused", s.fused},
                           {"best_single", s.best_single},
                           {"best_single_name", s.best_single_name},
                           {"boost", s.boost}});
    }
    j["subsets"] = std::move(subsets);
    nlohmann::json modalities = nlohmann::json::array();
    for (const auto& m : v.modalities) {
        modalities.push_back({{"technique", m.technique},
                              {"modality", m.modality},
                              {"pairs", m.pairs},
                              {"mean_delta", m.mean_delta},
                              {"contributing", m.contributing}});
    }
    j["modalities"] = std::move(modalities);
    return j;
}

}  // namespace mmfuse
