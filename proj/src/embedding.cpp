#include "mmfuse/embedding.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "mmfuse/binio.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

namespace {
constexpr std::uint64_t kSplitStream = 0x73706c69;  // split permutations
}

std::string task_name(Task t) {
    switch (t) {
        case Task::multiclass: return "multiclass";
        case Task::multilabel: return "multilabel";
        case Task::binary: return "binary";
    }
    return "?";
}

Task task_from_name(const std::string& name) {
    if (name == "multiclass") return Task::multiclass;
    if (name == "multilabel") return Task::multilabel;
    if (name == "binary") return Task::binary;
    throw ManifestError("unknown task '" + name + "'");
}

const ModalityId& DatasetManifest::modality(const std::string& name) const {
    for (const auto& m : modalities) {
        if (m.name == name) return m;
    }
    throw MissingModality("modality '" + name + "' is not declared");
}

const std::vector<EmbeddingRecord>& Dataset::records(const std::string& modality) const {
    const auto it = embeddings.find(modality);
    if (it == embeddings.end()) throw MissingModality("no embeddings loaded for '" + modality + "'");
    return it->second;
}

namespace {

bool is_all_zero(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

void check_record_content(const EmbeddingRecord& rec, std::size_t row, const LoadOptions& opts) {
    if (!rec.present) {
        if (!is_all_zero(rec.values)) {
            throw FormatError("record " + std::to_string(row) + " ('" + rec.item_id +
                              "') is flagged absent but carries nonzero values");
        }
    } else if (!opts.allow_zero && is_all_zero(rec.values)) {
        throw FormatError("record " + std::to_string(row) + " ('" + rec.item_id +
                          "') is present yet all-zero; pass allow_zero to accept");
    }
    for (double v : rec.values) {
        if (!std::isfinite(v)) {
            throw FormatError("non-finite value in record " + std::to_string(row) + " ('" +
                              rec.item_id + "')");
        }
    }
}

}  // namespace

std::vector<EmbeddingRecord> load_embeddings(std::istream& in, const ModalityId& expected,
                                             const LoadOptions& opts) {
    binio::expect_magic(in, "EMB1");
    const std::size_t dim = binio::get_u32(in, "embedding dim");
    if (dim != expected.dim) throw DimError(-1, dim, expected.dim);
    const std::uint64_t count = binio::get_u64(in, "record count");

    std::vector<EmbeddingRecord> out;
    out.reserve(count < (1u << 20) ? count : (1u << 20));
    std::set<std::string> seen;
    for (std::uint64_t i = 0; i < count; ++i) {
        EmbeddingRecord rec;
        const std::uint16_t id_len = binio::get_u16(in, "id length");
        rec.item_id.resize(id_len);
        if (id_len > 0) binio::read_exact(in, rec.item_id.data(), id_len, "item id");
        const std::uint8_t present = binio::get_u8(in, "present flag");
        if (present > 1) throw FormatError("present flag must be 0/1 in record " + std::to_string(i));
        rec.present = present == 1;
        rec.values.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            rec.values[d] = static_cast<double>(binio::get_f32(in, "embedding value"));
        }
        if (!seen.insert(rec.item_id).second) {
            throw DuplicateError("duplicate item id '" + rec.item_id + "'");
        }
        check_record_content(rec, static_cast<std::size_t>(i), opts);
        out.push_back(std::move(rec));
    }
    return out;
}

void save_embeddings(std::ostream& out, const std::vector<EmbeddingRecord>& records,
                     const ModalityId& modality) {
    binio::put_magic(out, "EMB1");
    binio::put_u32(out, static_cast<std::uint32_t>(modality.dim));
    binio::put_u64(out, records.size());
    for (const auto& rec : records) {
        if (rec.values.size() != modality.dim) {
            throw DimError(static_cast<std::ptrdiff_t>(&rec - records.data()), rec.values.size(),
                           modality.dim);
        }
        if (rec.item_id.size() > 0xffff) {
            throw FormatError("item id longer than 65535 bytes");
        }
        binio::put_u16(out, static_cast<std::uint16_t>(rec.item_id.size()));
        out.write(rec.item_id.data(), static_cast<std::streamsize>(rec.item_id.size()));
        binio::put_u8(out, rec.present ? 1 : 0);
        for (double v : rec.values) binio::put_f32(out, static_cast<float>(v));
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double_field(const std::string& s, std::size_t row) {
    double v = 0;
    const char* begin = s.data();
    const char* end = begin + s.size();
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) {
        throw FormatError("bad numeric field '" + s + "' in record " + std::to_string(row));
    }
    return v;
}

}  // namespace

std::vector<EmbeddingRecord> load_embeddings_csv(std::istream& in, const ModalityId& expected,
                                                 const LoadOptions& opts) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty CSV stream");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    {
        const auto header = split_csv_line(line);
        if (header.size() < 2 || header[0] != "item_id" || header[1] != "present") {
            throw FormatError("CSV header must start with item_id,present");
        }
        if (header.size() - 2 != expected.dim) throw DimError(-1, header.size() - 2, expected.dim);
    }

    std::vector<EmbeddingRecord> out;
    std::set<std::string> seen;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != expected.dim + 2) {
            throw DimError(static_cast<std::ptrdiff_t>(row),
                           fields.size() >= 2 ? fields.size() - 2 : 0, expected.dim);
        }
        EmbeddingRecord rec;
        rec.item_id = fields[0];
        if (fields[1] == "1") rec.present = true;
        else if (fields[1] == "0") rec.present = false;
        else throw FormatError("present flag must be 0/1 in record " + std::to_string(row));
        rec.values.resize(expected.dim);
        for (std::size_t d = 0; d < expected.dim; ++d) {
            rec.values[d] = parse_double_field(fields[d + 2], row);
        }
        if (!seen.insert(rec.item_id).second) {
            throw DuplicateError("duplicate item id '" + rec.item_id + "'");
        }
        check_record_content(rec, row, opts);
        out.push_back(std::move(rec));
        ++row;
    }
    return out;
}

std::vector<EmbeddingRecord> load_embeddings_file(const std::filesystem::path& path,
                                                  const ModalityId& expected,
                                                  const LoadOptions& opts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open embedding file " + path.string());
    if (path.extension() == ".csv") return load_embeddings_csv(in, expected, opts);
    return load_embeddings(in, expected, opts);
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["task"] = task_name(m.task);
    j["modalities"] = nlohmann::json::array();
    for (const auto& mod : m.modalities) {
        nlohmann::json e;
        e["name"] = mod.name;
        e["dim"] = mod.dim;
        const auto it = m.modality_files.find(mod.name);
        e["file"] = it != m.modality_files.end() ? it->second : mod.name + ".emb1";
        j["modalities"].push_back(e);
    }
    j["items"] = m.items;
    j["classes"] = m.labels.num_classes;
    nlohmann::json labels = nlohmann::json::object();
    if (m.task == Task::multilabel) {
        for (const auto& [id, row] : m.labels.hot) {
            labels[id] = row;
        }
    } else {
        for (const auto& [id, c] : m.labels.cls) {
            labels[id] = c;
        }
    }
    j["labels"] = std::move(labels);
    if (!m.interactions.empty()) {
        nlohmann::json inter = nlohmann::json::object();
        for (const auto& [user, item_ids] : m.interactions) {
            inter[user] = item_ids;
        }
        j["interactions"] = std::move(inter);
    }
    return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
    try {
        DatasetManifest m;
        m.task = task_from_name(j.at("task").get<std::string>());
        for (const auto& e : j.at("modalities")) {
            ModalityId mod{e.at("name").get<std::string>(), e.at("dim").get<std::size_t>()};
            if (mod.dim == 0) throw ManifestError("modality '" + mod.name + "' has dim 0");
            for (const auto& existing : m.modalities) {
                if (existing.name == mod.name) {
                    throw ManifestError("modality '" + mod.name + "' declared twice");
                }
            }
            m.modality_files[mod.name] =
                e.contains("file") ? e.at("file").get<std::string>() : mod.name + ".emb1";
            m.modalities.push_back(std::move(mod));
        }
        m.items = j.at("items").get<std::vector<std::string>>();
        m.labels.task = m.task;

        const auto& labels = j.at("labels");
        if (!labels.is_object()) throw ManifestError("labels must be an object");
        std::size_t max_class = 0;
        for (const auto& [id, value] : labels.items()) {
            if (m.task == Task::multilabel) {
                if (!value.is_array()) throw ManifestError("multilabel labels must be 0/1 arrays");
                std::vector<std::uint8_t> row;
                row.reserve(value.size());
                for (const auto& v : value) {
                    const int b = v.get<int>();
                    if (b != 0 && b != 1) throw ManifestError("multilabel entries must be 0/1");
                    row.push_back(static_cast<std::uint8_t>(b));
                }
                m.labels.hot[id] = std::move(row);
            } else {
                const int c = value.get<int>();
                if (c < 0) throw ManifestError("negative class label for '" + id + "'");
                max_class = std::max(max_class, static_cast<std::size_t>(c));
                m.labels.cls[id] = c;
            }
        }
        switch (m.task) {
            case Task::multiclass:
                m.labels.num_classes = max_class + 1;
                break;
            case Task::binary:
                m.labels.num_classes = 2;
                break;
            case Task::multilabel: {
                if (m.labels.hot.empty()) throw ManifestError("no labels");
                m.labels.num_classes = m.labels.hot.begin()->second.size();
                break;
            }
        }
        if (j.contains("classes")) {
            const auto k = j.at("classes").get<std::size_t>();
            if (k < m.labels.num_classes) {
                throw ManifestError("declared class count " + std::to_string(k) +
                                    " is smaller than observed labels");
            }
            m.labels.num_classes = k;
        }

        if (j.contains("interactions")) {
            for (const auto& [user, item_ids] : j.at("interactions").items()) {
                m.interactions[user] = item_ids.get<std::vector<std::string>>();
            }
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError(std::string("manifest parse: ") + e.what());
    }
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw ManifestError("cannot open manifest " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError(std::string("manifest parse: ") + e.what());
    }

    Dataset ds;
    ds.manifest = manifest_from_json(j);
    const auto dir = manifest_path.parent_path();

    std::map<std::string, std::size_t> item_pos;
    for (std::size_t i = 0; i < ds.manifest.items.size(); ++i) {
        if (!item_pos.emplace(ds.manifest.items[i], i).second) {
            throw ManifestError("item '" + ds.manifest.items[i] + "' declared twice");
        }
    }

    for (const auto& mod : ds.manifest.modalities) {
        const auto file = dir / ds.manifest.modality_files.at(mod.name);
        auto records = load_embeddings_file(file, mod);
        if (records.size() != ds.manifest.items.size()) {
            throw ManifestError("modality '" + mod.name + "' has " +
                                std::to_string(records.size()) + " records for " +
                                std::to_string(ds.manifest.items.size()) + " items");
        }
        std::vector<EmbeddingRecord> aligned(records.size());
        std::vector<bool> filled(records.size(), false);
        for (auto& rec : records) {
            const auto it = item_pos.find(rec.item_id);
            if (it == item_pos.end()) {
                throw ManifestError("modality '" + mod.name + "' has a record for undeclared item '" +
                                    rec.item_id + "'");
            }
            filled[it->second] = true;
            aligned[it->second] = std::move(rec);
        }
        for (std::size_t i = 0; i < filled.size(); ++i) {
            if (!filled[i]) {
                throw ManifestError("modality '" + mod.name + "' lacks a record for item '" +
                                    ds.manifest.items[i] + "'");
            }
        }
        ds.embeddings[mod.name] = std::move(aligned);
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json", std::ios::binary);
        if (!out) throw FormatError("cannot write manifest in " + dir.string());
        out << manifest_to_json(ds.manifest).dump(2) << "\n";
    }
    for (const auto& mod : ds.manifest.modalities) {
        const auto it = ds.manifest.modality_files.find(mod.name);
        const std::string file = it != ds.manifest.modality_files.end() ? it->second : mod.name + ".emb1";
        std::ofstream out(dir / file, std::ios::binary);
        if (!out) throw FormatError("cannot write embeddings in " + dir.string());
        save_embeddings(out, ds.records(mod.name), mod);
    }
}

// ---------------------------------------------------------------------------
// Splits

SplitIndices make_split(std::size_t n_items, const SplitPlan& plan) {
    if (n_items == 0) throw SplitError("cannot split zero items");

    std::vector<std::size_t> perm(n_items);
    std::iota(perm.begin(), perm.end(), 0);
    SplitMix64 g(stream_key(plan.seed, {kSplitStream}));
    shuffle(perm, g);

    SplitIndices out;
    out.kind = plan.kind;

    if (plan.kind == SplitPlan::Kind::fractions) {
        if (n_items < 10) throw SplitError("fraction split needs at least 10 items");
        for (double f : {plan.train, plan.val, plan.test}) {
            if (f < 0 || f > 1) throw SplitError("split fractions must lie in [0, 1]");
        }
        if (std::abs(plan.train + plan.val + plan.test - 1.0) > 1e-9) {
            throw SplitError("split fractions must sum to 1");
        }
        const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n_items) * plan.val));
        const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n_items) * plan.test));
        const std::size_t n_train = n_items - n_val - n_test;
        if (n_train == 0) throw SplitError("train split is empty");
        // Permutation is consumed train, then val, then test.
        out.train.assign(perm.begin(), perm.begin() + n_train);
        out.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
        out.test.assign(perm.begin() + n_train + n_val, perm.end());
    } else {
        if (plan.k < 2) throw SplitError("k-fold needs k >= 2");
        if (plan.test_fraction < 0 || plan.test_fraction >= 1) {
            throw SplitError("holdout fraction must lie in [0, 1)");
        }
        const auto n_test =
            static_cast<std::size_t>(std::floor(static_cast<double>(n_items) * plan.test_fraction));
        const std::size_t pool = n_items - n_test;
        if (pool < plan.k) throw SplitError("fewer pool items than folds");
        out.test.assign(perm.begin(), perm.begin() + n_test);
        const std::vector<std::size_t> rest(perm.begin() + n_test, perm.end());
        // Chunk sizes differ by at most one; the first pool % k chunks are larger.
        const std::size_t base = pool / plan.k;
        const std::size_t extra = pool % plan.k;
        std::size_t at = 0;
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        for (std::size_t f = 0; f < plan.k; ++f) {
            const std::size_t len = base + (f < extra ? 1 : 0);
            spans.emplace_back(at, len);
            at += len;
        }
        for (std::size_t f = 0; f < plan.k; ++f) {
            Fold fold;
            fold.val.assign(rest.begin() + spans[f].first,
                            rest.begin() + spans[f].first + spans[f].second);
            for (std::size_t o = 0; o < plan.k; ++o) {
                if (o == f) continue;
                fold.train.insert(fold.train.end(), rest.begin() + spans[o].first,
                                  rest.begin() + spans[o].first + spans[o].second);
            }
            std::sort(fold.train.begin(), fold.train.end());
            std::sort(fold.val.begin(), fold.val.end());
            out.folds.push_back(std::move(fold));
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

SplitPlan split_plan_from_json(const nlohmann::json& j) {
    try {
        SplitPlan plan;
        const auto kind = j.value("kind", std::string("fractions"));
        if (kind == "fractions") {
            plan.kind = SplitPlan::Kind::fractions;
            plan.train = j.value("train", 0.6);
            plan.val = j.value("val", 0.2);
            plan.test = j.value("test", 0.2);
        } else if (kind == "holdout_kfold") {
            plan.kind = SplitPlan::Kind::holdout_kfold;
            plan.test_fraction = j.value("test", 0.2);
            plan.k = j.value("k", std::size_t{5});
        } else {
            throw ConfigError("unknown split kind '" + kind + "'");
        }
        plan.seed = j.value("seed", std::uint64_t{0});
        return plan;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("split config: ") + e.what());
    }
}

nlohmann::json split_plan_to_json(const SplitPlan& plan) {
    nlohmann::json j;
    if (plan.kind == SplitPlan::Kind::fractions) {
        j["kind"] = "fractions";
        j["train"] = plan.train;
        j["val"] = plan.val;
        j["test"] = plan.test;
    } else {
        j["kind"] = "holdout_kfold";
        j["test"] = plan.test_fraction;
        j["k"] = plan.k;
    }
    j["seed"] = plan.seed;
    return j;
}

// ---------------------------------------------------------------------------
// Validation

ValidationReport validate_manifest(const Dataset& ds) {
    const DatasetManifest& m = ds.manifest;
    ValidationReport r;
    r.n_items = m.items.size();
    r.n_users = m.interactions.size();

    if (m.modalities.empty()) throw ManifestError("manifest declares no modalities");
    if (m.items.empty()) throw ManifestError("manifest declares no items");

    std::set<std::string> item_set;
    for (const auto& id : m.items) {
        if (!item_set.insert(id).second) throw ManifestError("item '" + id + "' declared twice");
    }

    for (const auto& mod : m.modalities) {
        const auto& records = ds.records(mod.name);
        if (records.size() != m.items.size()) {
            throw ManifestError("modality '" + mod.name + "' is not aligned with the item list");
        }
        std::size_t absent = 0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& rec = records[i];
            if (rec.item_id != m.items[i]) {
                throw ManifestError("modality '" + mod.name + "' record order does not match items");
            }
            if (rec.values.size() != mod.dim) {
                throw ManifestError("modality '" + mod.name + "' record '" + rec.item_id +
                                    "' has dim " + std::to_string(rec.values.size()) + ", want " +
                                    std::to_string(mod.dim));
            }
            if (!rec.present) {
                ++absent;
                if (!is_all_zero(rec.values)) {
                    throw ManifestError("absent record '" + rec.item_id + "' carries nonzero values");
                }
            }
        }
        r.dims[mod.name] = mod.dim;
        r.missing_rate[mod.name] =
            static_cast<double>(absent) / static_cast<double>(records.size());
    }

    // Interactions may only reference declared items.
    for (const auto& [user, item_ids] : m.interactions) {
        if (item_ids.empty()) r.notes.push_back("user '" + user + "' has no interactions");
        for (const auto& id : item_ids) {
            if (!item_set.contains(id)) {
                throw ManifestError("user '" + user + "' references undeclared item '" + id + "'");
            }
        }
    }

    // Labels must cover every unit (users when interactions drive the task).
    const bool user_units = m.task == Task::binary && m.has_interactions();
    std::vector<std::string> units;
    if (user_units) {
        units.reserve(m.interactions.size());
        for (const auto& [user, _] : m.interactions) units.push_back(user);
    } else {
        units = m.items;
    }
    const std::set<std::string> unit_set(units.begin(), units.end());

    if (m.task == Task::multilabel) {
        if (m.labels.num_classes == 0) throw ManifestError("multilabel manifest declares no labels");
        for (const auto& id : units) {
            const auto it = m.labels.hot.find(id);
            if (it == m.labels.hot.end()) throw ManifestError("unit '" + id + "' has no label");
            if (it->second.size() != m.labels.num_classes) {
                throw ManifestError("label arity mismatch for '" + id + "'");
            }
            for (std::size_t c = 0; c < it->second.size(); ++c) {
                if (it->second[c]) ++r.class_counts[static_cast<int>(c)];
            }
        }
        for (const auto& [id, _] : m.labels.hot) {
            if (!unit_set.contains(id)) throw ManifestError("label for unknown unit '" + id + "'");
        }
    } else {
        for (const auto& id : units) {
            const auto it = m.labels.cls.find(id);
            if (it == m.labels.cls.end()) throw ManifestError("unit '" + id + "' has no label");
            if (it->second < 0 || static_cast<std::size_t>(it->second) >= m.labels.num_classes) {
                throw ManifestError("label out of range for '" + id + "'");
            }
            ++r.class_counts[it->second];
        }
        for (const auto& [id, _] : m.labels.cls) {
            if (!unit_set.contains(id)) throw ManifestError("label for unknown unit '" + id + "'");
        }
        for (std::size_t c = 0; c < m.labels.num_classes; ++c) {
            if (!r.class_counts.contains(static_cast<int>(c))) {
                r.notes.push_back("class " + std::to_string(c) + " has no labeled units");
            }
        }
    }
    return r;
}

nlohmann::json validation_report_to_json(const ValidationReport& r) {
    nlohmann::json j;
    j["n_items"] = r.n_items;
    j["n_users"] = r.n_users;
    j["dims"] = r.dims;
    j["missing_rate"] = r.missing_rate;
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [c, n] : r.class_counts) counts[std::to_string(c)] = n;
    j["class_counts"] = std::move(counts);
    j["notes"] = r.notes;
    return j;
}

}  // namespace mmfuse
