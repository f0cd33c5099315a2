#include "mmfuse/synth.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "mmfuse/rng.hpp"

namespace mmfuse {

namespace {

// Stream tags; each (tag, indices...) path is an independent random stream.
constexpr std::uint64_t kClassStream = 0x636c73;   // item latent class
constexpr std::uint64_t kLabelStream = 0x6c626c;   // multilabel bits
constexpr std::uint64_t kProjStream = 0x70726a;    // class direction per modality
constexpr std::uint64_t kNoiseStream = 0x6e7a65;   // additive noise
constexpr std::uint64_t kMissStream = 0x6d7373;    // missingness
constexpr std::uint64_t kUserStream = 0x757372;    // user attributes and picks

// Distance between class centers relative to unit noise.
constexpr double kClassSeparation = 4.0;

std::string pad_id(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
    return buf;
}

}  // namespace

void SynthSpec::validate() const {
    if (n_items == 0) throw SpecError("synth: n_items must be positive");
    if (classes < 2) throw SpecError("synth: need at least 2 classes");
    if (modalities.empty()) throw SpecError("synth: need at least one modality");
    std::set<std::string> names;
    for (const auto& m : modalities) {
        if (m.name.empty()) throw SpecError("synth: modality name must not be empty");
        if (!names.insert(m.name).second) throw SpecError("synth: duplicate modality '" + m.name + "'");
        if (m.dim == 0) throw SpecError("synth: modality '" + m.name + "' has dim 0");
        if (m.informativeness < 0 || m.informativeness > 1) {
            throw SpecError("synth: informativeness must lie in [0, 1]");
        }
        if (m.missing_rate < 0 || m.missing_rate >= 1) {
            throw SpecError("synth: missing_rate must lie in [0, 1)");
        }
        for (std::size_t c : m.signal_coords) {
            if (c >= classes) throw SpecError("synth: signal coordinate out of class range");
        }
    }
    if (task == Task::multilabel) {
        if (label_density <= 0 || label_density > 1) {
            throw SpecError("synth: label_density must lie in (0, 1]");
        }
        if (users) throw SpecError("synth: user mode requires the binary task");
    }
    if (users) {
        if (task != Task::binary) throw SpecError("synth: user mode requires the binary task");
        if (users->n_users == 0) throw SpecError("synth: n_users must be positive");
        if (users->min_items == 0 || users->min_items > users->max_items) {
            throw SpecError("synth: need 1 <= min_items <= max_items");
        }
        if (users->preference_strength < 0 || users->preference_strength > 1) {
            throw SpecError("synth: preference_strength must lie in [0, 1]");
        }
    } else if (task == Task::binary && classes != 2) {
        throw SpecError("synth: binary task without users needs exactly 2 classes");
    }
}

Dataset synth_generate(const SynthSpec& spec) {
    spec.validate();
    const std::size_t n = spec.n_items;
    const std::size_t K = spec.classes;

    Dataset ds;
    ds.manifest.task = spec.task;
    ds.manifest.items.reserve(n);
    for (std::size_t i = 0; i < n; ++i) ds.manifest.items.push_back(pad_id("item", i));

    // Latent class per item (drives embeddings; also the label unless the
    // task is multilabel or user-driven).
    std::vector<std::size_t> latent(n);
    for (std::size_t i = 0; i < n; ++i) {
        SplitMix64 g(stream_key(spec.seed, {kClassStream, i}));
        latent[i] = static_cast<std::size_t>(uniform_below(g, K));
    }

    std::vector<std::vector<std::uint8_t>> hot;  // multilabel ground truth
    if (spec.task == Task::multilabel) {
        hot.assign(n, std::vector<std::uint8_t>(K, 0));
        for (std::size_t i = 0; i < n; ++i) {
            bool any = false;
            for (std::size_t k = 0; k < K; ++k) {
                if (unit_double(stream_key(spec.seed, {kLabelStream, i, k})) <= spec.label_density) {
                    hot[i][k] = 1;
                    any = true;
                }
            }
            if (!any) hot[i][latent[i]] = 1;  // keep every item at least one label
        }
    }

    for (std::size_t mi = 0; mi < spec.modalities.size(); ++mi) {
        const auto& mod = spec.modalities[mi];
        ds.manifest.modalities.push_back(ModalityId{mod.name, mod.dim});
        ds.manifest.modality_files[mod.name] = mod.name + ".emb1";

        // Unit direction per class this modality can express.
        std::vector<bool> sees(K, mod.signal_coords.empty());
        for (std::size_t c : mod.signal_coords) sees[c] = true;
        std::vector<std::vector<double>> dir(K);
        for (std::size_t k = 0; k < K; ++k) {
            if (!sees[k]) continue;
            dir[k].resize(mod.dim);
            const std::uint64_t key = stream_key(spec.seed, {kProjStream, mi, k});
            double norm2 = 0;
            for (std::size_t j = 0; j < mod.dim; ++j) {
                dir[k][j] = normal_at(key, j);
                norm2 += dir[k][j] * dir[k][j];
            }
            if (norm2 > 0) {
                const double inv = 1.0 / std::sqrt(norm2);
                for (double& v : dir[k]) v *= inv;
            }
        }

        std::vector<EmbeddingRecord> records;
        records.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            EmbeddingRecord rec;
            rec.item_id = ds.manifest.items[i];
            rec.values.assign(mod.dim, 0.0);
            const bool absent =
                mod.missing_rate > 0 &&
                unit_double(stream_key(spec.seed, {kMissStream, mi, i})) <= mod.missing_rate;
            rec.present = !absent;
            if (rec.present) {
                const double gain = kClassSeparation * mod.informativeness;
                if (gain > 0) {
                    if (spec.task == Task::multilabel) {
                        for (std::size_t k = 0; k < K; ++k) {
                            if (hot[i][k] && sees[k]) {
                                for (std::size_t j = 0; j < mod.dim; ++j) {
                                    rec.values[j] += gain * dir[k][j];
                                }
                            }
                        }
                    } else if (sees[latent[i]]) {
                        for (std::size_t j = 0; j < mod.dim; ++j) {
                            rec.values[j] += gain * dir[latent[i]][j];
                        }
                    }
                }
                const std::uint64_t noise_key = stream_key(spec.seed, {kNoiseStream, mi, i});
                for (std::size_t j = 0; j < mod.dim; ++j) {
                    rec.values[j] += normal_at(noise_key, j);
                }
                // Pin to f32 so in-memory and saved/reloaded data agree.
                for (double& v : rec.values) v = static_cast<double>(static_cast<float>(v));
            }
            records.push_back(std::move(rec));
        }
        ds.embeddings[mod.name] = std::move(records);
    }

    // Labels.
    ds.manifest.labels.task = spec.task;
    if (spec.task == Task::multilabel) {
        ds.manifest.labels.num_classes = K;
        for (std::size_t i = 0; i < n; ++i) ds.manifest.labels.hot[ds.manifest.items[i]] = hot[i];
    } else if (!spec.users) {
        ds.manifest.labels.num_classes = spec.task == Task::binary ? 2 : K;
        for (std::size_t i = 0; i < n; ++i) {
            ds.manifest.labels.cls[ds.manifest.items[i]] = static_cast<int>(latent[i]);
        }
    } else {
        // User mode: users prefer one half of the class space; the label is
        // the preference group. Class halves split at K/2 (low half first).
        const auto& u = *spec.users;
        std::vector<std::vector<std::size_t>> by_class(K);
        for (std::size_t i = 0; i < n; ++i) by_class[latent[i]].push_back(i);
        const std::size_t half = K / 2;  // group 0 sees [0, half), group 1 the rest

        ds.manifest.labels.num_classes = 2;
        for (std::size_t ui = 0; ui < u.n_users; ++ui) {
            const std::string user_id = pad_id("user", ui);
            const int group =
                unit_double(stream_key(spec.seed, {kUserStream, ui, 0})) < 0.5 ? 0 : 1;
            SplitMix64 count_g(stream_key(spec.seed, {kUserStream, ui, 1}));
            const std::size_t n_picks =
                u.min_items + static_cast<std::size_t>(
                                  uniform_below(count_g, u.max_items - u.min_items + 1));
            std::vector<std::string> picks;
            picks.reserve(n_picks);
            for (std::size_t s = 0; s < n_picks; ++s) {
                SplitMix64 g(stream_key(spec.seed, {kUserStream, ui, 2, s}));
                const bool own = g.next_unit() <= u.preference_strength;
                const int side = own ? group : 1 - group;
                const std::size_t lo = side == 0 ? 0 : half;
                const std::size_t hi = side == 0 ? half : K;
                const std::size_t cls =
                    lo + static_cast<std::size_t>(uniform_below(g, hi - lo));
                const auto& members = by_class[cls];
                // Repeat picks are allowed; counts accumulate in the sketch.
                const std::size_t item =
                    members.empty()
                        ? static_cast<std::size_t>(uniform_below(g, n))
                        : members[static_cast<std::size_t>(uniform_below(g, members.size()))];
                picks.push_back(ds.manifest.items[item]);
            }
            ds.manifest.interactions[user_id] = std::move(picks);
            ds.manifest.labels.cls[user_id] = group;
        }
    }
    return ds;
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    try {
        SynthSpec spec;
        spec.task = task_from_name(j.at("task").get<std::string>());
        spec.n_items = j.at("n_items").get<std::size_t>();
        spec.classes = j.at("classes").get<std::size_t>();
        spec.seed = j.value("seed", std::uint64_t{0});
        spec.label_density = j.value("label_density", 0.3);
        for (const auto& e : j.at("modalities")) {
            SynthModality m;
            m.name = e.at("name").get<std::string>();
            m.dim = e.at("dim").get<std::size_t>();
            m.informativeness = e.value("informativeness", 1.0);
            m.missing_rate = e.value("missing_rate", 0.0);
            if (e.contains("signal_coords")) {
                m.signal_coords = e.at("signal_coords").get<std::vector<std::size_t>>();
            }
            spec.modalities.push_back(std::move(m));
        }
        if (j.contains("users")) {
            const auto& ju = j.at("users");
            SynthUsers u;
            u.n_users = ju.at("n_users").get<std::size_t>();
            u.min_items = ju.value("min_items", std::size_t{1});
            u.max_items = ju.value("max_items", u.min_items);
            u.preference_strength = ju.value("preference_strength", 0.8);
            spec.users = u;
        }
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw SpecError(std::string("synth spec: ") + e.what());
    } catch (const ManifestError& e) {
        throw SpecError(std::string("synth spec: ") + e.what());
    }
}

}  // namespace mmfuse
