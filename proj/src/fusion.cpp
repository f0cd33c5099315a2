#include "mmfuse/fusion.hpp"

#include <cmath>

namespace mmfuse {

namespace {

void check_finite(std::span<const double> v, const std::string& what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NonFiniteError("non-finite value in " + what);
    }
}

void check_distribution(std::span<const double> v, std::size_t which) {
    double sum = 0;
    for (double x : v) {
        if (x < -1e-9) {
            throw SpecError("late fusion input " + std::to_string(which) + " has negative mass");
        }
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw SpecError("late fusion input " + std::to_string(which) +
                        " is not a probability vector (sum " + std::to_string(sum) + ")");
    }
}

}  // namespace

std::optional<FusedVector> early_fuse(std::span<const EmbeddingRecord> records,
                                      const FusionPlan& plan) {
    if (plan.modalities.empty()) throw SpecError("fusion plan has no modalities");
    if (records.size() != plan.modalities.size()) {
        throw DimError(-1, records.size(), plan.modalities.size());
    }

    FusedVector out;
    out.item_id = records.front().item_id;
    std::size_t total = 0;
    for (const auto& m : plan.modalities) total += m.dim;
    out.values.reserve(total);

    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        const auto& mod = plan.modalities[i];
        if (rec.item_id != out.item_id) {
            throw SpecError("early fusion got records for different items ('" + out.item_id +
                            "' vs '" + rec.item_id + "')");
        }
        if (rec.values.size() != mod.dim) {
            throw DimError(static_cast<std::ptrdiff_t>(i), rec.values.size(), mod.dim);
        }
        if (!rec.present) {
            switch (plan.missing_policy) {
                case MissingPolicy::skip_item:
                    return std::nullopt;
                case MissingPolicy::error:
                    throw MissingInput("item '" + rec.item_id + "' lacks modality '" + mod.name + "'");
                case MissingPolicy::zeros:
                    break;
            }
        } else {
            check_finite(rec.values, "modality '" + mod.name + "'");
        }
        Segment seg;
        seg.modality = mod;
        seg.offset = out.values.size();
        seg.length = mod.dim;
        seg.present = rec.present;
        out.segments.push_back(seg);
        out.values.insert(out.values.end(), rec.values.begin(), rec.values.end());
    }
    return out;
}

FusedVector sketch_fuse(const std::vector<std::pair<ModalityId, std::vector<double>>>& parts,
                        const std::string& item_id) {
    if (parts.empty()) throw MissingInput("sketch fusion needs at least one part");
    FusedVector out;
    out.item_id = item_id;
    for (const auto& [mod, values] : parts) {
        check_finite(values, "sketch for '" + mod.name + "'");
        Segment seg;
        seg.modality = mod;
        seg.offset = out.values.size();
        seg.length = values.size();
        seg.present = true;
        out.segments.push_back(seg);
        out.values.insert(out.values.end(), values.begin(), values.end());
    }
    return out;
}

std::vector<double> late_combine(const std::vector<std::vector<double>>& outputs,
                                 LateCombiner combiner) {
    if (outputs.empty()) throw MissingInput("late fusion needs at least one model output");
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        check_finite(outputs[i], "late fusion input " + std::to_string(i));
    }

    if (combiner == LateCombiner::concat_head) {
        std::vector<double> out;
        for (const auto& o : outputs) out.insert(out.end(), o.begin(), o.end());
        return out;
    }

    const std::size_t k = outputs.front().size();
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        if (outputs[i].size() != k) throw DimError(static_cast<std::ptrdiff_t>(i), outputs[i].size(), k);
        check_distribution(outputs[i], i);
    }

    std::vector<double> out(k, 0.0);
    if (combiner == LateCombiner::mean) {
        for (const auto& o : outputs) {
            for (std::size_t j = 0; j < k; ++j) out[j] += o[j];
        }
        for (double& v : out) v /= static_cast<double>(outputs.size());
    } else {  // majority_vote
        for (const auto& o : outputs) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j) {
                if (o[j] > o[best]) best = j;
            }
            out[best] += 1.0;
        }
        for (double& v : out) v /= static_cast<double>(outputs.size());
    }
    return out;
}

}  // namespace mmfuse
