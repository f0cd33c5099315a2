#include "mmfuse/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mmfuse/binio.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;     // weight init
constexpr std::uint64_t kDropStream = 0x64726f70;     // dropout masks
constexpr std::uint64_t kShuffleStream = 0x73686600;  // epoch shuffles
constexpr std::uint64_t kMaskStream = 0x6d736b00;     // per-batch mask seeds

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;  // weight of the old running estimate
constexpr double kProbFloor = 1e-12;

void check_finite_matrix(const Matrix& m, const char* what) {
    for (double v : m.v) {
        if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value in ") + what);
    }
}

}  // namespace

void NetworkSpec::validate() const {
    if (input_dim == 0) throw SpecError("network input_dim must be positive");
    if (classes == 0) throw SpecError("network needs at least one output");
    if (head == HeadKind::softmax && loss != LossKind::categorical_ce) {
        throw SpecError("softmax head pairs with categorical cross-entropy");
    }
    if (head == HeadKind::sigmoid && loss != LossKind::binary_ce) {
        throw SpecError("sigmoid head pairs with binary cross-entropy");
    }
    if (head == HeadKind::softmax && classes < 2) {
        throw SpecError("softmax head needs at least 2 classes");
    }
    bool any_dense = false;
    std::size_t dim = input_dim;
    for (const auto& l : layers) {
        switch (l.kind) {
            case LayerSpec::Kind::dense:
                if (l.units == 0) throw SpecError("dense layer with 0 units");
                dim = l.units;
                any_dense = true;
                break;
            case LayerSpec::Kind::dropout:
                if (l.rate < 0 || l.rate >= 1) throw SpecError("dropout rate must lie in [0, 1)");
                break;
            case LayerSpec::Kind::batchnorm:
                break;
        }
    }
    if (!any_dense) throw SpecError("network needs at least one dense layer");
    if (dim != classes) {
        throw SpecError("layer stack ends with " + std::to_string(dim) + " features, want " +
                        std::to_string(classes) + " outputs");
    }
}

Model::Model(const NetworkSpec& spec) : spec_(spec) {
    spec_.validate();
    std::size_t dim = spec_.input_dim;
    std::size_t p_off = 0, r_off = 0;
    for (const auto& l : spec_.layers) {
        LayerShape s;
        s.spec = l;
        s.in = dim;
        switch (l.kind) {
            case LayerSpec::Kind::dense:
                s.out = l.units;
                s.w_off = p_off;
                p_off += s.in * s.out;
                s.b_off = p_off;
                p_off += s.out;
                dim = s.out;
                break;
            case LayerSpec::Kind::dropout:
                s.out = dim;
                break;
            case LayerSpec::Kind::batchnorm:
                s.out = dim;
                s.g_off = p_off;
                p_off += dim;
                s.be_off = p_off;
                p_off += dim;
                s.rm_off = r_off;
                r_off += dim;
                s.rv_off = r_off;
                r_off += dim;
                break;
        }
        shapes_.push_back(s);
    }
    params_.assign(p_off, 0.0);
    running_.assign(r_off, 0.0);

    for (std::size_t li = 0; li < shapes_.size(); ++li) {
        const auto& s = shapes_[li];
        if (s.spec.kind == LayerSpec::Kind::dense) {
            const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
            const std::uint64_t key = stream_key(spec_.init_seed, {kInitStream, li});
            for (std::size_t o = 0; o < s.out; ++o) {
                for (std::size_t i = 0; i < s.in; ++i) {
                    const double u = unit_double(stream_at(key, o * s.in + i));
                    params_[s.w_off + o * s.in + i] = (2.0 * u - 1.0) * limit;
                }
            }
            // biases stay 0
        } else if (s.spec.kind == LayerSpec::Kind::batchnorm) {
            for (std::size_t j = 0; j < s.out; ++j) {
                params_[s.g_off + j] = 1.0;
                running_[s.rm_off + j] = 0.0;
                running_[s.rv_off + j] = 1.0;
            }
        }
    }
}

namespace {

// Per-layer activations and statistics captured for the backward pass.
struct Trace {
    std::vector<Matrix> acts;  // acts[l] = input of layer l; acts.back() = head input
    std::vector<std::vector<double>> drop_mask;
    std::vector<Matrix> bn_xhat;
    std::vector<std::vector<double>> bn_inv_std;
    Matrix probs;
};

Matrix forward_impl(const Model& model, const Matrix& x, const ForwardOptions& opt, Trace* tr,
                    std::vector<double>* running_mut) {
    const auto& spec = model.spec();
    if (x.cols != spec.input_dim) throw DimError(-1, x.cols, spec.input_dim);
    if (x.rows == 0) throw SpecError("forward pass over an empty batch");
    check_finite_matrix(x, "network input");

    const auto& P = model.params();
    const auto& R = model.running();
    const std::size_t L = model.shapes().size();
    if (tr) {
        tr->acts.clear();
        tr->drop_mask.assign(L, {});
        tr->bn_xhat.assign(L, {});
        tr->bn_inv_std.assign(L, {});
    }

    Matrix cur = x;
    for (std::size_t li = 0; li < L; ++li) {
        const auto& s = model.shapes()[li];
        if (tr) tr->acts.push_back(cur);
        switch (s.spec.kind) {
            case LayerSpec::Kind::dense: {
                Matrix next(cur.rows, s.out);
                for (std::size_t i = 0; i < cur.rows; ++i) {
                    const auto xi = cur.row(i);
                    auto yi = next.row(i);
                    for (std::size_t o = 0; o < s.out; ++o) {
                        const double* w = P.data() + s.w_off + o * s.in;
                        double acc = P[s.b_off + o];
                        for (std::size_t j = 0; j < s.in; ++j) acc += w[j] * xi[j];
                        yi[o] = acc;
                    }
                }
                if (s.spec.activation == Activation::relu) {
                    for (double& v : next.v) v = v > 0 ? v : 0.0;
                }
                cur = std::move(next);
                break;
            }
            case LayerSpec::Kind::dropout: {
                if (opt.mode == Mode::train && s.spec.rate > 0) {
                    const double keep = 1.0 - s.spec.rate;
                    const double scale = 1.0 / keep;
                    std::vector<double> mask(cur.rows * cur.cols);
                    for (std::size_t i = 0; i < cur.rows; ++i) {
                        for (std::size_t j = 0; j < cur.cols; ++j) {
                            const double u = unit_double(stream_key(opt.mask_seed, {kDropStream, li, i, j}));
                            mask[i * cur.cols + j] = u <= keep ? scale : 0.0;
                        }
                    }
                    for (std::size_t e = 0; e < mask.size(); ++e) cur.v[e] *= mask[e];
                    if (tr) tr->drop_mask[li] = std::move(mask);
                }
                // infer mode (or rate 0): exact identity
                break;
            }
            case LayerSpec::Kind::batchnorm: {
                const std::size_t d = s.out;
                const double n = static_cast<double>(cur.rows);
                if (opt.mode == Mode::train) {
                    std::vector<double> mean(d, 0.0), var(d, 0.0), inv_std(d);
                    for (std::size_t i = 0; i < cur.rows; ++i) {
                        for (std::size_t j = 0; j < d; ++j) mean[j] += cur.at(i, j);
                    }
                    for (double& m : mean) m /= n;
                    for (std::size_t i = 0; i < cur.rows; ++i) {
                        for (std::size_t j = 0; j < d; ++j) {
                            const double c = cur.at(i, j) - mean[j];
                            var[j] += c * c;
                        }
                    }
                    for (double& v : var) v /= n;  // biased, matching the running estimate
                    for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + kBnEps);

                    Matrix xhat(cur.rows, d);
                    for (std::size_t i = 0; i < cur.rows; ++i) {
                        for (std::size_t j = 0; j < d; ++j) {
                            xhat.at(i, j) = (cur.at(i, j) - mean[j]) * inv_std[j];
                            cur.at(i, j) = P[s.g_off + j] * xhat.at(i, j) + P[s.be_off + j];
                        }
                    }
                    if (running_mut && opt.update_running) {
                        for (std::size_t j = 0; j < d; ++j) {
                            (*running_mut)[s.rm_off + j] =
                                kBnMomentum * (*running_mut)[s.rm_off + j] + (1 - kBnMomentum) * mean[j];
                            (*running_mut)[s.rv_off + j] =
                                kBnMomentum * (*running_mut)[s.rv_off + j] + (1 - kBnMomentum) * var[j];
                        }
                    }
                    if (tr) {
                        tr->bn_xhat[li] = std::move(xhat);
                        tr->bn_inv_std[li] = std::move(inv_std);
                    }
                } else {
                    for (std::size_t i = 0; i < cur.rows; ++i) {
                        for (std::size_t j = 0; j < d; ++j) {
                            const double inv = 1.0 / std::sqrt(R[s.rv_off + j] + kBnEps);
                            cur.at(i, j) =
                                P[s.g_off + j] * (cur.at(i, j) - R[s.rm_off + j]) * inv + P[s.be_off + j];
                        }
                    }
                }
                break;
            }
        }
    }
    if (tr) tr->acts.push_back(cur);  // head input (logits)

    Matrix probs(cur.rows, cur.cols);
    if (spec.head == HeadKind::softmax) {
        for (std::size_t i = 0; i < cur.rows; ++i) {
            const auto zi = cur.row(i);
            auto pi = probs.row(i);
            double zmax = zi[0];
            for (double z : zi) zmax = std::max(zmax, z);
            double sum = 0;
            for (std::size_t j = 0; j < cur.cols; ++j) {
                pi[j] = std::exp(zi[j] - zmax);
                sum += pi[j];
            }
            for (std::size_t j = 0; j < cur.cols; ++j) pi[j] /= sum;
        }
    } else {
        for (std::size_t e = 0; e < cur.v.size(); ++e) {
            const double z = cur.v[e];
            probs.v[e] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        }
    }
    if (tr) tr->probs = probs;
    return probs;
}

}  // namespace

Matrix forward(Model& model, const Matrix& x, const ForwardOptions& opt) {
    std::vector<double>* running_mut =
        opt.mode == Mode::train && opt.update_running ? &model.running() : nullptr;
    return forward_impl(model, x, opt, nullptr, running_mut);
}

Matrix predict_proba(const Model& model, const Matrix& x) {
    return forward_impl(model, x, ForwardOptions{Mode::infer, 0, false}, nullptr, nullptr);
}

double loss_from_probs(const Matrix& probs, const Matrix& targets, LossKind kind) {
    if (probs.rows != targets.rows || probs.cols != targets.cols) {
        throw DimError(-1, targets.rows * targets.cols, probs.rows * probs.cols);
    }
    if (probs.rows == 0) throw SpecError("loss over an empty batch");
    double loss = 0;
    if (kind == LossKind::categorical_ce) {
        for (std::size_t i = 0; i < probs.rows; ++i) {
            for (std::size_t j = 0; j < probs.cols; ++j) {
                const double t = targets.at(i, j);
                if (t != 0) loss -= t * std::log(std::max(probs.at(i, j), kProbFloor));
            }
        }
        loss /= static_cast<double>(probs.rows);
    } else {
        for (std::size_t e = 0; e < probs.v.size(); ++e) {
            const double p = probs.v[e];
            const double t = targets.v[e];
            loss -= t * std::log(std::max(p, kProbFloor)) +
                    (1 - t) * std::log(std::max(1 - p, kProbFloor));
        }
        loss /= static_cast<double>(probs.rows * probs.cols);
    }
    return loss;
}

double loss_and_grad(Model& model, const Matrix& x, const Matrix& y, std::uint64_t mask_seed,
                     std::vector<double>& grad, bool update_running) {
    const auto& spec = model.spec();
    if (y.cols != spec.classes) throw DimError(-1, y.cols, spec.classes);
    if (y.rows != x.rows) throw DimError(-1, y.rows, x.rows);

    Trace tr;
    std::vector<double>* running_mut = update_running ? &model.running() : nullptr;
    forward_impl(model, x, ForwardOptions{Mode::train, mask_seed, update_running}, &tr, running_mut);
    const double loss = loss_from_probs(tr.probs, y, spec.loss);

    grad.assign(model.params().size(), 0.0);
    const auto& P = model.params();
    const std::size_t n = x.rows;

    // Head + loss collapse to (probs - targets) with the batch scaling.
    Matrix delta(tr.probs.rows, tr.probs.cols);
    const double denom = spec.loss == LossKind::categorical_ce
                             ? static_cast<double>(n)
                             : static_cast<double>(n * spec.classes);
    for (std::size_t e = 0; e < delta.v.size(); ++e) {
        delta.v[e] = (tr.probs.v[e] - y.v[e]) / denom;
    }

    for (std::size_t li = model.shapes().size(); li-- > 0;) {
        const auto& s = model.shapes()[li];
        const Matrix& input = tr.acts[li];
        switch (s.spec.kind) {
            case LayerSpec::Kind::dense: {
                if (s.spec.activation == Activation::relu) {
                    const Matrix& out = tr.acts[li + 1];  // post-activation output
                    for (std::size_t e = 0; e < delta.v.size(); ++e) {
                        if (out.v[e] <= 0) delta.v[e] = 0;
                    }
                }
                Matrix prev(input.rows, s.in);
                for (std::size_t i = 0; i < input.rows; ++i) {
                    const auto xi = input.row(i);
                    const auto di = delta.row(i);
                    auto pi = prev.row(i);
                    for (std::size_t o = 0; o < s.out; ++o) {
                        const double d = di[o];
                        if (d == 0) continue;
                        double* gw = grad.data() + s.w_off + o * s.in;
                        const double* w = P.data() + s.w_off + o * s.in;
                        for (std::size_t j = 0; j < s.in; ++j) {
                            gw[j] += d * xi[j];
                            pi[j] += d * w[j];
                        }
                        grad[s.b_off + o] += d;
                    }
                }
                delta = std::move(prev);
                break;
            }
            case LayerSpec::Kind::dropout: {
                const auto& mask = tr.drop_mask[li];
                if (!mask.empty()) {
                    for (std::size_t e = 0; e < delta.v.size(); ++e) delta.v[e] *= mask[e];
                }
                break;
            }
            case LayerSpec::Kind::batchnorm: {
                const std::size_t d = s.out;
                const double nb = static_cast<double>(delta.rows);
                const Matrix& xhat = tr.bn_xhat[li];
                const auto& inv_std = tr.bn_inv_std[li];
                std::vector<double> sum_d(d, 0.0), sum_dx(d, 0.0);
                for (std::size_t i = 0; i < delta.rows; ++i) {
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dy = delta.at(i, j);
                        grad[s.g_off + j] += dy * xhat.at(i, j);
                        grad[s.be_off + j] += dy;
                        const double dxh = dy * P[s.g_off + j];
                        sum_d[j] += dxh;
                        sum_dx[j] += dxh * xhat.at(i, j);
                    }
                }
                for (std::size_t i = 0; i < delta.rows; ++i) {
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = delta.at(i, j) * P[s.g_off + j];
                        delta.at(i, j) =
                            inv_std[j] / nb * (nb * dxh - sum_d[j] - xhat.at(i, j) * sum_dx[j]);
                    }
                }
                break;
            }
        }
    }
    return loss;
}

double loss_value(Model& model, const Matrix& x, const Matrix& y, std::uint64_t mask_seed) {
    const auto& spec = model.spec();
    if (y.cols != spec.classes) throw DimError(-1, y.cols, spec.classes);
    if (y.rows != x.rows) throw DimError(-1, y.rows, x.rows);
    const Matrix probs =
        forward_impl(model, x, ForwardOptions{Mode::train, mask_seed, false}, nullptr, nullptr);
    return loss_from_probs(probs, y, spec.loss);
}

namespace {

struct AdamState {
    std::vector<double> m, v;
    double b1t = 1.0, b2t = 1.0;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grad, const AdamConfig& cfg) {
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * grad[i] * grad[i];
            const double mhat = m[i] / (1 - b1t);
            const double vhat = v[i] / (1 - b2t);
            params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
};

void check_targets(const Matrix& y, const NetworkSpec& spec) {
    if (spec.loss == LossKind::categorical_ce) {
        for (std::size_t i = 0; i < y.rows; ++i) {
            double sum = 0;
            for (std::size_t j = 0; j < y.cols; ++j) {
                const double t = y.at(i, j);
                if (t < 0) throw SpecError("categorical targets must be non-negative");
                sum += t;
            }
            if (std::abs(sum - 1.0) > 1e-6) {
                throw SpecError("categorical target row " + std::to_string(i) + " does not sum to 1");
            }
        }
    } else {
        for (double t : y.v) {
            if (t < 0 || t > 1) throw SpecError("binary targets must lie in [0, 1]");
        }
    }
}

}  // namespace

Model train(const NetworkSpec& spec, const Matrix& x, const Matrix& y, const TrainConfig& cfg,
            const Matrix* x_val, const Matrix* y_val) {
    spec.validate();
    if (x.rows == 0) throw SpecError("training set is empty");
    if (x.cols != spec.input_dim) throw DimError(-1, x.cols, spec.input_dim);
    if (y.rows != x.rows) throw DimError(-1, y.rows, x.rows);
    if (y.cols != spec.classes) throw DimError(-1, y.cols, spec.classes);
    if (cfg.batch_size == 0) throw SpecError("batch_size must be positive");
    if ((x_val == nullptr) != (y_val == nullptr)) throw SpecError("validation needs both x and y");
    check_finite_matrix(x, "training input");
    check_targets(y, spec);

    Model model(spec);
    AdamState adam(model.params().size());
    std::vector<double> grad;
    const std::size_t n = x.rows;

    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        SplitMix64 g(stream_key(cfg.shuffle_seed, {kShuffleStream, epoch}));
        shuffle(order, g);

        double loss_sum = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            const std::size_t bn = stop - start;
            Matrix xb(bn, x.cols), yb(bn, y.cols);
            for (std::size_t i = 0; i < bn; ++i) {
                const std::size_t src = order[start + i];
                std::copy_n(x.v.data() + src * x.cols, x.cols, xb.v.data() + i * x.cols);
                std::copy_n(y.v.data() + src * y.cols, y.cols, yb.v.data() + i * y.cols);
            }
            const std::uint64_t mask_seed =
                stream_key(cfg.shuffle_seed, {kMaskStream, epoch, batch_index});
            const double loss = loss_and_grad(model, xb, yb, mask_seed, grad);
            if (!std::isfinite(loss)) throw TrainingDiverged(epoch);
            adam.step(model.params(), grad, cfg.adam);
            loss_sum += loss * static_cast<double>(bn);
        }
        model.history().push_back(loss_sum / static_cast<double>(n));

        if (x_val && x_val->rows > 0) {
            const Matrix pv = predict_proba(model, *x_val);
            model.val_history().push_back(loss_from_probs(pv, *y_val, spec.loss));
        }
    }
    return model;
}

Model fit_logreg(const Matrix& x, const std::vector<int>& y, const LogRegConfig& cfg) {
    if (x.rows == 0) throw SpecError("logistic regression needs data");
    if (y.size() != x.rows) throw DimError(-1, y.size(), x.rows);
    if (cfg.c <= 0) throw SpecError("logistic regression C must be positive");
    bool has0 = false, has1 = false;
    for (int label : y) {
        if (label == 0) has0 = true;
        else if (label == 1) has1 = true;
        else throw SpecError("logistic regression labels must be 0/1");
    }
    if (!has0 || !has1) throw DegenerateLabels("labels contain a single class");
    check_finite_matrix(x, "logistic regression input");

    NetworkSpec spec;
    spec.input_dim = x.cols;
    spec.classes = 1;
    spec.head = HeadKind::sigmoid;
    spec.loss = LossKind::binary_ce;
    spec.layers = {LayerSpec::dense(1, Activation::linear)};
    spec.init_seed = 0;

    Model model(spec);
    std::fill(model.params().begin(), model.params().end(), 0.0);  // convex: start flat

    Matrix ym(x.rows, 1);
    for (std::size_t i = 0; i < x.rows; ++i) ym.at(i, 0) = static_cast<double>(y[i]);

    AdamConfig adam_cfg;
    adam_cfg.learning_rate = cfg.learning_rate;
    AdamState adam(model.params().size());
    std::vector<double> grad;
    const auto& shape = model.shapes().front();
    const double n = static_cast<double>(x.rows);
    const double reg = 1.0 / (cfg.c * n);

    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        double loss = loss_and_grad(model, x, ym, 0, grad);
        // L2 penalty on the weights only; the bias is free.
        for (std::size_t j = 0; j < shape.in; ++j) {
            const double w = model.params()[shape.w_off + j];
            loss += 0.5 * reg * w * w;
            grad[shape.w_off + j] += reg * w;
        }
        if (!std::isfinite(loss)) throw TrainingDiverged(iter);
        model.history().push_back(loss);

        double gmax = 0;
        for (double gv : grad) gmax = std::max(gmax, std::abs(gv));
        if (gmax < cfg.tolerance) break;
        adam.step(model.params(), grad, adam_cfg);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::string activation_name(Activation a) {
    return a == Activation::relu ? "relu" : "linear";
}

Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "linear") return Activation::linear;
    throw FormatError("unknown activation '" + s + "'");
}

}  // namespace

nlohmann::json network_spec_to_json(const NetworkSpec& spec) {
    nlohmann::json j;
    j["input_dim"] = spec.input_dim;
    j["classes"] = spec.classes;
    j["head"] = spec.head == HeadKind::softmax ? "softmax" : "sigmoid";
    j["loss"] = spec.loss == LossKind::categorical_ce ? "categorical_ce" : "binary_ce";
    j["init_seed"] = spec.init_seed;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : spec.layers) {
        nlohmann::json e;
        switch (l.kind) {
            case LayerSpec::Kind::dense:
                e["kind"] = "dense";
                e["units"] = l.units;
                e["activation"] = activation_name(l.activation);
                break;
            case LayerSpec::Kind::dropout:
                e["kind"] = "dropout";
                e["rate"] = l.rate;
                break;
            case LayerSpec::Kind::batchnorm:
                e["kind"] = "batchnorm";
                break;
        }
        j["layers"].push_back(e);
    }
    return j;
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
    try {
        NetworkSpec spec;
        spec.input_dim = j.at("input_dim").get<std::size_t>();
        spec.classes = j.at("classes").get<std::size_t>();
        const auto head = j.at("head").get<std::string>();
        if (head == "softmax") spec.head = HeadKind::softmax;
        else if (head == "sigmoid") spec.head = HeadKind::sigmoid;
        else throw FormatError("unknown head '" + head + "'");
        const auto loss = j.at("loss").get<std::string>();
        if (loss == "categorical_ce") spec.loss = LossKind::categorical_ce;
        else if (loss == "binary_ce") spec.loss = LossKind::binary_ce;
        else throw FormatError("unknown loss '" + loss + "'");
        spec.init_seed = j.value("init_seed", std::uint64_t{0});
        for (const auto& e : j.at("layers")) {
            const auto kind = e.at("kind").get<std::string>();
            if (kind == "dense") {
                spec.layers.push_back(LayerSpec::dense(
                    e.at("units").get<std::size_t>(),
                    activation_from_name(e.value("activation", std::string("linear")))));
            } else if (kind == "dropout") {
                spec.layers.push_back(LayerSpec::dropout(e.at("rate").get<double>()));
            } else if (kind == "batchnorm") {
                spec.layers.push_back(LayerSpec::batchnorm());
            } else {
                throw FormatError("unknown layer kind '" + kind + "'");
            }
        }
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("network spec: ") + e.what());
    }
}

void save_model(std::ostream& os, const Model& model) {
    binio::put_magic(os, "MODL");
    binio::put_u32(os, 1);
    const std::string spec = network_spec_to_json(model.spec()).dump();
    binio::put_u32(os, static_cast<std::uint32_t>(spec.size()));
    os.write(spec.data(), static_cast<std::streamsize>(spec.size()));
    binio::put_u64(os, model.params().size());
    for (double p : model.params()) binio::put_f64(os, p);
    binio::put_u64(os, model.running().size());
    for (double r : model.running()) binio::put_f64(os, r);
}

Model load_model(std::istream& is) {
    binio::expect_magic(is, "MODL");
    const std::uint32_t version = binio::get_u32(is, "model version");
    if (version != 1) throw FormatError("unsupported model version " + std::to_string(version));
    const std::uint32_t spec_len = binio::get_u32(is, "spec length");
    std::string spec_text(spec_len, '\0');
    binio::read_exact(is, spec_text.data(), spec_len, "spec json");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(spec_text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model spec parse: ") + e.what());
    }
    Model model(network_spec_from_json(j));
    const std::uint64_t n_params = binio::get_u64(is, "param count");
    if (n_params != model.params().size()) {
        throw FormatError("parameter count does not match the spec");
    }
    for (auto& p : model.params()) p = binio::get_f64(is, "parameter");
    const std::uint64_t n_running = binio::get_u64(is, "running count");
    if (n_running != model.running().size()) {
        throw FormatError("running-stat count does not match the spec");
    }
    for (auto& r : model.running()) r = binio::get_f64(is, "running stat");
    return model;
}

std::string history_jsonl(const Model& model) {
    std::ostringstream os;
    for (std::size_t e = 0; e < model.history().size(); ++e) {
        nlohmann::json j;
        j["epoch"] = e;
        j["loss"] = model.history()[e];
        if (e < model.val_history().size()) j["val_loss"] = model.val_history()[e];
        os << j.dump() << "\n";
    }
    return os.str();
}

NetworkSpec canned_network(CannedNet which, std::size_t input_dim, std::size_t classes,
                           std::uint64_t init_seed, std::size_t width_cap) {
    const auto u = [width_cap](std::size_t w) { return width_cap ? std::min(w, width_cap) : w; };
    NetworkSpec spec;
    spec.input_dim = input_dim;
    spec.classes = classes;
    spec.init_seed = init_seed;
    switch (which) {
        case CannedNet::prob_head:
            spec.layers = {LayerSpec::dense(u(20), Activation::relu), LayerSpec::dense(classes)};
            break;
        case CannedNet::concat_mlp:
            spec.layers = {LayerSpec::dense(u(64), Activation::relu), LayerSpec::dropout(0.1),
                           LayerSpec::dense(u(64), Activation::relu), LayerSpec::dropout(0.1),
                           LayerSpec::dense(u(64), Activation::relu), LayerSpec::dropout(0.1),
                           LayerSpec::dense(u(64), Activation::relu), LayerSpec::dense(classes)};
            break;
        case CannedNet::sketch_mlp:
            spec.layers = {LayerSpec::dense(u(1024), Activation::relu), LayerSpec::dropout(0.2),
                           LayerSpec::batchnorm(),
                           LayerSpec::dense(u(512), Activation::relu), LayerSpec::dropout(0.2),
                           LayerSpec::batchnorm(),
                           LayerSpec::dense(u(128), Activation::relu), LayerSpec::dropout(0.2),
                           LayerSpec::dense(classes)};
            break;
        case CannedNet::multilabel_mlp:
            spec.layers = {LayerSpec::dense(u(1024), Activation::relu),
                           LayerSpec::dense(u(512), Activation::relu),
                           LayerSpec::dense(u(128), Activation::relu), LayerSpec::dense(classes)};
            spec.head = HeadKind::sigmoid;
            spec.loss = LossKind::binary_ce;
            break;
    }
    return spec;
}

}  // namespace mmfuse
