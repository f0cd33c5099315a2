#pragma once

// Small feedforward networks built from scratch: dense / dropout /
// batchnorm layers, softmax or sigmoid heads, Adam training, and an
// L2-regularized logistic regression fit. All math is double precision on
// row-major matrices. Randomness (init, dropout masks, shuffles) comes
// from counter-based streams, so training is deterministic for a given
// seed and batch order, independent of platform or thread count.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfuse/errors.hpp"

namespace mmfuse {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}

    double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
    double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    std::span<const double> row(std::size_t i) const { return {v.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {v.data() + i * cols, cols}; }
};

enum class Activation { linear, relu };
enum class HeadKind { softmax, sigmoid };
enum class LossKind { categorical_ce, binary_ce };

struct LayerSpec {
    enum class Kind { dense, dropout, batchnorm };
    Kind kind = Kind::dense;
    std::size_t units = 0;                      // dense
    Activation activation = Activation::linear;  // dense
    double rate = 0.0;                           // dropout probability

    static LayerSpec dense(std::size_t units, Activation act = Activation::linear) {
        LayerSpec l;
        l.kind = Kind::dense;
        l.units = units;
        l.activation = act;
        return l;
    }
    static LayerSpec dropout(double rate) {
        LayerSpec l;
        l.kind = Kind::dropout;
        l.rate = rate;
        return l;
    }
    static LayerSpec batchnorm() {
        LayerSpec l;
        l.kind = Kind::batchnorm;
        return l;
    }
};

struct NetworkSpec {
    std::size_t input_dim = 0;
    std::vector<LayerSpec> layers;
    HeadKind head = HeadKind::softmax;
    LossKind loss = LossKind::categorical_ce;
    std::size_t classes = 0;
    std::uint64_t init_seed = 0;

    /// softmax pairs with categorical_ce (needs >= 2 classes), sigmoid with
    /// binary_ce; the layer stack must end with `classes` features.
    void validate() const;  // throws SpecError
};

nlohmann::json network_spec_to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t shuffle_seed = 0;
    AdamConfig adam;
};

struct LogRegConfig {
    double c = 0.1;  // inverse regularization strength; weights get ||w||^2 / (2 c n)
    std::size_t max_iters = 2000;
    double tolerance = 1e-7;      // stop when the gradient sup-norm drops below
    double learning_rate = 0.05;  // Adam step size for the full-batch solver
};

/// A network's trainable parameters in one flat vector, plus batchnorm
/// running statistics and training history. Construction initializes
/// weights with a fan-balanced scaled-uniform draw (limit
/// sqrt(6 / (fan_in + fan_out))) from spec.init_seed; biases start at 0,
/// batchnorm at gamma 1 / beta 0 / running mean 0 / running var 1.
class Model {
public:
    struct LayerShape {
        LayerSpec spec;
        std::size_t in = 0, out = 0;
        std::size_t w_off = 0, b_off = 0;    // dense weights / bias
        std::size_t g_off = 0, be_off = 0;   // batchnorm gamma / beta
        std::size_t rm_off = 0, rv_off = 0;  // batchnorm running mean / var
    };

    Model() = default;
    explicit Model(const NetworkSpec& spec);

    const NetworkSpec& spec() const { return spec_; }
    const std::vector<LayerShape>& shapes() const { return shapes_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::vector<double>& running() { return running_; }
    const std::vector<double>& running() const { return running_; }

    /// Per-epoch mean training loss (and validation loss when a validation
    /// set was supplied to train()).
    std::vector<double>& history() { return history_; }
    const std::vector<double>& history() const { return history_; }
    std::vector<double>& val_history() { return val_history_; }
    const std::vector<double>& val_history() const { return val_history_; }

private:
    NetworkSpec spec_;
    std::vector<LayerShape> shapes_;
    std::vector<double> params_;
    std::vector<double> running_;
    std::vector<double> history_;
    std::vector<double> val_history_;
};

enum class Mode { train, infer };

struct ForwardOptions {
    Mode mode = Mode::infer;
    /// Stream key for dropout masks; only read in train mode.
    std::uint64_t mask_seed = 0;
    /// Fold batch statistics into the running estimates (train mode).
    bool update_running = true;
};

/// Full forward pass to class probabilities. Train mode applies inverted
/// dropout and batch statistics (momentum 0.9 running update, eps 1e-5);
/// infer mode is deterministic and uses running statistics.
Matrix forward(Model& model, const Matrix& x, const ForwardOptions& opt);

/// Inference-mode forward on a const model.
Matrix predict_proba(const Model& model, const Matrix& x);

/// Mean loss of probabilities against targets. categorical_ce expects rows
/// of `targets` to be distributions (one-hot or soft); binary_ce expects
/// 0/1 entries. Probabilities are clamped at 1e-12 before the log.
double loss_from_probs(const Matrix& probs, const Matrix& targets, LossKind kind);

/// Train-mode forward + backward. Returns the batch loss and fills `grad`
/// (aligned with model.params()). Dropout masks are regenerated from
/// mask_seed, so repeated calls are reproducible.
double loss_and_grad(Model& model, const Matrix& x, const Matrix& y, std::uint64_t mask_seed,
                     std::vector<double>& grad, bool update_running = true);

/// Train-mode loss only, without touching gradients or running statistics.
/// Used by finite-difference checks.
double loss_value(Model& model, const Matrix& x, const Matrix& y, std::uint64_t mask_seed);

/// Minibatch Adam training with per-epoch reshuffling. Throws
/// TrainingDiverged when the loss stops being finite. When x_val/y_val are
/// given they are only forward-passed for val_history, never trained on.
Model train(const NetworkSpec& spec, const Matrix& x, const Matrix& y, const TrainConfig& cfg,
            const Matrix* x_val = nullptr, const Matrix* y_val = nullptr);

/// L2-regularized logistic regression (full-batch Adam on the convex
/// objective; weights zero-initialized, bias unregularized). Labels must
/// contain both classes. The result is an ordinary Model with a single
/// dense layer and sigmoid head.
Model fit_logreg(const Matrix& x, const std::vector<int>& y, const LogRegConfig& cfg);

// Checkpoint format: "MODL" u32 version=1 | u32 spec_json_len | spec JSON |
// u64 n_params | f64 params | u64 n_running | f64 running. History is not
// part of the checkpoint; emit it with history_jsonl().
void save_model(std::ostream& os, const Model& model);
Model load_model(std::istream& is);

/// One JSON object per epoch: {"epoch":0,"loss":...} plus "val_loss" when
/// validation history exists.
std::string history_jsonl(const Model& model);

/// Stock architectures used by the benchmark runner.
///  - prob_head: small relu head over concatenated class-probability vectors
///  - concat_mlp: relu MLP with light dropout for concatenated embeddings
///  - sketch_mlp: wide relu MLP with dropout + batchnorm for sketch features
///  - multilabel_mlp: deep relu trunk with per-label sigmoid outputs
/// width_cap > 0 shrinks every hidden layer to at most that many units
/// (used for dataset-scale experiments and fast checks).
enum class CannedNet { prob_head, concat_mlp, sketch_mlp, multilabel_mlp };

NetworkSpec canned_network(CannedNet which, std::size_t input_dim, std::size_t classes,
                           std::uint64_t init_seed, std::size_t width_cap = 0);

}  // namespace mmfuse
