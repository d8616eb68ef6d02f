#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fewshot/episodes.hpp"
#include "json.hpp"

namespace fewshot {

// Row-major dense matrix of doubles. All model math is 64-bit.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

struct AffineLayer {
    Matrix weight;             // out x in
    std::vector<double> bias;  // out
};

enum class HeadMode { per_class, shared };

// Encoder is a stack of affine layers with ReLU between them; the last affine
// output is the feature vector. An empty encoder is the identity map. Heads
// are bias-free linear scorers: logits[c] = heads.row(c-1) . feature.
struct ParamSet {
    std::size_t input_dim = 0;
    std::vector<AffineLayer> encoder;
    HeadMode head_mode = HeadMode::per_class;
    Matrix heads;  // per_class: N x F, shared: 1 x F

    std::size_t feature_dim() const {
        return encoder.empty() ? input_dim : encoder.back().weight.rows;
    }
    std::size_t n_heads() const { return heads.rows; }
};

// Gradients share the parameter layout; shape congruence is checked before
// every axpy-style update.
using GradSet = ParamSet;

bool congruent(const ParamSet& a, const ParamSet& b);

// Pointers to every parameter coordinate in declaration order: encoder layer
// weights (row-major) then biases, layer by layer, then head rows. This order
// is also the checkpoint serialization order.
std::vector<double*> param_coords(ParamSet& p);
std::vector<const double*> param_coords(const ParamSet& p);

std::vector<double> encode(const ParamSet& p, std::span<const double> x);
// Requires per_class heads; expand shared heads with duplicate_head first.
std::vector<double> forward_logits(const ParamSet& p, std::span<const double> x);
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> softmax_probs(const ParamSet& p, std::span<const double> x);
// Argmax with ties broken toward the smallest class index. 1-based.
int predict(const ParamSet& p, std::span<const double> x);
double batch_accuracy(const ParamSet& p, std::span<const Example> batch);

// Summed softmax cross-entropy over the batch (not averaged), with analytic
// gradients for every parameter.
struct LossGrad {
    double loss = 0.0;
    GradSet grad;
};
LossGrad batch_loss_and_grad(const ParamSet& p, std::span<const Example> batch);
double batch_loss(const ParamSet& p, std::span<const Example> batch);

// Max over parameter coordinates of |analytic - numeric| / max(1, |numeric|),
// numeric from central differences with the given epsilon.
double grad_check(const ParamSet& p, std::span<const Example> batch, double epsilon);

// SGD with momentum; weight decay is folded into the gradient (g += wd * w)
// before the momentum update. Learning rate per group is
// base * 0.1^floor(epoch / decay_epochs).
struct OuterOptimizer {
    double lr_encoder = 1e-3;
    double lr_heads = 1e-2;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int decay_epochs = 20;
    GradSet velocity;  // zero-initialised, congruent with the trained ParamSet
};

OuterOptimizer make_outer_optimizer(const ParamSet& params, double lr_encoder, double lr_heads,
                                    double momentum = 0.9, double weight_decay = 5e-4,
                                    int decay_epochs = 20);
double lr_scale(const OuterOptimizer& opt, int epoch);
ParamSet outer_step(OuterOptimizer& opt, const ParamSet& params, const GradSet& grad,
                    int epoch);

// Shared head -> n identical per-class heads.
ParamSet duplicate_head(const ParamSet& p, int n);
// Per-class heads -> every head replaced by their coordinate-wise mean.
ParamSet average_heads(const ParamSet& p);
// Moves head c into slot pi(c). Logits permute the same way: new[pi(c)] = old[c].
ParamSet permute_heads(const ParamSet& p, const Permutation& pi);
// Coordinate-wise sum of per-class head gradients into a single shared slot;
// the encoder part passes through unchanged.
GradSet aggregate_head_grads(const GradSet& g);

// He-uniform encoder weights, zero biases, heads Uniform(-1/sqrt(F), 1/sqrt(F)).
// encoder_sizes lists every affine output size; empty means identity encoder.
ParamSet init_params(std::size_t input_dim, const std::vector<std::size_t>& encoder_sizes,
                     HeadMode mode, std::size_t n_heads, std::uint64_t seed);
// Fresh heads from the init distribution; encoder untouched.
ParamSet reinit_heads(const ParamSet& p, std::uint64_t seed);

// ---- checkpoints -------------------------------------------------------------
//
// Binary layout: magic "UMCK", little-endian u32 version (= 1), u32 metadata
// byte length, UTF-8 JSON metadata, then every parameter as little-endian f64
// in declaration order. Round-trips bit-exactly.

struct Checkpoint {
    ParamSet params;
    nlohmann::json metadata;
};

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const nlohmann::json& extra_metadata = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fewshot
