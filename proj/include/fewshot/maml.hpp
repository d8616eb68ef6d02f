#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fewshot/episodes.hpp"
#include "fewshot/network.hpp"

namespace fewshot {

struct InnerLoopConfig {
    int steps = 5;
    double alpha = 0.05;
    bool freeze_encoder = false;
};

enum class Variant { vanilla, fo, pm, unicorn };
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

// One plain gradient-descent step on the summed support cross-entropy.
void inner_step(ParamSet& params, std::span<const Example> support, double alpha,
                bool freeze_encoder);

// M plain GD steps from a copy of `params`; steps = 0 returns the copy
// unchanged. Requires per-class heads.
ParamSet inner_loop(const ParamSet& params, std::span<const Example> support,
                    const InnerLoopConfig& cfg);

struct MetaGrad {
    double query_loss = 0.0;
    GradSet grad;
    double query_acc = 0.0;
};

// First-order meta-gradient: adapt on the support set, then evaluate the
// summed query-loss gradient at the adapted parameters and return it as the
// gradient with respect to the initialization.
MetaGrad fo_meta_grad(const ParamSet& params, const Episode& ep, const InnerLoopConfig& cfg);

// Shared-head variant: the shared head is duplicated per class for the inner
// loop; its outer gradient is the coordinate-wise sum of the per-class head
// gradients. The encoder gradient passes through unchanged.
MetaGrad unicorn_meta_grad(const ParamSet& params, const Episode& ep,
                           const InnerLoopConfig& cfg);

// Minimizer of the initial (pre-adaptation) support loss over all n_way!
// relabelings; ties resolve to the lexicographically first permutation.
// The returned permutation is meant for apply_permutation on the episode.
Permutation select_permutation_min_support_loss(const ParamSet& params, const Episode& ep);

// Deterministic relabeling used by the sorted-assignment variant: the class
// with the smallest global id gets label 1, and so on. A function of the
// sampled class set only.
Permutation sorted_label_permutation(const Episode& ep);

struct TrainConfig {
    Variant variant = Variant::vanilla;
    int epochs = 30;
    int tasks_per_epoch = 100;
    int task_batch_size = 1;  // meta-gradients in a batch are averaged
    EpisodeSpec spec;
    InnerLoopConfig inner;
    double lr_encoder = 1e-3;
    double lr_heads = 1e-2;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int decay_epochs = 20;
    std::uint64_t seed = 0;
};

struct EpochStats {
    int epoch = 0;
    double mean_query_loss = 0.0;
    double mean_query_acc = 0.0;
    double lr_encoder = 0.0;
    double lr_heads = 0.0;
    double wall_ms = 0.0;
};

struct TrainLog {
    std::vector<EpochStats> epochs;
};

void write_train_log_csv(const std::string& path, const TrainLog& log);

struct TrainResult {
    ParamSet params;
    TrainLog log;
};

// Episode i of the run draws its seed from (cfg.seed, "train-ep", i), so the
// stream is identical no matter how task batches are spread over threads.
TrainResult meta_train(const ClassPool& pool, const TrainConfig& cfg, const ParamSet& init);

struct PretrainResult {
    std::vector<AffineLayer> encoder;
    std::size_t input_dim = 0;
    std::vector<double> epoch_accuracy;  // whole-pool training accuracy per epoch
};

// Standard supervised warm-up: encoder plus a throwaway linear head over all
// base classes, trained with mini-batch SGD on mean cross-entropy. Only the
// encoder survives.
PretrainResult pretrain_encoder(const ClassPool& pool,
                                const std::vector<std::size_t>& encoder_sizes, int epochs,
                                double lr, int batch_size, std::uint64_t seed);

}  // namespace fewshot
