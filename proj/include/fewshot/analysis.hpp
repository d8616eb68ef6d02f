#pragma once

#include <cstdint>
#include <vector>

#include "fewshot/episodes.hpp"
#include "fewshot/maml.hpp"
#include "fewshot/metatest.hpp"
#include "fewshot/network.hpp"

namespace fewshot {

struct SpreadResult {
    // rank_avg_acc[r]: accuracy at descending rank r averaged over tasks, one
    // entry per head-to-label pairing. Non-increasing by construction.
    std::vector<double> rank_avg_acc;
    std::vector<double> per_task_spread;  // per task: best pairing minus worst
};

// Adapts one model per permutation of head pairing for every task and scores
// it on the correspondingly relabeled query set. Shared heads are expanded.
// n_way <= 8.
SpreadResult permutation_spread(const ParamSet& params, const ClassPool& pool,
                                const EpisodeSpec& spec, const InnerLoopConfig& cfg,
                                std::size_t n_tasks, std::uint64_t seed);

struct StepsCurve {
    std::vector<double> acc_at_step;  // length max_steps + 1; entry 0 is pre-adaptation
    bool freeze_encoder = false;
};

StepsCurve steps_curve(const ParamSet& params, const ClassPool& pool, const EpisodeSpec& spec,
                       double alpha, int max_steps, bool freeze_encoder, std::size_t n_tasks,
                       std::uint64_t seed);

struct SweepResult {
    std::vector<double> alphas;
    std::vector<int> steps;
    std::vector<std::vector<double>> mean_acc;  // [alpha][steps], percent
    std::size_t best_alpha_idx = 0;
    std::size_t best_steps_idx = 0;
};

// Meta-trains one model per (alpha, steps) cell under the budget in `proto`
// (same init, same episode stream: common random numbers) and scores each on
// the held-out pool with the plain strategy.
SweepResult hyper_sweep(const ClassPool& train_pool, const ClassPool& eval_pool,
                        const TrainConfig& proto, const ParamSet& init,
                        const std::vector<double>& alphas, const std::vector<int>& steps,
                        std::size_t eval_tasks);

struct BaselineCurves {
    StepsCurve learned;
    StepsCurve randomized;  // same encoder, heads redrawn from the init distribution
};

// Both curves run over the same task stream so they are directly comparable.
// Requires per-class heads.
BaselineCurves randomized_head_baseline(const ParamSet& params, const ClassPool& pool,
                                        const EpisodeSpec& spec, const InnerLoopConfig& cfg,
                                        std::size_t n_tasks, std::uint64_t seed);

}  // namespace fewshot
