#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fewshot/episodes.hpp"
#include "fewshot/maml.hpp"
#include "fewshot/network.hpp"
#include "json.hpp"

namespace fewshot {

// Meta-test treatments. Selection kinds pick one head-to-label pairing by the
// named criterion; ensemble kinds adapt one model per pairing and average the
// query softmax probabilities before the argmax.
enum class StrategyKind {
    none,
    init_support_acc,
    init_support_loss,
    updated_support_acc,
    updated_support_loss,
    ensemble_full,
    ensemble_rotated,
    averaged_init,
};

struct Strategy {
    StrategyKind kind = StrategyKind::none;
};

std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

struct AdaptScore {
    double query_acc = 0.0;
    std::vector<double> support_trace;  // length steps + 1; entry 0 is pre-adaptation
    std::vector<double> query_trace;
};

// Step-by-step adaptation with accuracy recorded after every step, including
// step 0. Requires per-class heads, like inner_loop.
AdaptScore adapt_and_score(const ParamSet& params, const Episode& ep,
                           const InnerLoopConfig& cfg);

struct StrategyResult {
    std::vector<int> predictions;  // one 1-based label per query item, in order
    double accuracy = 0.0;
};

// Shared-head parameters are expanded to n_way identical heads on entry.
StrategyResult run_strategy(const ParamSet& params, const Episode& ep,
                            const Strategy& strategy, const InnerLoopConfig& cfg);

struct EvalReport {
    std::vector<double> per_task_acc;  // fractions in [0, 1]
    double mean_acc = 0.0;             // percent
    double ci95 = 0.0;                 // percent, 1.96 * s / sqrt(T), s with T-1
    std::size_t task_count = 0;
    std::string strategy;
    int steps = 0;
    std::uint64_t seed = 0;
};

EvalReport make_report(std::vector<double> per_task_acc, std::string strategy, int steps,
                       std::uint64_t seed);

// Task i draws its episode seed from (seed, "eval-ep", i); the report is
// bit-identical for any worker count. The pool must be a held-out split.
EvalReport evaluate(const ParamSet& params, const ClassPool& pool, const EpisodeSpec& spec,
                    const Strategy& strategy, const InnerLoopConfig& cfg, std::size_t n_tasks,
                    std::uint64_t seed);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

}  // namespace fewshot
