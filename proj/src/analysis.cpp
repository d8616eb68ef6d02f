#include "fewshot/analysis.hpp"

#include <algorithm>
#include <functional>
#include <stdexcept>

#include "fewshot/parallel.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

SpreadResult permutation_spread(const ParamSet& params, const ClassPool& pool,
                                const EpisodeSpec& spec, const InnerLoopConfig& cfg,
                                std::size_t n_tasks, std::uint64_t seed) {
    if (n_tasks == 0) throw std::invalid_argument("n_tasks must be positive");
    const ParamSet expanded = params.head_mode == HeadMode::shared
                                  ? duplicate_head(params, spec.n_way)
                                  : params;
    if (expanded.heads.rows != static_cast<std::size_t>(spec.n_way)) {
        throw std::invalid_argument("head count does not match n_way");
    }
    const std::vector<Permutation> perms = enumerate_permutations(spec.n_way);

    std::vector<std::vector<double>> ranked(n_tasks);
    parallel_for(n_tasks, [&](std::size_t t) {
        const Episode ep = sample_episode(pool, spec, derive_seed(seed, "spread-ep", t));
        std::vector<double> accs;
        accs.reserve(perms.size());
        for (const Permutation& pi : perms) {
            // Pairing head pi(c) with label c's data scores the episode as if
            // relabeled by pi; the query set is relabeled the same way.
            const ParamSet adapted =
                inner_loop(permute_heads(expanded, pi.inverse()), ep.support, cfg);
            accs.push_back(batch_accuracy(adapted, ep.query));
        }
        std::sort(accs.begin(), accs.end(), std::greater<double>());
        ranked[t] = std::move(accs);
    });

    SpreadResult out;
    out.rank_avg_acc.assign(perms.size(), 0.0);
    out.per_task_spread.reserve(n_tasks);
    for (std::size_t t = 0; t < n_tasks; ++t) {
        for (std::size_t r = 0; r < perms.size(); ++r) out.rank_avg_acc[r] += ranked[t][r];
        out.per_task_spread.push_back(ranked[t].front() - ranked[t].back());
    }
    for (double& v : out.rank_avg_acc) v /= static_cast<double>(n_tasks);
    return out;
}

StepsCurve steps_curve(const ParamSet& params, const ClassPool& pool, const EpisodeSpec& spec,
                       double alpha, int max_steps, bool freeze_encoder, std::size_t n_tasks,
                       std::uint64_t seed) {
    if (n_tasks == 0) throw std::invalid_argument("n_tasks must be positive");
    if (max_steps < 0) throw std::invalid_argument("max_steps must be non-negative");
    const ParamSet expanded = params.head_mode == HeadMode::shared
                                  ? duplicate_head(params, spec.n_way)
                                  : params;
    InnerLoopConfig cfg;
    cfg.steps = max_steps;
    cfg.alpha = alpha;
    cfg.freeze_encoder = freeze_encoder;

    std::vector<std::vector<double>> traces(n_tasks);
    parallel_for(n_tasks, [&](std::size_t t) {
        const Episode ep = sample_episode(pool, spec, derive_seed(seed, "curve-ep", t));
        traces[t] = adapt_and_score(expanded, ep, cfg).query_trace;
    });

    StepsCurve out;
    out.freeze_encoder = freeze_encoder;
    out.acc_at_step.assign(static_cast<std::size_t>(max_steps) + 1, 0.0);
    for (const auto& trace : traces) {
        for (std::size_t s = 0; s < out.acc_at_step.size(); ++s) {
            out.acc_at_step[s] += trace[s];
        }
    }
    for (double& v : out.acc_at_step) v /= static_cast<double>(n_tasks);
    return out;
}

SweepResult hyper_sweep(const ClassPool& train_pool, const ClassPool& eval_pool,
                        const TrainConfig& proto, const ParamSet& init,
                        const std::vector<double>& alphas, const std::vector<int>& steps,
                        std::size_t eval_tasks) {
    if (alphas.empty() || steps.empty()) throw std::invalid_argument("empty sweep grid");
    if (eval_tasks == 0) throw std::invalid_argument("eval_tasks must be positive");

    SweepResult out;
    out.alphas = alphas;
    out.steps = steps;
    out.mean_acc.assign(alphas.size(), std::vector<double>(steps.size(), 0.0));

    double best = -1.0;
    for (std::size_t a = 0; a < alphas.size(); ++a) {
        for (std::size_t m = 0; m < steps.size(); ++m) {
            TrainConfig cfg = proto;
            cfg.inner.alpha = alphas[a];
            cfg.inner.steps = steps[m];
            // Same init and same cfg.seed for every cell: the only thing that
            // varies across the grid is (alpha, steps).
            const TrainResult trained = meta_train(train_pool, cfg, init);
            const EvalReport report = evaluate(trained.params, eval_pool, proto.spec,
                                               Strategy{StrategyKind::none}, cfg.inner,
                                               eval_tasks, cfg.seed);
            out.mean_acc[a][m] = report.mean_acc;
            if (report.mean_acc > best) {  // strict: ties keep the earlier cell
                best = report.mean_acc;
                out.best_alpha_idx = a;
                out.best_steps_idx = m;
            }
        }
    }
    return out;
}

BaselineCurves randomized_head_baseline(const ParamSet& params, const ClassPool& pool,
                                        const EpisodeSpec& spec, const InnerLoopConfig& cfg,
                                        std::size_t n_tasks, std::uint64_t seed) {
    if (params.head_mode != HeadMode::per_class) {
        throw std::logic_error("randomized_head_baseline requires per-class heads");
    }
    BaselineCurves out;
    out.learned = steps_curve(params, pool, spec, cfg.alpha, cfg.steps, cfg.freeze_encoder,
                              n_tasks, seed);
    const ParamSet randomized = reinit_heads(params, derive_seed(seed, "rand-heads", 0));
    out.randomized = steps_curve(randomized, pool, spec, cfg.alpha, cfg.steps,
                                 cfg.freeze_encoder, n_tasks, seed);
    return out;
}

}  // namespace fewshot
