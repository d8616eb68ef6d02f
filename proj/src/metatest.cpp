#include "fewshot/metatest.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fewshot/parallel.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

std::string to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::none: return "none";
        case StrategyKind::init_support_acc: return "init-acc";
        case StrategyKind::init_support_loss: return "init-loss";
        case StrategyKind::updated_support_acc: return "upd-acc";
        case StrategyKind::updated_support_loss: return "upd-loss";
        case StrategyKind::ensemble_full: return "ens-full";
        case StrategyKind::ensemble_rotated: return "ens-rot";
        case StrategyKind::averaged_init: return "avg-init";
    }
    throw std::logic_error("unknown strategy kind");
}

StrategyKind strategy_from_string(const std::string& s) {
    if (s == "none") return StrategyKind::none;
    if (s == "init-acc") return StrategyKind::init_support_acc;
    if (s == "init-loss") return StrategyKind::init_support_loss;
    if (s == "upd-acc") return StrategyKind::updated_support_acc;
    if (s == "upd-loss") return StrategyKind::updated_support_loss;
    if (s == "ens-full") return StrategyKind::ensemble_full;
    if (s == "ens-rot") return StrategyKind::ensemble_rotated;
    if (s == "avg-init") return StrategyKind::averaged_init;
    throw std::invalid_argument("unknown strategy: " + s);
}

AdaptScore adapt_and_score(const ParamSet& params, const Episode& ep,
                           const InnerLoopConfig& cfg) {
    if (params.head_mode != HeadMode::per_class) {
        throw std::logic_error("adapt_and_score requires per-class heads");
    }
    if (cfg.steps < 0) throw std::invalid_argument("steps must be non-negative");
    if (cfg.alpha <= 0.0) throw std::invalid_argument("alpha must be positive");

    AdaptScore out;
    out.support_trace.reserve(static_cast<std::size_t>(cfg.steps) + 1);
    out.query_trace.reserve(static_cast<std::size_t>(cfg.steps) + 1);

    ParamSet adapted = params;
    out.support_trace.push_back(batch_accuracy(adapted, ep.support));
    out.query_trace.push_back(batch_accuracy(adapted, ep.query));
    for (int m = 0; m < cfg.steps; ++m) {
        inner_step(adapted, ep.support, cfg.alpha, cfg.freeze_encoder);
        out.support_trace.push_back(batch_accuracy(adapted, ep.support));
        out.query_trace.push_back(batch_accuracy(adapted, ep.query));
    }
    out.query_acc = out.query_trace.back();
    return out;
}

namespace {

StrategyResult score_queries(const ParamSet& adapted, const Episode& ep) {
    StrategyResult out;
    out.predictions.reserve(ep.query.size());
    std::size_t hits = 0;
    for (const Example& e : ep.query) {
        const int pred = predict(adapted, e.x);
        out.predictions.push_back(pred);
        if (pred == e.y) ++hits;
    }
    out.accuracy = static_cast<double>(hits) / static_cast<double>(ep.query.size());
    return out;
}

// Pair head pi(c) with the data of label c; this scores the episode as if it
// had been relabeled by pi, without touching the data.
ParamSet paired_under(const ParamSet& params, const Permutation& pi) {
    return permute_heads(params, pi.inverse());
}

StrategyResult run_selection(const ParamSet& params, const Episode& ep, StrategyKind kind,
                             const InnerLoopConfig& cfg) {
    const std::vector<Permutation> perms = enumerate_permutations(ep.n_way());
    const bool after_update = kind == StrategyKind::updated_support_acc ||
                              kind == StrategyKind::updated_support_loss;
    const bool maximize = kind == StrategyKind::init_support_acc ||
                          kind == StrategyKind::updated_support_acc;

    const Permutation* best = nullptr;
    double best_score = 0.0;
    ParamSet best_adapted;
    for (const Permutation& pi : perms) {
        const ParamSet candidate = paired_under(params, pi);
        ParamSet adapted;
        double score;
        if (after_update) {
            adapted = inner_loop(candidate, ep.support, cfg);
            score = maximize ? batch_accuracy(adapted, ep.support)
                             : batch_loss(adapted, ep.support);
        } else {
            score = maximize ? batch_accuracy(candidate, ep.support)
                             : batch_loss(candidate, ep.support);
        }
        const bool better =
            best == nullptr || (maximize ? score > best_score : score < best_score);
        if (better) {  // strict comparisons: ties keep the lexicographically first pi
            best = &pi;
            best_score = score;
            if (after_update) best_adapted = std::move(adapted);
        }
    }

    const ParamSet adapted =
        after_update ? best_adapted : inner_loop(paired_under(params, *best), ep.support, cfg);
    return score_queries(adapted, ep);
}

StrategyResult run_ensemble(const ParamSet& params, const Episode& ep,
                            const std::vector<Permutation>& perms,
                            const InnerLoopConfig& cfg) {
    const std::size_t n_class = static_cast<std::size_t>(ep.n_way());
    std::vector<std::vector<double>> mean_probs(ep.query.size(),
                                                std::vector<double>(n_class, 0.0));
    for (const Permutation& pi : perms) {
        const ParamSet adapted = inner_loop(paired_under(params, pi), ep.support, cfg);
        for (std::size_t q = 0; q < ep.query.size(); ++q) {
            const std::vector<double> probs = softmax_probs(adapted, ep.query[q].x);
            for (std::size_t c = 0; c < n_class; ++c) mean_probs[q][c] += probs[c];
        }
    }

    StrategyResult out;
    out.predictions.reserve(ep.query.size());
    std::size_t hits = 0;
    for (std::size_t q = 0; q < ep.query.size(); ++q) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < n_class; ++c) {
            if (mean_probs[q][c] > mean_probs[q][best]) best = c;
        }
        const int pred = static_cast<int>(best) + 1;
        out.predictions.push_back(pred);
        if (pred == ep.query[q].y) ++hits;
    }
    out.accuracy = static_cast<double>(hits) / static_cast<double>(ep.query.size());
    return out;
}

}  // namespace

StrategyResult run_strategy(const ParamSet& params, const Episode& ep,
                            const Strategy& strategy, const InnerLoopConfig& cfg) {
    const ParamSet expanded =
        params.head_mode == HeadMode::shared ? duplicate_head(params, ep.n_way()) : params;
    if (expanded.heads.rows != static_cast<std::size_t>(ep.n_way())) {
        throw std::invalid_argument("head count does not match episode n_way");
    }

    switch (strategy.kind) {
        case StrategyKind::none:
            return score_queries(inner_loop(expanded, ep.support, cfg), ep);
        case StrategyKind::averaged_init:
            return score_queries(inner_loop(average_heads(expanded), ep.support, cfg), ep);
        case StrategyKind::init_support_acc:
        case StrategyKind::init_support_loss:
        case StrategyKind::updated_support_acc:
        case StrategyKind::updated_support_loss:
            return run_selection(expanded, ep, strategy.kind, cfg);
        case StrategyKind::ensemble_full:
            return run_ensemble(expanded, ep, enumerate_permutations(ep.n_way()), cfg);
        case StrategyKind::ensemble_rotated:
            return run_ensemble(expanded, ep, rotated_permutations(ep.n_way()), cfg);
    }
    throw std::logic_error("unknown strategy kind");
}

EvalReport make_report(std::vector<double> per_task_acc, std::string strategy, int steps,
                       std::uint64_t seed) {
    if (per_task_acc.empty()) throw std::invalid_argument("no per-task accuracies");
    const std::size_t t = per_task_acc.size();
    double mean = 0.0;
    for (double a : per_task_acc) mean += a;
    mean /= static_cast<double>(t);

    double ci = 0.0;
    if (t > 1) {
        double ss = 0.0;
        for (double a : per_task_acc) ss += (a - mean) * (a - mean);
        const double sd = std::sqrt(ss / static_cast<double>(t - 1));
        ci = 100.0 * 1.96 * sd / std::sqrt(static_cast<double>(t));
    }

    EvalReport report;
    report.per_task_acc = std::move(per_task_acc);
    report.mean_acc = 100.0 * mean;
    report.ci95 = ci;
    report.task_count = t;
    report.strategy = std::move(strategy);
    report.steps = steps;
    report.seed = seed;
    return report;
}

EvalReport evaluate(const ParamSet& params, const ClassPool& pool, const EpisodeSpec& spec,
                    const Strategy& strategy, const InnerLoopConfig& cfg, std::size_t n_tasks,
                    std::uint64_t seed) {
    if (pool.split == Split::base) {
        throw std::invalid_argument("evaluate expects a held-out (validation/novel) split");
    }
    if (n_tasks == 0) throw std::invalid_argument("n_tasks must be positive");

    std::vector<double> accs(n_tasks, 0.0);
    parallel_for(n_tasks, [&](std::size_t i) {
        const Episode ep = sample_episode(pool, spec, derive_seed(seed, "eval-ep", i));
        accs[i] = run_strategy(params, ep, strategy, cfg).accuracy;
    });
    return make_report(std::move(accs), to_string(strategy.kind), cfg.steps, seed);
}

nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["strategy"] = report.strategy;
    j["task_count"] = report.task_count;
    j["mean_acc"] = report.mean_acc;
    j["ci95"] = report.ci95;
    j["steps"] = report.steps;
    j["seed"] = report.seed;
    j["per_task_acc"] = report.per_task_acc;
    return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport report;
    report.per_task_acc = j.at("per_task_acc").get<std::vector<double>>();
    report.mean_acc = j.at("mean_acc").get<double>();
    report.ci95 = j.at("ci95").get<double>();
    report.task_count = j.at("task_count").get<std::size_t>();
    report.strategy = j.at("strategy").get<std::string>();
    report.steps = j.at("steps").get<int>();
    report.seed = j.at("seed").get<std::uint64_t>();
    return report;
}

}  // namespace fewshot
