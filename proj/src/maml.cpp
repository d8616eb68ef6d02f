#include "fewshot/maml.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "fewshot/parallel.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::vanilla: return "vanilla";
        case Variant::fo: return "fo";
        case Variant::pm: return "pm";
        case Variant::unicorn: return "unicorn";
    }
    throw std::logic_error("unknown variant");
}

Variant variant_from_string(const std::string& s) {
    if (s == "vanilla") return Variant::vanilla;
    if (s == "fo") return Variant::fo;
    if (s == "pm") return Variant::pm;
    if (s == "unicorn") return Variant::unicorn;
    throw std::invalid_argument("unknown variant: " + s);
}

void inner_step(ParamSet& params, std::span<const Example> support, double alpha,
                bool freeze_encoder) {
    const LossGrad lg = batch_loss_and_grad(params, support);
    if (!freeze_encoder) {
        for (std::size_t l = 0; l < params.encoder.size(); ++l) {
            AffineLayer& layer = params.encoder[l];
            const AffineLayer& g = lg.grad.encoder[l];
            for (std::size_t i = 0; i < layer.weight.data.size(); ++i) {
                layer.weight.data[i] -= alpha * g.weight.data[i];
            }
            for (std::size_t i = 0; i < layer.bias.size(); ++i) {
                layer.bias[i] -= alpha * g.bias[i];
            }
        }
    }
    for (std::size_t i = 0; i < params.heads.data.size(); ++i) {
        params.heads.data[i] -= alpha * lg.grad.heads.data[i];
    }
}

ParamSet inner_loop(const ParamSet& params, std::span<const Example> support,
                    const InnerLoopConfig& cfg) {
    if (params.head_mode != HeadMode::per_class) {
        throw std::logic_error("inner_loop requires per-class heads; expand shared heads first");
    }
    if (cfg.steps < 0) throw std::invalid_argument("steps must be non-negative");
    if (cfg.alpha <= 0.0) throw std::invalid_argument("alpha must be positive");
    ParamSet adapted = params;
    for (int m = 0; m < cfg.steps; ++m) {
        inner_step(adapted, support, cfg.alpha, cfg.freeze_encoder);
    }
    return adapted;
}

MetaGrad fo_meta_grad(const ParamSet& params, const Episode& ep, const InnerLoopConfig& cfg) {
    const ParamSet adapted = inner_loop(params, ep.support, cfg);
    LossGrad lg = batch_loss_and_grad(adapted, ep.query);
    MetaGrad out;
    out.query_loss = lg.loss;
    out.grad = std::move(lg.grad);
    out.query_acc = batch_accuracy(adapted, ep.query);
    return out;
}

MetaGrad unicorn_meta_grad(const ParamSet& params, const Episode& ep,
                           const InnerLoopConfig& cfg) {
    if (params.head_mode != HeadMode::shared) {
        throw std::logic_error("unicorn_meta_grad requires a shared head");
    }
    const ParamSet expanded = duplicate_head(params, ep.n_way());
    const ParamSet adapted = inner_loop(expanded, ep.support, cfg);
    LossGrad lg = batch_loss_and_grad(adapted, ep.query);
    MetaGrad out;
    out.query_loss = lg.loss;
    out.grad = aggregate_head_grads(lg.grad);
    out.query_acc = batch_accuracy(adapted, ep.query);
    return out;
}

Permutation select_permutation_min_support_loss(const ParamSet& params, const Episode& ep) {
    if (params.head_mode != HeadMode::per_class) {
        throw std::logic_error("permutation selection requires per-class heads");
    }
    if (params.heads.rows != static_cast<std::size_t>(ep.n_way())) {
        throw std::invalid_argument("head count does not match episode n_way");
    }
    const std::vector<Permutation> perms = enumerate_permutations(ep.n_way());
    const Permutation* best = nullptr;
    double best_loss = 0.0;
    for (const Permutation& pi : perms) {
        // Loss of the episode relabeled by pi, scored without copying the data:
        // pairing head pi(c) with the data of label c is the same computation.
        const ParamSet candidate = permute_heads(params, pi.inverse());
        const double loss = batch_loss(candidate, ep.support);
        if (best == nullptr || loss < best_loss) {  // strict: ties keep the earlier pi
            best = &pi;
            best_loss = loss;
        }
    }
    return *best;
}

Permutation sorted_label_permutation(const Episode& ep) {
    std::vector<std::uint32_t> sorted_ids = ep.assignment;
    std::sort(sorted_ids.begin(), sorted_ids.end());
    std::vector<int> mapping(static_cast<std::size_t>(ep.n_way()));
    for (int c = 1; c <= ep.n_way(); ++c) {
        const std::uint32_t id = ep.assignment[static_cast<std::size_t>(c - 1)];
        const auto rank = std::lower_bound(sorted_ids.begin(), sorted_ids.end(), id) -
                          sorted_ids.begin();
        mapping[static_cast<std::size_t>(c - 1)] = static_cast<int>(rank) + 1;
    }
    return Permutation(std::move(mapping));
}

void write_train_log_csv(const std::string& path, const TrainLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "epoch,mean_query_loss,mean_query_acc,lr_encoder,lr_heads,wall_ms\n";
    out.precision(17);
    for (const EpochStats& s : log.epochs) {
        out << s.epoch << ',' << s.mean_query_loss << ',' << s.mean_query_acc << ','
            << s.lr_encoder << ',' << s.lr_heads << ',' << s.wall_ms << '\n';
    }
    if (!out) throw std::runtime_error("short write to " + path);
}

TrainResult meta_train(const ClassPool& pool, const TrainConfig& cfg, const ParamSet& init) {
    if (cfg.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (cfg.tasks_per_epoch < 1) throw std::invalid_argument("tasks_per_epoch must be positive");
    if (cfg.task_batch_size < 1) throw std::invalid_argument("task_batch_size must be positive");

    if (cfg.variant == Variant::unicorn) {
        if (init.head_mode != HeadMode::shared) {
            throw std::logic_error("unicorn training requires a shared-head initialization");
        }
    } else {
        if (init.head_mode != HeadMode::per_class) {
            throw std::logic_error("this variant requires per-class heads");
        }
        if (init.heads.rows != static_cast<std::size_t>(cfg.spec.n_way)) {
            throw std::invalid_argument("head count does not match n_way");
        }
    }
    if (cfg.variant == Variant::pm && cfg.spec.n_way > 8) {
        throw std::length_error("permutation-selection training is limited to n_way <= 8");
    }

    TrainResult result;
    result.params = init;
    OuterOptimizer opt = make_outer_optimizer(init, cfg.lr_encoder, cfg.lr_heads, cfg.momentum,
                                              cfg.weight_decay, cfg.decay_epochs);

    auto task_grad = [&](const ParamSet& snapshot, std::uint64_t episode_index) -> MetaGrad {
        const std::uint64_t ep_seed = derive_seed(cfg.seed, "train-ep", episode_index);
        Episode ep = sample_episode(pool, cfg.spec, ep_seed);
        switch (cfg.variant) {
            case Variant::vanilla:
                return fo_meta_grad(snapshot, ep, cfg.inner);
            case Variant::fo:
                return fo_meta_grad(snapshot, apply_permutation(ep, sorted_label_permutation(ep)),
                                    cfg.inner);
            case Variant::pm:
                return fo_meta_grad(
                    snapshot,
                    apply_permutation(ep, select_permutation_min_support_loss(snapshot, ep)),
                    cfg.inner);
            case Variant::unicorn:
                return unicorn_meta_grad(snapshot, ep, cfg.inner);
        }
        throw std::logic_error("unknown variant");
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        double acc_sum = 0.0;

        int done = 0;
        while (done < cfg.tasks_per_epoch) {
            const int b = std::min(cfg.task_batch_size, cfg.tasks_per_epoch - done);
            std::vector<MetaGrad> grads(static_cast<std::size_t>(b));
            const ParamSet& snapshot = result.params;
            const std::uint64_t base_index =
                static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(cfg.tasks_per_epoch) +
                static_cast<std::uint64_t>(done);
            parallel_for(static_cast<std::size_t>(b), [&](std::size_t j) {
                grads[j] = task_grad(snapshot, base_index + j);
            });

            // Average in task order so the reduction is independent of threads.
            GradSet avg = grads[0].grad;
            for (std::size_t j = 1; j < grads.size(); ++j) {
                const std::vector<const double*> src =
                    param_coords(std::as_const(grads[j]).grad);
                const std::vector<double*> dst = param_coords(avg);
                for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] += *src[i];
            }
            if (b > 1) {
                const double inv = 1.0 / static_cast<double>(b);
                for (double* v : param_coords(avg)) *v *= inv;
            }
            for (const MetaGrad& g : grads) {
                loss_sum += g.query_loss;
                acc_sum += g.query_acc;
            }
            result.params = outer_step(opt, result.params, avg, epoch);
            done += b;
        }

        const auto t1 = std::chrono::steady_clock::now();
        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_query_loss = loss_sum / cfg.tasks_per_epoch;
        stats.mean_query_acc = acc_sum / cfg.tasks_per_epoch;
        const double scale = lr_scale(opt, epoch);
        stats.lr_encoder = cfg.lr_encoder * scale;
        stats.lr_heads = cfg.lr_heads * scale;
        stats.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        result.log.epochs.push_back(stats);
    }
    return result;
}

PretrainResult pretrain_encoder(const ClassPool& pool,
                                const std::vector<std::size_t>& encoder_sizes, int epochs,
                                double lr, int batch_size, std::uint64_t seed) {
    if (pool.classes.empty()) throw std::invalid_argument("empty pool");
    if (pool.split != Split::base) {
        throw std::invalid_argument("pretraining runs on the base split only");
    }
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");

    // Labels 1..C in sorted global id order.
    std::vector<std::size_t> order(pool.classes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pool.classes[a].global_class_id < pool.classes[b].global_class_id;
    });

    std::vector<Example> dataset;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        for (const auto& x : pool.classes[order[rank]].examples) {
            dataset.push_back({x, static_cast<int>(rank) + 1});
        }
    }
    if (dataset.empty()) throw std::invalid_argument("pool has no examples");

    ParamSet params = init_params(pool.dim, encoder_sizes, HeadMode::per_class,
                                  pool.classes.size(), derive_seed(seed, "pretrain-init", 0));

    PretrainResult result;
    std::vector<std::size_t> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (int epoch = 0; epoch < epochs; ++epoch) {
        RandomStream rng(derive_seed(seed, "pretrain-shuffle", static_cast<std::uint64_t>(epoch)));
        rng.shuffle(idx);
        for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
            const std::size_t stop = std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
            std::vector<Example> batch;
            batch.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) batch.push_back(dataset[idx[i]]);
            const LossGrad lg = batch_loss_and_grad(params, batch);
            const double step = lr / static_cast<double>(batch.size());  // mean CE
            const std::vector<double*> w = param_coords(params);
            const std::vector<const double*> g = param_coords(lg.grad);
            for (std::size_t i = 0; i < w.size(); ++i) *w[i] -= step * *g[i];
        }
        result.epoch_accuracy.push_back(batch_accuracy(params, dataset));
    }

    result.encoder = std::move(params.encoder);
    result.input_dim = pool.dim;
    return result;
}

}  // namespace fewshot
