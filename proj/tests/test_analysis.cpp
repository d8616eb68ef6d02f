#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fewshot/analysis.hpp"
#include "fewshot/parallel.hpp"
#include "fewshot/rng.hpp"
#include "testutil.hpp"

using namespace fewshot;

namespace {

const ClassPool& novel_pool() {
    static const ClassPool pool = [] {
        ClassPool p = generate_synthetic_pool(10, 6, 24, 0.3, 8101);
        p.split = Split::novel;
        return p;
    }();
    return pool;
}

ParamSet random_model(std::uint64_t seed, int n_heads = 5) {
    return init_params(6, {8, 5}, HeadMode::per_class, n_heads, seed);
}

}  // namespace

TEST_CASE("permutation_spread") {
    const EpisodeSpec spec{5, 1, 6};
    const InnerLoopConfig cfg{3, 0.05, false};

    SUBCASE("identical heads collapse the spread to exactly zero") {
        const ParamSet tied = duplicate_head(init_params(6, {8, 5}, HeadMode::shared, 1, 1), 5);
        const SpreadResult r = permutation_spread(tied, novel_pool(), spec, cfg, 12, 3);
        REQUIRE(r.per_task_spread.size() == 12);
        for (double s : r.per_task_spread) CHECK(s == 0.0);
        for (double v : r.rank_avg_acc) CHECK(v == r.rank_avg_acc[0]);
    }

    SUBCASE("shared heads are expanded on entry") {
        const ParamSet shared = init_params(6, {8, 5}, HeadMode::shared, 1, 1);
        const SpreadResult r = permutation_spread(shared, novel_pool(), spec, cfg, 4, 3);
        for (double s : r.per_task_spread) CHECK(s == 0.0);
    }

    SUBCASE("rank profile is non-increasing and brackets the identity pairing") {
        const ParamSet p = random_model(2);
        const std::size_t n_tasks = 20;
        const SpreadResult r = permutation_spread(p, novel_pool(), spec, cfg, n_tasks, 5);
        REQUIRE(r.rank_avg_acc.size() == 120);
        for (std::size_t i = 0; i + 1 < r.rank_avg_acc.size(); ++i) {
            CHECK(r.rank_avg_acc[i] >= r.rank_avg_acc[i + 1]);
        }

        double identity_mean = 0.0;
        for (std::size_t t = 0; t < n_tasks; ++t) {
            const Episode ep = sample_episode(novel_pool(), spec, derive_seed(5, "spread-ep", t));
            identity_mean += batch_accuracy(inner_loop(p, ep.support, cfg), ep.query);
        }
        identity_mean /= static_cast<double>(n_tasks);
        CHECK(r.rank_avg_acc.front() >= identity_mean);
        CHECK(r.rank_avg_acc.back() <= identity_mean);
    }

    SUBCASE("two-way spread matches a hand enumeration") {
        const ParamSet p = random_model(3, 2);
        const EpisodeSpec two{2, 1, 5};
        const std::size_t n_tasks = 10;
        const std::uint64_t seed = 11;
        const SpreadResult r = permutation_spread(p, novel_pool(), two, cfg, n_tasks, seed);
        REQUIRE(r.rank_avg_acc.size() == 2);
        REQUIRE(r.per_task_spread.size() == n_tasks);

        double best_sum = 0.0;
        double worst_sum = 0.0;
        for (std::size_t t = 0; t < n_tasks; ++t) {
            const Episode ep = sample_episode(novel_pool(), two, derive_seed(seed, "spread-ep", t));
            const double a = batch_accuracy(inner_loop(p, ep.support, cfg), ep.query);
            const ParamSet swapped = permute_heads(p, Permutation({2, 1}));
            const double b = batch_accuracy(inner_loop(swapped, ep.support, cfg), ep.query);
            best_sum += std::max(a, b);
            worst_sum += std::min(a, b);
            CHECK(r.per_task_spread[t] == std::max(a, b) - std::min(a, b));
        }
        CHECK(r.rank_avg_acc[0] == best_sum / static_cast<double>(n_tasks));
        CHECK(r.rank_avg_acc[1] == worst_sum / static_cast<double>(n_tasks));
    }

    SUBCASE("worker count never changes the result") {
        const ParamSet p = random_model(4);
        set_worker_threads(1);
        const SpreadResult serial = permutation_spread(p, novel_pool(), spec, cfg, 8, 7);
        set_worker_threads(4);
        const SpreadResult wide = permutation_spread(p, novel_pool(), spec, cfg, 8, 7);
        set_worker_threads(0);
        CHECK(serial.rank_avg_acc == wide.rank_avg_acc);
        CHECK(serial.per_task_spread == wide.per_task_spread);
    }

    SUBCASE("validation") {
        CHECK_THROWS_AS(permutation_spread(random_model(1), novel_pool(), spec, cfg, 0, 1),
                        std::invalid_argument);
        CHECK_THROWS_AS(
            permutation_spread(random_model(1, 3), novel_pool(), spec, cfg, 2, 1),
            std::invalid_argument);
    }
}

TEST_CASE("steps_curve") {
    const EpisodeSpec spec{5, 1, 6};

    SUBCASE("length and endpoints") {
        const ParamSet p = random_model(5);
        const StepsCurve c = steps_curve(p, novel_pool(), spec, 0.05, 4, true, 6, 9);
        REQUIRE(c.acc_at_step.size() == 5);
        CHECK(c.freeze_encoder == true);

        double step0 = 0.0;
        double step4 = 0.0;
        for (std::size_t t = 0; t < 6; ++t) {
            const Episode ep = sample_episode(novel_pool(), spec, derive_seed(9, "curve-ep", t));
            step0 += batch_accuracy(p, ep.query);
            step4 += batch_accuracy(inner_loop(p, ep.support, {4, 0.05, true}), ep.query);
        }
        CHECK(c.acc_at_step[0] == step0 / 6.0);
        CHECK(c.acc_at_step[4] == step4 / 6.0);
    }

    SUBCASE("zero steps gives a single pre-adaptation point") {
        const StepsCurve c = steps_curve(random_model(6), novel_pool(), spec, 0.05, 0, false, 3, 9);
        CHECK(c.acc_at_step.size() == 1);
    }

    SUBCASE("an untrained model starts at chance") {
        // label slots are assigned uniformly at random per episode, so any
        // fixed model averages 1/n_way before adaptation
        const StepsCurve c = steps_curve(random_model(7), novel_pool(), spec, 0.05, 1, false, 400, 13);
        CHECK(std::abs(c.acc_at_step[0] - 0.2) < 0.06);
    }

    SUBCASE("validation") {
        CHECK_THROWS_AS(steps_curve(random_model(1), novel_pool(), spec, 0.05, 3, false, 0, 1),
                        std::invalid_argument);
        CHECK_THROWS_AS(steps_curve(random_model(1), novel_pool(), spec, 0.05, -1, false, 2, 1),
                        std::invalid_argument);
    }
}

TEST_CASE("hyper_sweep") {
    const ClassPool train_pool = generate_synthetic_pool(8, 4, 16, 0.3, 8301);
    ClassPool eval_pool = generate_synthetic_pool(6, 4, 16, 0.3, 8302);
    eval_pool.split = Split::validation;

    TrainConfig proto;
    proto.variant = Variant::vanilla;
    proto.epochs = 1;
    proto.tasks_per_epoch = 4;
    proto.spec = EpisodeSpec{3, 1, 3};
    proto.lr_encoder = 1e-4;
    proto.lr_heads = 1e-3;
    proto.seed = 21;
    const ParamSet init = init_params(4, {6}, HeadMode::per_class, 3, 22);

    SUBCASE("a single cell equals training and scoring directly") {
        const SweepResult r = hyper_sweep(train_pool, eval_pool, proto, init, {0.05}, {2}, 12);
        REQUIRE(r.mean_acc.size() == 1);
        REQUIRE(r.mean_acc[0].size() == 1);

        TrainConfig cfg = proto;
        cfg.inner.alpha = 0.05;
        cfg.inner.steps = 2;
        const TrainResult trained = meta_train(train_pool, cfg, init);
        const EvalReport direct = evaluate(trained.params, eval_pool, proto.spec,
                                           Strategy{StrategyKind::none}, cfg.inner, 12, cfg.seed);
        CHECK(r.mean_acc[0][0] == direct.mean_acc);
        CHECK(r.best_alpha_idx == 0);
        CHECK(r.best_steps_idx == 0);
    }

    SUBCASE("best indices point at the grid maximum") {
        const SweepResult r =
            hyper_sweep(train_pool, eval_pool, proto, init, {0.01, 0.05}, {1, 2}, 10);
        REQUIRE(r.mean_acc.size() == 2);
        REQUIRE(r.mean_acc[0].size() == 2);
        double best = -1.0;
        std::size_t ba = 0;
        std::size_t bm = 0;
        for (std::size_t a = 0; a < 2; ++a) {
            for (std::size_t m = 0; m < 2; ++m) {
                if (r.mean_acc[a][m] > best) {
                    best = r.mean_acc[a][m];
                    ba = a;
                    bm = m;
                }
            }
        }
        CHECK(r.best_alpha_idx == ba);
        CHECK(r.best_steps_idx == bm);
        CHECK(r.alphas == std::vector<double>{0.01, 0.05});
        CHECK(r.steps == std::vector<int>{1, 2});
    }

    SUBCASE("validation") {
        CHECK_THROWS_AS(hyper_sweep(train_pool, eval_pool, proto, init, {}, {1}, 5),
                        std::invalid_argument);
        CHECK_THROWS_AS(hyper_sweep(train_pool, eval_pool, proto, init, {0.05}, {}, 5),
                        std::invalid_argument);
        CHECK_THROWS_AS(hyper_sweep(train_pool, eval_pool, proto, init, {0.05}, {1}, 0),
                        std::invalid_argument);
    }
}

TEST_CASE("randomized_head_baseline") {
    const EpisodeSpec spec{5, 1, 6};
    const InnerLoopConfig cfg{3, 0.05, false};
    const ParamSet p = random_model(8);

    SUBCASE("both curves ride the same task stream") {
        const BaselineCurves r = randomized_head_baseline(p, novel_pool(), spec, cfg, 6, 17);
        REQUIRE(r.learned.acc_at_step.size() == 4);
        REQUIRE(r.randomized.acc_at_step.size() == 4);

        const StepsCurve learned =
            steps_curve(p, novel_pool(), spec, cfg.alpha, cfg.steps, cfg.freeze_encoder, 6, 17);
        CHECK(r.learned.acc_at_step == learned.acc_at_step);

        const ParamSet redrawn = reinit_heads(p, derive_seed(17, "rand-heads", 0));
        const StepsCurve randomized = steps_curve(redrawn, novel_pool(), spec, cfg.alpha,
                                                  cfg.steps, cfg.freeze_encoder, 6, 17);
        CHECK(r.randomized.acc_at_step == randomized.acc_at_step);
    }

    SUBCASE("redrawn heads keep the encoder") {
        const ParamSet redrawn = reinit_heads(p, derive_seed(17, "rand-heads", 0));
        for (std::size_t l = 0; l < p.encoder.size(); ++l) {
            CHECK(p.encoder[l].weight.data == redrawn.encoder[l].weight.data);
            CHECK(p.encoder[l].bias == redrawn.encoder[l].bias);
        }
        CHECK(p.heads.data != redrawn.heads.data);
    }

    SUBCASE("shared heads are rejected") {
        const ParamSet shared = init_params(6, {8, 5}, HeadMode::shared, 1, 1);
        CHECK_THROWS_AS(randomized_head_baseline(shared, novel_pool(), spec, cfg, 2, 1),
                        std::logic_error);
    }
}
