#include "fewshot/harness.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <utility>
#include <sstream>

#include "CLI11.hpp"
#include "fewshot/analysis.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/maml.hpp"
#include "fewshot/network.hpp"
#include "fewshot/parallel.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/svg.hpp"

namespace fewshot {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

json default_config() {
    return json{
        {"seed", nullptr},
        {"out", "out"},
        {"threads", 0},
        {"data",
         {{"pool", "pool.fscp"},
          {"manifest", "splits.json"},
          {"classes_base", 50},
          {"classes_validation", 10},
          {"classes_novel", 10},
          {"dim", 16},
          {"per_class", 40},
          {"sigma", 0.3}}},
        {"model", {{"encoder", json::array({32, 16})}}},
        {"pretrain", {{"epochs", 10}, {"lr", 0.05}, {"batch", 32}, {"checkpoint", "encoder.ck"}}},
        {"train",
         {{"variant", "vanilla"},
          {"epochs", 30},
          {"tasks_per_epoch", 100},
          {"task_batch_size", 1},
          {"n_way", 5},
          {"k_shot", 1},
          {"q_query", 15},
          {"steps", 5},
          {"alpha", 0.05},
          {"freeze_encoder", false},
          // Batch losses are sums over instances, so stable outer rates sit an
          // order of magnitude below what per-example-mean conventions use.
          {"lr_encoder", 0.0001},
          {"lr_heads", 0.001},
          {"momentum", 0.9},
          {"weight_decay", 0.0005},
          {"decay_epochs", 20},
          {"checkpoint", "model.ck"},
          {"encoder_init", ""}}},
        {"eval", {{"strategy", "none"}, {"tasks", 1000}, {"split", "novel"}}},
        {"spread", {{"tasks", 200}, {"split", "novel"}}},
        {"curve", {{"max_steps", 15}, {"tasks", 1000}, {"split", "novel"}}},
        {"sweep",
         {{"alphas", json::array({0.01, 0.05, 0.2})},
          {"steps", json::array({1, 5, 15})},
          {"epochs", 5},
          {"tasks_per_epoch", 100},
          {"eval_tasks", 200},
          {"eval_split", "validation"}}},
        {"baseline", {{"tasks", 1000}, {"split", "novel"}}},
    };
}

void results_ledger_append(const std::string& path, const EvalReport& report) {
    const bool fresh = !fs::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open " + path);
    if (fresh) out << "schema_version,strategy,n_tasks,mean_acc,ci95,steps,seed\n";
    out << 1 << ',' << report.strategy << ',' << report.task_count << ','
        << fmt_double(report.mean_acc) << ',' << fmt_double(report.ci95) << ','
        << report.steps << ',' << report.seed << '\n';
    if (!out) throw std::runtime_error("short write to " + path);
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        rows.push_back(std::move(cells));
    }
    return rows;
}

namespace {

// ---- config plumbing ---------------------------------------------------------

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError("config file " + path + " is not valid JSON: " + e.what());
    }
}

std::string resolve_path(const std::string& out_dir, const std::string& path) {
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(out_dir) / p).string();
}

void echo_config(const json& cfg, const std::string& out_dir, const std::string& command) {
    std::ofstream out(fs::path(out_dir) / ("effective_config." + command + ".json"));
    if (!out) throw std::runtime_error("cannot write effective config into " + out_dir);
    out << cfg.dump(2) << '\n';
}

void write_csv_file(const std::string& path, const std::string& header,
                    const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << header << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << row[i];
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("short write to " + path);
}

std::uint64_t require_seed(const json& cfg) {
    if (cfg["seed"].is_null()) {
        throw UsageError("a seed is required (flag --seed or config key \"seed\")");
    }
    return cfg["seed"].get<std::uint64_t>();
}

std::vector<std::size_t> encoder_sizes(const json& cfg) {
    return cfg["model"]["encoder"].get<std::vector<std::size_t>>();
}

ClassPool load_split_for(const json& cfg, const std::string& out_dir, Split split) {
    const std::string pool_path = resolve_path(out_dir, cfg["data"]["pool"].get<std::string>());
    const std::string manifest_path =
        resolve_path(out_dir, cfg["data"]["manifest"].get<std::string>());
    return load_pool_split(pool_path, manifest_path, split);
}

Split parse_split(const std::string& name) {
    try {
        return split_from_string(name);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

EpisodeSpec spec_from(const json& section, const json& meta, const json& train) {
    auto pick_int = [&](const char* key, const char* meta_key) {
        if (section.contains(key)) return section[key].get<int>();
        if (meta.contains(meta_key)) return meta[meta_key].get<int>();
        return train[key].get<int>();
    };
    EpisodeSpec spec;
    spec.n_way = pick_int("n_way", "n_way");
    spec.k_shot = pick_int("k_shot", "k_shot");
    spec.q_query = pick_int("q_query", "q_query");
    return spec;
}

InnerLoopConfig inner_from(const json& section, const json& meta, const json& train) {
    InnerLoopConfig inner;
    inner.steps = section.contains("steps")        ? section["steps"].get<int>()
                  : meta.contains("inner_steps")   ? meta["inner_steps"].get<int>()
                                                   : train["steps"].get<int>();
    inner.alpha = section.contains("alpha")        ? section["alpha"].get<double>()
                  : meta.contains("inner_alpha")   ? meta["inner_alpha"].get<double>()
                                                   : train["alpha"].get<double>();
    inner.freeze_encoder = section.contains("freeze_encoder")
                               ? section["freeze_encoder"].get<bool>()
                           : meta.contains("freeze_encoder")
                               ? meta["freeze_encoder"].get<bool>()
                               : train["freeze_encoder"].get<bool>();
    return inner;
}

struct EvalSetup {
    Checkpoint ckpt;
    EpisodeSpec spec;
    InnerLoopConfig inner;
    ClassPool pool;
};

EvalSetup load_eval_setup(const json& cfg, const char* section_name, const std::string& out_dir) {
    const json& section = cfg[section_name];
    const std::string ckpt_rel = section.contains("checkpoint")
                                     ? section["checkpoint"].get<std::string>()
                                     : cfg["train"]["checkpoint"].get<std::string>();
    EvalSetup setup;
    setup.ckpt = load_checkpoint(resolve_path(out_dir, ckpt_rel));
    setup.spec = spec_from(section, setup.ckpt.metadata, cfg["train"]);
    setup.inner = inner_from(section, setup.ckpt.metadata, cfg["train"]);
    setup.pool = load_split_for(cfg, out_dir, parse_split(section["split"].get<std::string>()));
    return setup;
}

TrainConfig train_config_from(const json& cfg, std::uint64_t seed) {
    const json& t = cfg["train"];
    TrainConfig tc;
    try {
        tc.variant = variant_from_string(t["variant"].get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    tc.epochs = t["epochs"].get<int>();
    tc.tasks_per_epoch = t["tasks_per_epoch"].get<int>();
    tc.task_batch_size = t["task_batch_size"].get<int>();
    tc.spec.n_way = t["n_way"].get<int>();
    tc.spec.k_shot = t["k_shot"].get<int>();
    tc.spec.q_query = t["q_query"].get<int>();
    tc.inner.steps = t["steps"].get<int>();
    tc.inner.alpha = t["alpha"].get<double>();
    tc.inner.freeze_encoder = t["freeze_encoder"].get<bool>();
    tc.lr_encoder = t["lr_encoder"].get<double>();
    tc.lr_heads = t["lr_heads"].get<double>();
    tc.momentum = t["momentum"].get<double>();
    tc.weight_decay = t["weight_decay"].get<double>();
    tc.decay_epochs = t["decay_epochs"].get<int>();
    tc.seed = seed;
    return tc;
}

ParamSet build_init(const json& cfg, const TrainConfig& tc, std::size_t dim,
                    const std::string& out_dir, std::uint64_t seed) {
    const HeadMode mode =
        tc.variant == Variant::unicorn ? HeadMode::shared : HeadMode::per_class;
    ParamSet init = init_params(dim, encoder_sizes(cfg), mode,
                                static_cast<std::size_t>(tc.spec.n_way),
                                derive_seed(seed, "init", 0));
    const std::string warm = cfg["train"]["encoder_init"].get<std::string>();
    if (!warm.empty()) {
        const Checkpoint ck = load_checkpoint(resolve_path(out_dir, warm));
        if (ck.params.input_dim != init.input_dim ||
            ck.params.feature_dim() != init.feature_dim() ||
            ck.params.encoder.size() != init.encoder.size()) {
            throw std::runtime_error("encoder_init checkpoint does not match model.encoder");
        }
        init.encoder = ck.params.encoder;
    }
    return init;
}

// Accuracy histogram with fixed 1-percentage-point bins: key = floor(percent).
std::map<int, std::size_t> percent_histogram(const std::vector<double>& accs_pct) {
    std::map<int, std::size_t> bins;
    for (double a : accs_pct) ++bins[static_cast<int>(std::floor(a))];
    return bins;
}

// ---- command handlers ----------------------------------------------------------

void run_gen_data(const json& cfg, const std::string& out_dir) {
    const std::uint64_t seed = require_seed(cfg);
    const json& d = cfg["data"];
    const int n_base = d["classes_base"].get<int>();
    const int n_val = d["classes_validation"].get<int>();
    const int n_novel = d["classes_novel"].get<int>();
    const int total = n_base + n_val + n_novel;
    if (n_base < 0 || n_val < 0 || n_novel < 0 || total < 2) {
        throw UsageError("split class counts must be non-negative and sum to at least 2");
    }

    const ClassPool pool =
        generate_synthetic_pool(total, d["dim"].get<int>(), d["per_class"].get<int>(),
                                d["sigma"].get<double>(), derive_seed(seed, "pool", 0));

    SplitManifest manifest;
    for (int c = 0; c < total; ++c) {
        const auto id = pool.classes[static_cast<std::size_t>(c)].global_class_id;
        if (c < n_base) {
            manifest.base.push_back(id);
        } else if (c < n_base + n_val) {
            manifest.validation.push_back(id);
        } else {
            manifest.novel.push_back(id);
        }
    }

    const std::string pool_path = resolve_path(out_dir, d["pool"].get<std::string>());
    const std::string manifest_path = resolve_path(out_dir, d["manifest"].get<std::string>());
    fs::create_directories(fs::path(pool_path).parent_path());
    fs::create_directories(fs::path(manifest_path).parent_path());
    write_pool_file(pool_path, pool.classes, pool.dim);
    write_split_manifest(manifest_path, manifest);
    std::cout << "wrote " << total << " classes (" << n_base << " base / " << n_val
              << " validation / " << n_novel << " novel) to " << pool_path << '\n';
}

void run_pretrain(const json& cfg, const std::string& out_dir) {
    const std::uint64_t seed = require_seed(cfg);
    const ClassPool pool = load_split_for(cfg, out_dir, Split::base);
    const json& p = cfg["pretrain"];
    const PretrainResult result =
        pretrain_encoder(pool, encoder_sizes(cfg), p["epochs"].get<int>(),
                         p["lr"].get<double>(), p["batch"].get<int>(), seed);

    ParamSet params;
    params.input_dim = result.input_dim;
    params.encoder = result.encoder;
    params.head_mode = HeadMode::shared;
    params.heads = Matrix(1, params.feature_dim());
    json meta;
    meta["kind"] = "encoder";
    meta["seed"] = seed;
    meta["epochs"] = p["epochs"].get<int>();
    if (!result.epoch_accuracy.empty()) meta["final_train_acc"] = result.epoch_accuracy.back();
    save_checkpoint(resolve_path(out_dir, p["checkpoint"].get<std::string>()), params, meta);

    std::vector<std::vector<std::string>> rows;
    for (std::size_t e = 0; e < result.epoch_accuracy.size(); ++e) {
        rows.push_back({std::to_string(e), fmt_double(result.epoch_accuracy[e])});
    }
    write_csv_file(resolve_path(out_dir, "pretrain_log.csv"), "epoch,train_acc", rows);
    std::cout << "pretrained encoder for " << p["epochs"].get<int>() << " epochs";
    if (!result.epoch_accuracy.empty()) {
        std::cout << ", final train acc " << fmt_double(result.epoch_accuracy.back());
    }
    std::cout << '\n';
}

void run_train(const json& cfg, const std::string& out_dir) {
    const std::uint64_t seed = require_seed(cfg);
    const TrainConfig tc = train_config_from(cfg, seed);  // validate before file work
    const ClassPool pool = load_split_for(cfg, out_dir, Split::base);
    const ParamSet init = build_init(cfg, tc, pool.dim, out_dir, seed);

    const TrainResult result = meta_train(pool, tc, init);

    bool finite = true;
    for (const double* v : param_coords(std::as_const(result.params))) {
        if (!std::isfinite(*v)) finite = false;
    }
    if (!finite) {
        std::cerr << "warning: training diverged (non-finite parameters); "
                     "lower lr_encoder/lr_heads or alpha\n";
    }

    json meta;
    meta["variant"] = to_string(tc.variant);
    meta["inner_steps"] = tc.inner.steps;
    meta["inner_alpha"] = tc.inner.alpha;
    meta["freeze_encoder"] = tc.inner.freeze_encoder;
    meta["n_way"] = tc.spec.n_way;
    meta["k_shot"] = tc.spec.k_shot;
    meta["q_query"] = tc.spec.q_query;
    meta["epochs"] = tc.epochs;
    meta["seed"] = seed;
    save_checkpoint(resolve_path(out_dir, cfg["train"]["checkpoint"].get<std::string>()),
                    result.params, meta);
    write_train_log_csv(resolve_path(out_dir, "train_log.csv"), result.log);

    std::cout << "trained " << to_string(tc.variant) << " for " << tc.epochs << " epochs";
    if (!result.log.epochs.empty()) {
        std::cout << "; final epoch mean query acc "
                  << fmt_double(result.log.epochs.back().mean_query_acc);
    }
    std::cout << '\n';
}

void run_eval(const json& cfg, const std::string& out_dir) {
    const std::uint64_t seed = require_seed(cfg);
    Strategy strategy;
    try {
        strategy.kind = strategy_from_string(cfg["eval"]["strategy"].get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const EvalSetup setup = load_eval_setup(cfg, "eval", out_dir);
    const std::size_t tasks = cfg["eval"]["tasks"].get<std::size_t>();

    const EvalReport report = evaluate(setup.ckpt.params, setup.pool, setup.spec, strategy,
                                       setup.inner, tasks, seed);

    const std::string tag = report.strategy;
    svg::write_text_file(resolve_path(out_dir, "report." + tag + ".json"),
                         report_to_json(report).dump(2) + "\n");
    std::vector<std::vector<std::string>> rows;
    for (std::size_t t = 0; t < report.per_task_acc.size(); ++t) {
        rows.push_back({std::to_string(t), fmt_double(report.per_task_acc[t])});
    }
    write_csv_file(resolve_path(out_dir, "per_task." + tag + ".csv"), "task,acc", rows);
    results_ledger_append(resolve_path(out_dir, "results.csv"), report);

    std::cout << "strategy=" << report.strategy << " tasks=" << report.task_count
              << " mean_acc=" << fmt_double(report.mean_acc)
              << "% ci95=" << fmt_double(report.ci95) << "%\n";
}

void run_spread(const json& cfg, const std::string& out_dir) {
    const std::uint64_t seed = require_seed(cfg);
    const EvalSetup setup = load_eval_setup(cfg, "spread", out_dir);
    const std::size_t tasks = cfg["spread"]["tasks"].get<std::size_t>();

    const SpreadResult spread =
        permutation_spread(setup.ckpt.params, setup.pool, setup.spec, setup.inner, tasks, seed);

    std::vector<std::vector<std::string>> rows;
    std::vector<double> pct;
    for (std::size_t r = 0; r < spread.rank_avg_acc.size(); ++r) {
        pct.push_back(100.0 * spread.rank_avg_acc[r]);
        rows.push_back({std::to_string(r + 1), fmt_double(pct.back())});
    }
    write_csv_file(resolve_path(out_dir, "spread_rank.csv"), "rank,acc_pct", rows);

    const auto bins = percent_histogram(pct);
    std::vector<std::vector<std::string>> hist_rows;
    std::vector<std::pair<std::string, double>> bars;
    for (const auto& [bin, count] : bins) {
        hist_rows.push_back({std::to_string(bin), std::to_string(count)});
        bars.push_back({std::to_string(bin), static_cast<double>(count)});
    }
    write_csv_file(resolve_path(out_dir, "spread_hist.csv"), "bin_pct,count", hist_rows);
    svg::write_text_file(
        resolve_path(out_dir, "spread.svg"),
        svg::bar_chart(bars, "Accuracy by head pairing (1-pt bins)", "accuracy bin (%)",
                       "pairings"));

    double mean_spread = 0.0;
    for (double s : spread.per_task_spread) mean_spread += s;
    mean_spread /= static_cast<double>(spread.per_task_spread.size());
    std::cout << "pairings=" << spread.rank_avg_acc.size() << " best="
              << fmt_double(pct.front()) << "% worst=" << fmt_double(pct.back())
              << "% mean_per_task_spread=" << fmt_double(100.0 * mean_spread) << "pts\n";
}

void run_curve(const json& cfg, const std::string& out_dir) {
    const std::uint64_t seed = require_seed(cfg);
    const EvalSetup setup = load_eval_setup(cfg, "curve", out_dir);
    const json& c = cfg["curve"];
    const int max_steps = c["max_steps"].get<int>();
    const std::size_t tasks = c["tasks"].get<std::size_t>();

    const StepsCurve curve =
        steps_curve(setup.ckpt.params, setup.pool, setup.spec, setup.inner.alpha, max_steps,
                    setup.inner.freeze_encoder, tasks, seed);

    std::vector<std::vector<std::string>> rows;
    std::vector<double> pct;
    for (std::size_t s = 0; s < curve.acc_at_step.size(); ++s) {
        pct.push_back(100.0 * curve.acc_at_step[s]);
        rows.push_back({std::to_string(s), fmt_double(pct.back())});
    }
    write_csv_file(resolve_path(out_dir, "curve.csv"), "step,acc_pct", rows);
    svg::write_text_file(resolve_path(out_dir, "curve.svg"),
                         svg::line_chart({{curve.freeze_encoder ? "frozen encoder" : "full",
                                           pct}},
                                         "Query accuracy by inner step", "inner steps",
                                         "accuracy (%)"));
    std::cout << "step0=" << fmt_double(pct.front()) << "% step" << max_steps << '='
              << fmt_double(pct.back()) << "%\n";
}

void run_sweep(const json& cfg, const std::string& out_dir) {
    const std::uint64_t seed = require_seed(cfg);
    const json& s = cfg["sweep"];
    const ClassPool train_pool = load_split_for(cfg, out_dir, Split::base);
    const ClassPool eval_pool =
        load_split_for(cfg, out_dir, parse_split(s["eval_split"].get<std::string>()));

    TrainConfig proto = train_config_from(cfg, seed);
    proto.epochs = s["epochs"].get<int>();
    proto.tasks_per_epoch = s["tasks_per_epoch"].get<int>();
    const ParamSet init = build_init(cfg, proto, train_pool.dim, out_dir, seed);

    const auto alphas = s["alphas"].get<std::vector<double>>();
    const auto steps = s["steps"].get<std::vector<int>>();
    const SweepResult result = hyper_sweep(train_pool, eval_pool, proto, init, alphas, steps,
                                           s["eval_tasks"].get<std::size_t>());

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row_labels, col_labels;
    for (double a : alphas) row_labels.push_back("a=" + fmt_double(a));
    for (int m : steps) col_labels.push_back("M=" + std::to_string(m));
    for (std::size_t a = 0; a < alphas.size(); ++a) {
        for (std::size_t m = 0; m < steps.size(); ++m) {
            rows.push_back({fmt_double(alphas[a]), std::to_string(steps[m]),
                            fmt_double(result.mean_acc[a][m])});
        }
    }
    write_csv_file(resolve_path(out_dir, "sweep.csv"), "alpha,steps,acc_pct", rows);
    svg::write_text_file(resolve_path(out_dir, "sweep.svg"),
                         svg::heatmap(result.mean_acc, row_labels, col_labels,
                                      "Validation accuracy (%) by (alpha, steps)"));
    std::cout << "best alpha=" << fmt_double(alphas[result.best_alpha_idx])
              << " steps=" << steps[result.best_steps_idx] << " acc="
              << fmt_double(result.mean_acc[result.best_alpha_idx][result.best_steps_idx])
              << "%\n";
}

void run_baseline(const json& cfg, const std::string& out_dir) {
    const std::uint64_t seed = require_seed(cfg);
    const EvalSetup setup = load_eval_setup(cfg, "baseline", out_dir);
    const std::size_t tasks = cfg["baseline"]["tasks"].get<std::size_t>();

    const BaselineCurves curves = randomized_head_baseline(setup.ckpt.params, setup.pool,
                                                           setup.spec, setup.inner, tasks, seed);

    std::vector<std::vector<std::string>> rows;
    std::vector<double> learned_pct, random_pct;
    for (std::size_t st = 0; st < curves.learned.acc_at_step.size(); ++st) {
        learned_pct.push_back(100.0 * curves.learned.acc_at_step[st]);
        random_pct.push_back(100.0 * curves.randomized.acc_at_step[st]);
        rows.push_back({std::to_string(st), fmt_double(learned_pct.back()),
                        fmt_double(random_pct.back())});
    }
    write_csv_file(resolve_path(out_dir, "baseline.csv"), "step,learned_pct,randomized_pct",
                   rows);
    svg::write_text_file(
        resolve_path(out_dir, "baseline.svg"),
        svg::line_chart({{"learned heads", learned_pct}, {"randomized heads", random_pct}},
                        "Learned vs randomized heads", "inner steps", "accuracy (%)"));
    std::cout << "final learned=" << fmt_double(learned_pct.back())
              << "% randomized=" << fmt_double(random_pct.back()) << "%\n";
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
    CLI::App app{"desk-scale few-shot meta-learning laboratory"};
    app.require_subcommand(1);

    // Flag storage; only flags the user actually passed override the config.
    std::string config_path, out_flag, variant_flag, strategy_flag, split_flag;
    std::string pool_flag, manifest_flag, checkpoint_flag, encoder_init_flag;
    std::uint64_t seed_flag = 0;
    int threads_flag = 0, steps_flag = 0, tasks_flag = 0;
    double alpha_flag = 0.0;
    bool freeze_flag = false;

    app.add_option("--config", config_path, "JSON config file merged over the defaults");
    auto* seed_opt = app.add_option("--seed", seed_flag, "global RNG seed (required)");
    auto* out_opt = app.add_option("--out", out_flag, "output directory for this run");
    auto* threads_opt = app.add_option("--threads", threads_flag, "worker thread cap (0 = all)");

    struct Sub {
        CLI::App* app = nullptr;
        void (*run)(const json&, const std::string&) = nullptr;
    };
    std::vector<std::pair<std::string, Sub>> subs;
    auto add_sub = [&](const char* name, const char* desc,
                       void (*fn)(const json&, const std::string&)) {
        Sub sub;
        sub.app = app.add_subcommand(name, desc);
        sub.app->fallthrough();
        sub.run = fn;
        subs.emplace_back(name, sub);
        return sub.app;
    };

    add_sub("gen-data", "generate a synthetic class pool and split manifest", run_gen_data);
    add_sub("pretrain", "supervised warm-up of the encoder on the base split", run_pretrain);
    CLI::App* train = add_sub("train", "meta-train a model on the base split", run_train);
    CLI::App* eval_cmd = add_sub("eval", "evaluate a checkpoint on held-out tasks", run_eval);
    CLI::App* spread = add_sub("spread", "per-permutation accuracy spread", run_spread);
    CLI::App* curve = add_sub("curve", "query accuracy by inner-loop step", run_curve);
    add_sub("sweep", "grid over (alpha, steps) with a fixed budget", run_sweep);
    CLI::App* baseline = add_sub("baseline", "learned vs randomized heads", run_baseline);

    CLI::Option* variant_opt =
        train->add_option("--variant", variant_flag, "vanilla | fo | pm | unicorn");
    CLI::Option* encoder_init_opt =
        train->add_option("--encoder-init", encoder_init_flag, "warm-start encoder checkpoint");
    CLI::Option* strategy_opt = eval_cmd->add_option(
        "--strategy", strategy_flag,
        "none | init-acc | init-loss | upd-acc | upd-loss | ens-full | ens-rot | avg-init");

    std::vector<CLI::Option*> steps_opts, alpha_opts, freeze_opts, tasks_opts, split_opts,
        ckpt_opts;
    for (CLI::App* cmd : {train, eval_cmd, spread, curve, baseline}) {
        steps_opts.push_back(cmd->add_option("--steps", steps_flag, "inner-loop step count"));
        alpha_opts.push_back(cmd->add_option("--alpha", alpha_flag, "inner-loop learning rate"));
        freeze_opts.push_back(
            cmd->add_flag("--freeze-encoder", freeze_flag, "adapt heads only"));
    }
    for (CLI::App* cmd : {eval_cmd, spread, curve, baseline}) {
        tasks_opts.push_back(cmd->add_option("--tasks", tasks_flag, "number of test tasks"));
        split_opts.push_back(
            cmd->add_option("--split", split_flag, "pool split: validation | novel"));
        ckpt_opts.push_back(
            cmd->add_option("--checkpoint", checkpoint_flag, "checkpoint to evaluate"));
    }
    std::vector<CLI::Option*> pool_opts, manifest_opts;
    for (auto& [name, sub] : subs) {
        pool_opts.push_back(sub.app->add_option("--pool", pool_flag, "pool file path"));
        manifest_opts.push_back(
            sub.app->add_option("--manifest", manifest_flag, "split manifest path"));
    }

    std::vector<std::string> argv_vec = args;
    std::vector<const char*> argv;
    argv.push_back("fewshot");
    for (const std::string& a : argv_vec) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        json cfg = default_config();
        if (!config_path.empty()) cfg.merge_patch(load_config_file(config_path));

        const std::string command = app.get_subcommands().front()->get_name();
        if (seed_opt->count() > 0) cfg["seed"] = seed_flag;
        if (out_opt->count() > 0) cfg["out"] = out_flag;
        if (threads_opt->count() > 0) cfg["threads"] = threads_flag;
        if (variant_opt->count() > 0) cfg["train"]["variant"] = variant_flag;
        if (encoder_init_opt->count() > 0) cfg["train"]["encoder_init"] = encoder_init_flag;
        if (strategy_opt->count() > 0) cfg["eval"]["strategy"] = strategy_flag;

        auto apply = [&](const std::vector<CLI::Option*>& opts, auto fn) {
            for (CLI::Option* o : opts) {
                if (o->count() > 0) fn();
            }
        };
        const std::string section = command == "train" ? "train" : command;
        apply(steps_opts, [&] { cfg[section]["steps"] = steps_flag; });
        apply(alpha_opts, [&] { cfg[section]["alpha"] = alpha_flag; });
        apply(freeze_opts, [&] { cfg[section]["freeze_encoder"] = freeze_flag; });
        apply(tasks_opts, [&] { cfg[section]["tasks"] = tasks_flag; });
        apply(split_opts, [&] { cfg[section]["split"] = split_flag; });
        apply(ckpt_opts, [&] { cfg[section]["checkpoint"] = checkpoint_flag; });
        apply(pool_opts, [&] { cfg["data"]["pool"] = pool_flag; });
        apply(manifest_opts, [&] { cfg["data"]["manifest"] = manifest_flag; });

        const std::string out_dir = cfg["out"].get<std::string>();
        fs::create_directories(out_dir);
        set_worker_threads(static_cast<unsigned>(std::max(0, cfg["threads"].get<int>())));
        echo_config(cfg, out_dir, command);

        for (auto& [name, sub] : subs) {
            if (name == command) {
                sub.run(cfg, out_dir);
                return 0;
            }
        }
        throw std::logic_error("unreachable: unknown subcommand");
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}

int cli_dispatch(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_dispatch(args);
}

}  // namespace fewshot
