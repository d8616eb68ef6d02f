#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "doctest.h"
#include "fewshot/analysis.hpp"
#include "fewshot/harness.hpp"
#include "testutil.hpp"

using namespace fewshot;
using testutil::TempDir;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

// small enough for unit-test budgets: 3-way episodes, one-epoch trainings
const char* kTinyConfig = R"({
  "seed": 5,
  "data": {"classes_base": 6, "classes_validation": 3, "classes_novel": 3,
           "dim": 4, "per_class": 10, "sigma": 0.3},
  "model": {"encoder": [6]},
  "pretrain": {"epochs": 2, "lr": 0.05, "batch": 8},
  "train": {"epochs": 1, "tasks_per_epoch": 4, "n_way": 3, "k_shot": 1,
            "q_query": 3, "steps": 2, "alpha": 0.05},
  "eval": {"tasks": 5, "split": "novel"},
  "spread": {"tasks": 2, "split": "novel"},
  "curve": {"max_steps": 2, "tasks": 3, "split": "novel"},
  "sweep": {"alphas": [0.05], "steps": [1], "epochs": 1, "tasks_per_epoch": 2,
            "eval_tasks": 3, "eval_split": "validation"},
  "baseline": {"tasks": 2, "split": "novel"}
})";

int run(const TempDir& td, const std::string& out, std::vector<std::string> extra) {
    std::vector<std::string> args{"--config", td.file("config.json"), "--out", td.file(out)};
    args.insert(args.begin(), extra.begin(), extra.begin() + 1);  // subcommand first
    args.insert(args.end(), extra.begin() + 1, extra.end());
    return cli_dispatch(args);
}

}  // namespace

TEST_CASE("fmt_double round-trips") {
    CHECK(fmt_double(0.5) == "0.5");
    CHECK(fmt_double(1.0) == "1");
    CHECK(fmt_double(-2.25) == "-2.25");
    CHECK(fmt_double(0.0) == "0");
    const double third = 1.0 / 3.0;
    CHECK(std::stod(fmt_double(third)) == third);
    CHECK(std::stod(fmt_double(1e-12)) == 1e-12);
}

TEST_CASE("default_config covers every section") {
    const nlohmann::json cfg = default_config();
    CHECK(cfg.at("seed").is_null());
    CHECK(cfg.at("out") == "out");
    CHECK(cfg.at("data").at("dim") == 16);
    CHECK(cfg.at("model").at("encoder") == nlohmann::json({32, 16}));
    CHECK(cfg.at("train").at("n_way") == 5);
    CHECK(cfg.at("train").at("alpha") == 0.05);
    CHECK(cfg.at("train").at("variant") == "vanilla");
    CHECK(cfg.at("eval").at("strategy") == "none");
    CHECK(cfg.at("sweep").at("alphas").size() == 3);
    CHECK(cfg.at("baseline").at("split") == "novel");
}

TEST_CASE("results ledger appends rows under one header") {
    TempDir td;
    const std::string path = td.file("results.csv");
    const EvalReport a = make_report({1.0, 0.0}, "none", 5, 9);
    const EvalReport b = make_report({1.0, 1.0, 0.5}, "ens-full", 3, 10);
    results_ledger_append(path, a);
    results_ledger_append(path, b);

    const auto rows = read_csv(path);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == std::vector<std::string>{"schema_version", "strategy", "n_tasks",
                                              "mean_acc", "ci95", "steps", "seed"});
    CHECK(rows[1][0] == "1");
    CHECK(rows[1][1] == "none");
    CHECK(rows[1][2] == "2");
    CHECK(std::stod(rows[1][3]) == a.mean_acc);
    CHECK(std::stod(rows[1][4]) == a.ci95);
    CHECK(rows[1][5] == "5");
    CHECK(rows[1][6] == "9");
    CHECK(rows[2][1] == "ens-full");
    CHECK(rows[2][6] == "10");
}

TEST_CASE("read_csv splits plain comma rows") {
    TempDir td;
    write_text(td.file("t.csv"), "a,b,c\n1,2,3\n\n4,5,6\n");
    const auto rows = read_csv(td.file("t.csv"));
    REQUIRE(rows.size() == 3);  // blank lines are skipped
    CHECK(rows[0] == std::vector<std::string>{"a", "b", "c"});
    CHECK(rows[2] == std::vector<std::string>{"4", "5", "6"});
    CHECK_THROWS_AS(read_csv(td.file("missing.csv")), std::runtime_error);
}

TEST_CASE("usage errors exit with code 1") {
    CHECK(cli_dispatch({"--help"}) == 0);
    CHECK(cli_dispatch({}) == 1);
    CHECK(cli_dispatch({"frobnicate"}) == 1);

    TempDir td;
    // no seed anywhere
    CHECK(cli_dispatch({"gen-data", "--out", td.file("a")}) == 1);
    // unreadable config file
    CHECK(cli_dispatch({"train", "--config", td.file("none.json"), "--seed", "1"}) == 1);
    // config that is not JSON
    write_text(td.file("bad.json"), "not json {");
    CHECK(cli_dispatch({"train", "--config", td.file("bad.json"), "--seed", "1"}) == 1);
    // unknown variant
    write_text(td.file("config.json"), kTinyConfig);
    CHECK(run(td, "a", {"train", "--variant", "cosmic"}) == 1);
    // unknown strategy
    CHECK(run(td, "a", {"eval", "--strategy", "psychic"}) == 1);
}

TEST_CASE("runtime failures exit with code 2") {
    TempDir td;
    write_text(td.file("config.json"), kTinyConfig);
    // pool file absent
    CHECK(run(td, "a", {"eval"}) == 2);
    // pool file corrupt
    REQUIRE(run(td, "b", {"gen-data"}) == 0);
    write_text(td.file("b") + "/pool.fscp", "FSCPgarbage");
    CHECK(run(td, "b", {"train"}) == 2);
}

TEST_CASE("gen-data writes a loadable pool and manifest") {
    TempDir td;
    write_text(td.file("config.json"), kTinyConfig);
    REQUIRE(run(td, "out", {"gen-data"}) == 0);

    std::size_t dim = 0;
    const auto classes = read_pool_file(td.file("out") + "/pool.fscp", &dim);
    CHECK(classes.size() == 12);  // 6 + 3 + 3
    CHECK(dim == 4);

    const std::string pool_path = td.file("out") + "/pool.fscp";
    const std::string manifest_path = td.file("out") + "/splits.json";
    const ClassPool base = load_pool_split(pool_path, manifest_path, Split::base);
    const ClassPool val = load_pool_split(pool_path, manifest_path, Split::validation);
    const ClassPool novel = load_pool_split(pool_path, manifest_path, Split::novel);
    CHECK(base.classes.size() == 6);
    CHECK(val.classes.size() == 3);
    CHECK(novel.classes.size() == 3);
    CHECK(base.split == Split::base);
    CHECK(novel.split == Split::novel);

    // effective config is echoed next to the outputs
    const auto echoed = nlohmann::json::parse(slurp(td.file("out") + "/effective_config.gen-data.json"));
    CHECK(echoed.at("seed") == 5);
    CHECK(echoed.at("data").at("classes_base") == 6);

    // regenerating is reproducible byte for byte
    REQUIRE(run(td, "again", {"gen-data"}) == 0);
    CHECK(slurp(td.file("out") + "/pool.fscp") == slurp(td.file("again") + "/pool.fscp"));
}

TEST_CASE("train, eval, and the analysis commands produce their artifacts") {
    TempDir td;
    write_text(td.file("config.json"), kTinyConfig);
    REQUIRE(run(td, "out", {"gen-data"}) == 0);
    REQUIRE(run(td, "out", {"train"}) == 0);

    SUBCASE("training artifacts") {
        const auto log = read_csv(td.file("out") + "/train_log.csv");
        REQUIRE(log.size() == 2);  // header + one epoch
        CHECK(log[0][0] == "epoch");
        CHECK(log[1][0] == "0");

        const Checkpoint ck = load_checkpoint(td.file("out") + "/model.ck");
        CHECK(ck.metadata.at("variant") == "vanilla");
        CHECK(ck.metadata.at("inner_steps") == 2);
        CHECK(ck.metadata.at("n_way") == 3);
        CHECK(ck.params.n_heads() == 3);

        // a second run with the same seed reproduces the checkpoint exactly
        REQUIRE(run(td, "rerun", {"train", "--pool", td.file("out") + "/pool.fscp",
                                  "--manifest", td.file("out") + "/splits.json"}) == 0);
        CHECK(slurp(td.file("out") + "/model.ck") == slurp(td.file("rerun") + "/model.ck"));

        // worker count does not change the result
        REQUIRE(run(td, "wide", {"train", "--threads", "4", "--pool",
                                 td.file("out") + "/pool.fscp", "--manifest",
                                 td.file("out") + "/splits.json"}) == 0);
        CHECK(slurp(td.file("out") + "/model.ck") == slurp(td.file("wide") + "/model.ck"));
    }

    SUBCASE("eval artifacts") {
        REQUIRE(run(td, "out", {"eval"}) == 0);
        const EvalReport report =
            report_from_json(nlohmann::json::parse(slurp(td.file("out") + "/report.none.json")));
        CHECK(report.task_count == 5);
        CHECK(report.strategy == "none");
        CHECK(report.steps == 2);  // resolved from the checkpoint metadata

        const auto per_task = read_csv(td.file("out") + "/per_task.none.csv");
        REQUIRE(per_task.size() == 6);
        CHECK(per_task[0] == std::vector<std::string>{"task", "acc"});
        for (std::size_t t = 0; t < 5; ++t) {
            CHECK(std::stod(per_task[t + 1][1]) == report.per_task_acc[t]);
        }

        const auto ledger = read_csv(td.file("out") + "/results.csv");
        REQUIRE(ledger.size() == 2);
        CHECK(std::stod(ledger[1][3]) == report.mean_acc);

        // a second strategy appends to the same ledger
        REQUIRE(run(td, "out", {"eval", "--strategy", "ens-rot"}) == 0);
        CHECK(read_csv(td.file("out") + "/results.csv").size() == 3);
        CHECK(std::ifstream(td.file("out") + "/report.ens-rot.json").good());
    }

    SUBCASE("spread artifacts") {
        REQUIRE(run(td, "out", {"spread"}) == 0);
        const auto rank = read_csv(td.file("out") + "/spread_rank.csv");
        REQUIRE(rank.size() == 7);  // header + 3! pairings
        CHECK(rank[0] == std::vector<std::string>{"rank", "acc_pct"});
        CHECK(rank[1][0] == "1");
        CHECK(std::stod(rank[1][1]) >= std::stod(rank[6][1]));

        const auto hist = read_csv(td.file("out") + "/spread_hist.csv");
        CHECK(hist[0] == std::vector<std::string>{"bin_pct", "count"});
        std::size_t total = 0;
        for (std::size_t i = 1; i < hist.size(); ++i) total += std::stoul(hist[i][1]);
        CHECK(total == 6);  // one histogram entry per pairing

        CHECK(slurp(td.file("out") + "/spread.svg").substr(0, 4) == "<svg");
    }

    SUBCASE("curve artifacts") {
        REQUIRE(run(td, "out", {"curve"}) == 0);
        const auto curve = read_csv(td.file("out") + "/curve.csv");
        REQUIRE(curve.size() == 4);  // header + steps 0..2
        CHECK(curve[0] == std::vector<std::string>{"step", "acc_pct"});
        CHECK(curve[1][0] == "0");
        CHECK(slurp(td.file("out") + "/curve.svg").substr(0, 4) == "<svg");
    }

    SUBCASE("baseline artifacts") {
        REQUIRE(run(td, "out", {"baseline"}) == 0);
        const auto rows = read_csv(td.file("out") + "/baseline.csv");
        REQUIRE(rows.size() == 4);  // header + steps 0..2
        CHECK(rows[0] == std::vector<std::string>{"step", "learned_pct", "randomized_pct"});
    }

    SUBCASE("sweep artifacts") {
        REQUIRE(run(td, "out", {"sweep"}) == 0);
        const auto rows = read_csv(td.file("out") + "/sweep.csv");
        REQUIRE(rows.size() == 2);  // header + one cell
        CHECK(rows[0] == std::vector<std::string>{"alpha", "steps", "acc_pct"});
        CHECK(rows[1][0] == "0.05");
        CHECK(rows[1][1] == "1");
    }
}

TEST_CASE("a unicorn model collapses the spread histogram to one bin") {
    TempDir td;
    write_text(td.file("config.json"), kTinyConfig);
    REQUIRE(run(td, "out", {"gen-data"}) == 0);
    REQUIRE(run(td, "out", {"train", "--variant", "unicorn"}) == 0);
    REQUIRE(run(td, "out", {"spread"}) == 0);

    const auto hist = read_csv(td.file("out") + "/spread_hist.csv");
    REQUIRE(hist.size() == 2);  // header + a single occupied bin
    CHECK(std::stoul(hist[1][1]) == 6);  // every pairing lands in the same bin

    const auto rank = read_csv(td.file("out") + "/spread_rank.csv");
    for (std::size_t r = 2; r < rank.size(); ++r) CHECK(rank[r][1] == rank[1][1]);
}

TEST_CASE("pretrain produces an encoder the trainer can warm-start from") {
    TempDir td;
    write_text(td.file("config.json"), kTinyConfig);
    REQUIRE(run(td, "out", {"gen-data"}) == 0);
    REQUIRE(run(td, "out", {"pretrain"}) == 0);

    const auto log = read_csv(td.file("out") + "/pretrain_log.csv");
    REQUIRE(log.size() == 3);  // header + two epochs
    CHECK(log[0] == std::vector<std::string>{"epoch", "train_acc"});

    const Checkpoint enc = load_checkpoint(td.file("out") + "/encoder.ck");
    CHECK(enc.metadata.at("kind") == "encoder");

    REQUIRE(run(td, "out", {"train", "--encoder-init", td.file("out") + "/encoder.ck"}) == 0);
    const Checkpoint warm = load_checkpoint(td.file("out") + "/model.ck");
    CHECK(warm.params.n_heads() == 3);
}
