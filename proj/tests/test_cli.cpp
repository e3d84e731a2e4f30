#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "btsr/cli.hpp"
#include "btsr/corpus.hpp"
#include "btsr/dataset.hpp"
#include "btsr/io.hpp"

using namespace btsr;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "btsr");
    args.insert(args.begin() + 1, "-q");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("btsr_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string s(const fs::path& p) { return p.string(); }

// Small synthetic corpus + bundle shared by the train/evaluate cases.
fs::path tiny_bundle(const fs::path& dir) {
    REQUIRE(cli({"synth", "--output", s(dir / "log.tsv"), "--items", "30", "--users", "70", "--seed", "5"}).code == 0);
    REQUIRE(cli({"prepare", "--input", s(dir / "log.tsv"), "--dataset", s(dir / "ds.json"), "--min-count", "2",
                 "--max-len", "6"})
                .code == 0);
    write_file_atomic(dir / "cfg.json",
                      R"({"dim": 8, "max_len": 6, "epochs": 2, "batch_size": 16, "sce_k": 10, "alpha": 0.3})");
    return dir / "ds.json";
}

}  // namespace

TEST_CASE("prepare: summary counts and byte-identical reruns") {
    auto dir = scratch("prepare");
    REQUIRE(cli({"synth", "--output", s(dir / "log.tsv"), "--items", "40", "--users", "80"}).code == 0);
    auto r = cli({"prepare", "--input", s(dir / "log.tsv"), "--dataset", s(dir / "a.json"), "--min-count", "3"});
    REQUIRE(r.code == 0);
    const auto summary = read_file(dir / "a.json.summary.txt");
    CHECK(r.out == summary);

    const auto raw = load_log(dir / "log.tsv");
    const auto direct = prepare_dataset(raw, {.min_count = 3});
    CHECK(summary == summary_text(direct.summary, direct.params));
    CHECK(direct.summary.raw_events == raw.events.size());
    CHECK(summary.find("raw events           " + std::to_string(raw.events.size()) + "\n") != std::string::npos);

    REQUIRE(cli({"prepare", "--input", s(dir / "log.tsv"), "--dataset", s(dir / "b.json"), "--min-count", "3"}).code ==
            0);
    CHECK(read_file(dir / "a.json") == read_file(dir / "b.json"));
}

TEST_CASE("prepare: input errors") {
    auto dir = scratch("prepare_err");
    auto missing = cli({"prepare", "--input", s(dir / "nope.tsv"), "--dataset", s(dir / "x.json")});
    CHECK(missing.code == kExitUsage);
    CHECK(missing.err.find("nope.tsv") != std::string::npos);
    CHECK(cli({"prepare", "--dataset", s(dir / "x.json")}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({}).code == kExitUsage);

    write_file_atomic(dir / "bad.tsv", "u1\ti1\t1\nu2\ti2\n");
    auto bad = cli({"prepare", "--input", s(dir / "bad.tsv"), "--dataset", s(dir / "x.json")});
    CHECK(bad.code == kExitFailure);
    CHECK(bad.err.find("line 2") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "x.json"));
}

TEST_CASE("train and evaluate: seeded reruns are byte identical") {
    auto dir = scratch("train");
    auto ds = tiny_bundle(dir);
    const auto cfg = s(dir / "cfg.json");
    for (const char* tag : {"a", "b"}) {
        auto ck = s(dir / (std::string(tag) + ".ckpt"));
        REQUIRE(cli({"train", "--dataset", s(ds), "--config", cfg, "--checkpoint", ck, "--seed", "7"}).code == 0);
        REQUIRE(cli({"evaluate", "--dataset", s(ds), "--checkpoint", ck, "--report",
                     s(dir / (std::string(tag) + ".json")), "--k", "1,3,10"})
                    .code == 0);
    }
    CHECK(read_file(dir / "a.ckpt.log.csv") == read_file(dir / "b.ckpt.log.csv"));
    CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
    CHECK(read_file(dir / "a.json") == read_file(dir / "b.json"));
    CHECK(fs::exists(dir / "a.spectrum.csv"));
    CHECK(fs::exists(dir / "a.histogram.csv"));

    auto rep = nlohmann::json::parse(read_file(dir / "a.json"));
    CHECK(rep["metrics"].contains("hr@3"));
    CHECK(rep["metrics"].contains("ndcg@1"));
    CHECK_FALSE(rep["metrics"].contains("hr@50"));
    CHECK(rep["seed"] == 7);

    // threads change nothing
    REQUIRE(cli({"train", "--dataset", s(ds), "--config", cfg, "--checkpoint", s(dir / "t.ckpt"), "--seed", "7",
                 "--threads", "2"})
                .code == 0);
    CHECK(read_file(dir / "a.ckpt") == read_file(dir / "t.ckpt"));

    REQUIRE(cli({"train", "--dataset", s(ds), "--config", cfg, "--checkpoint", s(dir / "c.ckpt"), "--seed", "8"})
                .code == 0);
    CHECK(read_file(dir / "a.ckpt") != read_file(dir / "c.ckpt"));
}

TEST_CASE("train: config errors name the key") {
    auto dir = scratch("config");
    auto ds = tiny_bundle(dir);
    write_file_atomic(dir / "bad.json", R"({"dim": 8, "aplha": 0.3})");
    auto r = cli({"train", "--dataset", s(ds), "--config", s(dir / "bad.json"), "--checkpoint", s(dir / "m.ckpt")});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("aplha") != std::string::npos);
    write_file_atomic(dir / "neg.json", R"({"lr": -1})");
    r = cli({"train", "--dataset", s(ds), "--config", s(dir / "neg.json"), "--checkpoint", s(dir / "m.ckpt")});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("lr") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "m.ckpt"));
}

TEST_CASE("evaluate: checkpoint must match the dataset") {
    auto dir = scratch("mismatch");
    auto ds = tiny_bundle(dir);
    REQUIRE(cli({"train", "--dataset", s(ds), "--config", s(dir / "cfg.json"), "--checkpoint", s(dir / "m.ckpt")})
                .code == 0);
    REQUIRE(cli({"synth", "--output", s(dir / "other.tsv"), "--items", "50", "--users", "70"}).code == 0);
    REQUIRE(cli({"prepare", "--input", s(dir / "other.tsv"), "--dataset", s(dir / "other.json"), "--min-count", "2"})
                .code == 0);
    auto r = cli({"evaluate", "--dataset", s(dir / "other.json"), "--checkpoint", s(dir / "m.ckpt"), "--report",
                  s(dir / "r.json")});
    CHECK(r.code != 0);
    CHECK_FALSE(fs::exists(dir / "r.json"));
}

TEST_CASE("sweep: table layout, baseline row, partial failure") {
    auto dir = scratch("sweep");
    auto ds = tiny_bundle(dir);
    auto r = cli({"sweep", "--dataset", s(ds), "--config", s(dir / "cfg.json"), "--param", "alpha", "--values",
                  "0.0,0.3", "--repeats", "2", "--output", s(dir / "sweep.csv")});
    REQUIRE(r.code == 0);
    std::istringstream table(read_file(dir / "sweep.csv"));
    std::string header, row0, row1;
    std::getline(table, header);
    std::getline(table, row0);
    std::getline(table, row1);
    CHECK(header.rfind("param,value,runs,failed,hr@1_mean,hr@1_std,", 0) == 0);
    CHECK(header.find("cov@10_mean,cov@10_std") != std::string::npos);
    CHECK(header.find("effective_rank_std,errors") != std::string::npos);
    CHECK(row0.rfind("alpha,0,2,0,", 0) == 0);
    CHECK(row1.rfind("alpha,0.29999999999999999,2,0,", 0) == 0);
    CHECK(fs::exists(dir / "sweep.csv.runs" / "alpha=0" / "seed42" / "report.json"));
    CHECK(fs::exists(dir / "sweep.csv.runs" / "alpha=0" / "seed43" / "train_log.csv"));

    // batch_size 1 is fine without BT but invalid once alpha > 0
    write_file_atomic(dir / "b1.json", R"({"dim": 8, "max_len": 6, "epochs": 1, "batch_size": 1, "alpha": 0})");
    r = cli({"sweep", "--dataset", s(ds), "--config", s(dir / "b1.json"), "--values", "0,0.5", "--output",
             s(dir / "partial.csv")});
    CHECK(r.code == kExitPartialSweep);
    const auto partial = read_file(dir / "partial.csv");
    CHECK(partial.find("\nalpha,0,1,0,") != std::string::npos);
    CHECK(partial.find("\nalpha,0.5,1,1,,,") != std::string::npos);
    CHECK(partial.find("batch_size") != std::string::npos);

    CHECK(cli({"sweep", "--dataset", s(ds), "--values", "-1", "--output", s(dir / "x.csv")}).code == kExitUsage);
    CHECK(cli({"sweep", "--dataset", s(ds), "--param", "beta", "--values", "1", "--output", s(dir / "x.csv")}).code ==
          kExitUsage);
}

TEST_CASE("gradcheck subcommand") {
    auto r = cli({"gradcheck", "--loss", "ce"});
    CHECK(r.code == 0);
    CHECK(r.out.find("loss=ce alpha=0.29999999999999999") == 0);
    CHECK(r.out.find("PASS") != std::string::npos);
    CHECK(cli({"gradcheck", "--loss", "hinge"}).code == kExitUsage);
}

TEST_CASE("sweep: a single 0.0 value reproduces the plain baseline") {
    auto dir = scratch("baseline");
    auto ds = tiny_bundle(dir);
    write_file_atomic(dir / "a0.json", R"({"dim": 8, "max_len": 6, "epochs": 2, "batch_size": 16, "alpha": 0})");
    REQUIRE(cli({"sweep", "--dataset", s(ds), "--config", s(dir / "cfg.json"), "--values", "0", "--seed", "9",
                 "--output", s(dir / "sw.csv")})
                .code == 0);
    REQUIRE(cli({"train", "--dataset", s(ds), "--config", s(dir / "a0.json"), "--checkpoint", s(dir / "m.ckpt"),
                 "--seed", "9"})
                .code == 0);
    REQUIRE(cli({"evaluate", "--dataset", s(ds), "--checkpoint", s(dir / "m.ckpt"), "--report", s(dir / "r.json")})
                .code == 0);
    auto plain = nlohmann::json::parse(read_file(dir / "r.json"));
    auto swept = nlohmann::json::parse(read_file(dir / "sw.csv.runs" / "alpha=0" / "seed9" / "report.json"));
    CHECK(plain["metrics"] == swept["metrics"]);
    CHECK(plain["spectrum"] == swept["spectrum"]);

    // alpha = 0 report: hr@K monotone in K
    double prev = 0.0;
    for (const char* k : {"hr@1", "hr@5", "hr@10", "hr@50"}) {
        const double v = plain["metrics"][k].get<double>();
        CHECK(v >= prev);
        prev = v;
    }

    auto table = cli({"report", "--reports", s(dir / "r.json") + "," + s(dir / "r.json"), "--output",
                      s(dir / "table.txt")});
    CHECK(table.code == 0);
    CHECK(table.out == read_file(dir / "table.txt"));
    CHECK(table.out.find("effective_rank") != std::string::npos);
    CHECK(table.out.find("hr@10") != std::string::npos);
    CHECK(cli({"report", "--reports", s(dir / "a0.json")}).code == kExitFailure);
    CHECK(cli({"report", "--reports", s(dir / "missing.json")}).code == kExitUsage);
}
