// Acceptance suite: one PASS/FAIL line per criterion. Exit status is
// nonzero if any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "btsr/cli.hpp"
#include "btsr/config.hpp"
#include "btsr/corpus.hpp"
#include "btsr/dataset.hpp"
#include "btsr/errors.hpp"
#include "btsr/evaluator.hpp"
#include "btsr/io.hpp"
#include "btsr/objectives.hpp"
#include "btsr/synthetic.hpp"
#include "btsr/trainer.hpp"

using namespace btsr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    return Matrix::NullaryExpr(rows, cols, [&] { return g(rng); });
}

// 1 ---------------------------------------------------------------------
Outcome bt_analytic() {
    Outcome o;
    const double id = bt_loss(Matrix::Identity(4, 4), 0.2);
    Matrix c(2, 2);
    c << 1, 0.5, 0.5, 1;
    const double half = bt_loss(c, 0.2);
    const double zero = bt_loss(Matrix::Zero(5, 5), 0.2);
    o.pass = id == 0.0 && std::abs(half - 0.1) <= 1e-12 && zero == 5.0;
    o.detail = "L(I)=" + fmt("%.3g", id) + " L([[1,.5],[.5,1]])=" + fmt("%.17g", half) + " L(0_5)=" + fmt("%g", zero);
    return o;
}

// 2 ---------------------------------------------------------------------
Outcome gradients() {
    Outcome o;
    for (auto kind : {LossKind::Bce, LossKind::Ce, LossKind::Sce}) {
        GradcheckSettings s;  // N=20, D=8, L=2, B=4, step 1e-5
        s.alpha = 0.3;
        const auto rep = gradcheck(kind, s);
        o.pass = o.pass && rep.passed && rep.max_rel_error <= 1e-4;
        o.detail += to_string(kind) + "=" + fmt("%.2e", rep.max_rel_error) + " ";
    }
    o.detail += "(bound 1e-4)";
    return o;
}

// 3 ---------------------------------------------------------------------
Outcome sce_equals_ce() {
    EncoderConfig c;
    c.num_items = 40;
    c.dim = 8;
    c.max_len = 6;
    c.dropout = 0.0;
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Model m = make_model(c, seed);
        Rng rng = make_rng({seed, 99});
        std::vector<ItemId> prefix(6);
        for (auto& v : prefix) v = static_cast<ItemId>(1 + rng() % 40);
        const auto target = static_cast<ItemId>(1 + rng() % 40);
        const Vector scores = score_all(m, encode(m, prefix));
        const auto cand = sample_candidates(target, 40, 39, rng);  // whole catalog, shuffled
        std::vector<double> cs;
        for (ItemId i : cand.items) cs.push_back(scores[i - 1]);
        const std::vector<double> all(scores.data(), scores.data() + scores.size());
        worst = std::max(worst, std::abs(sce_loss(cs, cand.target_position) -
                                         ce_loss(all, static_cast<std::size_t>(target - 1))));
    }
    return {worst <= 1e-10, "max |sce-ce|=" + fmt("%.2e", worst) + " over 100 seeds"};
}

// 4 ---------------------------------------------------------------------
Outcome correlation_properties() {
    std::mt19937_64 rng(4);
    double diag = 0, sym = 0, range = 0, row_perm = 0, col_perm = 0;
    for (int t = 0; t < 200; ++t) {
        const Eigen::Index b = 4 + static_cast<Eigen::Index>(rng() % 29), d = 2 + static_cast<Eigen::Index>(rng() % 15);
        const Matrix za = gaussian(b, d, rng), zb = gaussian(b, d, rng);
        const double lambda = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const auto cab = cross_correlation({za, zb}).c;

        diag = std::max(diag, (cross_correlation({za, za}).c.diagonal().array() - 1.0).abs().maxCoeff());
        sym = std::max(sym, (cab - cross_correlation({zb, za}).c.transpose()).cwiseAbs().maxCoeff());
        range = std::max(range, cab.cwiseAbs().maxCoeff() - 1.0);

        std::vector<int> rows(static_cast<std::size_t>(b)), cols(static_cast<std::size_t>(d));
        std::iota(rows.begin(), rows.end(), 0);
        std::iota(cols.begin(), cols.end(), 0);
        std::shuffle(rows.begin(), rows.end(), rng);
        std::shuffle(cols.begin(), cols.end(), rng);
        Matrix ra(b, d), rb(b, d), ca(b, d), cb(b, d);
        for (Eigen::Index r = 0; r < b; ++r) {
            ra.row(r) = za.row(rows[static_cast<std::size_t>(r)]);
            rb.row(r) = zb.row(rows[static_cast<std::size_t>(r)]);
        }
        for (Eigen::Index k = 0; k < d; ++k) {
            ca.col(k) = za.col(cols[static_cast<std::size_t>(k)]);
            cb.col(k) = zb.col(cols[static_cast<std::size_t>(k)]);
        }
        const double base = bt_loss(cab, lambda);
        row_perm = std::max(row_perm, std::abs(bt_loss(cross_correlation({ra, rb}).c, lambda) - base));
        col_perm = std::max(col_perm, std::abs(bt_loss(cross_correlation({ca, cb}).c, lambda) - base));
    }
    const bool pass = diag <= 1e-9 && sym <= 1e-9 && range <= 1e-9 && row_perm <= 1e-9 && col_perm <= 1e-9;
    return {pass, "200 trials: diag " + fmt("%.1e", diag) + " transpose " + fmt("%.1e", sym) + " range excess " +
                      fmt("%.1e", std::max(range, 0.0)) + " row perm " + fmt("%.1e", row_perm) + " coord perm " +
                      fmt("%.1e", col_perm)};
}

// 5 ---------------------------------------------------------------------
Outcome effective_rank_suite() {
    std::mt19937_64 rng(5);
    double oracle = 0, scale = 0, rot = 0;
    for (int t = 0; t < 50; ++t) {
        const Matrix m = gaussian(20, 6, rng) * gaussian(6, 6, rng);
        const double er = effective_rank(m).effective_rank;
        // sigma from the eigenvalues of M^T M, entropy by hand
        Eigen::SelfAdjointEigenSolver<Matrix> eig(m.transpose() * m);
        const Vector sv = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        const double total = sv.sum();
        double h = 0;
        for (double s : sv)
            if (s > 0) h -= (s / total) * std::log(s / total);
        oracle = std::max(oracle, std::abs(er - std::exp(h)));
        scale = std::max(scale, std::abs(effective_rank(m * 0.013).effective_rank - er));
        const Matrix q = Eigen::HouseholderQR<Matrix>(gaussian(6, 6, rng)).householderQ();
        rot = std::max(rot, std::abs(effective_rank(m * q).effective_rank - er));
    }
    const double e31 = spectrum_from_singular_values({3, 1}).effective_rank;
    const bool pass = oracle <= 1e-9 && scale <= 1e-9 && rot <= 1e-9 && std::abs(e31 - 1.7548) <= 1e-3;
    return {pass, "oracle " + fmt("%.1e", oracle) + " scale " + fmt("%.1e", scale) + " rotation " + fmt("%.1e", rot) +
                      " erank([3,1])=" + fmt("%.6f", e31)};
}

// 6 ---------------------------------------------------------------------
Outcome metric_suite() {
    auto hit_at = [](std::size_t pos) {
        std::vector<ItemId> top;
        for (std::size_t k = 1; k <= 10; ++k) top.push_back(k == pos ? 1 : static_cast<ItemId>(100 + k));
        return std::vector<UserRanking>{{1, 1, top}};
    };
    const double n3 = ndcg_at_k(hit_at(3), 10);
    const auto r7 = hit_at(7);
    const double h5 = hr_at_k(r7, 5), h10 = hr_at_k(r7, 10);
    const std::vector<UserRanking> toy{{1, 1, {1, 2}}, {2, 2, {2, 3}}};
    const double cov = coverage_at_k(toy, 4, 2);

    std::mt19937_64 rng(6);
    bool monotone = true;
    for (int t = 0; t < 200; ++t) {
        std::vector<UserRanking> rs;
        for (int u = 0; u < 10; ++u) {
            std::vector<ItemId> all(50);
            std::iota(all.begin(), all.end(), 1);
            std::shuffle(all.begin(), all.end(), rng);
            all.resize(20);
            rs.push_back({u, static_cast<ItemId>(1 + rng() % 50), all});
        }
        for (std::size_t k = 1; k < 20; ++k) {
            monotone = monotone && hr_at_k(rs, k) <= hr_at_k(rs, k + 1) &&
                       coverage_at_k(rs, 50, k) <= coverage_at_k(rs, 50, k + 1);
        }
    }
    const bool pass = std::abs(n3 - 0.5) <= 1e-12 && h5 == 0.0 && h10 == 1.0 && cov == 0.75 && monotone;
    return {pass, "ndcg@10(rank 3)=" + fmt("%.6f", n3) + " hr@5/hr@10(rank 7)=" + fmt("%g", h5) + "/" +
                      fmt("%g", h10) + " cov@2=" + fmt("%g", cov) + " monotone=" + (monotone ? "yes" : "no")};
}

// 7 ---------------------------------------------------------------------
Outcome split_integrity() {
    std::mt19937_64 rng(7);
    std::size_t bad_train = 0, bad_order = 0, logs = 0, errors = 0;
    while (logs < 1000) {
        const int users = 2 + static_cast<int>(rng() % 20), items = 2 + static_cast<int>(rng() % 15);
        const int events = users * (1 + static_cast<int>(rng() % 8));
        const Timestamp span = 1 + static_cast<Timestamp>(rng() % 200);
        InteractionLog log;
        for (int u = 0; u < users; ++u) log.user_names.push_back("u" + std::to_string(u));
        for (int i = 0; i < items; ++i) log.item_names.push_back("i" + std::to_string(i));
        for (int e = 0; e < events; ++e) {
            log.events.push_back({static_cast<UserId>(rng() % static_cast<unsigned>(users)),
                                  static_cast<ItemId>(rng() % static_cast<unsigned>(items)),
                                  static_cast<Timestamp>(rng() % static_cast<std::uint64_t>(span))});
        }
        const double q = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
        SplitDataset split;
        try {
            split = temporal_split(log, q);
        } catch (const SplitError&) {
            ++errors;  // every event at or before the boundary; nothing to check
            continue;
        }
        ++logs;
        for (const auto& e : split.train.events) bad_train += e.time > split.boundary;
        for (const auto& h : split.holdout) bad_order += !(h.test_time > h.validation_time);
    }
    return {bad_train == 0 && bad_order == 0,
            "1000 logs (" + std::to_string(errors) + " degenerate draws skipped): train events past boundary " +
                std::to_string(bad_train) + ", test not after validation " + std::to_string(bad_order)};
}

// 8 ---------------------------------------------------------------------
int run(std::vector<std::string> args) {
    args.insert(args.begin(), {"btsr", "-q"});
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    if (code != 0) std::cerr << err.str();
    return code;
}

// Training settings used by the end-to-end criteria.
TrainConfig pipeline_config() {
    TrainConfig c;
    c.loss = LossKind::Ce;
    c.dim = 32;
    c.max_len = 20;
    c.batch_size = 128;
    c.epochs = 20;
    c.lr = 3e-3;
    c.lambda = 0.5;
    c.pair_views_include_target = true;
    return c;
}

Outcome determinism(const fs::path& root) {
    TrainConfig c = pipeline_config();
    c.epochs = 5;
    std::vector<std::string> logs, reports;
    for (const char* tag : {"run1", "run2"}) {
        const fs::path d = root / tag;
        fs::remove_all(d);
        fs::create_directories(d);
        write_file_atomic(d / "config.json", config_to_json(c));
        const auto p = [&](const char* f) { return (d / f).string(); };
        if (run({"synth", "--output", p("log.tsv"), "--seed", "7"}) != 0 ||
            run({"prepare", "--input", p("log.tsv"), "--dataset", p("ds.json"), "--max-len", "20"}) != 0 ||
            run({"train", "--dataset", p("ds.json"), "--config", p("config.json"), "--checkpoint", p("m.ckpt"),
                 "--log", p("train_log.csv"), "--seed", "7"}) != 0 ||
            run({"evaluate", "--dataset", p("ds.json"), "--checkpoint", p("m.ckpt"), "--report", p("report.json")}) !=
                0) {
            return {false, std::string("pipeline ") + tag + " failed"};
        }
        logs.push_back(read_file(d / "train_log.csv"));
        reports.push_back(read_file(d / "report.json"));
    }
    const bool same_log = logs[0] == logs[1], same_report = reports[0] == reports[1];
    return {same_log && same_report, std::string("TrainLog ") + (same_log ? "identical" : "differs") + ", EvalReport " +
                                         (same_report ? "identical" : "differs") + " (" +
                                         std::to_string(reports[0].size()) + " bytes)"};
}

// 9 ---------------------------------------------------------------------
Outcome efficacy(int threads) {
    const auto data = prepare_dataset(synthetic_markov({}), {.min_count = 5, .quantile = 0.95, .max_len = 20});
    const auto& split = data.split;
    const auto val = make_queries(split, 20, HoldoutTarget::Validation);
    const auto popular = popularity_ranking(split.train, 10);
    double pop_hits = 0;
    for (const auto& q : val.queries)
        pop_hits += std::find(popular.begin(), popular.end(), q.truth) != popular.end();
    const double pop_hr = pop_hits / static_cast<double>(val.queries.size());

    double ce_hr = 0, cov0 = 0, cov3 = 0;
    std::string per_seed;
    for (std::uint64_t seed : {1, 2, 3}) {
        for (double alpha : {0.0, 0.3}) {
            TrainConfig c = pipeline_config();
            c.alpha = alpha;
            c.seed = seed;
            TrainOptions to;
            to.threads = threads;
            const auto res = train(c, data, to);
            EvalOptions eo;
            eo.threads = threads;
            const auto rep = evaluate(res.best, split, eo);
            RankOptions ro;
            ro.k_max = 10;
            ro.threads = threads;
            const double hr = hr_at_k(rank(res.best, val.queries, ro).rankings, 10);
            (alpha == 0.0 ? cov0 : cov3) += rep.coverage.at(10) / 3.0;
            if (alpha == 0.0) ce_hr += hr / 3.0;
            per_seed += " s" + std::to_string(seed) + "/a" + fmt("%g", alpha) + ":cov10=" +
                        fmt("%.3f", rep.coverage.at(10)) + ",hr10=" + fmt("%.3f", rep.hr.at(10)) +
                        ",erank=" + fmt("%.1f", rep.spectrum.effective_rank);
            std::cerr << "  [9]" << per_seed.substr(per_seed.rfind(' ')) << "\n";
        }
    }
    const bool a = ce_hr >= 3.0 * pop_hr, b = cov3 > cov0;
    return {a && b, std::string("(a) ") + (a ? "pass" : "fail") + " val hr@10 CE " + fmt("%.4f", ce_hr) +
                        " vs popularity " + fmt("%.4f", pop_hr) + " (x" + fmt("%.2f", ce_hr / pop_hr) + "); (b) " +
                        (b ? "pass" : "fail") + " mean cov@10 alpha=0.3 " + fmt("%.4f", cov3) + " vs alpha=0 " +
                        fmt("%.4f", cov0) + ";" + per_seed};
}

// 10 --------------------------------------------------------------------
Outcome baseline_exactness() {
    const auto data = prepare_dataset(synthetic_markov({.users = 200}), {.min_count = 5, .max_len = 20});
    TrainConfig c = pipeline_config();
    c.alpha = 0.0;
    c.epochs = 3;
    c.dim = 16;
    TrainOptions on, off;
    on.record_steps = off.record_steps = true;
    on.force_bt_path = true;
    off.disable_bt = true;
    const auto a = train(c, data, on), b = train(c, data, off);
    bool totals = a.steps.size() == b.steps.size() && !a.steps.empty();
    for (std::size_t s = 0; totals && s < a.steps.size(); ++s) {
        totals = a.steps[s].total == a.steps[s].pred && a.steps[s].total == b.steps[s].total &&
                 b.steps[s].total == b.steps[s].pred;
    }
    bool params = true;
    std::vector<const Matrix*> pb;
    b.last.params.for_each([&](const std::string&, const Matrix& t) { pb.push_back(&t); });
    std::size_t k = 0;
    a.last.params.for_each([&](const std::string&, const Matrix& t) { params = params && t == *pb[k++]; });
    return {totals && params, std::to_string(a.steps.size()) + " steps: total==pred " + (totals ? "yes" : "no") +
                                  ", final parameters bitwise equal " + (params ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> only;
    std::string workdir = (fs::temp_directory_path() / "btsr_acceptance").string();
    int threads = 1;
    app.add_option("--only", only, "Run just these criteria")->delimiter(',');
    app.add_option("--workdir", workdir);
    app.add_option("--threads", threads);
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<int, std::function<Outcome()>>> all{
        {1, bt_analytic},
        {2, gradients},
        {3, sce_equals_ce},
        {4, correlation_properties},
        {5, effective_rank_suite},
        {6, metric_suite},
        {7, split_integrity},
        {8, [&] { return determinism(workdir); }},
        {9, [&] { return efficacy(threads); }},
        {10, baseline_exactness},
    };
    int failed = 0;
    for (const auto& [id, fn] : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " [" << fmt("%.1f", secs) << "s] "
                  << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
