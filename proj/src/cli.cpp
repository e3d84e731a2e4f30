#include "btsr/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "btsr/checkpoint.hpp"
#include "btsr/config.hpp"
#include "btsr/dataset.hpp"
#include "btsr/errors.hpp"
#include "btsr/evaluator.hpp"
#include "btsr/io.hpp"
#include "btsr/log.hpp"
#include "btsr/synthetic.hpp"
#include "btsr/trainer.hpp"

namespace btsr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

void require_file(const std::string& path, const char* flag) {
    if (path.empty()) throw UsageError(std::string(flag) + " is required");
    if (!fs::is_regular_file(path)) throw UsageError(std::string(flag) + ": no such file: " + path);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        part.erase(0, part.find_first_not_of(" \t"));
        part.erase(part.find_last_not_of(" \t") + 1);
        if (part.empty()) throw UsageError("empty entry in list '" + text + "'");
        parts.push_back(part);
    }
    if (parts.empty()) throw UsageError("empty list");
    return parts;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
    std::vector<std::size_t> ks;
    for (const auto& p : split_list(text)) {
        std::size_t used = 0;
        long long k = 0;
        try {
            k = std::stoll(p, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != p.size() || k < 1) throw UsageError("--k entries must be positive integers (got '" + p + "')");
        ks.push_back(static_cast<std::size_t>(k));
    }
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    return ks;
}

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> values;
    for (const auto& p : split_list(text)) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(p, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != p.size() || !(v >= 0.0) || !std::isfinite(v)) {
            throw UsageError("--values entries must be nonnegative numbers (got '" + p + "')");
        }
        values.push_back(v);
    }
    return values;
}

TrainConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
    TrainConfig c;
    if (!path.empty()) {
        require_file(path, "--config");
        c = config_from_json(read_file(path), c);
    }
    c = apply_env_overrides(c);
    if (seed) c.seed = *seed;
    c.validate();
    return c;
}

fs::path sibling(const fs::path& base, const std::string& suffix) { return fs::path(base.string() + suffix); }

EvalReport evaluate_model(const Model& model, const DatasetBundle& bundle, const TrainConfig& config,
                          const std::string& config_json, const std::vector<std::size_t>& ks, int threads) {
    EvalOptions eo;
    eo.ks = ks;
    eo.filter_history = config.filter_history;
    eo.histogram_bins = config.histogram_bins;
    eo.spectrum_on_train_users = config.spectrum_users == "train";
    eo.threads = threads;
    EvalReport rep = evaluate(model, bundle.split, eo);
    rep.seed = config.seed;
    rep.config_json = config_json;
    rep.config_hash = fnv1a_hex(config_json);
    return rep;
}

void write_report(const fs::path& path, const EvalReport& rep) {
    write_file_atomic(path, report_to_json(rep));
    const fs::path stem = path.parent_path() / path.stem();
    write_file_atomic(sibling(stem, ".spectrum.csv"), spectrum_csv(rep.spectrum));
    write_file_atomic(sibling(stem, ".histogram.csv"), histogram_csv(rep.histogram));
}

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch == '\n' ? ' ' : ch;
    }
    return out + "\"";
}

// ---- subcommands ----

struct PrepareFlags {
    std::string input, dataset, summary, delimiter = "tab";
    bool skip_header = false;
    PrepareParams params;
};

int cmd_prepare(const PrepareFlags& f, std::ostream& out) {
    require_file(f.input, "--input");
    if (f.dataset.empty()) throw UsageError("--dataset is required");
    LoadOptions lo;
    lo.delimiter = parse_delimiter(f.delimiter);
    lo.skip_header = f.skip_header;
    const auto raw = load_log(f.input, lo);
    const auto bundle = prepare_dataset(raw, f.params);
    save_bundle(f.dataset, bundle);
    const std::string text = summary_text(bundle.summary, bundle.params);
    write_file_atomic(f.summary.empty() ? sibling(f.dataset, ".summary.txt") : fs::path(f.summary), text);
    out << text;
    return kExitOk;
}

struct SynthFlags {
    std::string output;
    SyntheticSpec spec;
};

int cmd_synth(const SynthFlags& f, std::ostream& out) {
    if (f.output.empty()) throw UsageError("--output is required");
    const auto log = synthetic_markov(f.spec);
    write_file_atomic(f.output, format_log(log));
    out << "wrote " << log.events.size() << " events (" << log.num_users() << " users, " << log.num_items()
        << " items) to " << f.output << "\n";
    return kExitOk;
}

struct TrainFlags {
    std::string dataset, config, checkpoint, log;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

int cmd_train(const TrainFlags& f, std::ostream& out) {
    require_file(f.dataset, "--dataset");
    if (f.checkpoint.empty()) throw UsageError("--checkpoint is required");
    const TrainConfig config = load_config(f.config, f.seed);
    const auto bundle = load_bundle(f.dataset);

    TrainOptions to;
    to.threads = f.threads;
    to.on_epoch = [&](const TrainLogRow& r) {
        log::info("epoch " + std::to_string(r.epoch) + " pred=" + format_real(r.pred) + " bt=" + format_real(r.bt) +
                  " val_ndcg@10=" + format_real(r.val_ndcg10));
    };
    const auto result = train(config, bundle, to);

    const std::string config_json = config_to_json(config);
    save_checkpoint(f.checkpoint, Checkpoint{result.best, config.seed, config_json});
    const fs::path log_path = f.log.empty() ? sibling(f.checkpoint, ".log.csv") : fs::path(f.log);
    write_file_atomic(log_path, result.log.csv());
    write_file_atomic(sibling(log_path, ".timing.csv"), result.log.timing_csv());
    out << "best epoch " << result.best_epoch << " val ndcg@10 " << format_real(result.best_val_ndcg10) << "\n";
    return kExitOk;
}

struct EvaluateFlags {
    std::string dataset, checkpoint, report, k = "1,5,10,50";
    int threads = 1;
};

int cmd_evaluate(const EvaluateFlags& f, std::ostream& out) {
    require_file(f.dataset, "--dataset");
    require_file(f.checkpoint, "--checkpoint");
    if (f.report.empty()) throw UsageError("--report is required");
    const auto ks = parse_ks(f.k);
    const auto bundle = load_bundle(f.dataset);
    const auto ckpt = load_checkpoint(f.checkpoint);
    TrainConfig config = config_from_json(ckpt.config_json.empty() ? "{}" : ckpt.config_json);
    config.seed = ckpt.seed;
    if (static_cast<std::size_t>(ckpt.model.config.num_items) != bundle.num_items()) {
        throw ConsistencyError("checkpoint catalog size does not match the dataset");
    }
    const auto rep = evaluate_model(ckpt.model, bundle, config, ckpt.config_json, ks, f.threads);
    write_report(f.report, rep);
    for (auto k : ks) out << "hr@" << k << " " << format_real(rep.hr.at(k)) << "  ndcg@" << k << " "
                          << format_real(rep.ndcg.at(k)) << "\n";
    return kExitOk;
}

struct SweepFlags {
    std::string dataset, config, param = "alpha", values, output, workdir, k = "1,5,10,50";
    int repeats = 1;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

int cmd_sweep(const SweepFlags& f, std::ostream& out, std::ostream& err) {
    require_file(f.dataset, "--dataset");
    if (f.param != "alpha" && f.param != "lambda") throw UsageError("--param must be alpha or lambda");
    if (f.repeats < 1) throw UsageError("--repeats must be >= 1");
    if (f.output.empty()) throw UsageError("--output is required");
    const auto values = parse_values(f.values);
    const auto ks = parse_ks(f.k);
    const TrainConfig base = load_config(f.config, f.seed);
    const auto bundle = load_bundle(f.dataset);
    const fs::path workdir = f.workdir.empty() ? sibling(f.output, ".runs") : fs::path(f.workdir);

    std::vector<std::string> metrics;
    for (auto k : ks) metrics.push_back("hr@" + std::to_string(k));
    for (auto k : ks) metrics.push_back("ndcg@" + std::to_string(k));
    for (auto k : EvalOptions{}.coverage_ks) metrics.push_back("cov@" + std::to_string(k));
    metrics.push_back("overlap");
    metrics.push_back("effective_rank");

    std::ostringstream csv;
    csv << "param,value,runs,failed";
    for (const auto& m : metrics) csv << ',' << m << "_mean," << m << "_std";
    csv << ",errors\n";

    std::size_t failures = 0;
    for (double v : values) {
        std::vector<std::vector<double>> samples(metrics.size());
        std::vector<std::string> errors;
        for (int r = 0; r < f.repeats; ++r) {
            TrainConfig c = base;
            (f.param == "alpha" ? c.alpha : c.lambda) = v;
            c.seed = base.seed + static_cast<std::uint64_t>(r);
            const fs::path dir = workdir / (f.param + "=" + format_real(v)) / ("seed" + std::to_string(c.seed));
            try {
                c.validate();
                TrainOptions to;
                to.threads = f.threads;
                const auto result = train(c, bundle, to);
                const std::string cj = config_to_json(c);
                save_checkpoint(dir / "model.ckpt", Checkpoint{result.best, c.seed, cj});
                write_file_atomic(dir / "train_log.csv", result.log.csv());
                const auto rep = evaluate_model(result.best, bundle, c, cj, ks, f.threads);
                write_report(dir / "report.json", rep);
                std::size_t m = 0;
                for (auto k : ks) samples[m++].push_back(rep.hr.at(k));
                for (auto k : ks) samples[m++].push_back(rep.ndcg.at(k));
                for (auto k : EvalOptions{}.coverage_ks) samples[m++].push_back(rep.coverage.at(k));
                samples[m++].push_back(rep.overlap);
                samples[m++].push_back(rep.spectrum.effective_rank);
                out << f.param << "=" << format_real(v) << " seed=" << c.seed << " ndcg@10="
                    << (rep.ndcg.count(10) ? format_real(rep.ndcg.at(10)) : std::string("n/a")) << "\n";
            } catch (const std::exception& e) {
                ++failures;
                errors.push_back("seed " + std::to_string(c.seed) + ": " + e.what());
                err << "sweep run " << f.param << "=" << format_real(v) << " seed " << c.seed << " failed: " << e.what()
                    << "\n";
            }
        }
        const std::size_t ok = samples.front().size();
        csv << f.param << ',' << format_real(v) << ',' << f.repeats << ',' << errors.size();
        for (const auto& s : samples) {
            if (s.empty()) {
                csv << ",,";
                continue;
            }
            double mean = 0.0;
            for (double x : s) mean += x;
            mean /= static_cast<double>(ok);
            double var = 0.0;
            for (double x : s) var += (x - mean) * (x - mean);
            const double sd = ok > 1 ? std::sqrt(var / static_cast<double>(ok - 1)) : 0.0;
            csv << ',' << format_real(mean) << ',' << format_real(sd);
        }
        std::string joined;
        for (const auto& e : errors) joined += (joined.empty() ? "" : "; ") + e;
        csv << ',' << (joined.empty() ? "" : csv_quote(joined)) << '\n';
    }
    write_file_atomic(f.output, csv.str());
    return failures == 0 ? kExitOk : kExitPartialSweep;
}

struct ReportFlags {
    std::string reports, output;
};

// Side-by-side text table of one or more evaluation reports.
int cmd_report(const ReportFlags& f, std::ostream& out) {
    const auto paths = split_list(f.reports);
    if (paths.empty()) throw UsageError("--reports needs at least one path");
    std::vector<std::string> names;
    std::vector<std::map<std::string, double>> cols;
    std::vector<std::string> keys;
    auto add_key = [&](const std::string& k) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    };
    for (const auto& p : paths) {
        require_file(p, "--reports");
        json j;
        try {
            j = json::parse(read_file(p));
        } catch (const json::exception& e) {
            throw FormatError(p + ": " + e.what());
        }
        if (j.value("format", "") != "btsr-eval-report") throw FormatError(p + ": not an evaluation report");
        std::map<std::string, double> col;
        std::vector<std::string> metric_keys;
        for (const auto& [k, v] : j.at("metrics").items()) metric_keys.push_back(k);
        // hr@1 < hr@5 < hr@10 < hr@50 rather than lexicographic
        std::stable_sort(metric_keys.begin(), metric_keys.end(), [](const std::string& a, const std::string& b) {
            const auto pa = a.find('@'), pb = b.find('@');
            const auto na = a.substr(0, pa), nb = b.substr(0, pb);
            if (na != nb) return na < nb;
            return std::stoi(a.substr(pa + 1)) < std::stoi(b.substr(pb + 1));
        });
        for (const auto& k : metric_keys) {
            col[k] = j["metrics"][k].get<double>();
            add_key(k);
        }
        col["overlap"] = j.at("overlap").get<double>();
        col["effective_rank"] = j.at("spectrum").at("effective_rank").get<double>();
        add_key("overlap");
        add_key("effective_rank");
        for (const auto& b : j.at("buckets")) {
            const std::string pre = "bucket" + std::to_string(b.at("bucket").get<int>()) + " ";
            for (const char* m : {"hr@1", "hr@10"}) {
                if (b.contains(m) && !b[m].is_null()) col[pre + m] = b[m].get<double>();
                add_key(pre + m);
            }
        }
        names.push_back(fs::path(p).stem().string());
        cols.push_back(std::move(col));
    }

    std::size_t key_width = 6;
    for (const auto& k : keys) key_width = std::max(key_width, k.size());
    std::ostringstream t;
    t << std::left << std::setw(static_cast<int>(key_width)) << "metric";
    for (const auto& n : names) t << "  " << std::right << std::setw(std::max<int>(10, static_cast<int>(n.size()))) << n;
    t << "\n";
    for (const auto& k : keys) {
        t << std::left << std::setw(static_cast<int>(key_width)) << k;
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const int w = std::max<int>(10, static_cast<int>(names[c].size()));
            auto it = cols[c].find(k);
            char buf[32] = "-";
            if (it != cols[c].end()) std::snprintf(buf, sizeof buf, "%.4f", it->second);
            t << "  " << std::right << std::setw(w) << buf;
        }
        t << "\n";
    }
    if (!f.output.empty()) write_file_atomic(f.output, t.str());
    out << t.str();
    return kExitOk;
}

struct GradcheckFlags {
    std::string loss = "all", report;
    GradcheckSettings settings;
};

int cmd_gradcheck(const GradcheckFlags& f, std::ostream& out) {
    std::vector<LossKind> kinds;
    if (f.loss == "all") kinds = {LossKind::Bce, LossKind::Ce, LossKind::Sce};
    else kinds = {parse_loss_kind(f.loss)};

    json j = json::array();
    bool all_passed = true;
    for (auto kind : kinds) {
        const auto rep = gradcheck(kind, f.settings);
        all_passed = all_passed && rep.passed;
        out << "loss=" << to_string(kind) << " alpha=" << format_real(rep.alpha)
            << " max_rel_error=" << format_real(rep.max_rel_error) << (rep.passed ? " PASS" : " FAIL") << "\n";
        json tensors = json::array();
        for (const auto& t : rep.tensors) {
            tensors.push_back({{"name", t.name},
                               {"entries", t.entries},
                               {"max_rel_error", t.max_rel_error},
                               {"max_abs_error", t.max_abs_error}});
        }
        j.push_back({{"loss", to_string(kind)},
                     {"alpha", rep.alpha},
                     {"step", rep.step},
                     {"tolerance", rep.tolerance},
                     {"max_rel_error", rep.max_rel_error},
                     {"passed", rep.passed},
                     {"tensors", tensors}});
    }
    if (!f.report.empty()) write_file_atomic(f.report, j.dump(2) + "\n");
    return all_passed ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sequential recommendation with a redundancy-reduction regularizer"};
    app.require_subcommand(1);
    int verbosity = 0;
    bool quiet = false;
    app.add_flag("-v,--verbose", verbosity, "More logging (repeatable)");
    app.add_flag("-q,--quiet", quiet, "Errors only");

    PrepareFlags pf;
    auto* prepare = app.add_subcommand("prepare", "Filter, split and package an interaction log");
    prepare->add_option("--input", pf.input, "Interaction log (user, item, timestamp per line)");
    prepare->add_option("--dataset", pf.dataset, "Output dataset bundle (JSON)");
    prepare->add_option("--summary", pf.summary, "Summary text path (default <dataset>.summary.txt)");
    prepare->add_option("--delimiter", pf.delimiter, "tab, comma, space, ws, semicolon or a single character");
    prepare->add_flag("--skip-header", pf.skip_header, "Ignore the first line");
    prepare->add_option("--min-count", pf.params.min_count, "k-core threshold")->capture_default_str();
    prepare->add_option("--quantile", pf.params.quantile, "Temporal boundary quantile")->capture_default_str();
    prepare->add_option("--max-len", pf.params.max_len, "Prefix length n")->capture_default_str();

    SynthFlags sf;
    auto* synth = app.add_subcommand("synth", "Write a synthetic first-order Markov interaction log");
    synth->add_option("--output", sf.output, "Output TSV path");
    synth->add_option("--items", sf.spec.items)->capture_default_str();
    synth->add_option("--users", sf.spec.users)->capture_default_str();
    synth->add_option("--seed", sf.spec.seed)->capture_default_str();
    synth->add_option("--successors", sf.spec.successors)->capture_default_str();
    synth->add_option("--follow", sf.spec.follow_probability, "Probability of moving to a preferred successor")
        ->capture_default_str();
    synth->add_option("--zipf", sf.spec.zipf_exponent, "Popularity exponent of the fallback draw")->capture_default_str();

    TrainFlags tf;
    auto* trainc = app.add_subcommand("train", "Train a model and write the best checkpoint");
    trainc->add_option("--dataset", tf.dataset, "Dataset bundle from prepare");
    trainc->add_option("--config", tf.config, "JSON config");
    trainc->add_option("--checkpoint", tf.checkpoint, "Output checkpoint");
    trainc->add_option("--log", tf.log, "Training log CSV (default <checkpoint>.log.csv)");
    trainc->add_option("--seed", tf.seed, "Overrides the config seed");
    trainc->add_option("--threads", tf.threads)->capture_default_str()->check(CLI::PositiveNumber);

    EvaluateFlags ef;
    auto* evaluatec = app.add_subcommand("evaluate", "Rank the full catalog for test users and report metrics");
    evaluatec->add_option("--dataset", ef.dataset);
    evaluatec->add_option("--checkpoint", ef.checkpoint);
    evaluatec->add_option("--report", ef.report, "Output report JSON; CSV sidecars go next to it");
    evaluatec->add_option("--k", ef.k, "Cutoffs, comma separated")->capture_default_str();
    evaluatec->add_option("--threads", ef.threads)->capture_default_str()->check(CLI::PositiveNumber);

    SweepFlags wf;
    auto* sweep = app.add_subcommand("sweep", "Train and evaluate over a grid of alpha or lambda values");
    sweep->add_option("--dataset", wf.dataset);
    sweep->add_option("--config", wf.config, "Base JSON config");
    sweep->add_option("--param", wf.param, "alpha or lambda")->capture_default_str();
    sweep->add_option("--values", wf.values, "Comma separated values")->required();
    sweep->add_option("--repeats", wf.repeats, "Seeds per value (seed, seed+1, ...)")->capture_default_str();
    sweep->add_option("--seed", wf.seed, "First seed (default: config seed)");
    sweep->add_option("--output", wf.output, "Sweep table CSV");
    sweep->add_option("--workdir", wf.workdir, "Per-run artifacts (default <output>.runs)");
    sweep->add_option("--k", wf.k)->capture_default_str();
    sweep->add_option("--threads", wf.threads)->capture_default_str()->check(CLI::PositiveNumber);

    GradcheckFlags gf;
    auto* gradc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients on a toy model");
    gradc->add_option("--loss", gf.loss, "bce, ce, sce or all")->capture_default_str();
    gradc->add_option("--alpha", gf.settings.alpha)->capture_default_str();
    gradc->add_option("--lambda", gf.settings.lambda)->capture_default_str();
    gradc->add_option("--seed", gf.settings.seed)->capture_default_str();
    gradc->add_option("--report", gf.report, "Optional JSON report");

    ReportFlags rf;
    auto* reportc = app.add_subcommand("report", "Print evaluation reports side by side");
    reportc->add_option("--reports", rf.reports, "Comma separated report JSON paths");
    reportc->add_option("--output", rf.output, "Also write the table here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    log::set_level(quiet ? log::Level::Quiet
                         : verbosity >= 2 ? log::Level::Debug
                         : verbosity == 1 ? log::Level::Info
                                          : log::Level::Warn);
    try {
        if (*prepare) return cmd_prepare(pf, out);
        if (*synth) return cmd_synth(sf, out);
        if (*trainc) return cmd_train(tf, out);
        if (*evaluatec) return cmd_evaluate(ef, out);
        if (*sweep) return cmd_sweep(wf, out, err);
        if (*gradc) return cmd_gradcheck(gf, out);
        if (*reportc) return cmd_report(rf, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace btsr
