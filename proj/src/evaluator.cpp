#include "btsr/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "btsr/errors.hpp"
#include "btsr/io.hpp"
#include "btsr/parallel.hpp"

namespace btsr {

using nlohmann::json;

std::size_t UserRanking::hit_rank() const {
    auto it = std::find(top.begin(), top.end(), truth);
    return it == top.end() ? 0 : static_cast<std::size_t>(it - top.begin()) + 1;
}

QuerySet make_queries(const SplitDataset& split, int max_len, HoldoutTarget target) {
    QuerySet out;
    for (const auto& h : split.holdout) {
        const std::size_t pos = target == HoldoutTarget::Validation ? h.validation_pos : h.test_pos;
        if (pos == 0) {
            ++out.skipped;
            continue;
        }
        EvalQuery q;
        q.user = h.user;
        q.truth = h.sequence[pos];
        q.history.assign(h.sequence.begin(), h.sequence.begin() + static_cast<std::ptrdiff_t>(pos));
        q.prefix = make_prefix(h.sequence, pos, max_len);
        out.queries.push_back(std::move(q));
    }
    return out;
}

std::vector<ItemId> top_k(const Vector& scores, std::size_t k, std::span<const ItemId> excluded) {
    std::vector<ItemId> ids;
    ids.reserve(static_cast<std::size_t>(scores.size()));
    std::unordered_set<ItemId> skip(excluded.begin(), excluded.end());
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        const auto id = static_cast<ItemId>(i + 1);
        if (!skip.count(id)) ids.push_back(id);
    }
    k = std::min(k, ids.size());
    auto better = [&](ItemId a, ItemId b) {
        const double sa = scores[a - 1];
        const double sb = scores[b - 1];
        return sa > sb || (sa == sb && a < b);
    };
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), better);
    ids.resize(k);
    return ids;
}

RankResult rank(const Model& model, std::span<const EvalQuery> queries, const RankOptions& options) {
    const std::size_t users = queries.size();
    const auto n_items = static_cast<std::size_t>(model.config.num_items);
    RankResult out;
    out.rankings.resize(users);
    if (options.keep_embeddings) out.embeddings.resize(static_cast<Eigen::Index>(users), model.config.dim);
    std::vector<double> pos(options.keep_scores ? users : 0);
    std::vector<std::vector<double>> neg(options.keep_scores ? users : 0);

    parallel_for(users, options.threads, [&](std::size_t u) {
        const auto& q = queries[u];
        const Vector z = encode(model, q.prefix);
        const Vector scores = score_all(model, z);
        auto& r = out.rankings[u];
        r.user = q.user;
        r.truth = q.truth;
        r.top = options.filter_history ? top_k(scores, options.k_max, q.history) : top_k(scores, options.k_max);
        if (options.keep_embeddings) out.embeddings.row(static_cast<Eigen::Index>(u)) = z.transpose();
        if (options.keep_scores) {
            pos[u] = scores[q.truth - 1];
            neg[u].reserve(n_items - 1);
            for (std::size_t i = 0; i < n_items; ++i) {
                if (static_cast<ItemId>(i + 1) != q.truth) neg[u].push_back(scores[static_cast<Eigen::Index>(i)]);
            }
        }
    });

    if (options.keep_scores) {
        out.positive_scores = std::move(pos);
        for (auto& v : neg) out.negative_scores.insert(out.negative_scores.end(), v.begin(), v.end());
    }
    return out;
}

double hr_at_k(std::span<const UserRanking> rankings, std::size_t k) {
    if (k < 1) throw InvalidInputError("K must be >= 1");
    if (rankings.empty()) throw UndefinedMetricError("hr@K over an empty user set");
    std::size_t hits = 0;
    for (const auto& r : rankings) {
        const auto pos = r.hit_rank();
        hits += (pos != 0 && pos <= k) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

double ndcg_at_k(std::span<const UserRanking> rankings, std::size_t k) {
    if (k < 1) throw InvalidInputError("K must be >= 1");
    if (rankings.empty()) throw UndefinedMetricError("ndcg@K over an empty user set");
    double sum = 0.0;
    for (const auto& r : rankings) {
        const auto pos = r.hit_rank();
        if (pos != 0 && pos <= k) sum += 1.0 / std::log2(static_cast<double>(pos) + 1.0);
    }
    return sum / static_cast<double>(rankings.size());
}

double coverage_at_k(std::span<const UserRanking> rankings, std::size_t catalog_size, std::size_t k) {
    if (k < 1) throw InvalidInputError("K must be >= 1");
    if (catalog_size == 0) throw InvalidInputError("empty catalog");
    std::vector<char> seen(catalog_size + 1, 0);
    std::size_t unique = 0;
    for (const auto& r : rankings) {
        const std::size_t upto = std::min(k, r.top.size());
        for (std::size_t i = 0; i < upto; ++i) {
            auto& s = seen.at(static_cast<std::size_t>(r.top[i]));
            if (!s) {
                s = 1;
                ++unique;
            }
        }
    }
    return static_cast<double>(unique) / static_cast<double>(catalog_size);
}

namespace {

std::vector<std::int64_t> item_counts(const InteractionLog& train) {
    std::vector<std::int64_t> counts(train.item_names.size(), 0);
    for (const auto& e : train.events) ++counts.at(static_cast<std::size_t>(e.item));
    return counts;
}

std::vector<ItemId> by_popularity(const std::vector<std::int64_t>& counts) {
    std::vector<ItemId> items;
    for (std::size_t i = 1; i < counts.size(); ++i) {
        if (counts[i] > 0) items.push_back(static_cast<ItemId>(i));
    }
    std::stable_sort(items.begin(), items.end(), [&](ItemId a, ItemId b) { return counts[a] > counts[b]; });
    return items;
}

}  // namespace

std::vector<ItemId> popularity_ranking(const InteractionLog& train, std::size_t k) {
    auto counts = item_counts(train);
    std::vector<ItemId> items(counts.size() - 1);
    std::iota(items.begin(), items.end(), 1);
    std::stable_sort(items.begin(), items.end(), [&](ItemId a, ItemId b) { return counts[a] > counts[b]; });
    items.resize(std::min(k, items.size()));
    return items;
}

BucketSpec buckets(const InteractionLog& train) {
    if (train.events.empty()) throw EmptyCorpusError("train log is empty");
    const auto counts = item_counts(train);
    const auto order = by_popularity(counts);
    const auto total = static_cast<std::int64_t>(train.events.size());

    BucketSpec spec;
    spec.bucket_of.assign(counts.size(), -1);
    std::int64_t cum = 0;
    int bucket = 0;
    for (ItemId item : order) {
        spec.buckets[static_cast<std::size_t>(bucket)].push_back(item);
        spec.bucket_of[static_cast<std::size_t>(item)] = bucket;
        cum += counts[static_cast<std::size_t>(item)];
        // Close the bucket once its cumulative share reaches (bucket+1)/3.
        while (bucket < 2 && 3 * cum >= (bucket + 1) * total) ++bucket;
    }
    return spec;
}

BucketMetrics bucket_metrics(std::span<const UserRanking> rankings, const BucketSpec& spec) {
    BucketMetrics m;
    std::array<std::size_t, 3> hits1{}, hits10{};
    for (const auto& r : rankings) {
        const auto t = static_cast<std::size_t>(r.truth);
        const int b = t < spec.bucket_of.size() ? spec.bucket_of[t] : -1;
        if (b < 0) {
            ++m.unbucketed;
            continue;
        }
        const auto bi = static_cast<std::size_t>(b);
        ++m.users[bi];
        const auto pos = r.hit_rank();
        hits1[bi] += pos == 1 ? 1 : 0;
        hits10[bi] += (pos != 0 && pos <= 10) ? 1 : 0;
    }
    for (std::size_t b = 0; b < 3; ++b) {
        if (m.users[b] == 0) continue;
        m.hr1[b] = static_cast<double>(hits1[b]) / static_cast<double>(m.users[b]);
        m.hr10[b] = static_cast<double>(hits10[b]) / static_cast<double>(m.users[b]);
    }
    return m;
}

SpectrumReport spectrum_from_singular_values(std::vector<double> sv) {
    std::sort(sv.begin(), sv.end(), std::greater<>());
    const double total = std::accumulate(sv.begin(), sv.end(), 0.0);
    if (!(total > 0.0)) throw DegenerateInputError("all singular values are zero");
    SpectrumReport r;
    r.singular_values = std::move(sv);
    double entropy = 0.0;
    for (double s : r.singular_values) {
        const double p = s / total;
        r.normalized.push_back(p);
        if (p > 0.0) entropy -= p * std::log(p);
    }
    r.effective_rank = std::exp(entropy);
    return r;
}

SpectrumReport effective_rank(const Matrix& embeddings) {
    if (embeddings.size() == 0 || embeddings.isZero(0.0)) {
        throw DegenerateInputError("effective rank of an all-zero matrix");
    }
    Eigen::BDCSVD<Matrix> svd(embeddings);
    const auto& s = svd.singularValues();
    return spectrum_from_singular_values(std::vector<double>(s.data(), s.data() + s.size()));
}

OverlapHistogram score_histogram(std::span<const double> pos, std::span<const double> neg, int bins) {
    if (pos.empty() || neg.empty()) throw InvalidInputError("score lists must be nonempty");
    if (bins < 2) throw InvalidInputError("need at least 2 bins");
    OverlapHistogram h;
    auto [pmin, pmax] = std::minmax_element(pos.begin(), pos.end());
    auto [nmin, nmax] = std::minmax_element(neg.begin(), neg.end());
    h.lo = std::min(*pmin, *nmin);
    h.hi = std::max(*pmax, *nmax);
    h.positive_mass.assign(static_cast<std::size_t>(bins), 0.0);
    h.negative_mass.assign(static_cast<std::size_t>(bins), 0.0);
    if (h.hi == h.lo) {
        h.positive_mass[0] = 1.0;
        h.negative_mass[0] = 1.0;
        h.overlap = 1.0;
        return h;
    }
    const double width = (h.hi - h.lo) / bins;
    auto fill = [&](std::span<const double> xs, std::vector<double>& mass) {
        const double w = 1.0 / static_cast<double>(xs.size());
        for (double x : xs) {
            auto b = static_cast<int>((x - h.lo) / width);
            b = std::clamp(b, 0, bins - 1);
            mass[static_cast<std::size_t>(b)] += w;
        }
    };
    fill(pos, h.positive_mass);
    fill(neg, h.negative_mass);
    for (int b = 0; b < bins; ++b) {
        h.overlap += std::min(h.positive_mass[static_cast<std::size_t>(b)], h.negative_mass[static_cast<std::size_t>(b)]);
    }
    return h;
}

double score_overlap(std::span<const double> pos, std::span<const double> neg, int bins) {
    return score_histogram(pos, neg, bins).overlap;
}

EvalReport evaluate(const Model& model, const SplitDataset& split, const EvalOptions& options) {
    auto qs = make_queries(split, model.config.max_len, options.target);
    if (qs.queries.empty()) throw UndefinedMetricError("no users with a usable history to evaluate");

    std::size_t k_max = 10;
    for (auto k : options.ks) k_max = std::max(k_max, k);
    for (auto k : options.coverage_ks) k_max = std::max(k_max, k);

    RankOptions ro;
    ro.k_max = k_max;
    ro.filter_history = options.filter_history;
    ro.threads = options.threads;
    ro.keep_embeddings = !options.spectrum_on_train_users;
    ro.keep_scores = true;
    auto ranked = rank(model, qs.queries, ro);

    EvalReport rep;
    rep.users = qs.queries.size();
    rep.skipped_users = qs.skipped;
    const auto n_items = static_cast<std::size_t>(model.config.num_items);
    for (auto k : options.ks) {
        rep.hr[k] = hr_at_k(ranked.rankings, k);
        rep.ndcg[k] = ndcg_at_k(ranked.rankings, k);
    }
    for (auto k : options.coverage_ks) rep.coverage[k] = coverage_at_k(ranked.rankings, n_items, k);
    rep.buckets = bucket_metrics(ranked.rankings, buckets(split.train));
    rep.histogram = score_histogram(ranked.positive_scores, ranked.negative_scores, options.histogram_bins);
    rep.overlap = rep.histogram.overlap;

    if (options.spectrum_on_train_users) {
        auto seqs = user_sequences(split.train);
        std::vector<std::vector<ItemId>> prefixes;
        for (const auto& s : seqs) {
            if (s.empty()) continue;
            std::vector<ItemId> items;
            for (const auto& e : s) items.push_back(e.item);
            prefixes.push_back(make_prefix(items, items.size(), model.config.max_len));
        }
        Matrix emb(static_cast<Eigen::Index>(prefixes.size()), model.config.dim);
        parallel_for(prefixes.size(), options.threads, [&](std::size_t u) {
            emb.row(static_cast<Eigen::Index>(u)) = encode(model, prefixes[u]).transpose();
        });
        rep.spectrum = effective_rank(emb);
    } else {
        rep.spectrum = effective_rank(ranked.embeddings);
    }
    rep.config_json = "{}";
    return rep;
}

double validation_ndcg(const Model& model, const SplitDataset& split, std::size_t k, int threads) {
    auto qs = make_queries(split, model.config.max_len, HoldoutTarget::Validation);
    RankOptions ro;
    ro.k_max = k;
    ro.threads = threads;
    auto ranked = rank(model, qs.queries, ro);
    return ndcg_at_k(ranked.rankings, k);
}

std::string report_to_json(const EvalReport& r) {
    json j;
    j["format"] = "btsr-eval-report";
    j["version"] = 1;
    json metrics = json::object();
    for (const auto& [k, v] : r.hr) metrics["hr@" + std::to_string(k)] = v;
    for (const auto& [k, v] : r.ndcg) metrics["ndcg@" + std::to_string(k)] = v;
    for (const auto& [k, v] : r.coverage) metrics["cov@" + std::to_string(k)] = v;
    j["metrics"] = std::move(metrics);

    json bk = json::array();
    for (std::size_t b = 0; b < 3; ++b) {
        json e = {{"bucket", b + 1}, {"users", r.buckets.users[b]}};
        e["hr@1"] = r.buckets.hr1[b] ? json(*r.buckets.hr1[b]) : json(nullptr);
        e["hr@10"] = r.buckets.hr10[b] ? json(*r.buckets.hr10[b]) : json(nullptr);
        bk.push_back(std::move(e));
    }
    j["buckets"] = std::move(bk);
    j["unbucketed_users"] = r.buckets.unbucketed;
    j["overlap"] = r.overlap;
    j["histogram_bins"] = r.histogram.positive_mass.size();
    j["spectrum"] = {{"effective_rank", r.spectrum.effective_rank}, {"singular_values", r.spectrum.singular_values}};
    j["users"] = r.users;
    j["skipped_users"] = r.skipped_users;
    j["seed"] = r.seed;
    j["config_hash"] = r.config_hash;
    j["config"] = json::parse(r.config_json.empty() ? "{}" : r.config_json);
    return j.dump(2) + "\n";
}

std::string spectrum_csv(const SpectrumReport& s) {
    std::ostringstream out;
    out << "index,singular_value,normalized\n";
    for (std::size_t i = 0; i < s.singular_values.size(); ++i) {
        out << i + 1 << ',' << format_real(s.singular_values[i]) << ',' << format_real(s.normalized[i]) << '\n';
    }
    return out.str();
}

std::string histogram_csv(const OverlapHistogram& h) {
    std::ostringstream out;
    out << "bin_lo,bin_hi,positive_density,negative_density\n";
    const auto bins = h.positive_mass.size();
    const double width = bins ? (h.hi - h.lo) / static_cast<double>(bins) : 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
        const double lo = h.lo + width * static_cast<double>(b);
        const double hi = b + 1 == bins ? h.hi : h.lo + width * static_cast<double>(b + 1);
        const double scale = width > 0.0 ? 1.0 / width : 1.0;
        out << format_real(lo) << ',' << format_real(hi) << ',' << format_real(h.positive_mass[b] * scale) << ','
            << format_real(h.negative_mass[b] * scale) << '\n';
    }
    return out.str();
}

}  // namespace btsr
