#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "btsr/corpus.hpp"
#include "btsr/encoder.hpp"

namespace btsr {

enum class HoldoutTarget { Validation, Test };

// One user to rank: the encoded history and the held-out item.
struct EvalQuery {
    UserId user = 0;
    std::vector<ItemId> prefix;   // left-padded to n
    std::vector<ItemId> history;  // full history before the held-out item
    ItemId truth = 0;
};

struct QuerySet {
    std::vector<EvalQuery> queries;
    std::size_t skipped = 0;  // users without a usable history
};

QuerySet make_queries(const SplitDataset& split, int max_len, HoldoutTarget target);

// Ordered top list for one user (descending score, ties by ascending id).
struct UserRanking {
    UserId user = 0;
    ItemId truth = 0;
    std::vector<ItemId> top;

    // 1-based position of the truth item in `top`, or 0 when absent.
    std::size_t hit_rank() const;
};

// Top-k over scores indexed 0..N-1 (item id = index + 1).
std::vector<ItemId> top_k(const Vector& scores, std::size_t k, std::span<const ItemId> excluded = {});

struct RankOptions {
    std::size_t k_max = 50;
    bool filter_history = false;
    int threads = 1;
    bool keep_embeddings = false;
    bool keep_scores = false;
};

struct RankResult {
    std::vector<UserRanking> rankings;
    Matrix embeddings;                 // users x D, when requested
    std::vector<double> positive_scores;  // truth score per user, when requested
    std::vector<double> negative_scores;  // all other items, when requested
};

RankResult rank(const Model& model, std::span<const EvalQuery> queries, const RankOptions& options);

double hr_at_k(std::span<const UserRanking> rankings, std::size_t k);
double ndcg_at_k(std::span<const UserRanking> rankings, std::size_t k);
double coverage_at_k(std::span<const UserRanking> rankings, std::size_t catalog_size, std::size_t k);

// Same top list for everyone: items by descending train count.
std::vector<ItemId> popularity_ranking(const InteractionLog& train, std::size_t k);

struct BucketSpec {
    std::array<std::vector<ItemId>, 3> buckets;  // most to least popular
    std::vector<int> bucket_of;                  // per item id; -1 if unseen in train
};

BucketSpec buckets(const InteractionLog& train);

struct BucketMetrics {
    std::array<std::size_t, 3> users{};
    std::array<std::optional<double>, 3> hr1;
    std::array<std::optional<double>, 3> hr10;
    std::size_t unbucketed = 0;  // users whose truth item never occurs in train
};

BucketMetrics bucket_metrics(std::span<const UserRanking> rankings, const BucketSpec& spec);

struct SpectrumReport {
    std::vector<double> singular_values;  // descending
    std::vector<double> normalized;
    double effective_rank = 0.0;
};

SpectrumReport effective_rank(const Matrix& embeddings);
SpectrumReport spectrum_from_singular_values(std::vector<double> singular_values);

struct OverlapHistogram {
    double lo = 0.0, hi = 0.0;
    std::vector<double> positive_mass;
    std::vector<double> negative_mass;
    double overlap = 0.0;
};

OverlapHistogram score_histogram(std::span<const double> pos, std::span<const double> neg, int bins);
double score_overlap(std::span<const double> pos, std::span<const double> neg, int bins);

struct EvalOptions {
    std::vector<std::size_t> ks{1, 5, 10, 50};
    std::vector<std::size_t> coverage_ks{1, 5, 10};
    HoldoutTarget target = HoldoutTarget::Test;
    bool filter_history = false;
    int histogram_bins = 50;
    // Spectrum over test users' embeddings, or over train users' last states.
    bool spectrum_on_train_users = false;
    int threads = 1;
};

struct EvalReport {
    std::map<std::size_t, double> hr, ndcg, coverage;
    BucketMetrics buckets;
    double overlap = 0.0;
    OverlapHistogram histogram;
    SpectrumReport spectrum;
    std::size_t users = 0;
    std::size_t skipped_users = 0;
    std::uint64_t seed = 0;
    std::string config_json;  // echoed config document ("{}" when absent)
    std::string config_hash;
};

EvalReport evaluate(const Model& model, const SplitDataset& split, const EvalOptions& options);

// ndcg@10 over validation users; used for model selection.
double validation_ndcg(const Model& model, const SplitDataset& split, std::size_t k = 10, int threads = 1);

std::string report_to_json(const EvalReport& report);
std::string spectrum_csv(const SpectrumReport& spectrum);
std::string histogram_csv(const OverlapHistogram& histogram);

}  // namespace btsr
