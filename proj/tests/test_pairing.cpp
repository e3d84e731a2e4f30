#include "doctest.h"

#include <cmath>
#include <map>

#include "btsr/errors.hpp"
#include "btsr/pairing.hpp"

using namespace btsr;

namespace {

std::vector<TrainingExample> with_targets(const std::vector<ItemId>& targets) {
    std::vector<TrainingExample> ex;
    for (std::size_t k = 0; k < targets.size(); ++k) {
        ex.push_back({{0, static_cast<ItemId>(k % 7 + 1)}, targets[k], static_cast<UserId>(k + 1)});
    }
    return ex;
}

}  // namespace

TEST_CASE("index: enumeration") {
    auto idx = build_index(with_targets({4, 4, 9}));
    CHECK(idx.num_buckets() == 2);
    CHECK(idx.bucket(4) == std::vector<std::size_t>{0, 1});
    CHECK(idx.bucket(9) == std::vector<std::size_t>{2});
    CHECK_THROWS_AS(idx.bucket(5), ConsistencyError);
    CHECK_THROWS_AS(build_index({}), InvalidInputError);

    auto distinct = build_index(with_targets({1, 2, 3, 4, 5}));
    for (const auto& [t, members] : distinct.buckets()) CHECK(members.size() == 1);
}

TEST_CASE("index: every example in exactly one bucket") {
    Rng rng(1);
    std::vector<ItemId> targets(10000);
    for (auto& t : targets) t = static_cast<ItemId>(1 + rng() % 300);
    auto idx = build_index(with_targets(targets));
    std::size_t total = 0;
    std::vector<int> seen(targets.size());
    for (const auto& [t, members] : idx.buckets()) {
        total += members.size();
        for (auto m : members) {
            ++seen[m];
            CHECK(targets[m] == t);
        }
    }
    CHECK(total == 10000);
    CHECK(std::count(seen.begin(), seen.end(), 1) == 10000);
}

TEST_CASE("pairs: forced choice, self fallback, shared target") {
    auto idx = build_index(with_targets({3, 3, 8, 5, 5, 5}));
    Rng rng(2);
    for (int k = 0; k < 50; ++k) {
        CHECK(sample_pair(idx, 0, rng) == 1);
        CHECK(sample_pair(idx, 1, rng) == 0);
        CHECK(sample_pair(idx, 2, rng) == 2);
        auto p = sample_pair(idx, 4, rng);
        CHECK(p != 4);
        CHECK(idx.target_of(p) == 5);
    }
    CHECK_THROWS_AS(sample_pair(idx, 6, rng), ConsistencyError);

    Rng a(5), b(5);
    std::vector<std::size_t> ra, rb;
    for (std::size_t k = 0; k < 6; ++k) ra.push_back(sample_pair(idx, k, a)), rb.push_back(sample_pair(idx, k, b));
    CHECK(ra == rb);
}

TEST_CASE("pairs: uniform over the bucket") {
    auto idx = build_index(with_targets(std::vector<ItemId>(100, 7)));
    Rng rng(3);
    const int draws = 10000;
    std::map<std::size_t, int> counts;
    for (int k = 0; k < draws; ++k) ++counts[sample_pair(idx, 42, rng)];
    CHECK(counts.count(42) == 0);
    CHECK(counts.size() == 99);
    const double expect = draws / 99.0;
    double chi2 = 0;
    for (const auto& [m, c] : counts) chi2 += (c - expect) * (c - expect) / expect;
    const double df = 98;
    CHECK(chi2 < df + 3 * std::sqrt(2 * df));
}
