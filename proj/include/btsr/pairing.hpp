#pragma once

#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

#include "btsr/corpus.hpp"
#include "btsr/rng.hpp"

namespace btsr {

// Inverted index from next-item label to the examples that predict it.
class TargetIndex {
public:
    TargetIndex() = default;
    explicit TargetIndex(std::span<const TrainingExample> examples);

    const std::vector<std::size_t>& bucket(ItemId target) const;
    bool contains(ItemId target) const { return buckets_.count(target) > 0; }
    std::size_t num_buckets() const { return buckets_.size(); }
    std::size_t num_examples() const { return targets_.size(); }
    ItemId target_of(std::size_t example) const { return targets_.at(example); }

    const std::unordered_map<ItemId, std::vector<std::size_t>>& buckets() const { return buckets_; }

private:
    std::unordered_map<ItemId, std::vector<std::size_t>> buckets_;
    std::vector<ItemId> targets_;
};

TargetIndex build_index(std::span<const TrainingExample> examples);

// Another example with the same target as `anchor`, drawn uniformly from the
// rest of its bucket. A singleton bucket pairs the anchor with itself.
std::size_t sample_pair(const TargetIndex& index, std::size_t anchor, Rng& rng);

}  // namespace btsr
