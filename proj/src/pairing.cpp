#include "btsr/pairing.hpp"

#include <algorithm>
#include <string>

#include "btsr/errors.hpp"

namespace btsr {

TargetIndex::TargetIndex(std::span<const TrainingExample> examples) {
    if (examples.empty()) throw InvalidInputError("cannot index an empty example list");
    targets_.reserve(examples.size());
    for (std::size_t k = 0; k < examples.size(); ++k) {
        targets_.push_back(examples[k].target);
        buckets_[examples[k].target].push_back(k);
    }
}

const std::vector<std::size_t>& TargetIndex::bucket(ItemId target) const {
    auto it = buckets_.find(target);
    if (it == buckets_.end()) throw ConsistencyError("no examples with target " + std::to_string(target));
    return it->second;
}

TargetIndex build_index(std::span<const TrainingExample> examples) { return TargetIndex(examples); }

std::size_t sample_pair(const TargetIndex& index, std::size_t anchor, Rng& rng) {
    if (anchor >= index.num_examples()) throw ConsistencyError("anchor " + std::to_string(anchor) + " not indexed");
    const auto& members = index.bucket(index.target_of(anchor));
    if (members.size() == 1) return anchor;
    // Draw from the bucket with the anchor removed: skip over its slot.
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 2);
    const std::size_t k = pick(rng);
    const std::size_t anchor_slot = static_cast<std::size_t>(
        std::lower_bound(members.begin(), members.end(), anchor) - members.begin());
    return members[k < anchor_slot ? k : k + 1];
}

}  // namespace btsr
