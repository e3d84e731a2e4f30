#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace btsr {

using UserId = std::int32_t;
using ItemId = std::int32_t;
using Timestamp = std::int64_t;

inline constexpr ItemId kPaddingId = 0;

struct Event {
    UserId user = 0;
    ItemId item = 0;
    Timestamp time = 0;

    friend bool operator==(const Event&, const Event&) = default;
};

// Timestamped interactions with dense ids. Id 0 is reserved in both
// namespaces; user_names[0] and item_names[0] are empty placeholders.
struct InteractionLog {
    std::vector<Event> events;
    std::vector<std::string> user_names{""};
    std::vector<std::string> item_names{""};

    std::size_t num_users() const { return user_names.size() - 1; }
    std::size_t num_items() const { return item_names.size() - 1; }
};

// Per-user chronological sequences (stable for equal timestamps), indexed by
// dense user id. Entry 0 is always empty.
std::vector<std::vector<Event>> user_sequences(const InteractionLog& log);

struct Delimiter {
    char ch = '\t';
    bool any_whitespace = false;
};

// Accepts "tab", "comma", "space", "ws"/"whitespace", or a single character.
Delimiter parse_delimiter(std::string_view spec);

struct LoadOptions {
    Delimiter delimiter{};
    bool skip_header = false;
};

InteractionLog parse_log(std::string_view text, const LoadOptions& options = {});
InteractionLog load_log(const std::filesystem::path& path, const LoadOptions& options = {});

// Iterated k-core filter: the returned log is the largest sub-log in which
// every user and every item has at least min_count events. Ids are compacted
// (first-appearance order of the surviving events) and names carried over.
InteractionLog core_filter(const InteractionLog& log, int min_count);

// A test-pool user. `sequence` holds every item of the user up to and
// including the test item in chronological order; the validation and test
// items sit at validation_pos and test_pos.
struct HeldOutUser {
    UserId user = 0;
    std::vector<ItemId> sequence;
    std::size_t validation_pos = 0;
    std::size_t test_pos = 0;
    Timestamp validation_time = 0;
    Timestamp test_time = 0;
    bool validation_from_train = false;

    ItemId validation_item() const { return sequence[validation_pos]; }
    ItemId test_item() const { return sequence[test_pos]; }

    friend bool operator==(const HeldOutUser&, const HeldOutUser&) = default;
};

struct SplitDataset {
    InteractionLog train;
    std::vector<HeldOutUser> holdout;  // sorted by user id
    Timestamp boundary = 0;

    std::size_t num_items() const { return train.num_items(); }
};

SplitDataset temporal_split(const InteractionLog& log, double quantile);

struct TrainingExample {
    std::vector<ItemId> prefix;  // left-padded with kPaddingId to length n
    ItemId target = 0;
    UserId user = 0;

    friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

std::vector<TrainingExample> build_examples(const InteractionLog& train, int n);

// Left-pads (or truncates from the front) `items` to exactly n entries.
std::vector<ItemId> make_prefix(const std::vector<ItemId>& items, std::size_t end, int n);

}  // namespace btsr
