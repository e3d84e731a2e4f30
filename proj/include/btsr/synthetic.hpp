#pragma once

#include <cstdint>
#include <string>

#include "btsr/corpus.hpp"

namespace btsr {

// First-order Markov interaction generator used for end-to-end checks.
// Each item has a few preferred successors; otherwise the next item is a
// Zipf-popularity draw.
struct SyntheticSpec {
    int items = 200;
    int users = 500;
    int min_length = 12;
    int max_length = 30;
    int successors = 3;
    double follow_probability = 0.8;
    double zipf_exponent = 1.0;
    Timestamp time_span = 1'000'000;
    std::uint64_t seed = 7;
};

InteractionLog synthetic_markov(const SyntheticSpec& spec);

// user<TAB>item<TAB>timestamp lines, in event order.
std::string format_log(const InteractionLog& log);

}  // namespace btsr
