#include "btsr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "btsr/errors.hpp"
#include "btsr/rng.hpp"

namespace btsr {

InteractionLog synthetic_markov(const SyntheticSpec& spec) {
    if (spec.items < 2 || spec.users < 1) throw InvalidInputError("synthetic log needs >= 2 items and >= 1 user");
    if (spec.min_length < 1 || spec.max_length < spec.min_length) throw InvalidInputError("bad sequence length range");
    if (spec.successors < 1 || spec.successors >= spec.items) throw InvalidInputError("bad successor count");

    auto rng = make_rng({spec.seed, key(Stream::Synthetic)});

    // Popularity ranks are a random permutation so that popularity is not tied to id order.
    std::vector<int> rank_to_item(static_cast<std::size_t>(spec.items));
    for (int i = 0; i < spec.items; ++i) rank_to_item[static_cast<std::size_t>(i)] = i + 1;
    std::shuffle(rank_to_item.begin(), rank_to_item.end(), rng);
    std::vector<double> weights;
    for (int r = 1; r <= spec.items; ++r) weights.push_back(1.0 / std::pow(static_cast<double>(r), spec.zipf_exponent));
    std::discrete_distribution<int> popular(weights.begin(), weights.end());
    auto draw_popular = [&] { return rank_to_item[static_cast<std::size_t>(popular(rng))]; };

    std::uniform_int_distribution<int> any_item(1, spec.items);
    std::vector<std::vector<int>> next(static_cast<std::size_t>(spec.items) + 1);
    for (int i = 1; i <= spec.items; ++i) {
        auto& s = next[static_cast<std::size_t>(i)];
        while (static_cast<int>(s.size()) < spec.successors) {
            const int j = any_item(rng);
            if (j != i && std::find(s.begin(), s.end(), j) == s.end()) s.push_back(j);
        }
    }

    std::uniform_int_distribution<int> length(spec.min_length, spec.max_length);
    std::uniform_int_distribution<Timestamp> when(0, spec.time_span);
    std::uniform_int_distribution<int> pick(0, spec.successors - 1);
    std::bernoulli_distribution follow(spec.follow_probability);

    InteractionLog log;
    for (int i = 1; i <= spec.items; ++i) log.item_names.push_back("i" + std::to_string(i));
    for (int u = 1; u <= spec.users; ++u) {
        log.user_names.push_back("u" + std::to_string(u));
        const int len = length(rng);
        std::vector<Timestamp> times(static_cast<std::size_t>(len));
        for (auto& t : times) t = when(rng);
        std::sort(times.begin(), times.end());
        int item = draw_popular();
        for (int k = 0; k < len; ++k) {
            if (k > 0) item = follow(rng) ? next[static_cast<std::size_t>(item)][static_cast<std::size_t>(pick(rng))]
                                          : draw_popular();
            log.events.push_back({u, item, times[static_cast<std::size_t>(k)]});
        }
    }
    std::stable_sort(log.events.begin(), log.events.end(),
                     [](const Event& a, const Event& b) { return a.time < b.time; });
    return log;
}

std::string format_log(const InteractionLog& log) {
    std::ostringstream out;
    for (const auto& e : log.events) {
        out << log.user_names[static_cast<std::size_t>(e.user)] << '\t' << log.item_names[static_cast<std::size_t>(e.item)]
            << '\t' << e.time << '\n';
    }
    return out.str();
}

}  // namespace btsr
