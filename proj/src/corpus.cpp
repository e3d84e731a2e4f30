#include "btsr/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "btsr/errors.hpp"

namespace btsr {

namespace {

class IdInterner {
public:
    explicit IdInterner(std::vector<std::string>& names) : names_(names) {}

    std::int32_t intern(std::string_view token) {
        auto it = index_.find(std::string(token));
        if (it != index_.end()) return it->second;
        auto id = static_cast<std::int32_t>(names_.size());
        names_.emplace_back(token);
        index_.emplace(names_.back(), id);
        return id;
    }

private:
    std::vector<std::string>& names_;
    std::unordered_map<std::string, std::int32_t> index_;
};

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line, const Delimiter& delim) {
    std::vector<std::string_view> fields;
    if (delim.any_whitespace) {
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            std::size_t start = i;
            while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            if (i > start) fields.push_back(line.substr(start, i - start));
        }
        return fields;
    }
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(delim.ch, start);
        if (pos == std::string_view::npos) {
            fields.push_back(trim(line.substr(start)));
            break;
        }
        fields.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return fields;
}

}  // namespace

std::vector<std::vector<Event>> user_sequences(const InteractionLog& log) {
    std::vector<std::vector<Event>> seqs(log.user_names.size());
    for (const auto& e : log.events) seqs[e.user].push_back(e);
    for (auto& s : seqs) {
        std::stable_sort(s.begin(), s.end(), [](const Event& a, const Event& b) { return a.time < b.time; });
    }
    return seqs;
}

Delimiter parse_delimiter(std::string_view spec) {
    if (spec == "tab" || spec == "\\t" || spec == "\t") return {'\t', false};
    if (spec == "comma" || spec == ",") return {',', false};
    if (spec == "space" || spec == " ") return {' ', false};
    if (spec == "ws" || spec == "whitespace") return {' ', true};
    if (spec == "semicolon" || spec == ";") return {';', false};
    if (spec.size() == 1) return {spec[0], false};
    throw ConfigError("unrecognized delimiter '" + std::string(spec) + "'");
}

InteractionLog parse_log(std::string_view text, const LoadOptions& options) {
    InteractionLog log;
    IdInterner users(log.user_names);
    IdInterner items(log.item_names);

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        auto line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (line_no == 1 && options.skip_header) continue;
        if (trim(line).empty()) continue;

        auto fields = split_fields(line, options.delimiter);
        if (fields.size() != 3) {
            throw ParseError(line_no, "expected 3 fields (user, item, timestamp), got " +
                                          std::to_string(fields.size()));
        }
        if (fields[0].empty() || fields[1].empty()) throw ParseError(line_no, "empty user or item id");

        Timestamp ts = 0;
        auto ts_field = fields[2];
        auto [ptr, ec] = std::from_chars(ts_field.data(), ts_field.data() + ts_field.size(), ts);
        if (ec != std::errc() || ptr != ts_field.data() + ts_field.size()) {
            throw ParseError(line_no, "timestamp '" + std::string(ts_field) + "' is not an integer");
        }
        if (ts < 0) throw ParseError(line_no, "negative timestamp");

        log.events.push_back({users.intern(fields[0]), items.intern(fields[1]), ts});
    }
    if (log.events.empty()) throw EmptyCorpusError("interaction log is empty");
    return log;
}

InteractionLog load_log(const std::filesystem::path& path, const LoadOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInputError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_log(buf.str(), options);
}

InteractionLog core_filter(const InteractionLog& log, int min_count) {
    if (min_count < 1) throw InvalidInputError("min_count must be >= 1");

    std::vector<char> alive(log.events.size(), 1);
    std::vector<std::int64_t> user_count(log.user_names.size());
    std::vector<std::int64_t> item_count(log.item_names.size());
    for (const auto& e : log.events) {
        ++user_count[e.user];
        ++item_count[e.item];
    }

    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t k = 0; k < log.events.size(); ++k) {
            if (!alive[k]) continue;
            const auto& e = log.events[k];
            if (user_count[e.user] < min_count || item_count[e.item] < min_count) {
                alive[k] = 0;
                --user_count[e.user];
                --item_count[e.item];
                changed = true;
            }
        }
    }

    InteractionLog out;
    std::vector<UserId> user_map(log.user_names.size(), 0);
    std::vector<ItemId> item_map(log.item_names.size(), 0);
    for (std::size_t k = 0; k < log.events.size(); ++k) {
        if (!alive[k]) continue;
        const auto& e = log.events[k];
        if (user_map[e.user] == 0) {
            user_map[e.user] = static_cast<UserId>(out.user_names.size());
            out.user_names.push_back(log.user_names[e.user]);
        }
        if (item_map[e.item] == 0) {
            item_map[e.item] = static_cast<ItemId>(out.item_names.size());
            out.item_names.push_back(log.item_names[e.item]);
        }
        out.events.push_back({user_map[e.user], item_map[e.item], e.time});
    }
    if (out.events.empty()) {
        throw EmptyCorpusError("no events survive the " + std::to_string(min_count) + "-core filter");
    }
    return out;
}

SplitDataset temporal_split(const InteractionLog& log, double quantile) {
    if (!(quantile > 0.0 && quantile < 1.0)) throw InvalidInputError("quantile must lie in (0, 1)");
    if (log.events.empty()) throw EmptyCorpusError("interaction log is empty");

    std::vector<Timestamp> times;
    times.reserve(log.events.size());
    for (const auto& e : log.events) times.push_back(e.time);
    std::sort(times.begin(), times.end());

    const auto total = static_cast<double>(times.size());
    auto needed = static_cast<std::size_t>(std::ceil(quantile * total - 1e-9));
    needed = std::clamp<std::size_t>(needed, 1, times.size());

    SplitDataset split;
    split.boundary = times[needed - 1];
    split.train.user_names = log.user_names;
    split.train.item_names = log.item_names;

    auto seqs = user_sequences(log);
    // Per user, train events at or after this time are withheld: the
    // fallback validation event and anything tied with it.
    std::vector<std::optional<Timestamp>> withheld_from(seqs.size());

    for (std::size_t u = 1; u < seqs.size(); ++u) {
        const auto& seq = seqs[u];
        if (seq.empty() || seq.back().time <= split.boundary) continue;

        const std::size_t test_pos = seq.size() - 1;
        const Timestamp test_time = seq[test_pos].time;
        std::ptrdiff_t val_pos = -1;
        for (auto k = static_cast<std::ptrdiff_t>(test_pos) - 1; k >= 0; --k) {
            if (seq[k].time < test_time) {
                val_pos = k;
                break;
            }
        }
        if (val_pos < 0) continue;  // no strictly earlier event to validate on

        HeldOutUser h;
        h.user = static_cast<UserId>(u);
        h.sequence.reserve(seq.size());
        for (const auto& e : seq) h.sequence.push_back(e.item);
        h.validation_pos = static_cast<std::size_t>(val_pos);
        h.test_pos = test_pos;
        h.validation_time = seq[val_pos].time;
        h.test_time = test_time;
        h.validation_from_train = seq[val_pos].time <= split.boundary;
        if (h.validation_from_train) withheld_from[u] = h.validation_time;
        split.holdout.push_back(std::move(h));
    }
    if (split.holdout.empty()) throw SplitError("no user has interactions after the split boundary");

    for (std::size_t u = 1; u < seqs.size(); ++u) {
        const auto& seq = seqs[u];
        for (std::size_t k = 0; k < seq.size(); ++k) {
            if (seq[k].time > split.boundary) break;
            if (withheld_from[u] && seq[k].time >= *withheld_from[u]) break;
            split.train.events.push_back(seq[k]);
        }
    }
    return split;
}

std::vector<ItemId> make_prefix(const std::vector<ItemId>& items, std::size_t end, int n) {
    std::vector<ItemId> prefix(static_cast<std::size_t>(n), kPaddingId);
    const std::size_t take = std::min<std::size_t>(end, static_cast<std::size_t>(n));
    std::copy(items.begin() + static_cast<std::ptrdiff_t>(end - take),
              items.begin() + static_cast<std::ptrdiff_t>(end),
              prefix.end() - static_cast<std::ptrdiff_t>(take));
    return prefix;
}

std::vector<TrainingExample> build_examples(const InteractionLog& train, int n) {
    if (n < 2) throw InvalidInputError("max sequence length must be >= 2");
    std::vector<TrainingExample> out;
    auto seqs = user_sequences(train);
    std::vector<ItemId> items;
    for (std::size_t u = 1; u < seqs.size(); ++u) {
        const auto& seq = seqs[u];
        if (seq.size() < 2) continue;
        items.clear();
        for (const auto& e : seq) items.push_back(e.item);
        for (std::size_t t = 1; t < items.size(); ++t) {
            out.push_back({make_prefix(items, t, n), items[t], static_cast<UserId>(u)});
        }
    }
    return out;
}

}  // namespace btsr
