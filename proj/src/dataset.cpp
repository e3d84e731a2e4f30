#include "btsr/dataset.hpp"

#include <algorithm>
#include <sstream>

#include "json.hpp"

#include "btsr/errors.hpp"
#include "btsr/io.hpp"

namespace btsr {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "btsr-dataset";
constexpr int kVersion = 1;

json summary_json(const PrepareSummary& s) {
    return json{{"raw_users", s.raw_users},   {"raw_items", s.raw_items},
                {"raw_events", s.raw_events}, {"users", s.users},
                {"items", s.items},           {"events", s.events},
                {"train_events", s.train_events}, {"test_users", s.test_users},
                {"validation_fallbacks", s.validation_fallbacks},
                {"examples", s.examples},     {"boundary", s.boundary}};
}

PrepareSummary summary_from(const json& j) {
    PrepareSummary s;
    s.raw_users = j.at("raw_users");
    s.raw_items = j.at("raw_items");
    s.raw_events = j.at("raw_events");
    s.users = j.at("users");
    s.items = j.at("items");
    s.events = j.at("events");
    s.train_events = j.at("train_events");
    s.test_users = j.at("test_users");
    s.validation_fallbacks = j.at("validation_fallbacks");
    s.examples = j.at("examples");
    s.boundary = j.at("boundary");
    return s;
}

}  // namespace

DatasetBundle prepare_dataset(const InteractionLog& raw, const PrepareParams& params) {
    DatasetBundle b;
    b.params = params;
    auto filtered = core_filter(raw, params.min_count);
    b.split = temporal_split(filtered, params.quantile);
    b.examples = build_examples(b.split.train, params.max_len);

    auto& s = b.summary;
    s.raw_users = raw.num_users();
    s.raw_items = raw.num_items();
    s.raw_events = raw.events.size();
    s.users = filtered.num_users();
    s.items = filtered.num_items();
    s.events = filtered.events.size();
    s.train_events = b.split.train.events.size();
    s.test_users = b.split.holdout.size();
    for (const auto& h : b.split.holdout) s.validation_fallbacks += h.validation_from_train ? 1 : 0;
    s.examples = b.examples.size();
    s.boundary = b.split.boundary;
    return b;
}

std::string summary_text(const PrepareSummary& s, const PrepareParams& p) {
    std::ostringstream out;
    out << "min_count            " << p.min_count << "\n"
        << "quantile             " << format_real(p.quantile) << "\n"
        << "max_len              " << p.max_len << "\n"
        << "raw users            " << s.raw_users << "\n"
        << "raw items            " << s.raw_items << "\n"
        << "raw events           " << s.raw_events << "\n"
        << "filtered users       " << s.users << "\n"
        << "filtered items       " << s.items << "\n"
        << "filtered events      " << s.events << "\n"
        << "boundary timestamp   " << s.boundary << "\n"
        << "train events         " << s.train_events << "\n"
        << "test pool users      " << s.test_users << "\n"
        << "validation fallbacks " << s.validation_fallbacks << "\n"
        << "training examples    " << s.examples << "\n";
    return out.str();
}

std::string bundle_to_json(const DatasetBundle& b) {
    json j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    j["params"] = {{"min_count", b.params.min_count},
                   {"quantile", b.params.quantile},
                   {"max_len", b.params.max_len}};
    j["summary"] = summary_json(b.summary);
    j["users"] = b.split.train.user_names;
    j["items"] = b.split.train.item_names;
    j["boundary"] = b.split.boundary;

    json train = json::array();
    for (const auto& e : b.split.train.events) train.push_back({e.user, e.item, e.time});
    j["train"] = std::move(train);

    json holdout = json::array();
    for (const auto& h : b.split.holdout) {
        holdout.push_back({{"user", h.user},
                           {"sequence", h.sequence},
                           {"validation_pos", h.validation_pos},
                           {"test_pos", h.test_pos},
                           {"validation_time", h.validation_time},
                           {"test_time", h.test_time},
                           {"validation_from_train", h.validation_from_train}});
    }
    j["holdout"] = std::move(holdout);

    // Prefixes are stored without their left padding.
    json examples = json::array();
    for (const auto& ex : b.examples) {
        auto first = std::find_if(ex.prefix.begin(), ex.prefix.end(), [](ItemId i) { return i != kPaddingId; });
        examples.push_back({ex.user, ex.target, std::vector<ItemId>(first, ex.prefix.end())});
    }
    j["examples"] = std::move(examples);
    return j.dump() + "\n";
}

DatasetBundle bundle_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("dataset bundle is not valid JSON: ") + e.what());
    }
    try {
        if (j.at("format") != kFormat) throw FormatError("not a dataset bundle");
        if (j.at("version") != kVersion) throw FormatError("unsupported dataset bundle version");

        DatasetBundle b;
        b.params.min_count = j.at("params").at("min_count");
        b.params.quantile = j.at("params").at("quantile");
        b.params.max_len = j.at("params").at("max_len");
        b.summary = summary_from(j.at("summary"));
        b.split.train.user_names = j.at("users").get<std::vector<std::string>>();
        b.split.train.item_names = j.at("items").get<std::vector<std::string>>();
        b.split.boundary = j.at("boundary");

        for (const auto& row : j.at("train")) {
            b.split.train.events.push_back({row.at(0).get<UserId>(), row.at(1).get<ItemId>(),
                                            row.at(2).get<Timestamp>()});
        }
        for (const auto& h : j.at("holdout")) {
            HeldOutUser u;
            u.user = h.at("user");
            u.sequence = h.at("sequence").get<std::vector<ItemId>>();
            u.validation_pos = h.at("validation_pos");
            u.test_pos = h.at("test_pos");
            u.validation_time = h.at("validation_time");
            u.test_time = h.at("test_time");
            u.validation_from_train = h.at("validation_from_train");
            if (u.test_pos >= u.sequence.size() || u.validation_pos >= u.test_pos) {
                throw FormatError("holdout entry for user " + std::to_string(u.user) + " is inconsistent");
            }
            b.split.holdout.push_back(std::move(u));
        }
        const auto n = static_cast<std::size_t>(b.params.max_len);
        for (const auto& row : j.at("examples")) {
            auto items = row.at(2).get<std::vector<ItemId>>();
            if (items.size() > n) throw FormatError("example prefix longer than max_len");
            TrainingExample ex;
            ex.user = row.at(0);
            ex.target = row.at(1);
            ex.prefix.assign(n - items.size(), kPaddingId);
            ex.prefix.insert(ex.prefix.end(), items.begin(), items.end());
            b.examples.push_back(std::move(ex));
        }
        return b;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed dataset bundle: ") + e.what());
    }
}

void save_bundle(const std::filesystem::path& path, const DatasetBundle& bundle) {
    write_file_atomic(path, bundle_to_json(bundle));
}

DatasetBundle load_bundle(const std::filesystem::path& path) {
    return bundle_from_json(read_file(path));
}

}  // namespace btsr
