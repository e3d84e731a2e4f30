#include "btsr/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>

#include "json.hpp"

#include "btsr/errors.hpp"

namespace btsr {

using nlohmann::json;

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::Bce: return "bce";
        case LossKind::Ce: return "ce";
        case LossKind::Sce: return "sce";
    }
    return "?";
}

LossKind parse_loss_kind(std::string_view text) {
    if (text == "bce") return LossKind::Bce;
    if (text == "ce") return LossKind::Ce;
    if (text == "sce") return LossKind::Sce;
    throw ConfigError("loss must be one of bce, ce, sce (got '" + std::string(text) + "')");
}

void TrainConfig::validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (alpha > 0.0 && batch_size < 2) throw ConfigError("batch_size must be >= 2 when alpha > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (sce_k < 1) throw ConfigError("sce_k must be >= 1");
    if (bce_m < 1) throw ConfigError("bce_m must be >= 1");
    if (histogram_bins < 2) throw ConfigError("histogram_bins must be >= 2");
    if (spectrum_users != "test" && spectrum_users != "train") {
        throw ConfigError("spectrum_users must be 'test' or 'train'");
    }
    encoder(1).validate();
}

EncoderConfig TrainConfig::encoder(int num_items) const {
    EncoderConfig e;
    e.num_items = num_items;
    e.dim = dim;
    e.layers = layers;
    e.heads = heads;
    e.max_len = max_len;
    e.ffn_dim = ffn_dim;
    e.dropout = dropout;
    return e;
}

namespace {

json to_json(const TrainConfig& c) {
    return json{{"loss", to_string(c.loss)},
                {"alpha", c.alpha},
                {"lambda", c.lambda},
                {"lr", c.lr},
                {"weight_decay", c.weight_decay},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"seed", c.seed},
                {"sce_k", c.sce_k},
                {"bce_m", c.bce_m},
                {"dim", c.dim},
                {"layers", c.layers},
                {"heads", c.heads},
                {"dropout", c.dropout},
                {"max_len", c.max_len},
                {"ffn_dim", c.ffn_dim},
                {"bt_row_normalize", c.bt_row_normalize},
                {"pair_views_include_target", c.pair_views_include_target},
                {"filter_history", c.filter_history},
                {"histogram_bins", c.histogram_bins},
                {"spectrum_users", c.spectrum_users}};
}

template <class T>
void read_key(const json& j, const std::string& key, T& out) {
    try {
        out = j.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

void read_number(const json& j, const std::string& key, double& out) {
    if (!j.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    out = j.get<double>();
}

void read_int(const json& j, const std::string& key, int& out) {
    if (!j.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
    out = j.get<int>();
}

}  // namespace

std::string config_to_json(const TrainConfig& config) { return to_json(config).dump(2); }

TrainConfig config_from_json(std::string_view text, const TrainConfig& base) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");

    const json known = to_json(base);
    std::vector<std::string> unknown;
    for (const auto& [k, v] : j.items()) {
        if (!known.contains(k)) unknown.push_back(k);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config key(s):";
        for (const auto& k : unknown) msg += " '" + k + "'";
        throw ConfigError(msg);
    }

    TrainConfig c = base;
    for (const auto& [k, v] : j.items()) {
        if (k == "loss") {
            if (!v.is_string()) throw ConfigError("config key 'loss' must be a string");
            c.loss = parse_loss_kind(v.get<std::string>());
        } else if (k == "alpha") read_number(v, k, c.alpha);
        else if (k == "lambda") read_number(v, k, c.lambda);
        else if (k == "lr") read_number(v, k, c.lr);
        else if (k == "weight_decay") read_number(v, k, c.weight_decay);
        else if (k == "dropout") read_number(v, k, c.dropout);
        else if (k == "batch_size") read_int(v, k, c.batch_size);
        else if (k == "epochs") read_int(v, k, c.epochs);
        else if (k == "sce_k") read_int(v, k, c.sce_k);
        else if (k == "bce_m") read_int(v, k, c.bce_m);
        else if (k == "dim") read_int(v, k, c.dim);
        else if (k == "layers") read_int(v, k, c.layers);
        else if (k == "heads") read_int(v, k, c.heads);
        else if (k == "max_len") read_int(v, k, c.max_len);
        else if (k == "ffn_dim") read_int(v, k, c.ffn_dim);
        else if (k == "histogram_bins") read_int(v, k, c.histogram_bins);
        else if (k == "seed") {
            if (!v.is_number_unsigned()) throw ConfigError("config key 'seed' must be a non-negative integer");
            c.seed = v.get<std::uint64_t>();
        } else if (k == "bt_row_normalize") read_key(v, k, c.bt_row_normalize);
        else if (k == "pair_views_include_target") read_key(v, k, c.pair_views_include_target);
        else if (k == "filter_history") read_key(v, k, c.filter_history);
        else if (k == "spectrum_users") read_key(v, k, c.spectrum_users);
    }
    c.validate();
    return c;
}

TrainConfig apply_env_overrides(const TrainConfig& config) {
    const json known = to_json(config);
    json patch = json::object();
    for (const auto& [k, v] : known.items()) {
        std::string var(kEnvPrefix);
        for (char ch : k) var += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        const char* raw = std::getenv(var.c_str());
        if (raw == nullptr) continue;
        if (v.is_string()) {
            patch[k] = raw;
            continue;
        }
        try {
            patch[k] = json::parse(raw);
        } catch (const json::parse_error&) {
            throw ConfigError("environment variable " + var + " is not a valid value for '" + k + "'");
        }
    }
    if (patch.empty()) return config;
    return config_from_json(patch.dump(), config);
}

}  // namespace btsr
