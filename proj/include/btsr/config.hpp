#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "btsr/encoder.hpp"

namespace btsr {

enum class LossKind { Bce, Ce, Sce };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view text);

// Every knob of a training run. Keys of the JSON form match the field names.
struct TrainConfig {
    LossKind loss = LossKind::Ce;
    double alpha = 0.3;
    double lambda = 0.2;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int batch_size = 128;
    int epochs = 20;
    std::uint64_t seed = 42;
    int sce_k = 256;
    int bce_m = 1;

    int dim = 64;
    int layers = 2;
    int heads = 2;
    double dropout = 0.2;
    int max_len = 50;
    int ffn_dim = 0;

    bool bt_row_normalize = true;
    bool pair_views_include_target = false;

    bool filter_history = false;
    int histogram_bins = 50;
    std::string spectrum_users = "test";

    void validate() const;
    EncoderConfig encoder(int num_items) const;
};

// Canonical JSON (sorted keys, fixed formatting).
std::string config_to_json(const TrainConfig& config);

// Applies the keys present in `text` on top of `base`. Unknown keys and
// ill-typed values raise ConfigError naming the key.
TrainConfig config_from_json(std::string_view text, const TrainConfig& base = {});

// Overrides from environment variables BTSR_<KEY> (key upper-cased),
// e.g. BTSR_ALPHA=0.1.
inline constexpr std::string_view kEnvPrefix = "BTSR_";
TrainConfig apply_env_overrides(const TrainConfig& config);

}  // namespace btsr
