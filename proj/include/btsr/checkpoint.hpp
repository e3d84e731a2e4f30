#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "btsr/encoder.hpp"

namespace btsr {

// Binary container: magic "BTSRCKPT", format version, seed, the echoed run
// config (JSON text), encoder shape, then every tensor by name. All values
// little-endian; doubles stored verbatim so a load/save cycle is bit-exact.
struct Checkpoint {
    Model model;
    std::uint64_t seed = 0;
    std::string config_json;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string checkpoint_bytes(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_bytes(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace btsr
