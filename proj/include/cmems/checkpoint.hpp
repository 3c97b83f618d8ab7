#pragma once

#include <cstdint>
#include <filesystem>

#include "cmems/config.hpp"
#include "cmems/trainer.hpp"

namespace cmems {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint64_t config_hash = 0;
    TrainState state;
};

/// Single binary archive: header, both networks (weights and BN statistics),
/// Adam moments and step count.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg);
/// Throws IngestionError on a missing, truncated or foreign file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cmems
