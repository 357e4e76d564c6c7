#pragma once

#include "unremix/encoder.hpp"
#include "unremix/optimizer.hpp"
#include "unremix/scoring.hpp"

#include <cstdint>
#include <filesystem>

namespace unremix {

inline constexpr int kCheckpointFormatVersion = 1;

/// Everything needed to resume or evaluate a run. Serialized as JSON; doubles
/// are written with round-trip precision so save/load is lossless.
struct Checkpoint {
    std::uint64_t seed = 0;
    long step = 0;
    long epoch = 0;
    EncoderParams encoder;
    OptimizerState encoder_optimizer;
    AggregationParams aggregation;
    OptimizerState aggregation_optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace unremix
