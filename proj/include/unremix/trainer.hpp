#pragma once

#include "unremix/config.hpp"
#include "unremix/data.hpp"
#include "unremix/encoder.hpp"
#include "unremix/loss.hpp"
#include "unremix/optimizer.hpp"
#include "unremix/scoring.hpp"

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

namespace unremix {

/// Mutable training state: encoder, aggregation logits and both optimizers.
struct TrainState {
    EncoderParams params;
    OptimizerState encoder_optimizer;
    AggregationParams aggregation;
    OptimizerState aggregation_optimizer;
    long step = 0;
};

TrainState init_state(const TrainConfig& cfg);

/// Importance weights for one batch plus the component scores they came from
/// (absent for the uniform and HCL samplers).
struct Weighting {
    ImportanceWeights weights;
    std::optional<ComponentScores> raw;
    std::optional<ComponentScores> normalized;
};

Weighting compute_weights(const EncoderParams& params, const AggregationParams& agg,
                          const ForwardTrace& anchor, const ForwardTrace& view, const TrainConfig& cfg);

struct StepMetrics {
    double loss = 0.0;
    std::array<double, 3> lambda{};
    std::array<double, 3> d_logits{};
};

/// One optimization step on a batch: forward both views, weight the
/// negatives, take the weighted loss, backpropagate with the weights held
/// constant, update the encoder and (learned mode) the aggregation logits.
StepMetrics train_step(TrainState& state, const BatchPair& batch, const TrainConfig& cfg);

/// Step used by the class-restricted diversity experiment: anchors contrast
/// their positive against `negatives` (one augmented view of rows drawn from
/// the restricted classes) instead of the other in-batch samples.
StepMetrics train_step_restricted(TrainState& state, const BatchPair& batch, const Matrix& negatives,
                                  const TrainConfig& cfg);

struct MetricsRecord {
    long step = 0;
    long epoch = 0;
    double loss = 0.0;
    std::array<double, 3> lambda{};
    std::optional<double> probe_acc;
    std::optional<double> knn_acc;
    std::optional<double> fnr_at_k;
    std::optional<double> diversity_entropy;
    std::optional<double> wall_ms;
};

nlohmann::json to_json(const MetricsRecord& record);
MetricsRecord metrics_from_json(const nlohmann::json& doc);

using MetricsSink = std::function<void(const MetricsRecord&)>;

struct TrainResult {
    TrainState state;
    std::vector<MetricsRecord> metrics;
};

/// Full training run. Emits one record per epoch (lambda always, evaluation
/// metrics every cfg.eval_every epochs and at the end when labels exist).
/// Throws DivergenceError when the loss becomes non-finite.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const MetricsSink& sink = {});

/// RNG stream ids derived from the run seed.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kAugment = 3;
inline constexpr std::uint64_t kNegatives = 4;
inline constexpr std::uint64_t kEval = 5;
} // namespace streams

} // namespace unremix
