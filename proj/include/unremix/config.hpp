#pragma once

#include "unremix/data.hpp"
#include "unremix/errors.hpp"
#include "unremix/loss.hpp"
#include "unremix/optimizer.hpp"
#include "unremix/scoring.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace unremix {

/// Invalid configuration; key() names the offending entry (dotted path).
class ConfigError : public UsageError {
public:
    ConfigError(std::string key, const std::string& what)
        : UsageError(key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

enum class Sampler { UnReMix, Uniform, Hcl };

std::string to_string(Sampler sampler);
Sampler sampler_from_string(const std::string& name);

struct DatasetConfig {
    /// "gaussian-mixture" or "csv".
    std::string kind = "gaussian-mixture";
    std::string path;
    int n_classes = 8;
    std::size_t n_per_class = 100;
    std::size_t d_in = 2;
    double separation = 4.0;
    std::uint64_t seed = 1;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    /// Learning rate for the aggregation logits; unset means learning_rate.
    std::optional<double> lambda_learning_rate;
    OptimizerKind optimizer = OptimizerKind::Adam;
    std::uint64_t seed = 0;
    Sampler sampler = Sampler::UnReMix;
    AggregationMode aggregation = AggregationMode::Learned;
    ComponentMask components{true, true, true};
    GradientLoss gradient_loss = GradientLoss::CrossEntropy;
    double tau = 0.5;
    WeightNormalization weight_mode = WeightNormalization::MeanOne;
    double hcl_beta = 1.0;
    AugmentConfig augment{0.3, 0.0, 0.1};
    std::vector<std::size_t> encoder_dims{2, 16, 8, 4};
    /// Evaluate every this many epochs (0: final epoch only).
    std::size_t eval_every = 1;
    std::size_t eval_topk = 5;
    std::size_t knn_k = 5;
    /// When > 0, negatives are drawn only from classes [0, k) (diversity sweep).
    int restrict_negatives_k = 0;
    /// Wall-clock timings make metrics non-reproducible, so they are opt-in.
    bool record_wall_time = false;
    DatasetConfig dataset;

    double lambda_lr() const { return lambda_learning_rate.value_or(learning_rate); }
    LossConfig loss_config() const { return {tau, weight_mode}; }
    AggregationParams initial_aggregation() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Strict: unknown keys and wrongly typed values raise ConfigError.
TrainConfig config_from_json(const nlohmann::json& doc);

TrainConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const TrainConfig& cfg);

/// Applies "dotted.key=value" overrides. Values are parsed as JSON when
/// possible and as plain strings otherwise.
TrainConfig apply_overrides(const TrainConfig& cfg, const std::vector<std::string>& overrides);

/// Checks field ranges and consistency with the dataset dimension.
void validate(const TrainConfig& cfg);

/// Builds the dataset described by cfg.dataset.
Dataset load_dataset(const DatasetConfig& cfg);

} // namespace unremix
