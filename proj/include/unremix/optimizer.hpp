#pragma once

#include "unremix/encoder.hpp"

#include <span>
#include <string>
#include <vector>

namespace unremix {

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

/// Per-tensor optimizer state. Adam keeps first and second moments with the
/// usual bias correction; SGD keeps nothing but the step counter.
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<Vector> first_moment;
    std::vector<Vector> second_moment;

    static OptimizerState create(OptimizerKind kind);
};

void apply_update(std::span<const std::span<double>> params,
                  std::span<const std::span<const double>> grads, OptimizerState& state, double lr);

void apply_update(EncoderParams& params, const EncoderGrads& grads, OptimizerState& state, double lr);

} // namespace unremix
