#include "unremix/optimizer.hpp"

#include "unremix/errors.hpp"

#include <cmath>

namespace unremix {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::Sgd;
    if (name == "adam") return OptimizerKind::Adam;
    throw UsageError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

OptimizerState OptimizerState::create(OptimizerKind kind) {
    OptimizerState s;
    s.kind = kind;
    return s;
}

void apply_update(std::span<const std::span<double>> params,
                  std::span<const std::span<const double>> grads, OptimizerState& state, double lr) {
    if (params.size() != grads.size()) throw UsageError("apply_update: tensor count mismatch");
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (params[t].size() != grads[t].size()) {
            throw UsageError("apply_update: tensor " + std::to_string(t) + " size mismatch");
        }
    }
    ++state.step;
    if (state.kind == OptimizerKind::Sgd) {
        for (std::size_t t = 0; t < params.size(); ++t)
            for (std::size_t k = 0; k < params[t].size(); ++k) params[t][k] -= lr * grads[t][k];
        return;
    }

    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.size(), 0.0);
            state.second_moment.emplace_back(p.size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw UsageError("apply_update: optimizer state does not match parameters");
    }
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        if (m.size() != params[i].size()) {
            throw UsageError("apply_update: optimizer state does not match parameters");
        }
        for (std::size_t k = 0; k < params[i].size(); ++k) {
            const double g = grads[i][k];
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            params[i][k] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

void apply_update(EncoderParams& params, const EncoderGrads& grads, OptimizerState& state, double lr) {
    const auto p = params.tensors();
    const auto g = grads.tensors();
    apply_update(std::span<const std::span<double>>(p), std::span<const std::span<const double>>(g),
                 state, lr);
}

} // namespace unremix
