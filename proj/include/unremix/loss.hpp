#pragma once

#include "unremix/numerics.hpp"
#include "unremix/scoring.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace unremix {

struct LossConfig {
    double tau = 0.5;
    WeightNormalization weight_mode = WeightNormalization::MeanOne;
};

/// Batch-mean contrastive loss with gradients w.r.t. its inputs. Gradients
/// are taken w.r.t. the embedding matrices exactly as passed in (usually unit
/// rows); callers chain through normalization themselves.
struct LossOutput {
    double value = 0.0;
    Vector per_anchor;
    Matrix d_anchor;
    Matrix d_view;
    /// dL/dw, with w held as a constant input.
    Matrix d_weights;
    /// dL/d(aggregation logits); zero unless a learned aggregation was supplied.
    std::array<double, 3> d_logits{0.0, 0.0, 0.0};
};

/// General form: anchor i scores its positive candidate positives[i] against
/// every candidate j with weights(i, j) > 0. Entries with weight 0 are
/// excluded; the positive's own weight entry is ignored.
LossOutput contrastive_loss(const Matrix& anchor, const Matrix& candidates,
                            std::span<const std::size_t> positives, const Matrix& weights, double tau);

/// Plain InfoNCE: -log(exp(s_ii/tau) / sum_j exp(s_ij/tau)), averaged over anchors.
LossOutput info_nce(const Matrix& anchor_unit, const Matrix& view_unit, const LossConfig& cfg);

/// Importance-weighted InfoNCE: each negative's exponential in the denominator
/// is scaled by w[i][j].
LossOutput weighted_info_nce(const Matrix& anchor_unit, const Matrix& view_unit,
                             const ImportanceWeights& weights, const LossConfig& cfg);

/// weighted_info_nce plus dL/d(logits) when the weights came from a learned
/// aggregation of `normalized` under `agg`. The weights are treated as
/// constants for the embedding gradients.
LossOutput loss_gradients(const Matrix& anchor_unit, const Matrix& view_unit,
                          const ImportanceWeights& weights, const LossConfig& cfg,
                          const ComponentScores* normalized = nullptr,
                          const AggregationParams* agg = nullptr);

} // namespace unremix
