#pragma once

// Hard-negative importance scoring.
//
// For a batch of N pairs (anchor view, second view) every anchor i treats the
// second-view embeddings j != i as its negatives. Three per-pair components are
// computed and mixed into an importance weight:
//
//   u[i][j]  uncertainty: dot product of last-layer cross-entropy gradients of
//            anchor i and negative j w.r.t. their pseudo-labels. The gradient of
//            a sample factors as the outer product a h^T (a: pullback at the
//            embedding, h: penultimate activation), so
//            u = (a_i . a_j)(h_i . h_j) without forming the gradients.
//   s[i][j]  cosine similarity of anchor i and negative j.
//   r[i][j]  mean cosine distance of negative j to the other negatives,
//            excluding i and j (divides by N - 2).
//
// All N x N score and weight matrices keep the diagonal as a masked slot
// holding 0; it is never read as a negative.

#include "unremix/encoder.hpp"
#include "unremix/numerics.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace unremix {

inline constexpr double kWeightFloor = 1e-6;

enum class Component : std::size_t { Uncertainty = 0, Similarity = 1, Representativeness = 2 };

enum class AggregationMode { FixedEqual, Learned };
enum class WeightNormalization { MeanOne, Raw };
enum class GradientLoss { CrossEntropy, NtXent };

std::string to_string(AggregationMode mode);
std::string to_string(WeightNormalization norm);
std::string to_string(GradientLoss loss);
AggregationMode aggregation_mode_from_string(const std::string& name);
WeightNormalization weight_normalization_from_string(const std::string& name);
GradientLoss gradient_loss_from_string(const std::string& name);

/// Component mask as {u, s, r} flags.
using ComponentMask = std::array<bool, 3>;

/// Parses "u,s,r" style lists (any subset, any order).
ComponentMask component_mask_from_string(const std::string& spec);
std::string to_string(const ComponentMask& mask);

struct AggregationParams {
    std::array<double, 3> logits{0.0, 0.0, 0.0};
    AggregationMode mode = AggregationMode::Learned;
    ComponentMask enabled{true, true, true};

    /// Mixing coefficients (lambda_u, lambda_s, lambda_r). Learned mode uses
    /// softmax(logits), fixed mode uses 1/3 each; the mass of disabled
    /// components is split evenly over the enabled ones.
    std::array<double, 3> lambda() const;

    /// d lambda[m] / d logits[k]; all zero in fixed mode.
    std::array<std::array<double, 3>, 3> lambda_jacobian() const;
};

struct ComponentScores {
    Matrix u;
    Matrix s;
    Matrix r;

    std::size_t batch_size() const { return s.rows(); }
    const Matrix& component(Component c) const;
    Matrix& component(Component c);
};

struct ImportanceWeights {
    Matrix w;
    WeightNormalization normalization = WeightNormalization::MeanOne;

    std::size_t batch_size() const { return w.rows(); }
};

struct HclConfig {
    double beta = 1.0;
};

/// Pseudo-posterior of one negative over the anchors i' != j.
struct Posterior {
    /// Eligible anchor indices, ascending.
    std::vector<std::size_t> classes;
    Vector probs;
};

/// Per-sample factors of the last-layer gradient: grad_W = a h^T.
struct GradientFactors {
    Matrix a;
    Matrix h;
    std::vector<std::size_t> pseudo_labels;
    std::vector<bool> degenerate;
};

/// s[i][j] = cos(anchor_i, view_j); diagonal masked.
Matrix similarity_scores(const Matrix& anchor_unit, const Matrix& view_unit);
Matrix similarity_scores(const ForwardTrace& anchor, const ForwardTrace& view);

/// Softmax over cos(anchor_i', negative_j) for i' != j, no temperature.
Posterior pseudo_posterior(const Matrix& anchor_unit, const Matrix& neg_unit, std::size_t j);

/// Argmax class of the posterior; ties go to the lowest class index.
std::size_t pseudo_label(const Posterior& posterior);
std::vector<std::size_t> pseudo_labels(std::span<const Posterior> posteriors);

/// Gradient factors of the pseudo-label loss of every row of `own` with the
/// other view's unit embeddings held constant.
///
/// CrossEntropy: loss_j = -log p_{yhat_j} with p the pseudo-posterior.
/// NtXent: the contrastive loss of sample j at temperature tau with its
/// pseudo-label anchor as the positive and the other eligible anchors as
/// negatives.
///
/// Rows whose embedding has zero norm get a = 0 and a degenerate flag.
GradientFactors gradient_factors(const EncoderParams& params, const ForwardTrace& own,
                                 const Matrix& other_view_unit, GradientLoss loss, double tau);

/// u[i][j] = (a_i . a_j)(h_i . h_j); diagonal masked.
Matrix uncertainty_scores(const GradientFactors& anchor, const GradientFactors& negative);

/// r[i][j] = 1/(N-2) sum_{j' not in {i,j}} (1 - cos(neg_j, neg_j')). Needs N >= 3.
Matrix representativeness_scores(const Matrix& neg_unit);

/// Raw u, s, r for a batch. The anchor side of u uses the same construction
/// with the two views swapped.
ComponentScores component_scores(const EncoderParams& params, const ForwardTrace& anchor,
                                 const ForwardTrace& view, GradientLoss loss, double tau);

/// Per-row min-max rescaling of each component to [0, 1] over off-diagonal
/// entries. Constant rows map to 0.5.
ComponentScores normalize_components(const ComponentScores& scores);

/// w = lambda_u u + lambda_s s + lambda_r r, floored at kWeightFloor, then (for
/// MeanOne) each row rescaled to sum N - 1.
ImportanceWeights aggregate_importance(const ComponentScores& normalized,
                                       const AggregationParams& agg,
                                       WeightNormalization normalization = WeightNormalization::MeanOne);

/// Gradient of a scalar loss w.r.t. the aggregation logits given dL/dw, with
/// the normalized components held constant.
std::array<double, 3> aggregation_logit_gradient(const ComponentScores& normalized,
                                                 const AggregationParams& agg,
                                                 WeightNormalization normalization,
                                                 const Matrix& d_weights);

ImportanceWeights uniform_weights(std::size_t n);

/// HCL-style similarity-only weights: exp(beta s), row-normalized.
ImportanceWeights hcl_weights(const Matrix& s, const HclConfig& cfg,
                              WeightNormalization normalization = WeightNormalization::MeanOne);

/// Off-diagonal indices of row i ordered by descending weight (ties by index).
std::vector<std::size_t> ranked_negatives(const ImportanceWeights& weights, std::size_t anchor);

} // namespace unremix
