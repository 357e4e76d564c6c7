#include "unremix/loss.hpp"

#include "unremix/errors.hpp"

#include <cmath>
#include <numeric>

namespace unremix {

LossOutput contrastive_loss(const Matrix& anchor, const Matrix& candidates,
                            std::span<const std::size_t> positives, const Matrix& weights, double tau) {
    const std::size_t n = anchor.rows();
    const std::size_t m = candidates.rows();
    if (!(tau > 0.0)) throw UsageError("contrastive loss: tau must be positive");
    if (n < 1 || m < 2) throw UsageError("contrastive loss: need at least 2 candidates");
    if (anchor.cols() != candidates.cols()) throw UsageError("contrastive loss: embedding width mismatch");
    if (positives.size() != n) throw UsageError("contrastive loss: one positive per anchor required");
    if (weights.rows() != n || weights.cols() != m) throw UsageError("contrastive loss: weight shape mismatch");

    for (std::size_t p : positives)
        if (p >= m) throw UsageError("contrastive loss: positive index out of range");

    LossOutput out;
    out.per_anchor.assign(n, 0.0);
    out.d_anchor = Matrix(n, anchor.cols());
    out.d_view = Matrix(m, candidates.cols());
    out.d_weights = Matrix(n, m);
    const double inv_n = 1.0 / static_cast<double>(n);

    // Row-wise terms are independent; each row writes only its own slots and
    // d_view is reduced afterwards in a fixed order.
    Matrix coeff(n, m);
    parallel_for(n, [&](std::size_t i) {
        const std::size_t pos = positives[i];
        Vector terms;
        std::vector<std::size_t> cols;
        terms.reserve(m);
        cols.reserve(m);
        for (std::size_t j = 0; j < m; ++j) {
            const double s = dot(anchor.row(i), candidates.row(j)) / tau;
            if (j == pos) {
                terms.push_back(s);
            } else {
                const double w = weights(i, j);
                if (!(w > 0.0)) continue;
                terms.push_back(s + std::log(w));
            }
            cols.push_back(j);
        }
        const double lse = log_sum_exp(terms);
        double pos_term = 0.0;
        for (std::size_t q = 0; q < cols.size(); ++q) {
            const double pi = std::exp(terms[q] - lse);
            const std::size_t j = cols[q];
            if (j == pos) {
                pos_term = terms[q];
                coeff(i, j) = (pi - 1.0) * inv_n / tau;
            } else {
                coeff(i, j) = pi * inv_n / tau;
                out.d_weights(i, j) = pi * inv_n / weights(i, j);
            }
        }
        out.per_anchor[i] = lse - pos_term;
        auto da = out.d_anchor.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double c = coeff(i, j);
            if (c == 0.0) continue;
            const auto v = candidates.row(j);
            for (std::size_t k = 0; k < da.size(); ++k) da[k] += c * v[k];
        }
    });

    for (std::size_t i = 0; i < n; ++i) {
        const auto a = anchor.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double c = coeff(i, j);
            if (c == 0.0) continue;
            auto dv = out.d_view.row(j);
            for (std::size_t k = 0; k < dv.size(); ++k) dv[k] += c * a[k];
        }
    }
    out.value = std::accumulate(out.per_anchor.begin(), out.per_anchor.end(), 0.0) * inv_n;
    return out;
}

namespace {

std::vector<std::size_t> diagonal_positives(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    return p;
}

void check_square_batch(const Matrix& anchor_unit, const Matrix& view_unit) {
    if (!anchor_unit.same_shape(view_unit)) throw UsageError("InfoNCE: anchor and view shapes differ");
    if (anchor_unit.rows() < 2) throw UsageError("InfoNCE: need N >= 2");
}

} // namespace

LossOutput info_nce(const Matrix& anchor_unit, const Matrix& view_unit, const LossConfig& cfg) {
    check_square_batch(anchor_unit, view_unit);
    return weighted_info_nce(anchor_unit, view_unit, uniform_weights(anchor_unit.rows()), cfg);
}

LossOutput weighted_info_nce(const Matrix& anchor_unit, const Matrix& view_unit,
                             const ImportanceWeights& weights, const LossConfig& cfg) {
    check_square_batch(anchor_unit, view_unit);
    const std::size_t n = anchor_unit.rows();
    if (weights.w.rows() != n || weights.w.cols() != n) throw UsageError("InfoNCE: weight shape mismatch");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j && !(weights.w(i, j) >= kWeightFloor)) {
                throw InvariantError("InfoNCE: weight (" + std::to_string(i) + ", " + std::to_string(j) +
                                     ") below the floor");
            }
        }
    const auto positives = diagonal_positives(n);
    return contrastive_loss(anchor_unit, view_unit, positives, weights.w, cfg.tau);
}

LossOutput loss_gradients(const Matrix& anchor_unit, const Matrix& view_unit,
                          const ImportanceWeights& weights, const LossConfig& cfg,
                          const ComponentScores* normalized, const AggregationParams* agg) {
    LossOutput out = weighted_info_nce(anchor_unit, view_unit, weights, cfg);
    if (normalized != nullptr && agg != nullptr && agg->mode == AggregationMode::Learned) {
        out.d_logits = aggregation_logit_gradient(*normalized, *agg, weights.normalization, out.d_weights);
    }
    return out;
}

} // namespace unremix
