#include "unremix/scoring.hpp"

#include "unremix/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <sstream>

namespace unremix {

std::string to_string(AggregationMode mode) {
    return mode == AggregationMode::Learned ? "learned" : "fixed";
}

std::string to_string(WeightNormalization norm) {
    return norm == WeightNormalization::MeanOne ? "mean-one" : "raw";
}

std::string to_string(GradientLoss loss) {
    return loss == GradientLoss::CrossEntropy ? "ce" : "nt-xent";
}

AggregationMode aggregation_mode_from_string(const std::string& name) {
    if (name == "learned") return AggregationMode::Learned;
    if (name == "fixed") return AggregationMode::FixedEqual;
    throw UsageError("unknown aggregation mode '" + name + "' (expected learned or fixed)");
}

WeightNormalization weight_normalization_from_string(const std::string& name) {
    if (name == "mean-one") return WeightNormalization::MeanOne;
    if (name == "raw") return WeightNormalization::Raw;
    throw UsageError("unknown weight mode '" + name + "' (expected mean-one or raw)");
}

GradientLoss gradient_loss_from_string(const std::string& name) {
    if (name == "ce") return GradientLoss::CrossEntropy;
    if (name == "nt-xent") return GradientLoss::NtXent;
    throw UsageError("unknown gradient loss '" + name + "' (expected ce or nt-xent)");
}

ComponentMask component_mask_from_string(const std::string& spec) {
    ComponentMask mask{false, false, false};
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "u") mask[0] = true;
        else if (item == "s") mask[1] = true;
        else if (item == "r") mask[2] = true;
        else throw UsageError("unknown component '" + item + "' (expected u, s or r)");
    }
    return mask;
}

std::string to_string(const ComponentMask& mask) {
    static constexpr const char* names[] = {"u", "s", "r"};
    std::string out;
    for (std::size_t m = 0; m < 3; ++m) {
        if (!mask[m]) continue;
        if (!out.empty()) out += ',';
        out += names[m];
    }
    return out;
}

namespace {

std::size_t enabled_count(const ComponentMask& mask) {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

void require_square(const Matrix& m, const char* what) {
    if (m.rows() != m.cols()) {
        throw UsageError(std::string(what) + ": expected a square matrix, got " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
}

// Rescales row i of w (off-diagonal) to sum N - 1. Rows whose entries are all
// equal become exactly 1 so the uniform case is reproduced bit for bit.
void mean_one_rows(Matrix& w) {
    const std::size_t n = w.rows();
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        bool constant = true;
        double first = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (std::isnan(first)) first = w(i, j);
            else if (w(i, j) != first) constant = false;
            sum += w(i, j);
        }
        const double scale = static_cast<double>(n - 1) / sum;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            w(i, j) = constant ? 1.0 : w(i, j) * scale;
        }
    }
}

} // namespace

std::array<double, 3> AggregationParams::lambda() const {
    const std::size_t count = enabled_count(enabled);
    if (count == 0) throw UsageError("aggregation: component mask is empty");
    std::array<double, 3> base;
    if (mode == AggregationMode::Learned) {
        const Vector p = softmax(logits);
        std::copy(p.begin(), p.end(), base.begin());
    } else {
        base.fill(1.0 / 3.0);
    }
    if (count == 3) return base;
    double spare = 0.0;
    for (std::size_t m = 0; m < 3; ++m)
        if (!enabled[m]) spare += base[m];
    std::array<double, 3> out{};
    for (std::size_t m = 0; m < 3; ++m)
        out[m] = enabled[m] ? base[m] + spare / static_cast<double>(count) : 0.0;
    return out;
}

std::array<std::array<double, 3>, 3> AggregationParams::lambda_jacobian() const {
    std::array<std::array<double, 3>, 3> jac{};
    if (mode != AggregationMode::Learned) return jac;
    const std::size_t count = enabled_count(enabled);
    if (count == 0) throw UsageError("aggregation: component mask is empty");
    const Vector p = softmax(logits);
    std::array<std::array<double, 3>, 3> soft{};
    for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t k = 0; k < 3; ++k) soft[m][k] = p[m] * ((m == k ? 1.0 : 0.0) - p[k]);
    for (std::size_t m = 0; m < 3; ++m) {
        if (!enabled[m]) continue;
        for (std::size_t k = 0; k < 3; ++k) {
            double spare = 0.0;
            for (std::size_t q = 0; q < 3; ++q)
                if (!enabled[q]) spare += soft[q][k];
            jac[m][k] = soft[m][k] + spare / static_cast<double>(count);
        }
    }
    return jac;
}

const Matrix& ComponentScores::component(Component c) const {
    switch (c) {
    case Component::Uncertainty: return u;
    case Component::Similarity: return s;
    case Component::Representativeness: return r;
    }
    throw UsageError("unknown component");
}

Matrix& ComponentScores::component(Component c) {
    return const_cast<Matrix&>(std::as_const(*this).component(c));
}

Matrix similarity_scores(const Matrix& anchor_unit, const Matrix& view_unit) {
    if (!anchor_unit.same_shape(view_unit)) {
        throw UsageError("similarity_scores: anchor and view embeddings differ in shape");
    }
    Matrix s = pairwise_cosine(anchor_unit, view_unit);
    for (std::size_t i = 0; i < s.rows(); ++i) s(i, i) = 0.0;
    return s;
}

Matrix similarity_scores(const ForwardTrace& anchor, const ForwardTrace& view) {
    return similarity_scores(anchor.unit.unit, view.unit.unit);
}

Posterior pseudo_posterior(const Matrix& anchor_unit, const Matrix& neg_unit, std::size_t j) {
    const std::size_t n = anchor_unit.rows();
    if (n < 2) throw UsageError("pseudo_posterior: need at least 2 samples");
    if (anchor_unit.cols() != neg_unit.cols() || neg_unit.rows() != n) {
        throw UsageError("pseudo_posterior: shape mismatch");
    }
    if (j >= n) throw UsageError("pseudo_posterior: index out of range");
    Posterior post;
    Vector sims;
    post.classes.reserve(n - 1);
    sims.reserve(n - 1);
    for (std::size_t k = 0; k < n; ++k) {
        if (k == j) continue;
        post.classes.push_back(k);
        sims.push_back(cosine_sim(anchor_unit.row(k), neg_unit.row(j)));
    }
    post.probs = softmax(sims);
    return post;
}

std::size_t pseudo_label(const Posterior& posterior) {
    if (posterior.probs.empty()) throw UsageError("pseudo_label: empty posterior");
    const auto best = std::max_element(posterior.probs.begin(), posterior.probs.end());
    return posterior.classes[static_cast<std::size_t>(best - posterior.probs.begin())];
}

std::vector<std::size_t> pseudo_labels(std::span<const Posterior> posteriors) {
    std::vector<std::size_t> out;
    out.reserve(posteriors.size());
    for (const auto& p : posteriors) out.push_back(pseudo_label(p));
    return out;
}

GradientFactors gradient_factors(const EncoderParams& params, const ForwardTrace& own,
                                 const Matrix& other_view_unit, GradientLoss loss, double tau) {
    const std::size_t n = own.batch_size();
    if (own.output.cols() != params.output_dim() || own.penultimate().cols() != params.penultimate_dim()) {
        throw UsageError("gradient_factors: trace does not match encoder parameters");
    }
    if (other_view_unit.rows() != n || other_view_unit.cols() != own.output.cols()) {
        throw UsageError("gradient_factors: other view shape mismatch");
    }
    if (loss == GradientLoss::NtXent && !(tau > 0.0)) {
        throw UsageError("gradient_factors: tau must be positive");
    }

    GradientFactors f;
    f.a = Matrix(n, own.output.cols());
    f.h = own.penultimate();
    f.pseudo_labels.assign(n, 0);
    f.degenerate = own.unit.degenerate;

    parallel_for(n, [&](std::size_t j) {
        const Posterior post = pseudo_posterior(other_view_unit, own.unit.unit, j);
        const std::size_t label = pseudo_label(post);
        f.pseudo_labels[j] = label;
        if (own.unit.degenerate[j]) return;
        const auto zhat = own.unit.unit.row(j);
        const double znorm = norm2(own.output.row(j));

        Vector coeff(post.classes.size());
        if (loss == GradientLoss::CrossEntropy) {
            for (std::size_t q = 0; q < coeff.size(); ++q)
                coeff[q] = post.probs[q] - (post.classes[q] == label ? 1.0 : 0.0);
        } else {
            Vector scaled(post.classes.size());
            for (std::size_t q = 0; q < scaled.size(); ++q)
                scaled[q] = cosine_sim(other_view_unit.row(post.classes[q]), zhat) / tau;
            const Vector qprob = softmax(scaled);
            for (std::size_t q = 0; q < coeff.size(); ++q)
                coeff[q] = (qprob[q] - (post.classes[q] == label ? 1.0 : 0.0)) / tau;
        }

        auto a = f.a.row(j);
        for (std::size_t q = 0; q < coeff.size(); ++q) {
            const auto anchor = other_view_unit.row(post.classes[q]);
            const double s = dot(anchor, zhat);
            for (std::size_t k = 0; k < a.size(); ++k) a[k] += coeff[q] * (anchor[k] - s * zhat[k]);
        }
        for (double& v : a) v /= znorm;
    });
    return f;
}

Matrix uncertainty_scores(const GradientFactors& anchor, const GradientFactors& negative) {
    if (!anchor.a.same_shape(negative.a) || !anchor.h.same_shape(negative.h) ||
        anchor.a.rows() != anchor.h.rows()) {
        throw UsageError("uncertainty_scores: factor shape mismatch");
    }
    const std::size_t n = anchor.a.rows();
    Matrix u(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            u(i, j) = dot(anchor.a.row(i), negative.a.row(j)) * dot(anchor.h.row(i), negative.h.row(j));
        }
    return u;
}

Matrix representativeness_scores(const Matrix& neg_unit) {
    const std::size_t n = neg_unit.rows();
    if (n < 3) {
        throw UsageError("representativeness_scores: need N >= 3 (average divides by N - 2), got N = " +
                         std::to_string(n));
    }
    const Matrix sim = pairwise_cosine(neg_unit, neg_unit);
    Vector total(n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t jp = 0; jp < n; ++jp)
            if (jp != j) total[j] += 1.0 - sim(j, jp);
    Matrix r(n, n);
    const double denom = static_cast<double>(n - 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            r(i, j) = std::clamp((total[j] - (1.0 - sim(j, i))) / denom, 0.0, 2.0);
        }
    return r;
}

ComponentScores component_scores(const EncoderParams& params, const ForwardTrace& anchor,
                                 const ForwardTrace& view, GradientLoss loss, double tau) {
    ComponentScores c;
    c.s = similarity_scores(anchor, view);
    const GradientFactors neg = gradient_factors(params, view, anchor.unit.unit, loss, tau);
    const GradientFactors anc = gradient_factors(params, anchor, view.unit.unit, loss, tau);
    c.u = uncertainty_scores(anc, neg);
    c.r = representativeness_scores(view.unit.unit);
    return c;
}

ComponentScores normalize_components(const ComponentScores& scores) {
    ComponentScores out = scores;
    for (Matrix* m : {&out.u, &out.s, &out.r}) {
        require_square(*m, "normalize_components");
        const std::size_t n = m->rows();
        for (std::size_t i = 0; i < n; ++i) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                lo = std::min(lo, (*m)(i, j));
                hi = std::max(hi, (*m)(i, j));
            }
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                (*m)(i, j) = hi == lo ? 0.5 : ((*m)(i, j) - lo) / (hi - lo);
            }
        }
    }
    return out;
}

namespace {

Matrix mix_components(const ComponentScores& normalized, const std::array<double, 3>& lambda,
                      const ComponentMask& enabled) {
    const std::size_t n = normalized.batch_size();
    Matrix raw(n, n);
    for (std::size_t m = 0; m < 3; ++m) {
        if (!enabled[m]) continue;
        const Matrix& c = normalized.component(static_cast<Component>(m));
        require_square(c, "aggregate_importance");
        if (c.rows() != n) throw UsageError("aggregate_importance: component shape mismatch");
        for (std::size_t k = 0; k < raw.size(); ++k) raw.values()[k] += lambda[m] * c.values()[k];
    }
    return raw;
}

} // namespace

ImportanceWeights aggregate_importance(const ComponentScores& normalized, const AggregationParams& agg,
                                       WeightNormalization normalization) {
    const auto lambda = agg.lambda();
    Matrix w = mix_components(normalized, lambda, agg.enabled);
    const std::size_t n = w.rows();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w(i, j) = i == j ? 0.0 : std::max(w(i, j), kWeightFloor);
    if (normalization == WeightNormalization::MeanOne) mean_one_rows(w);
    return {std::move(w), normalization};
}

std::array<double, 3> aggregation_logit_gradient(const ComponentScores& normalized,
                                                 const AggregationParams& agg,
                                                 WeightNormalization normalization,
                                                 const Matrix& d_weights) {
    std::array<double, 3> grad{};
    if (agg.mode != AggregationMode::Learned) return grad;
    const auto lambda = agg.lambda();
    const Matrix raw = mix_components(normalized, lambda, agg.enabled);
    const std::size_t n = raw.rows();
    if (!d_weights.same_shape(raw)) throw UsageError("aggregation_logit_gradient: shape mismatch");

    std::array<double, 3> d_lambda{};
    for (std::size_t i = 0; i < n; ++i) {
        // dL/dc for this row, c being the floored mixture.
        Vector dc(n, 0.0);
        if (normalization == WeightNormalization::MeanOne) {
            double sum = 0.0;
            double weighted = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double c = std::max(raw(i, j), kWeightFloor);
                sum += c;
                weighted += d_weights(i, j) * c;
            }
            const double scale = static_cast<double>(n - 1);
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                dc[j] = scale * (d_weights(i, j) / sum - weighted / (sum * sum));
            }
        } else {
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) dc[j] = d_weights(i, j);
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || raw(i, j) <= kWeightFloor) continue;
            for (std::size_t m = 0; m < 3; ++m) {
                if (!agg.enabled[m]) continue;
                d_lambda[m] += dc[j] * normalized.component(static_cast<Component>(m))(i, j);
            }
        }
    }
    const auto jac = agg.lambda_jacobian();
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t m = 0; m < 3; ++m) grad[k] += d_lambda[m] * jac[m][k];
    return grad;
}

ImportanceWeights uniform_weights(std::size_t n) {
    if (n < 2) throw UsageError("uniform_weights: need N >= 2");
    Matrix w(n, n, 1.0);
    for (std::size_t i = 0; i < n; ++i) w(i, i) = 0.0;
    return {std::move(w), WeightNormalization::MeanOne};
}

ImportanceWeights hcl_weights(const Matrix& s, const HclConfig& cfg, WeightNormalization normalization) {
    require_square(s, "hcl_weights");
    if (!std::isfinite(cfg.beta) || cfg.beta < 0.0) throw UsageError("hcl_weights: beta must be finite and >= 0");
    const std::size_t n = s.rows();
    Matrix w(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            w(i, j) = i == j ? 0.0 : std::max(std::exp(cfg.beta * s(i, j)), kWeightFloor);
    if (normalization == WeightNormalization::MeanOne) mean_one_rows(w);
    return {std::move(w), normalization};
}

std::vector<std::size_t> ranked_negatives(const ImportanceWeights& weights, std::size_t anchor) {
    const std::size_t n = weights.batch_size();
    if (anchor >= n) throw UsageError("ranked_negatives: anchor out of range");
    std::vector<std::size_t> idx;
    idx.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
        if (j != anchor) idx.push_back(j);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return weights.w(anchor, a) > weights.w(anchor, b);
    });
    return idx;
}

} // namespace unremix
