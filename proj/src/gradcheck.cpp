#include "unremix/gradcheck.hpp"

#include "unremix/encoder.hpp"
#include "unremix/loss.hpp"
#include "unremix/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace unremix {

namespace {

// Values are rounded through float so instances are exactly representable in
// single precision; all arithmetic stays in double.
double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = f32(rng.normal());
    return m;
}

double step_for(double w) { return 1e-5 * std::max(1.0, std::abs(w)); }

double central_difference(double& w, const std::function<double()>& f) {
    const double saved = w;
    const double h = step_for(saved);
    w = saved + h;
    const double up = f();
    w = saved - h;
    const double down = f();
    w = saved;
    return (up - down) / (2.0 * h);
}

struct Tracker {
    GradcheckReport report;
    bool seen = false;

    void observe(double analytic, double numeric, std::uint64_t seed) {
        double e = relative_error(analytic, numeric);
        if (std::isnan(e)) e = INFINITY;
        if (!seen || e > report.max_rel_error) {
            report.max_rel_error = e;
            report.worst_seed = seed;
            seen = true;
        }
    }

    GradcheckReport finish(std::size_t instances) {
        report.instances = instances;
        report.passed = report.max_rel_error <= report.tolerance;
        return report;
    }
};

Vector unit(const Vector& v) {
    const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    Vector out(v);
    for (double& x : out) x /= n;
    return out;
}

double cos_unit(std::span<const double> a, const Vector& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) s += a[k] * b[k];
    return s;
}

// -log softmax(scale * cos(anchor_i', z))_{target} over i' != j, z = W h.
double pseudo_label_loss(const Matrix& w, std::span<const double> h, const Matrix& anchors, std::size_t j,
                         std::size_t target, double scale) {
    Vector z(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r)
        for (std::size_t c = 0; c < w.cols(); ++c) z[r] += w(r, c) * h[c];
    const Vector zu = unit(z);
    double mx = -INFINITY;
    std::vector<double> logits(anchors.rows(), -INFINITY);
    for (std::size_t i = 0; i < anchors.rows(); ++i) {
        if (i == j) continue;
        logits[i] = scale * cos_unit(anchors.row(i), zu);
        mx = std::max(mx, logits[i]);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < anchors.rows(); ++i)
        if (i != j) sum += std::exp(logits[i] - mx);
    return -(logits[target] - mx - std::log(sum));
}

double row_cos(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) {
        ab += a(i, k) * b(j, k);
        aa += a(i, k) * a(i, k);
        bb += b(j, k) * b(j, k);
    }
    return ab / std::sqrt(aa * bb);
}

// Batch-mean weighted InfoNCE computed from raw embeddings.
double weighted_loss_oracle(const Matrix& za, const Matrix& zv, const Matrix& w, double tau) {
    const std::size_t n = za.rows();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> terms;
        std::vector<double> scale;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            const double t = row_cos(za, i, zv, j) / tau;
            terms.push_back(t);
            scale.push_back(j == i ? 1.0 : w(i, j));
            mx = std::max(mx, t);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += scale[j] * std::exp(terms[j] - mx);
        total += -(terms[i] - mx - std::log(sum));
    }
    return total / static_cast<double>(n);
}

// Softmax mixing, floor, then mean-one row rescaling.
Matrix aggregate_oracle(const std::array<Matrix, 3>& comps, const std::array<double, 3>& logits) {
    const double mx = std::max({logits[0], logits[1], logits[2]});
    std::array<double, 3> lam{};
    double z = 0.0;
    for (std::size_t m = 0; m < 3; ++m) z += lam[m] = std::exp(logits[m] - mx);
    for (double& l : lam) l /= z;
    const std::size_t n = comps[0].rows();
    Matrix w(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double v = 0.0;
            for (std::size_t m = 0; m < 3; ++m) v += lam[m] * comps[m](i, j);
            w(i, j) = std::max(v, kWeightFloor);
            row += w(i, j);
        }
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) w(i, j) *= static_cast<double>(n - 1) / row;
    }
    return w;
}

} // namespace

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

GradcheckReport check_gradient_factors(GradientLoss loss, const GradcheckOptions& options) {
    Tracker t{{loss == GradientLoss::CrossEntropy ? "gradient-factors-ce" : "gradient-factors-nt-xent", 1e-4}};
    for (std::size_t s = 0; s < options.seeds; ++s) {
        const std::uint64_t seed = options.first_seed + s;
        Rng rng(seed, 0x67726164);
        const std::size_t n = 3 + rng.below(4);
        const std::size_t d = 2 + rng.below(3);
        const std::size_t d_prev = 2 + rng.below(4);
        const double tau = f32(rng.uniform(0.2, 1.0));

        // No hidden layer: the penultimate features are the random inputs.
        EncoderParams params = init_encoder({d_prev, d}, rng);
        for (double& v : params.last.values()) v = f32(v);
        const ForwardTrace own = forward(params, random_matrix(rng, n, d_prev));
        const Matrix anchors = normalize_rows(random_matrix(rng, n, d)).unit;
        const GradientFactors f = gradient_factors(params, own, anchors, loss, tau);
        const double scale = loss == GradientLoss::CrossEntropy ? 1.0 : 1.0 / tau;

        Matrix w = params.last;
        for (std::size_t j = 0; j < n; ++j) {
            const auto h = own.penultimate().row(j);
            const std::size_t target = f.pseudo_labels[j];
            for (std::size_t r = 0; r < d; ++r) {
                for (std::size_t c = 0; c < d_prev; ++c) {
                    const double numeric = central_difference(
                        w(r, c), [&] { return pseudo_label_loss(w, h, anchors, j, target, scale); });
                    const double analytic = options.fault_scale * f.a(j, r) * f.h(j, c);
                    t.observe(analytic, numeric, seed);
                }
            }
        }
    }
    return t.finish(options.seeds);
}

GradcheckReport check_loss_embeddings(const GradcheckOptions& options) {
    Tracker t{{"loss-embeddings", 1e-4}};
    for (std::size_t s = 0; s < options.seeds; ++s) {
        const std::uint64_t seed = options.first_seed + s;
        Rng rng(seed, 0x6c6f7373);
        const std::size_t n = 2 + rng.below(5);
        const std::size_t d = 2 + rng.below(3);
        const double tau = f32(rng.uniform(0.2, 1.0));
        Matrix za = random_matrix(rng, n, d);
        Matrix zv = random_matrix(rng, n, d);
        Matrix w(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) w(i, j) = f32(rng.uniform(0.1, 2.0));

        const NormalizedRows ua = normalize_rows(za);
        const NormalizedRows uv = normalize_rows(zv);
        const LossOutput out = loss_gradients(ua.unit, uv.unit, ImportanceWeights{w, WeightNormalization::Raw},
                                              LossConfig{tau, WeightNormalization::Raw});
        const Matrix da = normalize_rows_backward(za, ua, out.d_anchor);
        const Matrix dv = normalize_rows_backward(zv, uv, out.d_view);
        const auto f = [&] { return weighted_loss_oracle(za, zv, w, tau); };
        for (std::size_t k = 0; k < za.size(); ++k) {
            t.observe(options.fault_scale * da.values()[k], central_difference(za.values()[k], f), seed);
            t.observe(options.fault_scale * dv.values()[k], central_difference(zv.values()[k], f), seed);
        }
    }
    return t.finish(options.seeds);
}

GradcheckReport check_loss_logits(const GradcheckOptions& options) {
    Tracker t{{"loss-logits", 1e-5}};
    for (std::size_t s = 0; s < options.seeds; ++s) {
        const std::uint64_t seed = options.first_seed + s;
        Rng rng(seed, 0x6c616d62);
        const std::size_t n = 3 + rng.below(5);
        const std::size_t d = 2 + rng.below(3);
        const double tau = f32(rng.uniform(0.2, 1.0));
        const Matrix ua = normalize_rows(random_matrix(rng, n, d)).unit;
        const Matrix uv = normalize_rows(random_matrix(rng, n, d)).unit;
        std::array<Matrix, 3> comps{Matrix(n, n), Matrix(n, n), Matrix(n, n)};
        for (auto& c : comps)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (i != j) c(i, j) = f32(rng.uniform(0.05, 1.0));
        AggregationParams agg;
        agg.mode = AggregationMode::Learned;
        for (double& l : agg.logits) l = f32(rng.normal());

        ComponentScores normalized{comps[0], comps[1], comps[2]};
        const ImportanceWeights weights = aggregate_importance(normalized, agg, WeightNormalization::MeanOne);
        const LossOutput out = loss_gradients(ua, uv, weights, LossConfig{tau, WeightNormalization::MeanOne},
                                              &normalized, &agg);
        std::array<double, 3> logits = agg.logits;
        for (std::size_t m = 0; m < 3; ++m) {
            const double numeric = central_difference(
                logits[m], [&] { return weighted_loss_oracle(ua, uv, aggregate_oracle(comps, logits), tau); });
            t.observe(options.fault_scale * out.d_logits[m], numeric, seed);
        }
    }
    return t.finish(options.seeds);
}

std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions& options) {
    return {check_gradient_factors(GradientLoss::CrossEntropy, options),
            check_gradient_factors(GradientLoss::NtXent, options), check_loss_embeddings(options),
            check_loss_logits(options)};
}

} // namespace unremix
