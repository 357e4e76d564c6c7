#include <doctest.h>

#include "unremix/errors.hpp"
#include "unremix/gradcheck.hpp"
#include "unremix/loss.hpp"

#include <cmath>

using namespace unremix;

namespace {

Matrix random_unit(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.values()) v = rng.normal();
    return normalize_rows(m).unit;
}

// InfoNCE written out with plain exponentials.
double naive_info_nce(const Matrix& a, const Matrix& v, double tau) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < v.rows(); ++j) denom += std::exp(dot(a.row(i), v.row(j)) / tau);
        total += -std::log(std::exp(dot(a.row(i), v.row(i)) / tau) / denom);
    }
    return total / static_cast<double>(a.rows());
}

} // namespace

TEST_CASE("two identical pairs give ln 2") {
    const Matrix e = Matrix::from_rows({{1, 0}, {1, 0}});
    const auto out = info_nce(e, e, LossConfig{0.5});
    CHECK(out.value == doctest::Approx(std::log(2.0)));
    CHECK(out.per_anchor[0] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("zero similarities with unit weight give ln 2") {
    const Matrix a = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}});
    const Matrix v = Matrix::from_rows({{0, 0, 1}, {0, 0, 1}});
    const auto out = weighted_info_nce(a, v, uniform_weights(2), LossConfig{1.0});
    CHECK(out.value == doctest::Approx(std::log(2.0)));
}

TEST_CASE("negatives with floor weight are annihilated") {
    const Matrix a = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}});
    const Matrix v = Matrix::from_rows({{0, 0, 1}, {0, 0, 1}});
    ImportanceWeights w{Matrix::from_rows({{0, kWeightFloor}, {kWeightFloor, 0}}), WeightNormalization::Raw};
    const auto out = weighted_info_nce(a, v, w, LossConfig{1.0});
    CHECK(out.value < 1e-5);
}

TEST_CASE("well separated batch has near-zero loss") {
    const std::size_t n = 20;
    Matrix a(n, n), v(n, n);
    for (std::size_t i = 0; i < n; ++i) a(i, i) = v(i, i) = 1.0;
    const auto out = info_nce(a, v, LossConfig{0.05});
    CHECK(out.value < 1e-6);
}

TEST_CASE("info_nce matches the naive formula and the uniform reduction") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(10);
        const std::size_t d = 2 + rng.below(5);
        const Matrix a = random_unit(rng, n, d);
        const Matrix v = random_unit(rng, n, d);
        const double tau = rng.uniform(0.1, 1.0);
        const auto plain = info_nce(a, v, LossConfig{tau});
        const auto weighted = weighted_info_nce(a, v, uniform_weights(n), LossConfig{tau});
        CHECK(plain.value == doctest::Approx(naive_info_nce(a, v, tau)).epsilon(1e-10));
        CHECK(weighted.value == doctest::Approx(plain.value).epsilon(1e-12));
        CHECK(plain.value >= 0.0);
    }
}

TEST_CASE("loss is stable at small temperature") {
    Rng rng(2);
    const Matrix a = random_unit(rng, 16, 3);
    const Matrix v = random_unit(rng, 16, 3);
    const auto out = info_nce(a, v, LossConfig{0.05});
    CHECK(std::isfinite(out.value));
    CHECK(out.d_anchor.all_finite());
    CHECK(out.d_view.all_finite());
}

TEST_CASE("increasing one weight never decreases the anchor's loss") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 3 + rng.below(6);
        const Matrix a = random_unit(rng, n, 3);
        const Matrix v = random_unit(rng, n, 3);
        Matrix w(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) w(i, j) = rng.uniform(0.1, 2.0);
        const std::size_t i = rng.below(n);
        const std::size_t j = (i + 1 + rng.below(n - 1)) % n;
        const auto before = weighted_info_nce(a, v, ImportanceWeights{w, WeightNormalization::Raw}, LossConfig{0.5});
        w(i, j) += rng.uniform(0.01, 1.0);
        const auto after = weighted_info_nce(a, v, ImportanceWeights{w, WeightNormalization::Raw}, LossConfig{0.5});
        CHECK(after.per_anchor[i] >= before.per_anchor[i]);
    }
}

TEST_CASE("weights below the floor violate an invariant") {
    ImportanceWeights w{Matrix::from_rows({{0, 0.0}, {1, 0}}), WeightNormalization::Raw};
    const Matrix e = Matrix::from_rows({{1, 0}, {0, 1}});
    CHECK_THROWS_AS(weighted_info_nce(e, e, w, LossConfig{0.5}), InvariantError);
}

TEST_CASE("single-sample batch is a usage error") {
    const Matrix e = Matrix::from_rows({{1, 0}});
    CHECK_THROWS_AS(info_nce(e, e, LossConfig{0.5}), UsageError);
}

TEST_CASE("logit gradient is zero in fixed mode") {
    Rng rng(4);
    const std::size_t n = 5;
    const Matrix a = random_unit(rng, n, 3);
    const Matrix v = random_unit(rng, n, 3);
    ComponentScores c{Matrix(n, n, 0.2), Matrix(n, n, 0.7), Matrix(n, n, 0.4)};
    c.u(0, 1) = 0.9;
    AggregationParams agg;
    agg.mode = AggregationMode::FixedEqual;
    const auto w = aggregate_importance(c, agg);
    const auto out = loss_gradients(a, v, w, LossConfig{0.5}, &c, &agg);
    CHECK(out.d_logits == std::array<double, 3>{0.0, 0.0, 0.0});
}

TEST_CASE("embedding gradients match finite differences") {
    GradcheckOptions o;
    o.seeds = 100;
    const auto r = check_loss_embeddings(o);
    CHECK(r.passed);
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("logit gradients match finite differences") {
    GradcheckOptions o;
    o.seeds = 100;
    const auto r = check_loss_logits(o);
    CHECK(r.passed);
    CHECK(r.max_rel_error <= 1e-5);
}

TEST_CASE("gradient checks catch a perturbed gradient") {
    GradcheckOptions o;
    o.seeds = 5;
    o.fault_scale = 1.01;
    CHECK_FALSE(check_loss_embeddings(o).passed);
    CHECK_FALSE(check_loss_logits(o).passed);
    CHECK_FALSE(check_gradient_factors(GradientLoss::CrossEntropy, o).passed);
}

TEST_CASE("gradient factor suites pass for both loss kinds") {
    GradcheckOptions o;
    o.seeds = 100;
    CHECK(check_gradient_factors(GradientLoss::CrossEntropy, o).passed);
    CHECK(check_gradient_factors(GradientLoss::NtXent, o).passed);
}

TEST_CASE("general contrastive form with excluded columns") {
    // Anchor 0 with candidates {positive, excluded, negative}.
    const Matrix anchor = Matrix::from_rows({{1, 0}});
    const Matrix cand = Matrix::from_rows({{1, 0}, {1, 0}, {0, 1}});
    const std::vector<std::size_t> pos{0};
    const Matrix w = Matrix::from_rows({{0, 0, 1}});
    const auto out = contrastive_loss(anchor, cand, pos, w, 1.0);
    CHECK(out.value == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))));
    CHECK(out.d_view(1, 0) == 0.0);
    CHECK(out.d_view(1, 1) == 0.0);
}
