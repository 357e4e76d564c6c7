#include <doctest.h>

#include "unremix/encoder.hpp"
#include "unremix/errors.hpp"
#include "unremix/fixtures.hpp"
#include "unremix/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace unremix;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.values()) v = rng.normal();
    return m;
}

Matrix random_unit(Rng& rng, std::size_t r, std::size_t c) { return normalize_rows(random_matrix(rng, r, c)).unit; }

ComponentScores constant_rows(std::size_t n, double u, double s, double r) {
    return {Matrix(n, n, u), Matrix(n, n, s), Matrix(n, n, r)};
}

double row_sum(const Matrix& w, std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < w.cols(); ++j)
        if (j != i) s += w(i, j);
    return s;
}

double entropy(const Matrix& w, std::size_t i) {
    const double total = row_sum(w, i);
    double h = 0.0;
    for (std::size_t j = 0; j < w.cols(); ++j) {
        if (j == i) continue;
        const double p = w(i, j) / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

} // namespace

TEST_CASE("similarity of identical views equals pairwise row cosines") {
    Rng rng(1);
    const Matrix u = random_unit(rng, 5, 3);
    const Matrix s = similarity_scores(u, u);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            if (i == j) {
                CHECK(s(i, j) == 0.0);
                continue;
            }
            double c = 0.0;
            for (std::size_t k = 0; k < 3; ++k) c += u(i, k) * u(j, k);
            CHECK(s(i, j) == doctest::Approx(c).epsilon(1e-12));
        }
}

TEST_CASE("similarity of an orthonormal batch is zero off the diagonal") {
    const Matrix e = Matrix::identity(4);
    const Matrix s = similarity_scores(e, e);
    for (double v : s.values()) CHECK(v == 0.0);
}

TEST_CASE("similarity rejects mismatched shapes") {
    CHECK_THROWS_AS(similarity_scores(Matrix(3, 2), Matrix(4, 2)), UsageError);
}

TEST_CASE("pseudo-posterior examples") {
    SUBCASE("identical anchors give a uniform posterior") {
        const Matrix a = Matrix::from_rows({{1, 0}, {1, 0}, {1, 0}});
        const Matrix v = Matrix::from_rows({{0, 1}, {1, 0}, {0, 1}});
        const Posterior p = pseudo_posterior(a, v, 1);
        REQUIRE(p.probs.size() == 2);
        CHECK(p.classes == std::vector<std::size_t>{0, 2});
        CHECK(p.probs[0] == doctest::Approx(0.5));
        CHECK(p.probs[1] == doctest::Approx(0.5));
    }
    SUBCASE("similarities (1, 0) give the scalar softmax without temperature") {
        const Matrix a = Matrix::from_rows({{1, 0}, {0, 1}, {0, 1}});
        const Matrix v = Matrix::from_rows({{0, 1}, {1, 0}, {1, 0}});
        const Posterior p = pseudo_posterior(a, v, 2);
        CHECK(p.classes == std::vector<std::size_t>{0, 1});
        CHECK(p.probs[0] == doctest::Approx(0.7311).epsilon(1e-4));
        CHECK(p.probs[1] == doctest::Approx(0.2689).epsilon(1e-4));
    }
    SUBCASE("random input equals a masked row softmax of the similarities") {
        Rng rng(2);
        const Matrix a = random_unit(rng, 6, 3);
        const Matrix v = random_unit(rng, 6, 3);
        for (std::size_t j = 0; j < 6; ++j) {
            const Posterior p = pseudo_posterior(a, v, j);
            Matrix row(1, 6);
            for (std::size_t i = 0; i < 6; ++i) row(0, i) = cosine_sim(a.row(i), v.row(j));
            const std::vector<std::vector<std::size_t>> mask{{j}};
            const Matrix ref = row_softmax(row, mask);
            double total = 0.0;
            for (std::size_t q = 0; q < p.classes.size(); ++q) {
                CHECK(p.probs[q] == doctest::Approx(ref(0, p.classes[q])).epsilon(1e-12));
                total += p.probs[q];
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("N < 2 is a usage error") {
        CHECK_THROWS_AS(pseudo_posterior(Matrix(1, 2, 1.0), Matrix(1, 2, 1.0), 0), UsageError);
    }
}

TEST_CASE("pseudo-label argmax and tie rule") {
    CHECK(pseudo_label(Posterior{{0, 2}, {0.7, 0.3}}) == 0);
    CHECK(pseudo_label(Posterior{{0, 2}, {0.5, 0.5}}) == 0);
    CHECK(pseudo_label(Posterior{{0, 1, 3}, {0.2, 0.5, 0.3}}) == 1);
    const std::vector<Posterior> ps{Posterior{{1, 2}, {0.1, 0.9}}, Posterior{{0, 2}, {0.6, 0.4}}};
    CHECK(pseudo_labels(ps) == std::vector<std::size_t>{2, 0});
}

TEST_CASE("gradient factors vanish for a confident posterior") {
    // With one eligible anchor the posterior is exactly one-hot.
    Rng rng(3);
    const auto p = init_encoder({3, 2}, rng);
    const auto own = forward(p, random_matrix(rng, 2, 3));
    const Matrix anchors = random_unit(rng, 2, 2);
    const auto f = gradient_factors(p, own, anchors, GradientLoss::CrossEntropy, 0.5);
    for (double v : f.a.values()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("gradient factors of duplicate rows agree") {
    Rng rng(4);
    const auto p = init_encoder({3, 5, 4}, rng);
    Matrix x = random_matrix(rng, 5, 3);
    for (std::size_t k = 0; k < 3; ++k) x(3, k) = x(1, k);
    const auto own = forward(p, x);
    Matrix anchors = random_unit(rng, 5, 4);
    for (std::size_t k = 0; k < 4; ++k) anchors(3, k) = anchors(1, k);
    for (auto loss : {GradientLoss::CrossEntropy, GradientLoss::NtXent}) {
        const auto f = gradient_factors(p, own, anchors, loss, 0.5);
        for (std::size_t k = 0; k < 4; ++k) CHECK(f.a(1, k) == doctest::Approx(f.a(3, k)).epsilon(1e-12));
        for (std::size_t k = 0; k < 5; ++k) CHECK(f.h(1, k) == f.h(3, k));
    }
}

TEST_CASE("gradient factors flag degenerate rows") {
    Rng rng(5);
    const auto p = init_encoder({2, 3, 2}, rng);
    const auto own = forward(p, Matrix::from_rows({{0, 0}, {1, 2}, {-1, 0.5}}));
    const auto f = gradient_factors(p, own, random_unit(rng, 3, 2), GradientLoss::CrossEntropy, 0.5);
    CHECK(f.degenerate[0]);
    CHECK(f.a(0, 0) == 0.0);
    CHECK(f.a(0, 1) == 0.0);
}

TEST_CASE("gradient factors match finite differences on a small net") {
    Rng rng(6);
    auto p = init_encoder({3, 5, 4}, rng);
    for (auto& layer : p.hidden)
        for (double& b : layer.bias) b = 0.5 + 0.1 * rng.normal();
    const Matrix x = random_matrix(rng, 6, 3);
    const auto own = forward(p, x);
    const Matrix anchors = random_unit(rng, 6, 4);
    const auto f = gradient_factors(p, own, anchors, GradientLoss::CrossEntropy, 0.5);
    for (std::size_t j = 0; j < 6; ++j) {
        if (f.degenerate[j]) continue;
        const std::size_t target = f.pseudo_labels[j];
        const auto loss = [&](const EncoderParams& q) {
            const auto t = forward(q, x);
            const Posterior post = pseudo_posterior(anchors, t.unit.unit, j);
            for (std::size_t c = 0; c < post.classes.size(); ++c)
                if (post.classes[c] == target) return -std::log(post.probs[c]);
            return 0.0;
        };
        EncoderParams q = p;
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 5; ++c) {
                const double saved = q.last(r, c);
                const double h = 1e-6;
                q.last(r, c) = saved + h;
                const double up = loss(q);
                q.last(r, c) = saved - h;
                const double down = loss(q);
                q.last(r, c) = saved;
                CHECK(f.a(j, r) * f.h(j, c) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-4));
            }
    }
}

TEST_CASE("uncertainty examples") {
    GradientFactors f;
    f.a = Matrix::from_rows({{1, 2}, {1, 2}, {2, -1}});
    f.h = Matrix::from_rows({{1, 0, 1}, {1, 0, 1}, {3, 1, 0}});
    const Matrix u = uncertainty_scores(f, f);
    CHECK(u(0, 1) == doctest::Approx(5.0 * 2.0));
    CHECK(u(0, 2) == doctest::Approx(0.0));
    CHECK(u(0, 0) == 0.0);
}

TEST_CASE("uncertainty equals the flattened outer-product dot product") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        GradientFactors fa, fb;
        fa.a = random_matrix(rng, 4, 3);
        fa.h = random_matrix(rng, 4, 5);
        fb.a = random_matrix(rng, 4, 3);
        fb.h = random_matrix(rng, 4, 5);
        const Matrix u = uncertainty_scores(fa, fb);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                if (i == j) continue;
                double flat = 0.0;
                for (std::size_t r = 0; r < 3; ++r)
                    for (std::size_t c = 0; c < 5; ++c) flat += (fa.a(i, r) * fa.h(i, c)) * (fb.a(j, r) * fb.h(j, c));
                CHECK(u(i, j) == doctest::Approx(flat).epsilon(1e-9));
            }
    }
}

TEST_CASE("representativeness examples") {
    SUBCASE("identical negatives give zero") {
        const Matrix r = representativeness_scores(Matrix::from_rows({{1, 0}, {1, 0}, {1, 0}, {1, 0}}));
        for (double v : r.values()) CHECK(v == doctest::Approx(0.0));
    }
    SUBCASE("N = 3 with an orthogonal remaining negative") {
        const Matrix r = representativeness_scores(Matrix::from_rows({{0, 1}, {1, 0}, {0, 1}}));
        CHECK(r(0, 1) == doctest::Approx(1.0));
    }
    SUBCASE("N < 3 is a usage error") {
        CHECK_THROWS_AS(representativeness_scores(Matrix::from_rows({{1, 0}, {0, 1}})), UsageError);
    }
}

TEST_CASE("representativeness matches the triple loop") {
    Rng rng(8);
    for (std::size_t n = 3; n <= 16; ++n) {
        const Matrix v = random_unit(rng, n, 3);
        const Matrix r = representativeness_scores(v);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                double total = 0.0;
                for (std::size_t k = 0; k < n; ++k)
                    if (k != i && k != j) total += 1.0 - cosine_sim(v.row(j), v.row(k));
                CHECK(r(i, j) == doctest::Approx(total / static_cast<double>(n - 2)).epsilon(1e-12));
                CHECK(r(i, j) >= 0.0);
                CHECK(r(i, j) <= 2.0);
            }
    }
}

TEST_CASE("min-max normalization examples") {
    ComponentScores c = constant_rows(4, 5.0, 5.0, 5.0);
    c.u(0, 1) = 2;
    c.u(0, 2) = 4;
    c.u(0, 3) = 6;
    const ComponentScores n = normalize_components(c);
    CHECK(n.u(0, 1) == doctest::Approx(0.0));
    CHECK(n.u(0, 2) == doctest::Approx(0.5));
    CHECK(n.u(0, 3) == doctest::Approx(1.0));
    CHECK(n.u(1, 0) == 0.5);
    CHECK(n.s(2, 3) == 0.5);
}

TEST_CASE("min-max normalization preserves the order of each row") {
    Rng rng(9);
    ComponentScores c{random_matrix(rng, 7, 7), random_matrix(rng, 7, 7), random_matrix(rng, 7, 7)};
    const ComponentScores n = normalize_components(c);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t a = 0; a < 7; ++a)
            for (std::size_t b = 0; b < 7; ++b) {
                if (a == i || b == i) continue;
                if (c.u(i, a) < c.u(i, b)) CHECK(n.u(i, a) <= n.u(i, b));
                CHECK(n.r(i, a) >= 0.0);
                CHECK(n.r(i, a) <= 1.0);
            }
}

TEST_CASE("lambda is a probability vector and respects the mask") {
    AggregationParams agg;
    agg.logits = {0.3, -1.2, 2.0};
    const auto l = agg.lambda();
    CHECK(l[0] + l[1] + l[2] == doctest::Approx(1.0).epsilon(1e-12));
    agg.mode = AggregationMode::FixedEqual;
    for (double v : agg.lambda()) CHECK(v == doctest::Approx(1.0 / 3.0));
    agg.enabled = {true, false, false};
    CHECK(agg.lambda() == std::array<double, 3>{1.0, 0.0, 0.0});
    agg.enabled = {false, true, true};
    CHECK(agg.lambda()[1] == doctest::Approx(0.5));
    CHECK(agg.lambda()[2] == doctest::Approx(0.5));
    CHECK(component_mask_from_string("s,u") == ComponentMask{true, true, false});
    CHECK(to_string(ComponentMask{true, false, true}) == "u,r");
    CHECK_THROWS(component_mask_from_string("u,x"));
}

TEST_CASE("aggregation examples") {
    SUBCASE("fixed mode arithmetic before rescaling") {
        AggregationParams agg;
        agg.mode = AggregationMode::FixedEqual;
        const auto w = aggregate_importance(constant_rows(3, 1.0, 0.0, 0.5), agg, WeightNormalization::Raw);
        CHECK(w.w(0, 1) == doctest::Approx(0.5));
    }
    SUBCASE("zero logits equal fixed mode bit for bit") {
        Rng rng(10);
        ComponentScores c = normalize_components(
            ComponentScores{random_matrix(rng, 6, 6), random_matrix(rng, 6, 6), random_matrix(rng, 6, 6)});
        AggregationParams learned, fixed;
        fixed.mode = AggregationMode::FixedEqual;
        CHECK(aggregate_importance(c, learned).w == aggregate_importance(c, fixed).w);
    }
    SUBCASE("constant components give unit weights") {
        const auto w = aggregate_importance(constant_rows(5, 0.5, 0.5, 0.5), AggregationParams{});
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j)
                if (i != j) CHECK(w.w(i, j) == 1.0);
    }
    SUBCASE("empty mask is a usage error") {
        AggregationParams agg;
        agg.enabled = {false, false, false};
        CHECK_THROWS_AS(aggregate_importance(constant_rows(3, 0.5, 0.5, 0.5), agg), UsageError);
    }
}

TEST_CASE("aggregated weights respect the floor and mean-one rows") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 3 + rng.below(10);
        ComponentScores c = normalize_components(
            ComponentScores{random_matrix(rng, n, n), random_matrix(rng, n, n), random_matrix(rng, n, n)});
        AggregationParams agg;
        agg.logits = {rng.normal(), rng.normal(), rng.normal()};
        const auto w = aggregate_importance(c, agg);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(row_sum(w.w, i) == doctest::Approx(static_cast<double>(n - 1)).epsilon(1e-9));
            CHECK(w.w(i, i) == 0.0);
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) CHECK(w.w(i, j) >= kWeightFloor * 0.999);
        }
    }
}

TEST_CASE("uniform weights") {
    const auto w4 = uniform_weights(4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(w4.w(i, j) == (i == j ? 0.0 : 1.0));
    const auto w2 = uniform_weights(2);
    CHECK(w2.w(0, 1) == 1.0);
    CHECK(w2.w(1, 0) == 1.0);
    CHECK(row_sum(w4.w, 2) == 3.0);
}

TEST_CASE("hcl weights examples") {
    const Matrix s = Matrix::from_rows({{0, 1, 0}, {0.2, 0, -0.3}, {0.5, 0.5, 0}});
    const auto uniform = hcl_weights(s, HclConfig{0.0});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) CHECK(uniform.w(i, j) == doctest::Approx(1.0));
    const auto raw = hcl_weights(s, HclConfig{1.0}, WeightNormalization::Raw);
    CHECK(raw.w(0, 1) / raw.w(0, 2) == doctest::Approx(std::exp(1.0)));
    const auto normed = hcl_weights(s, HclConfig{1.0});
    CHECK(normed.w(0, 1) / normed.w(0, 2) == doctest::Approx(std::exp(1.0)));
    CHECK(row_sum(normed.w, 0) == doctest::Approx(2.0));
}

TEST_CASE("hcl entropy is non-increasing in beta") {
    Rng rng(12);
    const Matrix u = random_unit(rng, 6, 3);
    const Matrix s = similarity_scores(u, u);
    double previous = INFINITY;
    for (double beta = 0.0; beta <= 10.0; beta += 0.5) {
        const double h = entropy(hcl_weights(s, HclConfig{beta}).w, 0);
        CHECK(h <= previous + 1e-12);
        previous = h;
    }
}

TEST_CASE("ranked negatives sort by weight with index tie-break") {
    ImportanceWeights w{Matrix::from_rows({{0, 1, 3, 1}, {1, 0, 1, 1}, {1, 1, 0, 1}, {1, 1, 1, 0}})};
    CHECK(ranked_negatives(w, 0) == std::vector<std::size_t>{2, 1, 3});
    CHECK(ranked_negatives(w, 1) == std::vector<std::size_t>{0, 2, 3});
}

TEST_CASE("adversarial fixture: UnReMix picks the boundary sample, HCL the near-duplicate") {
    const auto f = adversarial_fixture();
    const auto anchor = forward(f.params, f.batch.anchor_view);
    const auto view = forward(f.params, f.batch.second_view);
    const auto raw = component_scores(f.params, anchor, view, GradientLoss::CrossEntropy, 0.5);
    for (auto mode : {AggregationMode::FixedEqual, AggregationMode::Learned}) {
        AggregationParams agg;
        agg.mode = mode;
        const auto w = aggregate_importance(normalize_components(raw), agg);
        CHECK(ranked_negatives(w, f.anchor).front() == f.boundary);
    }
    const auto hcl = hcl_weights(similarity_scores(anchor, view), HclConfig{1.0});
    CHECK(ranked_negatives(hcl, f.anchor).front() == f.near_duplicate);

    const auto entropy_of = [&](std::size_t j) {
        const Posterior p = pseudo_posterior(anchor.unit.unit, view.unit.unit, j);
        double h = 0.0;
        for (double q : p.probs) h -= q * std::log(q);
        return h;
    };
    for (std::size_t j = 1; j < f.batch.size(); ++j) {
        if (j != f.near_duplicate) CHECK(entropy_of(f.near_duplicate) < entropy_of(j));
        if (j != f.boundary) CHECK(entropy_of(f.boundary) > entropy_of(j));
    }
    CHECK(f.batch.labels()[f.near_duplicate] == f.batch.labels()[f.anchor]);
    CHECK(f.batch.labels()[f.boundary] != f.batch.labels()[f.anchor]);
}
