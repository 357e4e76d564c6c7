#include <doctest.h>

#include "unremix/errors.hpp"
#include "unremix/numerics.hpp"
#include "unremix/optimizer.hpp"
#include "unremix/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>

using namespace unremix;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.values()) v = rng.normal();
    return m;
}

} // namespace

TEST_CASE("l2_normalize scales to unit length") {
    const Vector v{3.0, 4.0};
    const auto n = l2_normalize(v);
    CHECK_FALSE(n.degenerate);
    CHECK(n.values[0] == doctest::Approx(0.6));
    CHECK(n.values[1] == doctest::Approx(0.8));
}

TEST_CASE("l2_normalize flags zero vectors and leaves them unchanged") {
    const Vector v{0.0, 0.0, 0.0};
    const auto n = l2_normalize(v);
    CHECK(n.degenerate);
    CHECK(n.values == v);
    CHECK(cosine_sim(v, Vector{1.0, 0.0, 0.0}) == 0.0);
}

TEST_CASE("normalized rows have unit norm on random inputs") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix m = random_matrix(rng, 1 + rng.below(8), 1 + rng.below(6));
        const NormalizedRows n = normalize_rows(m);
        for (std::size_t r = 0; r < m.rows(); ++r) CHECK(norm2(n.unit.row(r)) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("cosine similarity of parallel and orthogonal vectors") {
    CHECK(cosine_sim(Vector{1, 2, 3}, Vector{2, 4, 6}) == doctest::Approx(1.0));
    CHECK(cosine_sim(Vector{1, 0}, Vector{0, 5}) == doctest::Approx(0.0));
    CHECK(cosine_sim(Vector{1, 0}, Vector{-3, 0}) == doctest::Approx(-1.0));
}

TEST_CASE("pairwise cosine stays in [-1, 1] and matches scalar cosine") {
    Rng rng(3);
    const Matrix a = random_matrix(rng, 5, 4);
    const Matrix b = random_matrix(rng, 6, 4);
    const Matrix s = pairwise_cosine(a, b);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            CHECK(s(i, j) >= -1.0);
            CHECK(s(i, j) <= 1.0);
            CHECK(s(i, j) == doctest::Approx(cosine_sim(a.row(i), b.row(j))).epsilon(1e-12));
        }
}

TEST_CASE("normalize_rows_backward matches finite differences") {
    Rng rng(5);
    const Matrix z = random_matrix(rng, 3, 4);
    const Matrix g = random_matrix(rng, 3, 4);
    const NormalizedRows u = normalize_rows(z);
    const Matrix dz = normalize_rows_backward(z, u, g);
    for (std::size_t k = 0; k < z.size(); ++k) {
        Matrix zp = z, zm = z;
        const double h = 1e-6;
        zp.values()[k] += h;
        zm.values()[k] -= h;
        const auto f = [&](const Matrix& m) {
            const Matrix un = normalize_rows(m).unit;
            return std::inner_product(un.values().begin(), un.values().end(), g.values().begin(), 0.0);
        };
        CHECK(dz.values()[k] == doctest::Approx((f(zp) - f(zm)) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("row_softmax rows sum to one and masked entries are zero") {
    const Matrix m = Matrix::from_rows({{1000.0, 1001.0, 999.0}, {0.0, 0.0, 0.0}});
    const std::vector<std::vector<std::size_t>> mask{{2}, {}};
    const Matrix p = row_softmax(m, mask);
    CHECK(p(0, 2) == 0.0);
    CHECK(p(0, 0) + p(0, 1) == doctest::Approx(1.0));
    CHECK(p(0, 1) / p(0, 0) == doctest::Approx(std::exp(1.0)));
    for (std::size_t j = 0; j < 3; ++j) CHECK(p(1, j) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("row_softmax rejects a fully masked row") {
    const Matrix m(1, 2, 0.0);
    const std::vector<std::vector<std::size_t>> mask{{0, 1}};
    CHECK_THROWS_AS(row_softmax(m, mask), UsageError);
}

TEST_CASE("log_sum_exp is stable for large inputs") {
    const Vector v{1000.0, 1000.0};
    CHECK(log_sum_exp(v) == doctest::Approx(1000.0 + std::log(2.0)));
    const auto p = softmax(v);
    CHECK(p[0] == doctest::Approx(0.5));
}

TEST_CASE("matmul variants agree with the naive triple loop") {
    Rng rng(8);
    const Matrix a = random_matrix(rng, 3, 4);
    const Matrix b = random_matrix(rng, 4, 2);
    const Matrix c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(s));
        }
    const Matrix bt = random_matrix(rng, 5, 4);
    const Matrix abt = matmul_transposed(a, bt);
    CHECK(abt(1, 3) == doctest::Approx(dot(a.row(1), bt.row(3))));
    const Matrix at = random_matrix(rng, 3, 5);
    const Matrix atb = transposed_matmul(a, at);
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += a(k, 2) * at(k, 4);
    CHECK(atb(2, 4) == doctest::Approx(s));
}

TEST_CASE("parallel_for visits every index once") {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
}

TEST_CASE("rng is reproducible and streams are independent") {
    Rng a(42), b(42), c(42, 1);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs = differs || x != c.next_u64();
    }
    CHECK(differs);
    const Rng root(7);
    Rng s1 = root.split(3), s2 = root.split(3);
    CHECK(s1.next_u64() == s2.next_u64());
}

TEST_CASE("rng uniform and normal moments") {
    Rng rng(1);
    double sum = 0.0, sq = 0.0, usum = 0.0;
    bool in_range = true;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sq += z * z;
        const double u = rng.uniform();
        in_range = in_range && u >= 0.0 && u < 1.0;
        usum += u;
    }
    CHECK(in_range);
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(usum / n == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("rng below and permutation") {
    Rng rng(9);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 50000; ++i) ++counts[rng.below(5)];
    for (int c : counts) CHECK(std::abs(c - 10000) < 500);
    const auto p = rng.permutation(20);
    std::set<std::size_t> seen(p.begin(), p.end());
    CHECK(seen.size() == 20);
    CHECK(*seen.rbegin() == 19);
}

TEST_CASE("adam bias correction makes the first step lr-sized") {
    std::vector<double> w{1.0, -2.0};
    const std::vector<double> g{0.5, -3.0};
    std::array<std::span<double>, 1> params{std::span<double>(w)};
    std::array<std::span<const double>, 1> grads{std::span<const double>(g)};
    OptimizerState state = OptimizerState::create(OptimizerKind::Adam);
    apply_update(params, grads, state, 0.1);
    CHECK(w[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(-1.9).epsilon(1e-6));
    CHECK(state.step == 1);
}

TEST_CASE("sgd step and optimizer names") {
    std::vector<double> w{1.0};
    const std::vector<double> g{2.0};
    std::array<std::span<double>, 1> params{std::span<double>(w)};
    std::array<std::span<const double>, 1> grads{std::span<const double>(g)};
    OptimizerState state = OptimizerState::create(OptimizerKind::Sgd);
    apply_update(params, grads, state, 0.25);
    CHECK(w[0] == doctest::Approx(0.5));
    CHECK(optimizer_kind_from_string("adam") == OptimizerKind::Adam);
    CHECK(to_string(OptimizerKind::Sgd) == "sgd");
    CHECK_THROWS(optimizer_kind_from_string("rmsprop"));
}
