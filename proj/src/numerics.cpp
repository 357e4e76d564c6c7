#include "unremix/numerics.hpp"

#include "unremix/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <thread>

namespace unremix {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw UsageError("Matrix: " + std::to_string(values_.size()) + " values for a " +
                         std::to_string(rows_) + "x" + std::to_string(cols_) + " shape");
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw UsageError("Matrix::from_rows: ragged rows");
        values.insert(values.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(values));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw UsageError("dot: dimension mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
    return acc;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

NormalizedVector l2_normalize(std::span<const double> v) {
    NormalizedVector out{Vector(v.begin(), v.end()), false};
    const double n = norm2(v);
    if (n <= kNormEpsilon) {
        out.degenerate = true;
        return out;
    }
    for (double& x : out.values) x /= n;
    return out;
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw UsageError("cosine_sim: dimension mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    const double na = norm2(a);
    const double nb = norm2(b);
    if (na <= kNormEpsilon || nb <= kNormEpsilon) return 0.0;
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Matrix pairwise_cosine(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw UsageError("pairwise_cosine: column mismatch " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = cosine_sim(a.row(i), b.row(j));
    return out;
}

NormalizedRows normalize_rows(const Matrix& m) {
    NormalizedRows out{Matrix(m.rows(), m.cols()), std::vector<bool>(m.rows(), false)};
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto n = l2_normalize(m.row(i));
        std::copy(n.values.begin(), n.values.end(), out.unit.row(i).begin());
        out.degenerate[i] = n.degenerate;
    }
    return out;
}

Matrix normalize_rows_backward(const Matrix& raw, const NormalizedRows& normalized,
                               const Matrix& d_unit) {
    if (!raw.same_shape(d_unit) || !raw.same_shape(normalized.unit)) {
        throw UsageError("normalize_rows_backward: shape mismatch");
    }
    Matrix out(raw.rows(), raw.cols());
    for (std::size_t i = 0; i < raw.rows(); ++i) {
        if (normalized.degenerate[i]) continue;
        const auto u = normalized.unit.row(i);
        const auto g = d_unit.row(i);
        const double n = norm2(raw.row(i));
        const double gu = dot(g, u);
        auto o = out.row(i);
        for (std::size_t k = 0; k < o.size(); ++k) o[k] = (g[k] - gu * u[k]) / n;
    }
    return out;
}

Vector softmax(std::span<const double> v) {
    if (v.empty()) throw UsageError("softmax: empty input");
    const double mx = *std::max_element(v.begin(), v.end());
    Vector out(v.size());
    double z = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        out[k] = std::exp(v[k] - mx);
        z += out[k];
    }
    for (double& x : out) x /= z;
    return out;
}

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) throw UsageError("log_sum_exp: empty input");
    const double mx = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(mx)) return mx;
    double z = 0.0;
    for (double x : v) z += std::exp(x - mx);
    return mx + std::log(z);
}

Matrix row_softmax(const Matrix& m, RowMask excluded) {
    if (!excluded.empty() && excluded.size() != m.rows()) {
        throw UsageError("row_softmax: mask has " + std::to_string(excluded.size()) +
                         " rows, matrix has " + std::to_string(m.rows()));
    }
    Matrix out(m.rows(), m.cols());
    std::vector<bool> keep(m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        std::fill(keep.begin(), keep.end(), true);
        if (!excluded.empty()) {
            for (std::size_t c : excluded[i]) {
                if (c < m.cols()) keep[c] = false;
            }
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m.cols(); ++j)
            if (keep[j]) mx = std::max(mx, m(i, j));
        if (mx == -std::numeric_limits<double>::infinity()) {
            throw UsageError("row_softmax: row " + std::to_string(i) + " is fully masked");
        }
        double z = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (!keep[j]) continue;
            out(i, j) = std::exp(m(i, j) - mx);
            z += out(i, j);
        }
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) /= z;
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw UsageError("matmul: inner dimension mismatch");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw UsageError("matmul_transposed: inner dimension mismatch");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
    return out;
}

Matrix transposed_matmul(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw UsageError("transposed_matmul: inner dimension mismatch");
    Matrix out(a.cols(), b.cols());
    for (std::size_t n = 0; n < a.rows(); ++n)
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double ani = a(n, i);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += ani * b(n, j);
        }
    return out;
}

std::size_t worker_count() {
    std::size_t requested = 0;
    if (const char* env = std::getenv("UNREMIX_THREADS")) {
        requested = static_cast<std::size_t>(std::strtoul(env, nullptr, 10));
    }
    if (requested == 0) requested = std::max(1u, std::thread::hardware_concurrency());
    return requested;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&body, begin, end] {
            for (std::size_t i = begin; i < end; ++i) body(i);
        });
    }
}

} // namespace unremix
