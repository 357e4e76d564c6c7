#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace unremix {

using Vector = std::vector<double>;

/// Threshold below which a vector is treated as having zero norm.
inline constexpr double kNormEpsilon = 1e-12;

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {values_.data() + r * cols_, cols_};
    }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    bool all_finite() const noexcept;
    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

struct NormalizedVector {
    Vector values;
    bool degenerate = false;
};

struct NormalizedRows {
    Matrix unit;
    std::vector<bool> degenerate;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

/// Unit-normalizes `v`. Vectors with norm <= kNormEpsilon come back unchanged
/// and flagged.
NormalizedVector l2_normalize(std::span<const double> v);

/// Cosine similarity; zero when either side is degenerate.
double cosine_sim(std::span<const double> a, std::span<const double> b);

/// result(i, j) = cosine_sim(A.row(i), B.row(j)).
Matrix pairwise_cosine(const Matrix& a, const Matrix& b);

/// Row-wise l2_normalize.
NormalizedRows normalize_rows(const Matrix& m);

/// Pulls a gradient w.r.t. unit rows back to the raw rows:
/// dz = (g - (g.u) u) / |z|. Degenerate rows receive zero gradient.
Matrix normalize_rows_backward(const Matrix& raw, const NormalizedRows& normalized,
                               const Matrix& d_unit);

/// Per-row excluded column indices for row_softmax. An empty span means no mask.
using RowMask = std::span<const std::vector<std::size_t>>;

/// Numerically stable softmax of each row. Masked entries are exactly zero.
Matrix row_softmax(const Matrix& m, RowMask excluded = {});

/// Stable softmax of a single vector.
Vector softmax(std::span<const double> v);

double log_sum_exp(std::span<const double> v);

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix transposed_matmul(const Matrix& a, const Matrix& b);

/// Worker count from UNREMIX_THREADS (0 or unset = hardware concurrency).
std::size_t worker_count();

/// Runs body(i) for i in [0, n). Work is split into contiguous static chunks,
/// so any body that writes only to slot i gives schedule-independent results.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace unremix
