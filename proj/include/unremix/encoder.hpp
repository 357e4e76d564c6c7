#pragma once

#include "unremix/numerics.hpp"
#include "unremix/rng.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace unremix {

/// Fully connected ReLU layer; weight is (out x in).
struct DenseLayer {
    Matrix weight;
    Vector bias;

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// MLP encoder: ReLU hidden layers followed by a bias-free linear projection.
///
/// dims = (d_in, hidden..., d_prev, d). The last layer maps the penultimate
/// activations H (width d_prev) to the embedding Z = H W^T (width d). With
/// dims of length 2 there are no hidden layers and H is the input itself.
struct EncoderParams {
    std::vector<std::size_t> dims;
    std::vector<DenseLayer> hidden;
    Matrix last;

    std::size_t input_dim() const { return dims.front(); }
    std::size_t output_dim() const { return dims.back(); }
    std::size_t penultimate_dim() const { return dims[dims.size() - 2]; }

    /// Weight and bias storage in a fixed order (layer by layer, weight before
    /// bias, last layer at the end). Optimizer state is indexed the same way.
    std::vector<std::span<double>> tensors();
    std::vector<std::span<const double>> tensors() const;

    friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

/// Gradients with the same shape tree as EncoderParams.
struct EncoderGrads {
    std::vector<DenseLayer> hidden;
    Matrix last;

    static EncoderGrads zeros_like(const EncoderParams& params);
    std::vector<std::span<double>> tensors();
    std::vector<std::span<const double>> tensors() const;
    EncoderGrads& operator+=(const EncoderGrads& other);
};

struct ForwardTrace {
    /// Pre-activations of each hidden layer.
    std::vector<Matrix> pre;
    /// activations[0] is the input; activations.back() is the penultimate H.
    std::vector<Matrix> activations;
    /// Z = H W^T.
    Matrix output;
    /// Row-normalized Z with degenerate flags.
    NormalizedRows unit;

    const Matrix& input() const { return activations.front(); }
    const Matrix& penultimate() const { return activations.back(); }
    std::size_t batch_size() const { return output.rows(); }
};

/// He-initialized hidden layers (normal, std sqrt(2 / fan_in), zero bias); the
/// last layer uses std sqrt(1 / fan_in).
EncoderParams init_encoder(std::span<const std::size_t> dims, Rng& rng);
EncoderParams init_encoder(std::initializer_list<std::size_t> dims, Rng& rng);

/// Checks the shape chain; throws UsageError on inconsistency.
void validate(const EncoderParams& params);

ForwardTrace forward(const EncoderParams& params, const Matrix& x);

EncoderGrads backward(const EncoderParams& params, const ForwardTrace& trace,
                      const Matrix& d_output);

} // namespace unremix
