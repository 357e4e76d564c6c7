#include "unremix/encoder.hpp"

#include "unremix/errors.hpp"

#include <cmath>
#include <string>

namespace unremix {

namespace {

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename Layers, typename Last, typename Span>
std::vector<Span> collect(Layers& hidden, Last& last) {
    std::vector<Span> out;
    out.reserve(2 * hidden.size() + 1);
    for (auto& layer : hidden) {
        out.emplace_back(layer.weight.values());
        out.emplace_back(layer.bias);
    }
    out.emplace_back(last.values());
    return out;
}

} // namespace

std::vector<std::span<double>> EncoderParams::tensors() {
    return collect<decltype(hidden), Matrix, std::span<double>>(hidden, last);
}

std::vector<std::span<const double>> EncoderParams::tensors() const {
    return collect<const decltype(hidden), const Matrix, std::span<const double>>(hidden, last);
}

EncoderGrads EncoderGrads::zeros_like(const EncoderParams& params) {
    EncoderGrads g;
    for (const auto& layer : params.hidden) {
        g.hidden.push_back({Matrix(layer.weight.rows(), layer.weight.cols()),
                            Vector(layer.bias.size(), 0.0)});
    }
    g.last = Matrix(params.last.rows(), params.last.cols());
    return g;
}

std::vector<std::span<double>> EncoderGrads::tensors() {
    return collect<decltype(hidden), Matrix, std::span<double>>(hidden, last);
}

std::vector<std::span<const double>> EncoderGrads::tensors() const {
    return collect<const decltype(hidden), const Matrix, std::span<const double>>(hidden, last);
}

EncoderGrads& EncoderGrads::operator+=(const EncoderGrads& other) {
    auto mine = tensors();
    auto theirs = other.tensors();
    if (mine.size() != theirs.size()) throw UsageError("EncoderGrads: shape tree mismatch");
    for (std::size_t t = 0; t < mine.size(); ++t) {
        if (mine[t].size() != theirs[t].size()) throw UsageError("EncoderGrads: tensor mismatch");
        for (std::size_t k = 0; k < mine[t].size(); ++k) mine[t][k] += theirs[t][k];
    }
    return *this;
}

EncoderParams init_encoder(std::span<const std::size_t> dims, Rng& rng) {
    if (dims.size() < 2) throw UsageError("init_encoder: need at least input and output dims");
    for (std::size_t d : dims) {
        if (d == 0) throw UsageError("init_encoder: zero dimension");
    }
    EncoderParams p;
    p.dims.assign(dims.begin(), dims.end());
    for (std::size_t l = 0; l + 2 < dims.size(); ++l) {
        const std::size_t in = dims[l];
        const std::size_t out = dims[l + 1];
        const double scale = std::sqrt(2.0 / static_cast<double>(in));
        DenseLayer layer{Matrix(out, in), Vector(out, 0.0)};
        for (double& w : layer.weight.values()) w = rng.normal(0.0, scale);
        p.hidden.push_back(std::move(layer));
    }
    const std::size_t prev = dims[dims.size() - 2];
    p.last = Matrix(dims.back(), prev);
    const double scale = std::sqrt(1.0 / static_cast<double>(prev));
    for (double& w : p.last.values()) w = rng.normal(0.0, scale);
    return p;
}

EncoderParams init_encoder(std::initializer_list<std::size_t> dims, Rng& rng) {
    const std::vector<std::size_t> v(dims);
    return init_encoder(std::span<const std::size_t>(v), rng);
}

void validate(const EncoderParams& p) {
    if (p.dims.size() < 2) throw UsageError("encoder: dims too short");
    if (p.hidden.size() + 2 != p.dims.size()) throw UsageError("encoder: layer count mismatch");
    for (std::size_t l = 0; l < p.hidden.size(); ++l) {
        const auto& layer = p.hidden[l];
        if (layer.weight.rows() != p.dims[l + 1] || layer.weight.cols() != p.dims[l] ||
            layer.bias.size() != p.dims[l + 1]) {
            throw UsageError("encoder: hidden layer " + std::to_string(l) + " has shape " +
                             shape_str(layer.weight));
        }
    }
    if (p.last.rows() != p.output_dim() || p.last.cols() != p.penultimate_dim()) {
        throw UsageError("encoder: last layer has shape " + shape_str(p.last));
    }
}

ForwardTrace forward(const EncoderParams& params, const Matrix& x) {
    if (x.cols() != params.input_dim()) {
        throw UsageError("forward: input has " + std::to_string(x.cols()) + " columns, encoder expects " +
                         std::to_string(params.input_dim()));
    }
    ForwardTrace trace;
    trace.activations.push_back(x);
    for (const auto& layer : params.hidden) {
        Matrix pre = matmul_transposed(trace.activations.back(), layer.weight);
        for (std::size_t n = 0; n < pre.rows(); ++n)
            for (std::size_t k = 0; k < pre.cols(); ++k) pre(n, k) += layer.bias[k];
        Matrix act = pre;
        for (double& v : act.values()) v = v > 0.0 ? v : 0.0;
        trace.pre.push_back(std::move(pre));
        trace.activations.push_back(std::move(act));
    }
    trace.output = matmul_transposed(trace.penultimate(), params.last);
    trace.unit = normalize_rows(trace.output);
    return trace;
}

EncoderGrads backward(const EncoderParams& params, const ForwardTrace& trace,
                      const Matrix& d_output) {
    if (!d_output.same_shape(trace.output)) {
        throw UsageError("backward: gradient shape " + shape_str(d_output) + " vs output " +
                         shape_str(trace.output));
    }
    if (trace.pre.size() != params.hidden.size()) {
        throw UsageError("backward: trace does not match these parameters");
    }
    EncoderGrads g;
    g.hidden.resize(params.hidden.size());
    g.last = transposed_matmul(d_output, trace.penultimate());
    Matrix upstream = matmul(d_output, params.last);
    for (std::size_t l = params.hidden.size(); l-- > 0;) {
        const Matrix& pre = trace.pre[l];
        for (std::size_t k = 0; k < upstream.size(); ++k) {
            if (pre.values()[k] <= 0.0) upstream.values()[k] = 0.0;
        }
        g.hidden[l].weight = transposed_matmul(upstream, trace.activations[l]);
        g.hidden[l].bias.assign(upstream.cols(), 0.0);
        for (std::size_t n = 0; n < upstream.rows(); ++n)
            for (std::size_t k = 0; k < upstream.cols(); ++k) g.hidden[l].bias[k] += upstream(n, k);
        if (l > 0) upstream = matmul(upstream, params.hidden[l].weight);
    }
    return g;
}

} // namespace unremix
