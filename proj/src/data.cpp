#include "unremix/data.hpp"

#include "unremix/errors.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

namespace unremix {

namespace label_firewall {

namespace {
thread_local bool g_active = false;
std::atomic<std::size_t> g_violations{0};
} // namespace

TrainingScope::TrainingScope() : previous_(g_active) { g_active = true; }
TrainingScope::~TrainingScope() { g_active = previous_; }

bool active() noexcept { return g_active; }
std::size_t violations() noexcept { return g_violations.load(); }
void reset() noexcept { g_violations.store(0); }
void note_read() noexcept {
    if (g_active) g_violations.fetch_add(1);
}

} // namespace label_firewall

Dataset::Dataset(Matrix x) : x_(std::move(x)) {
    if (x_.rows() < 1) throw UsageError("Dataset: need at least one row");
    if (!x_.all_finite()) throw UsageError("Dataset: non-finite feature value");
}

Dataset::Dataset(Matrix x, std::vector<int> labels, int class_count) : Dataset(std::move(x)) {
    if (labels.size() != x_.rows()) throw UsageError("Dataset: label count does not match row count");
    for (int y : labels) {
        if (y < 0 || y >= class_count) {
            throw UsageError("Dataset: label " + std::to_string(y) + " outside [0, " +
                             std::to_string(class_count) + ")");
        }
    }
    labels_ = std::move(labels);
    class_count_ = class_count;
}

const std::vector<int>& Dataset::labels() const {
    if (!labels_) throw UsageError("Dataset: no labels present");
    label_firewall::note_read();
    return *labels_;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    Matrix x(rows.size(), x_.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= x_.rows()) throw UsageError("Dataset::subset: row index out of range");
        std::copy(x_.row(rows[r]).begin(), x_.row(rows[r]).end(), x.row(r).begin());
    }
    if (!labels_) return Dataset(std::move(x));
    std::vector<int> y;
    y.reserve(rows.size());
    for (std::size_t r : rows) y.push_back((*labels_)[r]);
    return Dataset(std::move(x), std::move(y), class_count_);
}

const std::vector<int>& BatchPair::labels() const {
    if (!labels_) throw UsageError("BatchPair: no labels present");
    label_firewall::note_read();
    return *labels_;
}

void validate(const AugmentConfig& cfg) {
    if (!(cfg.noise_sigma >= 0.0)) throw UsageError("augment: noise_sigma must be >= 0");
    if (!(cfg.dropout_prob >= 0.0 && cfg.dropout_prob < 1.0)) {
        throw UsageError("augment: dropout_prob must be in [0, 1)");
    }
    if (!(cfg.scale_jitter >= 0.0)) throw UsageError("augment: scale_jitter must be >= 0");
}

Dataset generate_gaussian_mixture(Rng& rng, int n_classes, std::size_t n_per_class, std::size_t d_in,
                                  double separation) {
    if (n_classes < 2) throw UsageError("gaussian mixture: need at least 2 classes");
    if (n_per_class < 1 || d_in < 1) throw UsageError("gaussian mixture: sizes must be positive");
    if (!(separation > 0.0)) throw UsageError("gaussian mixture: separation must be positive");

    const auto k = static_cast<std::size_t>(n_classes);
    Matrix means(k, d_in);
    if (d_in == 1) {
        for (std::size_t c = 0; c < k; ++c)
            means(c, 0) = separation * (static_cast<double>(c) - 0.5 * static_cast<double>(k - 1));
    } else {
        const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(k)));
        for (std::size_t c = 0; c < k; ++c) {
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
            means(c, 0) = radius * std::cos(angle);
            means(c, 1) = radius * std::sin(angle);
        }
    }

    Matrix x(k * n_per_class, d_in);
    std::vector<int> labels(k * n_per_class);
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t s = 0; s < n_per_class; ++s) {
            const std::size_t row = c * n_per_class + s;
            labels[row] = static_cast<int>(c);
            for (std::size_t d = 0; d < d_in; ++d) x(row, d) = means(c, d) + rng.normal();
        }
    return Dataset(std::move(x), std::move(labels), n_classes);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

} // namespace

Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ":1: empty file, expected a header row");
    const auto header = split_csv_line(line);
    std::ptrdiff_t label_col = -1;
    for (std::size_t c = 0; c < header.size(); ++c)
        if (header[c] == "label") label_col = static_cast<std::ptrdiff_t>(c);
    const std::size_t n_features = header.size() - (label_col >= 0 ? 1 : 0);
    if (n_features == 0) throw ParseError(path.string() + ":1: no feature columns");

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t line_no = 1;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv_line(line);
        const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
        if (cells.size() != header.size()) {
            throw ParseError(where + "expected " + std::to_string(header.size()) + " columns, got " +
                             std::to_string(cells.size()));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const std::string& cell = cells[c];
            const char* first = cell.data();
            const char* last = cell.data() + cell.size();
            if (static_cast<std::ptrdiff_t>(c) == label_col) {
                int y = 0;
                auto [ptr, ec] = std::from_chars(first, last, y);
                if (ec != std::errc() || ptr != last || y < 0) {
                    throw ParseError(where + "label '" + cell + "' is not a non-negative integer");
                }
                labels.push_back(y);
            } else {
                double v = 0.0;
                auto [ptr, ec] = std::from_chars(first, last, v);
                if (ec != std::errc() || ptr != last || cell.empty() || !std::isfinite(v)) {
                    throw ParseError(where + "column '" + header[c] + "' value '" + cell +
                                     "' is not a finite number");
                }
                values.push_back(v);
            }
        }
        ++rows;
    }
    if (rows == 0) throw ParseError(path.string() + ": no data rows");
    Matrix x(rows, n_features, std::move(values));
    if (label_col < 0) return Dataset(std::move(x));
    const int class_count = *std::max_element(labels.begin(), labels.end()) + 1;
    return Dataset(std::move(x), std::move(labels), class_count);
}

void write_csv(const std::filesystem::path& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset " + path.string());
    out.precision(17);
    for (std::size_t c = 0; c < data.dim(); ++c) out << (c ? "," : "") << 'f' << c;
    if (data.has_labels()) out << ",label";
    out << '\n';
    const std::vector<int>* labels = data.has_labels() ? &data.labels() : nullptr;
    for (std::size_t r = 0; r < data.size(); ++r) {
        for (std::size_t c = 0; c < data.dim(); ++c) out << (c ? "," : "") << data.features()(r, c);
        if (labels) out << ',' << (*labels)[r];
        out << '\n';
    }
}

namespace {

Matrix augment_view(Rng& rng, const Matrix& src, std::span<const std::size_t> rows, const AugmentConfig& cfg) {
    Matrix view(rows.size(), src.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto out = view.row(r);
        const auto in = src.row(rows[r]);
        const double scale = cfg.scale_jitter > 0.0 ? rng.uniform(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter) : 1.0;
        for (std::size_t c = 0; c < out.size(); ++c) {
            double v = in[c] * scale;
            if (cfg.noise_sigma > 0.0) v += rng.normal(0.0, cfg.noise_sigma);
            if (cfg.dropout_prob > 0.0 && rng.bernoulli(cfg.dropout_prob)) v = 0.0;
            out[c] = v;
        }
    }
    return view;
}

} // namespace

BatchPair augment_pair(Rng& rng, const Dataset& data, std::span<const std::size_t> rows,
                       const AugmentConfig& cfg) {
    validate(cfg);
    if (rows.size() < 2) throw UsageError("augment_pair: need at least 2 rows");
    for (std::size_t r : rows)
        if (r >= data.size()) throw UsageError("augment_pair: row index out of range");
    BatchPair batch;
    batch.source_indices.assign(rows.begin(), rows.end());
    batch.anchor_view = augment_view(rng, data.x_, rows, cfg);
    batch.second_view = augment_view(rng, data.x_, rows, cfg);
    if (data.labels_) {
        std::vector<int> y;
        y.reserve(rows.size());
        for (std::size_t r : rows) y.push_back((*data.labels_)[r]);
        batch.set_labels(std::move(y));
    }
    return batch;
}

std::vector<std::vector<std::size_t>> make_batches(Rng& rng, std::size_t n, std::size_t batch_size) {
    if (batch_size < 2) throw UsageError("make_batches: batch size must be >= 2");
    const auto perm = rng.permutation(n);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
        const std::size_t end = std::min(n, begin + batch_size);
        if (end - begin < 3) break;
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

std::vector<std::size_t> restricted_class_sampler(Rng& rng, const Dataset& data, int k, std::size_t count) {
    if (!data.has_labels()) throw UsageError("restricted_class_sampler: dataset has no labels");
    if (k < 1 || k > data.class_count()) {
        throw UsageError("restricted_class_sampler: k must be in [1, " + std::to_string(data.class_count()) + "]");
    }
    const auto& labels = data.labels();
    std::vector<std::size_t> pool;
    for (std::size_t r = 0; r < labels.size(); ++r)
        if (labels[r] < k) pool.push_back(r);
    if (count > pool.size()) {
        throw UsageError("restricted_class_sampler: asked for " + std::to_string(count) + " rows, only " +
                         std::to_string(pool.size()) + " carry labels below " + std::to_string(k));
    }
    for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    pool.resize(count);
    return pool;
}

} // namespace unremix
