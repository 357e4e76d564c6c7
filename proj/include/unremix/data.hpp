#pragma once

#include "unremix/numerics.hpp"
#include "unremix/rng.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace unremix {

/// Counts label reads made while training code is running. Labels exist for
/// evaluation only; the training step runs inside a TrainingScope and any
/// label access there is recorded as a violation.
namespace label_firewall {

class TrainingScope {
public:
    TrainingScope();
    ~TrainingScope();
    TrainingScope(const TrainingScope&) = delete;
    TrainingScope& operator=(const TrainingScope&) = delete;

private:
    bool previous_;
};

bool active() noexcept;
std::size_t violations() noexcept;
void reset() noexcept;
void note_read() noexcept;

} // namespace label_firewall

class BatchPair;
struct AugmentConfig;

class Dataset {
public:
    Dataset() = default;
    explicit Dataset(Matrix x);
    Dataset(Matrix x, std::vector<int> labels, int class_count);

    const Matrix& features() const noexcept { return x_; }
    std::size_t size() const noexcept { return x_.rows(); }
    std::size_t dim() const noexcept { return x_.cols(); }
    bool has_labels() const noexcept { return labels_.has_value(); }
    int class_count() const noexcept { return class_count_; }

    /// Evaluation-only access; recorded by the label firewall.
    const std::vector<int>& labels() const;

    Dataset subset(std::span<const std::size_t> rows) const;

private:
    Matrix x_;
    std::optional<std::vector<int>> labels_;
    int class_count_ = 0;

    friend BatchPair augment_pair(Rng& rng, const Dataset& data, std::span<const std::size_t> rows,
                                  const AugmentConfig& cfg);
};

struct AugmentConfig {
    double noise_sigma = 0.0;
    double dropout_prob = 0.0;
    double scale_jitter = 0.0;
};

void validate(const AugmentConfig& cfg);

/// Two augmented views of the same N source rows.
class BatchPair {
public:
    Matrix anchor_view;
    Matrix second_view;
    std::vector<std::size_t> source_indices;

    std::size_t size() const noexcept { return source_indices.size(); }
    bool has_labels() const noexcept { return labels_.has_value(); }
    /// Evaluation-only access; recorded by the label firewall.
    const std::vector<int>& labels() const;
    void set_labels(std::vector<int> labels) { labels_ = std::move(labels); }

private:
    std::optional<std::vector<int>> labels_;
};

/// Class means on a circle in the first two coordinates (a line when
/// d_in == 1) with adjacent means `separation` apart; unit-variance isotropic
/// noise around each mean. Rows are grouped by class.
Dataset generate_gaussian_mixture(Rng& rng, int n_classes, std::size_t n_per_class, std::size_t d_in,
                                  double separation);

/// Reads a CSV with a header row. A column named `label` (optional) holds
/// non-negative integer classes; all other columns are features.
Dataset load_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const Dataset& data);

/// Each view gets additive N(0, sigma^2) noise, coordinate dropout with
/// probability p and a per-row scale factor uniform in [1 - j, 1 + j].
/// Labels (if any) ride along without being read.
BatchPair augment_pair(Rng& rng, const Dataset& data, std::span<const std::size_t> rows,
                       const AugmentConfig& cfg);

/// Partitions a fresh permutation of [0, n) into batches of batch_size. A
/// trailing batch smaller than 3 rows is dropped.
std::vector<std::vector<std::size_t>> make_batches(Rng& rng, std::size_t n, std::size_t batch_size);

/// `count` distinct row indices drawn uniformly from rows labelled 0..k-1.
std::vector<std::size_t> restricted_class_sampler(Rng& rng, const Dataset& data, int k, std::size_t count);

} // namespace unremix
