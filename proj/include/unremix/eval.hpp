#pragma once

#include "unremix/config.hpp"
#include "unremix/data.hpp"
#include "unremix/encoder.hpp"
#include "unremix/scoring.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace unremix {

struct ProbeOptions {
    std::size_t steps = 500;
    double learning_rate = 0.1;
    double train_fraction = 0.8;
};

struct ProbeResult {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::uint64_t split_seed = 0;
};

/// Multinomial logistic regression on frozen embeddings, trained by full-batch
/// gradient descent on a seeded 80/20 split; reports held-out accuracy.
/// Features are standardized with training-split statistics.
ProbeResult linear_probe(const Matrix& embeddings, std::span<const int> labels, std::uint64_t split_seed,
                         const ProbeOptions& options = {});

/// Leave-one-out k-nearest-neighbour accuracy under cosine similarity.
/// Neighbour ties go to the smaller index, vote ties to the smaller label.
double knn_accuracy(const Matrix& embeddings, std::span<const int> labels, std::size_t k_neighbors);

/// Fraction of top-k weighted negatives that share their anchor's label.
double false_negative_rate_at_k(const ImportanceWeights& weights, std::span<const int> labels, std::size_t k);

/// Mean over anchors of the Shannon entropy (nats) of the label histogram of
/// the top-k weighted negatives.
double diversity_entropy_at_k(const ImportanceWeights& weights, std::span<const int> labels, std::size_t k);

struct AuditEntry {
    std::size_t negative_index = 0;
    double weight = 0.0;
    std::array<double, 3> raw{};
    std::array<double, 3> normalized{};
    std::size_t pseudo_label = 0;
    int true_label = -1;
};

struct NegativeAudit {
    std::size_t anchor_index = 0;
    int anchor_label = -1;
    std::array<double, 3> lambda{};
    std::vector<AuditEntry> ranked;
};

/// Top-k negatives per anchor under the configured sampler, with raw and
/// normalized u, s, r. Indices refer to dataset rows. Components are always computed so uniform and HCL
/// rankings can be inspected too.
std::vector<NegativeAudit> audit_batch(const EncoderParams& params, const AggregationParams& agg,
                                       const BatchPair& batch, const TrainConfig& cfg, std::size_t k);

/// One flattened CSV line of an audit.
struct AuditRow {
    std::size_t anchor_index = 0;
    std::size_t negative_index = 0;
    std::array<double, 3> raw{};
    std::array<double, 3> normalized{};
    std::array<double, 3> lambda{};
    double weight = 0.0;
    std::size_t pseudo_label = 0;
    int negative_true_label = -1;

    friend bool operator==(const AuditRow&, const AuditRow&) = default;
};

std::vector<AuditRow> audit_rows(std::span<const NegativeAudit> audits);
void write_audit_csv(const std::filesystem::path& path, std::span<const NegativeAudit> audits);
std::vector<AuditRow> read_audit_csv(const std::filesystem::path& path);

/// Frozen features for the probe and KNN: the activations feeding the last
/// (projection) layer.
Matrix embed(const EncoderParams& params, const Matrix& x);

struct EvalSummary {
    std::optional<double> probe_acc;
    std::optional<double> knn_acc;
    std::optional<double> fnr_at_k;
    std::optional<double> diversity_entropy;
};

/// The fixed evaluation batch of a run: drawn from the eval RNG stream so it
/// is identical at every evaluation.
BatchPair evaluation_batch(const Dataset& data, const TrainConfig& cfg);

/// Probe and KNN on the whole dataset, negative-quality metrics on the
/// evaluation batch. Empty when the dataset has no labels.
EvalSummary evaluate(const EncoderParams& params, const AggregationParams& agg, const Dataset& data,
                     const TrainConfig& cfg);

struct SweepRow {
    int k = 0;
    double knn_accuracy = 0.0;
    std::uint64_t seed = 0;
};

/// Trains once per (seed, k) with negatives restricted to classes [0, k) and
/// reports final KNN accuracy. Rows are ordered seed-major.
std::vector<SweepRow> sweep_classes(const TrainConfig& cfg, const Dataset& data, std::span<const int> k_values,
                                    std::span<const std::uint64_t> seeds);

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

} // namespace unremix
