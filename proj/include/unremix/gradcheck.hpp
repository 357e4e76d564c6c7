#pragma once

#include "unremix/scoring.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace unremix {

struct GradcheckOptions {
    std::size_t seeds = 100;
    std::uint64_t first_seed = 0;
    /// Multiplies every analytic gradient before comparison. Anything other
    /// than 1 simulates a broken implementation.
    double fault_scale = 1.0;
};

struct GradcheckReport {
    std::string suite;
    double tolerance = 0.0;
    double max_rel_error = 0.0;
    std::uint64_t worst_seed = 0;
    std::size_t instances = 0;
    bool passed = false;
};

/// Elementwise |a - b| / max(|a|, |b|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Last-layer gradient factors a h^T against central differences of the
/// pseudo-label loss of each sample w.r.t. every last-layer weight.
GradcheckReport check_gradient_factors(GradientLoss loss, const GradcheckOptions& options);

/// Weighted-loss gradient w.r.t. the raw (pre-normalization) embeddings of
/// both views, weights held fixed.
GradcheckReport check_loss_embeddings(const GradcheckOptions& options);

/// Weighted-loss gradient w.r.t. the aggregation logits, with the weights
/// recomputed from the logits.
GradcheckReport check_loss_logits(const GradcheckOptions& options);

/// All suites in a fixed order.
std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions& options);

} // namespace unremix
