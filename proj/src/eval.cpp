#include "unremix/eval.hpp"

#include "unremix/errors.hpp"
#include "unremix/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace unremix {

namespace {

std::size_t class_count_of(std::span<const int> labels) {
    int mx = -1;
    for (int y : labels) {
        if (y < 0) throw UsageError("labels must be non-negative");
        mx = std::max(mx, y);
    }
    return static_cast<std::size_t>(mx + 1);
}

} // namespace

ProbeResult linear_probe(const Matrix& embeddings, std::span<const int> labels, std::uint64_t split_seed,
                         const ProbeOptions& options) {
    const std::size_t n = embeddings.rows();
    const std::size_t d = embeddings.cols();
    if (labels.size() != n) throw UsageError("linear_probe: label count does not match embeddings");
    if (!embeddings.all_finite()) throw UsageError("linear_probe: non-finite embedding");
    const std::size_t classes = class_count_of(labels);
    {
        std::vector<int> distinct(labels.begin(), labels.end());
        std::sort(distinct.begin(), distinct.end());
        if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2) {
            throw UsageError("linear_probe: need at least two classes");
        }
    }
    if (n < 2) throw UsageError("linear_probe: need at least two points");

    Rng rng(split_seed);
    const auto perm = rng.permutation(n);
    std::size_t n_train = static_cast<std::size_t>(std::floor(options.train_fraction * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    const std::span<const std::size_t> train_idx(perm.data(), n_train);
    const std::span<const std::size_t> test_idx(perm.data() + n_train, n - n_train);

    Vector mean(d, 0.0);
    Vector scale(d, 0.0);
    for (std::size_t r : train_idx)
        for (std::size_t k = 0; k < d; ++k) mean[k] += embeddings(r, k);
    for (double& m : mean) m /= static_cast<double>(n_train);
    for (std::size_t r : train_idx)
        for (std::size_t k = 0; k < d; ++k) scale[k] += (embeddings(r, k) - mean[k]) * (embeddings(r, k) - mean[k]);
    for (double& s : scale) {
        s = std::sqrt(s / static_cast<double>(n_train));
        if (s < 1e-12) s = 1.0;
    }
    const auto features = [&](std::size_t r, Vector& out) {
        for (std::size_t k = 0; k < d; ++k) out[k] = (embeddings(r, k) - mean[k]) / scale[k];
    };

    Matrix w(classes, d);
    Vector b(classes, 0.0);
    Vector x(d);
    Vector logits(classes);
    for (std::size_t step = 0; step < options.steps; ++step) {
        Matrix gw(classes, d);
        Vector gb(classes, 0.0);
        for (std::size_t r : train_idx) {
            features(r, x);
            for (std::size_t c = 0; c < classes; ++c) logits[c] = dot(w.row(c), x) + b[c];
            const Vector p = softmax(logits);
            for (std::size_t c = 0; c < classes; ++c) {
                const double g = p[c] - (static_cast<std::size_t>(labels[r]) == c ? 1.0 : 0.0);
                gb[c] += g;
                for (std::size_t k = 0; k < d; ++k) gw(c, k) += g * x[k];
            }
        }
        const double inv = options.learning_rate / static_cast<double>(n_train);
        for (std::size_t k = 0; k < w.size(); ++k) w.values()[k] -= inv * gw.values()[k];
        for (std::size_t c = 0; c < classes; ++c) b[c] -= inv * gb[c];
    }

    ProbeResult result;
    result.split_seed = split_seed;
    result.per_class_accuracy.assign(classes, 0.0);
    std::vector<std::size_t> per_class_total(classes, 0);
    std::size_t correct = 0;
    for (std::size_t r : test_idx) {
        features(r, x);
        for (std::size_t c = 0; c < classes; ++c) logits[c] = dot(w.row(c), x) + b[c];
        const auto pred = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        const auto truth = static_cast<std::size_t>(labels[r]);
        ++per_class_total[truth];
        if (pred == truth) {
            ++correct;
            result.per_class_accuracy[truth] += 1.0;
        }
    }
    for (std::size_t c = 0; c < classes; ++c)
        if (per_class_total[c] > 0) result.per_class_accuracy[c] /= static_cast<double>(per_class_total[c]);
    result.accuracy = static_cast<double>(correct) / static_cast<double>(test_idx.size());
    return result;
}

double knn_accuracy(const Matrix& embeddings, std::span<const int> labels, std::size_t k_neighbors) {
    const std::size_t n = embeddings.rows();
    if (labels.size() != n) throw UsageError("knn_accuracy: label count does not match embeddings");
    if (k_neighbors < 1) throw UsageError("knn_accuracy: k must be >= 1");
    if (k_neighbors >= n) {
        throw UsageError("knn_accuracy: k = " + std::to_string(k_neighbors) + " needs more than " +
                         std::to_string(n) + " points");
    }
    const std::size_t classes = class_count_of(labels);
    const NormalizedRows unit = normalize_rows(embeddings);
    std::vector<char> hit(n, 0);
    parallel_for(n, [&](std::size_t i) {
        std::vector<std::pair<double, std::size_t>> cand;
        cand.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double sim = (unit.degenerate[i] || unit.degenerate[j]) ? 0.0 : dot(unit.unit.row(i), unit.unit.row(j));
            cand.emplace_back(sim, j);
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k_neighbors), cand.end(),
                          [](const auto& a, const auto& b) {
                              return a.first != b.first ? a.first > b.first : a.second < b.second;
                          });
        std::vector<std::size_t> votes(classes, 0);
        for (std::size_t q = 0; q < k_neighbors; ++q) ++votes[static_cast<std::size_t>(labels[cand[q].second])];
        const auto best = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
        hit[i] = best == static_cast<std::size_t>(labels[i]) ? 1 : 0;
    });
    return static_cast<double>(std::accumulate(hit.begin(), hit.end(), std::size_t{0})) / static_cast<double>(n);
}

namespace {

void check_topk(const ImportanceWeights& weights, std::span<const int> labels, std::size_t k) {
    const std::size_t n = weights.batch_size();
    if (labels.size() != n) throw UsageError("top-k metric: label count does not match batch size");
    if (k < 1 || k + 1 > n) throw UsageError("top-k metric: k must be in [1, N - 1]");
}

} // namespace

double false_negative_rate_at_k(const ImportanceWeights& weights, std::span<const int> labels, std::size_t k) {
    check_topk(weights, labels, k);
    const std::size_t n = weights.batch_size();
    std::size_t same = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ranked = ranked_negatives(weights, i);
        for (std::size_t q = 0; q < k; ++q)
            if (labels[ranked[q]] == labels[i]) ++same;
    }
    return static_cast<double>(same) / static_cast<double>(n * k);
}

double diversity_entropy_at_k(const ImportanceWeights& weights, std::span<const int> labels, std::size_t k) {
    check_topk(weights, labels, k);
    const std::size_t n = weights.batch_size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ranked = ranked_negatives(weights, i);
        std::map<int, std::size_t> hist;
        for (std::size_t q = 0; q < k; ++q) ++hist[labels[ranked[q]]];
        double h = 0.0;
        for (const auto& [label, count] : hist) {
            const double p = static_cast<double>(count) / static_cast<double>(k);
            h -= p * std::log(p);
        }
        total += h;
    }
    return total / static_cast<double>(n);
}

std::vector<NegativeAudit> audit_batch(const EncoderParams& params, const AggregationParams& agg,
                                       const BatchPair& batch, const TrainConfig& cfg, std::size_t k) {
    const std::size_t n = batch.size();
    if (k < 1 || k + 1 > n) {
        throw UsageError("audit_batch: top-k = " + std::to_string(k) + " must be in [1, N - 1] with N = " +
                         std::to_string(n));
    }
    const ForwardTrace anchor = forward(params, batch.anchor_view);
    const ForwardTrace view = forward(params, batch.second_view);
    const ComponentScores raw = component_scores(params, anchor, view, cfg.gradient_loss, cfg.tau);
    const ComponentScores normalized = normalize_components(raw);
    const Weighting weighting = compute_weights(params, agg, anchor, view, cfg);
    const std::vector<int>* labels = batch.has_labels() ? &batch.labels() : nullptr;
    const auto lambda = cfg.sampler == Sampler::UnReMix ? agg.lambda() : std::array<double, 3>{0.0, 0.0, 0.0};

    std::vector<std::size_t> pseudo(n);
    for (std::size_t j = 0; j < n; ++j)
        pseudo[j] = pseudo_label(pseudo_posterior(anchor.unit.unit, view.unit.unit, j));

    std::vector<NegativeAudit> audits;
    audits.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        NegativeAudit a;
        a.anchor_index = batch.source_indices[i];
        a.anchor_label = labels ? (*labels)[i] : -1;
        a.lambda = lambda;
        const auto ranked = ranked_negatives(weighting.weights, i);
        for (std::size_t q = 0; q < k; ++q) {
            const std::size_t j = ranked[q];
            AuditEntry e;
            e.negative_index = batch.source_indices[j];
            e.weight = weighting.weights.w(i, j);
            e.raw = {raw.u(i, j), raw.s(i, j), raw.r(i, j)};
            e.normalized = {normalized.u(i, j), normalized.s(i, j), normalized.r(i, j)};
            e.pseudo_label = pseudo[j];
            e.true_label = labels ? (*labels)[j] : -1;
            a.ranked.push_back(e);
        }
        audits.push_back(std::move(a));
    }
    return audits;
}

std::vector<AuditRow> audit_rows(std::span<const NegativeAudit> audits) {
    std::vector<AuditRow> rows;
    for (const auto& a : audits) {
        for (const auto& e : a.ranked) {
            rows.push_back({a.anchor_index, e.negative_index, e.raw, e.normalized, a.lambda, e.weight,
                            e.pseudo_label, e.true_label});
        }
    }
    return rows;
}

namespace {

constexpr const char* kAuditHeader =
    "anchor_index,negative_index,u_raw,s_raw,r_raw,u_norm,s_norm,r_norm,lambda_u,lambda_s,lambda_r,weight,"
    "pseudo_label,negative_true_label";

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void write_audit_csv(const std::filesystem::path& path, std::span<const NegativeAudit> audits) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write audit " + path.string());
    out << kAuditHeader << '\n';
    for (const auto& r : audit_rows(audits)) {
        out << r.anchor_index << ',' << r.negative_index;
        for (double v : r.raw) out << ',' << fmt_double(v);
        for (double v : r.normalized) out << ',' << fmt_double(v);
        for (double v : r.lambda) out << ',' << fmt_double(v);
        out << ',' << fmt_double(r.weight) << ',' << r.pseudo_label << ',' << r.negative_true_label << '\n';
    }
}

std::vector<AuditRow> read_audit_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open audit " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kAuditHeader) throw ParseError(path.string() + ":1: unexpected header");
    std::vector<AuditRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 14) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 14 columns");
        }
        try {
            AuditRow r;
            r.anchor_index = std::stoul(cells[0]);
            r.negative_index = std::stoul(cells[1]);
            for (std::size_t m = 0; m < 3; ++m) {
                r.raw[m] = std::stod(cells[2 + m]);
                r.normalized[m] = std::stod(cells[5 + m]);
                r.lambda[m] = std::stod(cells[8 + m]);
            }
            r.weight = std::stod(cells[11]);
            r.pseudo_label = std::stoul(cells[12]);
            r.negative_true_label = std::stoi(cells[13]);
            rows.push_back(r);
        } catch (const std::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

Matrix embed(const EncoderParams& params, const Matrix& x) { return forward(params, x).penultimate(); }

BatchPair evaluation_batch(const Dataset& data, const TrainConfig& cfg) {
    Rng rng = Rng(cfg.seed).split(streams::kEval);
    const auto batches = make_batches(rng, data.size(), std::min(cfg.batch_size, data.size()));
    if (batches.empty()) throw UsageError("evaluation_batch: dataset too small");
    return augment_pair(rng, data, batches.front(), cfg.augment);
}

EvalSummary evaluate(const EncoderParams& params, const AggregationParams& agg, const Dataset& data,
                     const TrainConfig& cfg) {
    EvalSummary s;
    if (!data.has_labels()) return s;
    const auto& labels = data.labels();
    const Matrix emb = embed(params, data.features());
    s.probe_acc = linear_probe(emb, labels, cfg.seed).accuracy;
    if (cfg.knn_k < data.size()) s.knn_acc = knn_accuracy(emb, labels, cfg.knn_k);

    const BatchPair batch = evaluation_batch(data, cfg);
    if (cfg.eval_topk + 1 <= batch.size()) {
        const ForwardTrace anchor = forward(params, batch.anchor_view);
        const ForwardTrace view = forward(params, batch.second_view);
        const Weighting weighting = compute_weights(params, agg, anchor, view, cfg);
        s.fnr_at_k = false_negative_rate_at_k(weighting.weights, batch.labels(), cfg.eval_topk);
        s.diversity_entropy = diversity_entropy_at_k(weighting.weights, batch.labels(), cfg.eval_topk);
    }
    return s;
}

std::vector<SweepRow> sweep_classes(const TrainConfig& cfg, const Dataset& data, std::span<const int> k_values,
                                    std::span<const std::uint64_t> seeds) {
    if (!data.has_labels()) throw UsageError("sweep_classes: dataset has no labels");
    for (int k : k_values) {
        if (k < 1 || k > data.class_count()) {
            throw UsageError("sweep_classes: k = " + std::to_string(k) + " outside [1, " +
                             std::to_string(data.class_count()) + "]");
        }
    }
    std::vector<SweepRow> rows;
    for (std::uint64_t seed : seeds) {
        for (int k : k_values) {
            TrainConfig c = cfg;
            c.seed = seed;
            c.restrict_negatives_k = k;
            c.eval_every = 0;
            const TrainResult result = train(c, data);
            const Matrix emb = embed(result.state.params, data.features());
            rows.push_back({k, knn_accuracy(emb, data.labels(), c.knn_k), seed});
        }
    }
    return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write sweep " + path.string());
    out << "k,knn_accuracy,seed\n";
    for (const auto& r : rows) out << r.k << ',' << fmt_double(r.knn_accuracy) << ',' << r.seed << '\n';
}

namespace {

Vector average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    Vector ranks(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t q = i; q <= j; ++q) ranks[idx[q]] = r;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw UsageError("spearman: need two equal-length series");
    const Vector rx = average_ranks(x);
    const Vector ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace unremix
