#include "unremix/trainer.hpp"

#include "unremix/errors.hpp"
#include "unremix/eval.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace unremix {

using nlohmann::json;

TrainState init_state(const TrainConfig& cfg) {
    Rng rng = Rng(cfg.seed).split(streams::kInit);
    TrainState s;
    s.params = init_encoder(std::span<const std::size_t>(cfg.encoder_dims), rng);
    s.encoder_optimizer = OptimizerState::create(cfg.optimizer);
    s.aggregation = cfg.initial_aggregation();
    s.aggregation_optimizer = OptimizerState::create(cfg.optimizer);
    return s;
}

Weighting compute_weights(const EncoderParams& params, const AggregationParams& agg,
                          const ForwardTrace& anchor, const ForwardTrace& view, const TrainConfig& cfg) {
    const std::size_t n = anchor.batch_size();
    switch (cfg.sampler) {
    case Sampler::Uniform:
        return {uniform_weights(n), std::nullopt, std::nullopt};
    case Sampler::Hcl: {
        const Matrix s = similarity_scores(anchor, view);
        return {hcl_weights(s, HclConfig{cfg.hcl_beta}, cfg.weight_mode), std::nullopt, std::nullopt};
    }
    case Sampler::UnReMix: {
        ComponentScores raw = component_scores(params, anchor, view, cfg.gradient_loss, cfg.tau);
        ComponentScores normalized = normalize_components(raw);
        ImportanceWeights w = aggregate_importance(normalized, agg, cfg.weight_mode);
        return {std::move(w), std::move(raw), std::move(normalized)};
    }
    }
    throw UsageError("compute_weights: unknown sampler");
}

namespace {

void check_finite(double loss, long step) {
    if (!std::isfinite(loss)) {
        throw DivergenceError("loss became non-finite at step " + std::to_string(step), step);
    }
}

void update_aggregation(TrainState& state, const std::array<double, 3>& d_logits, const TrainConfig& cfg) {
    if (cfg.sampler != Sampler::UnReMix || state.aggregation.mode != AggregationMode::Learned) return;
    std::array<std::span<double>, 1> p{std::span<double>(state.aggregation.logits)};
    std::array<std::span<const double>, 1> g{std::span<const double>(d_logits)};
    apply_update(p, g, state.aggregation_optimizer, cfg.lambda_lr());
}

} // namespace

StepMetrics train_step(TrainState& state, const BatchPair& batch, const TrainConfig& cfg) {
    label_firewall::TrainingScope scope;
    const ForwardTrace anchor = forward(state.params, batch.anchor_view);
    const ForwardTrace view = forward(state.params, batch.second_view);

    const Weighting weighting = compute_weights(state.params, state.aggregation, anchor, view, cfg);
    const LossOutput out = loss_gradients(anchor.unit.unit, view.unit.unit, weighting.weights, cfg.loss_config(),
                                          weighting.normalized ? &*weighting.normalized : nullptr,
                                          &state.aggregation);
    check_finite(out.value, state.step + 1);

    const Matrix d_anchor = normalize_rows_backward(anchor.output, anchor.unit, out.d_anchor);
    const Matrix d_view = normalize_rows_backward(view.output, view.unit, out.d_view);
    EncoderGrads grads = backward(state.params, anchor, d_anchor);
    grads += backward(state.params, view, d_view);
    apply_update(state.params, grads, state.encoder_optimizer, cfg.learning_rate);
    update_aggregation(state, out.d_logits, cfg);
    ++state.step;
    return {out.value, state.aggregation.lambda(), out.d_logits};
}

StepMetrics train_step_restricted(TrainState& state, const BatchPair& batch, const Matrix& negatives,
                                  const TrainConfig& cfg) {
    label_firewall::TrainingScope scope;
    const std::size_t n = batch.size();
    const std::size_t m = negatives.rows();
    if (m < 1) throw UsageError("train_step_restricted: need at least one negative");
    const ForwardTrace anchor = forward(state.params, batch.anchor_view);
    const ForwardTrace view = forward(state.params, batch.second_view);
    const ForwardTrace neg = forward(state.params, negatives);

    Matrix candidates(n + m, view.unit.unit.cols());
    for (std::size_t i = 0; i < n; ++i)
        std::copy(view.unit.unit.row(i).begin(), view.unit.unit.row(i).end(), candidates.row(i).begin());
    for (std::size_t j = 0; j < m; ++j)
        std::copy(neg.unit.unit.row(j).begin(), neg.unit.unit.row(j).end(), candidates.row(n + j).begin());
    // Column i is anchor i's positive; other in-batch columns are excluded.
    Matrix weights(n, n + m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = n; j < n + m; ++j) weights(i, j) = 1.0;
    std::vector<std::size_t> positives(n);
    std::iota(positives.begin(), positives.end(), std::size_t{0});

    const LossOutput out = contrastive_loss(anchor.unit.unit, candidates, positives, weights, cfg.tau);
    check_finite(out.value, state.step + 1);

    Matrix d_view_unit(n, candidates.cols());
    Matrix d_neg_unit(m, candidates.cols());
    for (std::size_t i = 0; i < n; ++i)
        std::copy(out.d_view.row(i).begin(), out.d_view.row(i).end(), d_view_unit.row(i).begin());
    for (std::size_t j = 0; j < m; ++j)
        std::copy(out.d_view.row(n + j).begin(), out.d_view.row(n + j).end(), d_neg_unit.row(j).begin());

    EncoderGrads grads =
        backward(state.params, anchor, normalize_rows_backward(anchor.output, anchor.unit, out.d_anchor));
    grads += backward(state.params, view, normalize_rows_backward(view.output, view.unit, d_view_unit));
    grads += backward(state.params, neg, normalize_rows_backward(neg.output, neg.unit, d_neg_unit));
    apply_update(state.params, grads, state.encoder_optimizer, cfg.learning_rate);
    ++state.step;
    return {out.value, state.aggregation.lambda(), {}};
}

json to_json(const MetricsRecord& r) {
    const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"step", r.step},
            {"epoch", r.epoch},
            {"loss", r.loss},
            {"lambda_u", r.lambda[0]},
            {"lambda_s", r.lambda[1]},
            {"lambda_r", r.lambda[2]},
            {"probe_acc", opt(r.probe_acc)},
            {"knn_acc", opt(r.knn_acc)},
            {"fnr_at_k", opt(r.fnr_at_k)},
            {"diversity_entropy", opt(r.diversity_entropy)},
            {"wall_ms", opt(r.wall_ms)}};
}

MetricsRecord metrics_from_json(const json& doc) {
    const auto opt = [&](const char* key) -> std::optional<double> {
        const json& v = doc.at(key);
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    MetricsRecord r;
    r.step = doc.at("step").get<long>();
    r.epoch = doc.at("epoch").get<long>();
    r.loss = doc.at("loss").get<double>();
    r.lambda = {doc.at("lambda_u").get<double>(), doc.at("lambda_s").get<double>(),
                doc.at("lambda_r").get<double>()};
    r.probe_acc = opt("probe_acc");
    r.knn_acc = opt("knn_acc");
    r.fnr_at_k = opt("fnr_at_k");
    r.diversity_entropy = opt("diversity_entropy");
    r.wall_ms = opt("wall_ms");
    return r;
}

TrainResult train(const TrainConfig& cfg, const Dataset& data, const MetricsSink& sink) {
    validate(cfg);
    if (data.dim() != cfg.encoder_dims.front()) {
        throw ConfigError("encoder_dims", "input size " + std::to_string(cfg.encoder_dims.front()) +
                                              " does not match the dataset's " + std::to_string(data.dim()) +
                                              " features");
    }
    if (cfg.restrict_negatives_k > 0 && !data.has_labels()) {
        throw ConfigError("restrict_negatives_k", "class-restricted negatives need a labelled dataset");
    }
    const Rng root(cfg.seed);
    TrainResult result{init_state(cfg), {}};
    TrainState& state = result.state;
    const auto started = std::chrono::steady_clock::now();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle = root.split(streams::kShuffle).split(epoch);
        Rng augment = root.split(streams::kAugment).split(epoch);
        Rng negatives_rng = root.split(streams::kNegatives).split(epoch);
        const auto batches = make_batches(shuffle, data.size(), cfg.batch_size);
        if (batches.empty()) throw ConfigError("batch_size", "dataset too small for a single batch");

        double loss_sum = 0.0;
        for (const auto& rows : batches) {
            const BatchPair batch = augment_pair(augment, data, rows, cfg.augment);
            StepMetrics m;
            if (cfg.restrict_negatives_k > 0) {
                const auto neg_rows =
                    restricted_class_sampler(negatives_rng, data, cfg.restrict_negatives_k, rows.size());
                const BatchPair neg = augment_pair(negatives_rng, data, neg_rows, cfg.augment);
                m = train_step_restricted(state, batch, neg.anchor_view, cfg);
            } else {
                m = train_step(state, batch, cfg);
            }
            loss_sum += m.loss;
        }

        MetricsRecord record;
        record.step = state.step;
        record.epoch = static_cast<long>(epoch);
        record.loss = loss_sum / static_cast<double>(batches.size());
        check_finite(record.loss, state.step);
        record.lambda = state.aggregation.lambda();
        const bool due = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        if (due && data.has_labels()) {
            const EvalSummary e = evaluate(state.params, state.aggregation, data, cfg);
            record.probe_acc = e.probe_acc;
            record.knn_acc = e.knn_acc;
            record.fnr_at_k = e.fnr_at_k;
            record.diversity_entropy = e.diversity_entropy;
        }
        if (cfg.record_wall_time) {
            record.wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        }
        if (sink) sink(record);
        result.metrics.push_back(record);
    }
    return result;
}

} // namespace unremix
