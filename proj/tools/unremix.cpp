#include "unremix/checkpoint.hpp"
#include "unremix/config.hpp"
#include "unremix/errors.hpp"
#include "unremix/eval.hpp"
#include "unremix/gradcheck.hpp"
#include "unremix/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace unremix;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kDiverged = 3;

struct Options {
    std::string config;
    std::string out;
    std::vector<std::string> overrides;
    bool force = false;
    std::string checkpoint;
    std::size_t seeds = 0;
    std::optional<std::size_t> anchors;
    std::size_t topk = 5;
    bool require_labels = false;
    std::string k_values = "2,4,8";
    bool inject_fault = false;
};

TrainConfig resolve_config(const Options& opt) {
    const fs::path path(opt.config);
    if (!fs::exists(path)) throw ConfigError("--config", "config file not found: " + path.string());
    TrainConfig cfg = apply_overrides(load_config(path), opt.overrides);
    if (cfg.dataset.kind == "csv" && !cfg.dataset.path.empty()) {
        fs::path data_path(cfg.dataset.path);
        if (data_path.is_relative()) data_path = path.parent_path() / data_path;
        cfg.dataset.path = fs::absolute(data_path).lexically_normal().string();
    }
    validate(cfg);
    return cfg;
}

Dataset resolve_dataset(const TrainConfig& cfg) {
    try {
        return load_dataset(cfg.dataset);
    } catch (const ParseError& e) {
        throw ConfigError("dataset.path", e.what());
    } catch (const std::runtime_error& e) {
        throw ConfigError("dataset.path", e.what());
    }
}

void prepare_out(const Options& opt) {
    const fs::path out(opt.out);
    if (fs::exists(out) && !fs::is_directory(out)) throw UsageError("--out: " + out.string() + " is not a directory");
    if (fs::exists(out) && !fs::is_empty(out) && !opt.force) {
        throw UsageError("--out: " + out.string() + " already exists and is not empty (use --force to overwrite)");
    }
    fs::create_directories(out);
}

EncoderParams checkpoint_params(const Options& opt, AggregationParams& agg) {
    const Checkpoint ckpt = load_checkpoint(opt.checkpoint);
    agg = ckpt.aggregation;
    return ckpt.encoder;
}

int run_train(const Options& opt) {
    const TrainConfig cfg = resolve_config(opt);
    const Dataset data = resolve_dataset(cfg);
    prepare_out(opt);
    const fs::path out(opt.out);
    save_config(out / "resolved-config.json", cfg);

    std::ofstream metrics(out / "metrics.jsonl");
    const TrainResult result = train(cfg, data, [&](const MetricsRecord& r) {
        metrics << to_json(r).dump() << '\n';
        metrics.flush();
    });

    Checkpoint ckpt;
    ckpt.seed = cfg.seed;
    ckpt.step = result.state.step;
    ckpt.epoch = result.metrics.empty() ? 0 : result.metrics.back().epoch;
    ckpt.encoder = result.state.params;
    ckpt.encoder_optimizer = result.state.encoder_optimizer;
    ckpt.aggregation = result.state.aggregation;
    ckpt.aggregation_optimizer = result.state.aggregation_optimizer;
    save_checkpoint(out / "checkpoint.json", ckpt);

    const MetricsRecord& last = result.metrics.back();
    std::printf("trained %ld steps, final loss %.6f, lambda (%.4f, %.4f, %.4f)", last.step, last.loss,
                last.lambda[0], last.lambda[1], last.lambda[2]);
    if (last.probe_acc) std::printf(", probe %.4f", *last.probe_acc);
    if (last.knn_acc) std::printf(", knn %.4f", *last.knn_acc);
    std::printf("\n");
    return kOk;
}

int run_eval(const Options& opt) {
    const TrainConfig cfg = resolve_config(opt);
    const Dataset data = resolve_dataset(cfg);
    if (!data.has_labels()) throw ConfigError("dataset", "evaluation needs a labelled dataset");
    AggregationParams agg;
    const EncoderParams params = checkpoint_params(opt, agg);
    prepare_out(opt);
    const EvalSummary s = evaluate(params, agg, data, cfg);
    const auto opt_json = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    const nlohmann::json doc = {{"probe_acc", opt_json(s.probe_acc)},
                                {"knn_acc", opt_json(s.knn_acc)},
                                {"fnr_at_k", opt_json(s.fnr_at_k)},
                                {"diversity_entropy", opt_json(s.diversity_entropy)}};
    std::ofstream(fs::path(opt.out) / "eval.json") << doc.dump(2) << '\n';
    std::cout << doc.dump() << '\n';
    return kOk;
}

int run_gradcheck_cmd(const Options& opt) {
    GradcheckOptions g;
    if (opt.seeds > 0) g.seeds = opt.seeds;
    if (opt.inject_fault) g.fault_scale = 1.0 + 1e-2;
    const auto reports = run_gradcheck(g);
    bool ok = true;
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& r : reports) {
        std::printf("%-26s max_rel_error %.3e  tolerance %.0e  worst_seed %llu  %s\n", r.suite.c_str(),
                    r.max_rel_error, r.tolerance, static_cast<unsigned long long>(r.worst_seed),
                    r.passed ? "PASS" : "FAIL");
        ok = ok && r.passed;
        doc.push_back({{"suite", r.suite},
                       {"max_rel_error", r.max_rel_error},
                       {"tolerance", r.tolerance},
                       {"worst_seed", r.worst_seed},
                       {"instances", r.instances},
                       {"passed", r.passed}});
    }
    if (!opt.out.empty()) {
        prepare_out(opt);
        std::ofstream(fs::path(opt.out) / "gradcheck.json") << doc.dump(2) << '\n';
    }
    return ok ? kOk : kCheckFailed;
}

int run_inspect(const Options& opt) {
    const TrainConfig cfg = resolve_config(opt);
    const Dataset data = resolve_dataset(cfg);
    if (opt.require_labels && !data.has_labels()) {
        throw ConfigError("--require-labels", "dataset has no label column");
    }
    AggregationParams agg;
    const EncoderParams params = checkpoint_params(opt, agg);
    if (params.input_dim() != data.dim()) {
        throw ConfigError("--checkpoint", "encoder input size does not match the dataset");
    }
    const BatchPair batch = evaluation_batch(data, cfg);
    const std::size_t n = batch.size();
    if (opt.topk < 1 || opt.topk > n - 1) {
        throw UsageError("--topk: must satisfy 1 <= topk <= N - 1 = " + std::to_string(n - 1));
    }
    const std::size_t anchors = opt.anchors.value_or(std::min<std::size_t>(8, n));
    if (anchors < 1 || anchors > n) {
        throw UsageError("--anchors: must satisfy 1 <= anchors <= N = " + std::to_string(n));
    }
    prepare_out(opt);
    auto audits = audit_batch(params, agg, batch, cfg, opt.topk);
    audits.resize(anchors);
    const fs::path path = fs::path(opt.out) / "audit.csv";
    write_audit_csv(path, audits);
    std::printf("wrote %zu rows to %s\n", anchors * opt.topk, path.string().c_str());
    return kOk;
}

std::vector<int> parse_k_list(const std::string& text) {
    std::vector<int> ks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            ks.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("--k: expected a comma-separated list of integers, got '" + text + "'");
        }
    }
    if (ks.empty()) throw UsageError("--k: empty list");
    return ks;
}

int run_sweep(const Options& opt) {
    const TrainConfig cfg = resolve_config(opt);
    const Dataset data = resolve_dataset(cfg);
    const std::vector<int> ks = parse_k_list(opt.k_values);
    const std::size_t count = opt.seeds > 0 ? opt.seeds : 1;
    std::vector<std::uint64_t> seeds;
    for (std::size_t s = 0; s < count; ++s) seeds.push_back(cfg.seed + s);
    prepare_out(opt);
    save_config(fs::path(opt.out) / "resolved-config.json", cfg);
    const auto rows = sweep_classes(cfg, data, ks, seeds);
    write_sweep_csv(fs::path(opt.out) / "sweep.csv", rows);
    std::vector<double> x, y;
    for (const auto& r : rows) {
        x.push_back(r.k);
        y.push_back(r.knn_accuracy);
    }
    std::printf("wrote %zu rows; spearman(k, knn_accuracy) = %.4f\n", rows.size(),
                rows.size() >= 2 ? spearman(x, y) : 0.0);
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"UnReMix contrastive training with importance-weighted hard negatives"};
    app.require_subcommand(1, 1);
    Options opt;

    const auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "Training config JSON")->required();
        sub->add_option("--set", opt.overrides, "Override a config entry, e.g. --set sampler=uniform");
    };
    const auto add_out = [&](CLI::App* sub, bool required) {
        auto* o = sub->add_option("--out", opt.out, "Output directory");
        if (required) o->required();
        sub->add_flag("--force", opt.force, "Overwrite a non-empty output directory");
    };

    auto* train_cmd = app.add_subcommand("train", "Train an encoder and write metrics, checkpoint and config");
    add_config(train_cmd);
    add_out(train_cmd, true);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_config(eval_cmd);
    add_out(eval_cmd, true);
    eval_cmd->add_option("--checkpoint", opt.checkpoint, "Checkpoint JSON")->required();

    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every analytic gradient");
    grad_cmd->add_option("--seeds", opt.seeds, "Number of random instances per suite (default 100)");
    add_out(grad_cmd, false);
    grad_cmd->add_flag("--inject-fault", opt.inject_fault, "Perturb analytic gradients by 1% (harness test)")
        ->group("");

    auto* inspect_cmd = app.add_subcommand("inspect", "Audit the top-weighted negatives of an evaluation batch");
    add_config(inspect_cmd);
    add_out(inspect_cmd, true);
    inspect_cmd->add_option("--checkpoint", opt.checkpoint, "Checkpoint JSON")->required();
    inspect_cmd->add_option("--anchors", opt.anchors, "Number of anchors to audit (default min(8, N))");
    inspect_cmd->add_option("--topk", opt.topk, "Negatives per anchor");
    inspect_cmd->add_flag("--require-labels", opt.require_labels, "Fail if the dataset has no labels");

    auto* sweep_cmd = app.add_subcommand("sweep-k", "Train with negatives restricted to k classes");
    add_config(sweep_cmd);
    add_out(sweep_cmd, true);
    sweep_cmd->add_option("--k", opt.k_values, "Comma-separated class counts");
    sweep_cmd->add_option("--seeds", opt.seeds, "Number of seeds, starting at the config seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*train_cmd) return run_train(opt);
        if (*eval_cmd) return run_eval(opt);
        if (*grad_cmd) return run_gradcheck_cmd(opt);
        if (*inspect_cmd) return run_inspect(opt);
        if (*sweep_cmd) return run_sweep(opt);
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "error: diverged: %s\n", e.what());
        return kDiverged;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kCheckFailed;
    }
    return kUsage;
}
