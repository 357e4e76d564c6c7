#include "unremix/config.hpp"

#include <cmath>
#include <concepts>
#include <fstream>
#include <set>

namespace unremix {

using nlohmann::json;

std::string to_string(Sampler sampler) {
    switch (sampler) {
    case Sampler::UnReMix: return "unremix";
    case Sampler::Uniform: return "uniform";
    case Sampler::Hcl: return "hcl";
    }
    return "unknown";
}

Sampler sampler_from_string(const std::string& name) {
    if (name == "unremix") return Sampler::UnReMix;
    if (name == "uniform") return Sampler::Uniform;
    if (name == "hcl") return Sampler::Hcl;
    throw UsageError("unknown sampler '" + name + "' (expected unremix, uniform or hcl)");
}

AggregationParams TrainConfig::initial_aggregation() const {
    AggregationParams agg;
    agg.mode = aggregation;
    agg.enabled = components;
    return agg;
}

json to_json(const TrainConfig& c) {
    return {
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"lambda_learning_rate", c.lambda_learning_rate ? json(*c.lambda_learning_rate) : json(nullptr)},
        {"optimizer", to_string(c.optimizer)},
        {"seed", c.seed},
        {"sampler", to_string(c.sampler)},
        {"aggregation", to_string(c.aggregation)},
        {"components", to_string(c.components)},
        {"gradient_loss", to_string(c.gradient_loss)},
        {"tau", c.tau},
        {"weight_mode", to_string(c.weight_mode)},
        {"hcl_beta", c.hcl_beta},
        {"augment",
         {{"noise_sigma", c.augment.noise_sigma},
          {"dropout_prob", c.augment.dropout_prob},
          {"scale_jitter", c.augment.scale_jitter}}},
        {"encoder_dims", c.encoder_dims},
        {"eval_every", c.eval_every},
        {"eval_topk", c.eval_topk},
        {"knn_k", c.knn_k},
        {"restrict_negatives_k", c.restrict_negatives_k},
        {"record_wall_time", c.record_wall_time},
        {"dataset",
         {{"kind", c.dataset.kind},
          {"path", c.dataset.path},
          {"n_classes", c.dataset.n_classes},
          {"n_per_class", c.dataset.n_per_class},
          {"d_in", c.dataset.d_in},
          {"separation", c.dataset.separation},
          {"seed", c.dataset.seed}}},
    };
}

namespace {

// Reads the members of one JSON object, remembering which keys were consumed
// so leftovers can be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
        if (!obj_.is_object()) throw ConfigError(prefix_.empty() ? "<root>" : prefix_, "expected a JSON object");
    }

    std::string key(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }

    const json* find(const std::string& name) {
        seen_.insert(name);
        const auto it = obj_.find(name);
        return it == obj_.end() ? nullptr : &*it;
    }

    void read(const std::string& name, double& out) {
        if (const json* v = find(name)) {
            if (!v->is_number()) throw ConfigError(key(name), "expected a number");
            out = v->get<double>();
        }
    }

    template <std::unsigned_integral T>
    void read(const std::string& name, T& out) {
        if (const json* v = find(name)) {
            if (!v->is_number_unsigned()) throw ConfigError(key(name), "expected a non-negative integer");
            out = v->get<T>();
        }
    }

    void read(const std::string& name, int& out) {
        if (const json* v = find(name)) {
            if (!v->is_number_integer()) throw ConfigError(key(name), "expected an integer");
            out = v->get<int>();
        }
    }

    void read(const std::string& name, bool& out) {
        if (const json* v = find(name)) {
            if (!v->is_boolean()) throw ConfigError(key(name), "expected true or false");
            out = v->get<bool>();
        }
    }

    void read(const std::string& name, std::string& out) {
        if (const json* v = find(name)) {
            if (!v->is_string()) throw ConfigError(key(name), "expected a string");
            out = v->get<std::string>();
        }
    }

    template <typename Parse, typename T>
    void read_enum(const std::string& name, T& out, Parse parse) {
        std::string text;
        read(name, text);
        if (text.empty()) return;
        try {
            out = parse(text);
        } catch (const UsageError& e) {
            throw ConfigError(key(name), e.what());
        }
    }

    void finish() const {
        for (const auto& [k, _] : obj_.items()) {
            if (!seen_.count(k)) throw ConfigError(key(k), "unknown key");
        }
    }

private:
    const json& obj_;
    std::string prefix_;
    std::set<std::string> seen_;
};

} // namespace

TrainConfig config_from_json(const json& doc) {
    TrainConfig c;
    ObjectReader r(doc, "");
    r.read("epochs", c.epochs);
    r.read("batch_size", c.batch_size);
    r.read("learning_rate", c.learning_rate);
    if (const json* v = r.find("lambda_learning_rate")) {
        if (v->is_null()) c.lambda_learning_rate.reset();
        else if (v->is_number()) c.lambda_learning_rate = v->get<double>();
        else throw ConfigError("lambda_learning_rate", "expected a number or null");
    }
    r.read_enum("optimizer", c.optimizer, optimizer_kind_from_string);
    r.read("seed", c.seed);
    r.read_enum("sampler", c.sampler, sampler_from_string);
    r.read_enum("aggregation", c.aggregation, aggregation_mode_from_string);
    r.read_enum("components", c.components, component_mask_from_string);
    r.read_enum("gradient_loss", c.gradient_loss, gradient_loss_from_string);
    r.read("tau", c.tau);
    r.read_enum("weight_mode", c.weight_mode, weight_normalization_from_string);
    r.read("hcl_beta", c.hcl_beta);
    if (const json* v = r.find("augment")) {
        ObjectReader a(*v, "augment");
        a.read("noise_sigma", c.augment.noise_sigma);
        a.read("dropout_prob", c.augment.dropout_prob);
        a.read("scale_jitter", c.augment.scale_jitter);
        a.finish();
    }
    if (const json* v = r.find("encoder_dims")) {
        if (!v->is_array()) throw ConfigError("encoder_dims", "expected an array of positive integers");
        c.encoder_dims.clear();
        for (const auto& d : *v) {
            if (!d.is_number_unsigned()) throw ConfigError("encoder_dims", "expected an array of positive integers");
            c.encoder_dims.push_back(d.get<std::size_t>());
        }
    }
    r.read("eval_every", c.eval_every);
    r.read("eval_topk", c.eval_topk);
    r.read("knn_k", c.knn_k);
    r.read("restrict_negatives_k", c.restrict_negatives_k);
    r.read("record_wall_time", c.record_wall_time);
    if (const json* v = r.find("dataset")) {
        ObjectReader d(*v, "dataset");
        d.read("kind", c.dataset.kind);
        d.read("path", c.dataset.path);
        d.read("n_classes", c.dataset.n_classes);
        d.read("n_per_class", c.dataset.n_per_class);
        d.read("d_in", c.dataset.d_in);
        d.read("separation", c.dataset.separation);
        d.read("seed", c.dataset.seed);
        d.finish();
    }
    r.finish();
    return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config", path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(doc);
}

void save_config(const std::filesystem::path& path, const TrainConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config " + path.string());
    out << to_json(cfg).dump(2) << '\n';
}

TrainConfig apply_overrides(const TrainConfig& cfg, const std::vector<std::string>& overrides) {
    json doc = to_json(cfg);
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError(item, "override must look like key=value");
        }
        const std::string key = item.substr(0, eq);
        const std::string text = item.substr(eq + 1);
        json value;
        try {
            value = json::parse(text);
        } catch (const json::exception&) {
            value = text;
        }
        json* node = &doc;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (!node->is_object() || !node->contains(part)) throw ConfigError(key, "unknown key");
            node = &(*node)[part];
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        *node = value;
    }
    return config_from_json(doc);
}

void validate(const TrainConfig& c) {
    if (c.epochs == 0) throw ConfigError("epochs", "must be positive");
    if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate", "must be positive");
    if (c.lambda_learning_rate && !(*c.lambda_learning_rate >= 0.0)) {
        throw ConfigError("lambda_learning_rate", "must be non-negative");
    }
    if (!(c.tau > 0.0)) throw ConfigError("tau", "must be positive");
    if (!(c.hcl_beta >= 0.0) || !std::isfinite(c.hcl_beta)) throw ConfigError("hcl_beta", "must be finite and >= 0");
    if (c.batch_size < 3) throw ConfigError("batch_size", "must be at least 3");
    if (c.sampler == Sampler::UnReMix && !(c.components[0] || c.components[1] || c.components[2])) {
        throw ConfigError("components", "at least one of u, s, r must be enabled");
    }
    try {
        validate(c.augment);
    } catch (const UsageError& e) {
        throw ConfigError("augment", e.what());
    }
    if (c.encoder_dims.size() < 2) throw ConfigError("encoder_dims", "need at least input and output sizes");
    for (std::size_t d : c.encoder_dims)
        if (d == 0) throw ConfigError("encoder_dims", "sizes must be positive");
    if (c.eval_topk == 0 || c.eval_topk >= c.batch_size) {
        throw ConfigError("eval_topk", "must be in [1, batch_size - 1]");
    }
    if (c.knn_k == 0) throw ConfigError("knn_k", "must be positive");
    if (c.restrict_negatives_k < 0) throw ConfigError("restrict_negatives_k", "must be >= 0");
    if (c.dataset.kind == "gaussian-mixture") {
        if (c.dataset.d_in != c.encoder_dims.front()) {
            throw ConfigError("encoder_dims", "input size " + std::to_string(c.encoder_dims.front()) +
                                                  " does not match dataset.d_in " + std::to_string(c.dataset.d_in));
        }
        if (c.restrict_negatives_k > c.dataset.n_classes) {
            throw ConfigError("restrict_negatives_k", "exceeds dataset.n_classes");
        }
    } else if (c.dataset.kind == "csv") {
        if (c.dataset.path.empty()) throw ConfigError("dataset.path", "required for csv datasets");
    } else {
        throw ConfigError("dataset.kind", "expected gaussian-mixture or csv");
    }
}

Dataset load_dataset(const DatasetConfig& cfg) {
    if (cfg.kind == "csv") return load_csv(cfg.path);
    if (cfg.kind != "gaussian-mixture") throw ConfigError("dataset.kind", "expected gaussian-mixture or csv");
    Rng rng(cfg.seed);
    try {
        return generate_gaussian_mixture(rng, cfg.n_classes, cfg.n_per_class, cfg.d_in, cfg.separation);
    } catch (const UsageError& e) {
        throw ConfigError("dataset", e.what());
    }
}

} // namespace unremix
