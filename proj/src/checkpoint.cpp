#include "unremix/checkpoint.hpp"

#include "unremix/errors.hpp"

#include <json.hpp>

#include <fstream>

namespace unremix {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()},
            {"values", std::vector<double>(m.values().begin(), m.values().end())}};
}

Matrix matrix_from_json(const json& j) {
    return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                  j.at("values").get<std::vector<double>>());
}

json optimizer_to_json(const OptimizerState& s) {
    return {{"kind", to_string(s.kind)},   {"beta1", s.beta1},
            {"beta2", s.beta2},            {"epsilon", s.epsilon},
            {"step", s.step},              {"first_moment", s.first_moment},
            {"second_moment", s.second_moment}};
}

OptimizerState optimizer_from_json(const json& j) {
    OptimizerState s;
    s.kind = optimizer_kind_from_string(j.at("kind").get<std::string>());
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.epsilon = j.at("epsilon").get<double>();
    s.step = j.at("step").get<long>();
    s.first_moment = j.at("first_moment").get<std::vector<Vector>>();
    s.second_moment = j.at("second_moment").get<std::vector<Vector>>();
    return s;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    json layers = json::array();
    for (const auto& layer : ckpt.encoder.hidden) {
        layers.push_back({{"weight", matrix_to_json(layer.weight)}, {"bias", layer.bias}});
    }
    const json doc = {
        {"format", "unremix-checkpoint"},
        {"version", kCheckpointFormatVersion},
        {"seed", ckpt.seed},
        {"step", ckpt.step},
        {"epoch", ckpt.epoch},
        {"encoder", {{"dims", ckpt.encoder.dims}, {"hidden", layers}, {"last", matrix_to_json(ckpt.encoder.last)}}},
        {"encoder_optimizer", optimizer_to_json(ckpt.encoder_optimizer)},
        {"aggregation",
         {{"mode", to_string(ckpt.aggregation.mode)},
          {"logits", ckpt.aggregation.logits},
          {"components", to_string(ckpt.aggregation.enabled)}}},
        {"aggregation_optimizer", optimizer_to_json(ckpt.aggregation_optimizer)},
    };
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << doc.dump(1) << '\n';
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open checkpoint " + path.string());
    try {
        const json doc = json::parse(in);
        if (doc.at("format").get<std::string>() != "unremix-checkpoint") {
            throw ParseError("not an unremix checkpoint");
        }
        const int version = doc.at("version").get<int>();
        if (version != kCheckpointFormatVersion) {
            throw ParseError("unsupported checkpoint version " + std::to_string(version));
        }
        Checkpoint c;
        c.seed = doc.at("seed").get<std::uint64_t>();
        c.step = doc.at("step").get<long>();
        c.epoch = doc.at("epoch").get<long>();
        const json& enc = doc.at("encoder");
        c.encoder.dims = enc.at("dims").get<std::vector<std::size_t>>();
        for (const auto& layer : enc.at("hidden")) {
            c.encoder.hidden.push_back(
                {matrix_from_json(layer.at("weight")), layer.at("bias").get<Vector>()});
        }
        c.encoder.last = matrix_from_json(enc.at("last"));
        validate(c.encoder);
        c.encoder_optimizer = optimizer_from_json(doc.at("encoder_optimizer"));
        const json& agg = doc.at("aggregation");
        c.aggregation.mode = aggregation_mode_from_string(agg.at("mode").get<std::string>());
        c.aggregation.logits = agg.at("logits").get<std::array<double, 3>>();
        c.aggregation.enabled = component_mask_from_string(agg.at("components").get<std::string>());
        c.aggregation_optimizer = optimizer_from_json(doc.at("aggregation_optimizer"));
        return c;
    } catch (const json::exception& e) {
        throw ParseError("checkpoint " + path.string() + ": " + e.what());
    } catch (const UsageError& e) {
        throw ParseError("checkpoint " + path.string() + ": " + e.what());
    }
}

} // namespace unremix
