// Checkpoint save/load: one JSON document ("regunet-ckpt-1") holding the
// model spec, every layer's parameters in row-major order, BN running
// statistics, the rng seed, and the fitted standardization transform.
// Doubles are written in shortest round-trip decimal form, so a reload
// restores them bit-exactly.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "regunet/data.hpp"
#include "regunet/model.hpp"
#include "regunet/textio.hpp"

namespace regunet {

class CheckpointError : public std::runtime_error {
public:
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr const char* kCheckpointVersion = "regunet-ckpt-1";

namespace detail {

using json = nlohmann::ordered_json;

inline json matrix_to_json(const Matrix& m) {
    return json(std::vector<double>(m.data(), m.data() + m.size()));
}

inline json layer_to_json(const LayerNode& node) {
    json j;
    j["kind"] = layer_kind_name(node.kind);
    switch (node.kind) {
        case LayerKind::dense:
            j["fan_in"] = node.params->fan_in();
            j["fan_out"] = node.params->fan_out();
            j["W"] = matrix_to_json(node.params->W);
            j["b"] = matrix_to_json(node.params->b);
            break;
        case LayerKind::batchnorm:
            j["features"] = node.bn->features();
            j["momentum"] = node.bn->momentum;
            j["epsilon"] = node.bn->epsilon;
            j["running_mean"] = matrix_to_json(node.bn->running_mean);
            j["running_var"] = matrix_to_json(node.bn->running_var);
            break;
        default:
            break;  // relu / sigmoid / residual_add carry no state
    }
    return j;
}

inline void fill_matrix_from_json(Matrix& m, const json& arr, const std::string& what) {
    if (!arr.is_array() || arr.size() != m.size())
        throw CheckpointError("checkpoint: " + what + " has " +
                              std::to_string(arr.is_array() ? arr.size() : 0) +
                              " values, expected " + std::to_string(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double v = arr[i].get<double>();
        if (!std::isfinite(v))
            throw CheckpointError("checkpoint: non-finite value in " + what);
        m.data()[i] = v;
    }
}

inline void layer_from_json(LayerNode& node, const json& j, const std::string& where) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != layer_kind_name(node.kind))
        throw CheckpointError("checkpoint: " + where + " has kind '" + kind + "', expected '" +
                              layer_kind_name(node.kind) + "'");
    switch (node.kind) {
        case LayerKind::dense: {
            const auto fan_in = j.at("fan_in").get<std::size_t>();
            const auto fan_out = j.at("fan_out").get<std::size_t>();
            if (fan_in != node.params->fan_in() || fan_out != node.params->fan_out())
                throw CheckpointError("checkpoint: " + where + " has shape " +
                                      std::to_string(fan_in) + "x" + std::to_string(fan_out) +
                                      ", expected " + std::to_string(node.params->fan_in()) + "x" +
                                      std::to_string(node.params->fan_out()));
            fill_matrix_from_json(node.params->W, j.at("W"), where + ".W");
            fill_matrix_from_json(node.params->b, j.at("b"), where + ".b");
            break;
        }
        case LayerKind::batchnorm: {
            const auto features = j.at("features").get<std::size_t>();
            if (features != node.bn->features())
                throw CheckpointError("checkpoint: " + where + " has " + std::to_string(features) +
                                      " features, expected " + std::to_string(node.bn->features()));
            node.bn->momentum = j.at("momentum").get<double>();
            node.bn->epsilon = j.at("epsilon").get<double>();
            fill_matrix_from_json(node.bn->running_mean, j.at("running_mean"), where + ".running_mean");
            fill_matrix_from_json(node.bn->running_var, j.at("running_var"), where + ".running_var");
            break;
        }
        default:
            break;
    }
}

inline json spec_to_json(const ModelSpec& spec) {
    json j;
    j["variant"] = variant_name(spec.variant);
    j["input_dim"] = spec.input_dim;
    j["hidden_width"] = spec.hidden_width;
    j["head_width"] = spec.head_width;
    j["reg"] = {{"mode", reg_mode_name(spec.reg.mode)}, {"alpha", spec.reg.alpha}};
    j["seed"] = spec.seed;
    j["bn_momentum"] = spec.bn_momentum;
    j["bn_epsilon"] = spec.bn_epsilon;
    j["bn_before_activation"] = spec.bn_before_activation;
    j["residual_tap"] = spec.residual_tap;
    return j;
}

inline ModelSpec spec_from_json(const json& j) {
    ModelSpec spec;
    spec.variant = variant_from_name(j.at("variant").get<std::string>());
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.hidden_width = j.at("hidden_width").get<std::size_t>();
    spec.head_width = j.at("head_width").get<std::size_t>();
    const std::string mode = j.at("reg").at("mode").get<std::string>();
    RegMode reg_mode = RegMode::none;
    if (mode == "l1") reg_mode = RegMode::l1;
    else if (mode == "l2") reg_mode = RegMode::l2;
    else if (mode != "none") throw CheckpointError("checkpoint: unknown reg mode '" + mode + "'");
    spec.reg = RegularizationConfig(reg_mode, j.at("reg").at("alpha").get<double>());
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.bn_momentum = j.at("bn_momentum").get<double>();
    spec.bn_epsilon = j.at("bn_epsilon").get<double>();
    spec.bn_before_activation = j.at("bn_before_activation").get<bool>();
    spec.residual_tap = j.at("residual_tap").get<std::size_t>();
    return spec;
}

} // namespace detail

inline void save_checkpoint(const Model& model, const std::string& path,
                            const std::optional<Standardization>& standardization = std::nullopt) {
    detail::json doc;
    doc["version"] = kCheckpointVersion;
    doc["spec"] = detail::spec_to_json(model.spec);
    doc["rng_seed"] = model.spec.seed;
    detail::json branches = detail::json::array();
    for (const Branch& br : model.branches) {
        detail::json layers = detail::json::array();
        for (const LayerNode& node : br.layers) layers.push_back(detail::layer_to_json(node));
        branches.push_back(std::move(layers));
    }
    doc["branches"] = std::move(branches);
    detail::json head = detail::json::array();
    for (const LayerNode& node : model.head) head.push_back(detail::layer_to_json(node));
    doc["head"] = std::move(head);
    if (standardization) {
        doc["standardization"] = {{"mean", standardization->mean},
                                  {"std", standardization->std_dev}};
    } else {
        doc["standardization"] = nullptr;
    }
    atomic_write_text(path, doc.dump(2) + "\n");
}

struct LoadedCheckpoint {
    Model model;
    std::optional<Standardization> standardization;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("load_checkpoint: cannot open '" + path + "'");
    detail::json doc;
    try {
        doc = detail::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("load_checkpoint: parse failure in '" + path + "': " + e.what());
    }
    try {
        const std::string version = doc.at("version").get<std::string>();
        if (version != kCheckpointVersion)
            throw CheckpointError("load_checkpoint: unsupported version '" + version +
                                  "' (expected '" + kCheckpointVersion + "')");
        const ModelSpec spec = detail::spec_from_json(doc.at("spec"));
        Model model = build(spec);
        const detail::json& branches = doc.at("branches");
        if (!branches.is_array() || branches.size() != model.branches.size())
            throw CheckpointError("load_checkpoint: expected " +
                                  std::to_string(model.branches.size()) + " branches");
        for (std::size_t b = 0; b < model.branches.size(); ++b) {
            const detail::json& layers = branches[b];
            std::vector<LayerNode>& dst = model.branches[b].layers;
            if (!layers.is_array() || layers.size() != dst.size())
                throw CheckpointError("load_checkpoint: branch " + std::to_string(b + 1) + " has " +
                                      std::to_string(layers.size()) + " layers, expected " +
                                      std::to_string(dst.size()));
            for (std::size_t i = 0; i < dst.size(); ++i)
                detail::layer_from_json(dst[i], layers[i],
                                        "branch" + std::to_string(b + 1) + ".layer" + std::to_string(i));
        }
        const detail::json& head = doc.at("head");
        if (!head.is_array() || head.size() != model.head.size())
            throw CheckpointError("load_checkpoint: head has " + std::to_string(head.size()) +
                                  " layers, expected " + std::to_string(model.head.size()));
        for (std::size_t i = 0; i < model.head.size(); ++i)
            detail::layer_from_json(model.head[i], head[i], "head.layer" + std::to_string(i));

        LoadedCheckpoint result{std::move(model), std::nullopt};
        const detail::json& st = doc.at("standardization");
        if (!st.is_null()) {
            Standardization tr;
            tr.mean = st.at("mean").get<std::vector<double>>();
            tr.std_dev = st.at("std").get<std::vector<double>>();
            if (tr.mean.size() != tr.std_dev.size())
                throw CheckpointError("load_checkpoint: standardization mean/std length mismatch");
            result.standardization = std::move(tr);
        }
        return result;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("load_checkpoint: malformed document '" + path + "': " + e.what());
    }
}

} // namespace regunet
