// Builders for the four classifier variants and their forward/backward
// orchestration.
//
// Every variant shares one branch body: Dense(input->width)+ReLU followed by
// three Dense(width->width)+ReLU blocks (809472 parameters at the default
// 41/512 dimensions).
//   l1_reg / l2_reg      one branch, non-affine BN after each hidden
//                        activation, Dense(width->1)+sigmoid head, the
//                        variant's penalty on every dense weight.
//   concat               two branches (branch 1 L1-penalized, branch 2 L2),
//                        BN retained, column concat, Dense(2w->head)+ReLU,
//                        Dense(head->1)+sigmoid.
//   residual_concat      the same two branches with BN removed and a
//                        parameter-free skip inside each branch: the first
//                        hidden activation is added onto the fourth dense
//                        layer's pre-activation, then ReLU; concat and head
//                        as above. 1750273 parameters at defaults.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "regunet/layers.hpp"
#include "regunet/matrix.hpp"
#include "regunet/objective.hpp"
#include "regunet/optim.hpp"

namespace regunet {

enum class Variant { l1_reg, l2_reg, concat, residual_concat };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::l1_reg: return "l1_reg";
        case Variant::l2_reg: return "l2_reg";
        case Variant::concat: return "concat";
        case Variant::residual_concat: return "residual_concat";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& name) {
    if (name == "l1_reg") return Variant::l1_reg;
    if (name == "l2_reg") return Variant::l2_reg;
    if (name == "concat") return Variant::concat;
    if (name == "residual_concat") return Variant::residual_concat;
    throw std::invalid_argument("unknown variant '" + name +
                                "' (expected l1_reg, l2_reg, concat or residual_concat)");
}

struct ModelSpec {
    Variant variant = Variant::l2_reg;
    std::size_t input_dim = 41;
    std::size_t hidden_width = 512;
    std::size_t head_width = 128;
    RegularizationConfig reg{};     // alpha is used everywhere; mode is pinned by the variant
    std::uint64_t seed = 0;
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;
    bool bn_before_activation = false;
    std::size_t residual_tap = 1;   // which hidden activation (1..3) feeds the skip
};

/// One ordered layer sequence. When residual is set, the output of
/// layers[tap_index] is added onto the input of layers[add_index]
/// (the residual_add node).
struct Branch {
    std::vector<LayerNode> layers;
    RegularizationConfig reg{};
    bool residual = false;
    std::size_t tap_index = 0;
    std::size_t add_index = 0;
};

struct Model {
    ModelSpec spec;
    std::vector<Branch> branches;
    std::optional<LayerNode> concat_node;   // two-branch variants only
    std::vector<LayerNode> head;
    RegularizationConfig head_reg{};
    BnMode mode = BnMode::train;
};

namespace detail {

inline void validate_spec(const ModelSpec& spec) {
    if (spec.input_dim < 1 || spec.hidden_width < 1 || spec.head_width < 1)
        throw std::invalid_argument("ModelSpec: dimensions must be positive");
    if (spec.residual_tap < 1 || spec.residual_tap > 3)
        throw std::invalid_argument("ModelSpec: residual_tap must be 1, 2 or 3");
    if (spec.reg.alpha < 0.0)
        throw std::invalid_argument("ModelSpec: alpha must be >= 0");
}

inline LayerNode init_dense(std::size_t fan_in, std::size_t fan_out, InitScheme scheme, Rng& rng) {
    LayerNode node = LayerNode::make_dense(fan_in, fan_out);
    node.params->W = seeded_init(fan_in, fan_out, scheme, rng);
    return node;
}

} // namespace detail

/// Builds one four-dense-layer branch body. The rng stream decides every
/// weight; biases start at zero.
inline Branch make_branch(const ModelSpec& spec, bool with_bn, bool with_residual,
                          RegularizationConfig reg, Rng& rng) {
    Branch br;
    br.reg = reg;
    br.residual = with_residual;
    const std::size_t w = spec.hidden_width;
    for (std::size_t block = 0; block < 4; ++block) {
        const std::size_t fan_in = block == 0 ? spec.input_dim : w;
        br.layers.push_back(detail::init_dense(fan_in, w, InitScheme::he_normal, rng));
        const bool last = block == 3;
        if (with_residual && last) {
            br.layers.push_back(LayerNode::make_residual_add());
            br.add_index = br.layers.size() - 1;
        }
        if (with_bn && spec.bn_before_activation)
            br.layers.push_back(LayerNode::make_batchnorm(w, spec.bn_momentum, spec.bn_epsilon));
        br.layers.push_back(LayerNode::make_relu());
        if (with_residual && block + 1 == spec.residual_tap)
            br.tap_index = br.layers.size() - 1;
        if (with_bn && !spec.bn_before_activation)
            br.layers.push_back(LayerNode::make_batchnorm(w, spec.bn_momentum, spec.bn_epsilon));
    }
    return br;
}

inline Model build(const ModelSpec& spec) {
    detail::validate_spec(spec);
    Model model;
    model.spec = spec;
    const double alpha = spec.reg.alpha;
    // branch seeds seed and seed+1, head stream seed+2
    Rng rng_b1(spec.seed);
    Rng rng_b2(spec.seed + 1);
    Rng rng_head(spec.seed + 2);
    switch (spec.variant) {
        case Variant::l1_reg:
        case Variant::l2_reg: {
            const RegMode mode = spec.variant == Variant::l1_reg ? RegMode::l1 : RegMode::l2;
            const RegularizationConfig reg(mode, alpha);
            model.branches.push_back(make_branch(spec, /*bn=*/true, /*residual=*/false, reg, rng_b1));
            model.head.push_back(detail::init_dense(spec.hidden_width, 1, InitScheme::xavier_uniform, rng_head));
            model.head.push_back(LayerNode::make_sigmoid());
            model.head_reg = reg;
            break;
        }
        case Variant::concat:
        case Variant::residual_concat: {
            const bool with_bn = spec.variant == Variant::concat;
            const bool with_residual = spec.variant == Variant::residual_concat;
            model.branches.push_back(make_branch(spec, with_bn, with_residual,
                                                 RegularizationConfig(RegMode::l1, alpha), rng_b1));
            model.branches.push_back(make_branch(spec, with_bn, with_residual,
                                                 RegularizationConfig(RegMode::l2, alpha), rng_b2));
            model.concat_node = LayerNode::make_concat();
            model.head.push_back(detail::init_dense(2 * spec.hidden_width, spec.head_width,
                                                    InitScheme::he_normal, rng_head));
            model.head.push_back(LayerNode::make_relu());
            model.head.push_back(detail::init_dense(spec.head_width, 1, InitScheme::xavier_uniform, rng_head));
            model.head.push_back(LayerNode::make_sigmoid());
            model.head_reg = RegularizationConfig(RegMode::none, alpha);
            break;
        }
    }
    return model;
}

inline std::size_t param_count(const Model& model) {
    std::size_t total = 0;
    auto count = [&total](const std::vector<LayerNode>& layers) {
        for (const LayerNode& node : layers)
            if (node.kind == LayerKind::dense) total += node.params->parameter_count();
    };
    for (const Branch& br : model.branches) count(br.layers);
    count(model.head);
    return total;
}

inline std::size_t branch_param_count(const Model& model, std::size_t branch = 0) {
    std::size_t total = 0;
    for (const LayerNode& node : model.branches.at(branch).layers)
        if (node.kind == LayerKind::dense) total += node.params->parameter_count();
    return total;
}

inline void set_mode(Model& model, BnMode mode) {
    model.mode = mode;
    for (Branch& br : model.branches)
        for (LayerNode& node : br.layers)
            if (node.kind == LayerKind::batchnorm) node.bn->mode = mode;
    for (LayerNode& node : model.head)
        if (node.kind == LayerKind::batchnorm) node.bn->mode = mode;
}

namespace detail {

inline Matrix sequence_forward_step(LayerNode& node, Matrix&& cur) {
    switch (node.kind) {
        case LayerKind::dense: return dense_forward(node, cur);
        case LayerKind::relu: return relu_forward(node, cur);
        case LayerKind::sigmoid: return sigmoid_forward(node, cur);
        case LayerKind::batchnorm: return batchnorm_forward(node, cur);
        default:
            throw std::logic_error(std::string("unexpected ") + layer_kind_name(node.kind) +
                                   " node in a plain sequence");
    }
}

} // namespace detail

inline Matrix branch_forward(Branch& br, const Matrix& x) {
    Matrix cur = x;
    std::optional<Matrix> tap;
    for (std::size_t i = 0; i < br.layers.size(); ++i) {
        LayerNode& node = br.layers[i];
        if (node.kind == LayerKind::residual_add) {
            if (!tap) throw std::logic_error("branch_forward: residual_add before its tap");
            cur = residual_add_forward(cur, *tap);
        } else {
            cur = detail::sequence_forward_step(node, std::move(cur));
        }
        if (br.residual && i == br.tap_index) tap = cur;
    }
    return cur;
}

inline Matrix branch_backward(Branch& br, const Matrix& grad_out) {
    Matrix g = grad_out;
    std::optional<Matrix> skip_grad;
    for (std::size_t i = br.layers.size(); i-- > 0;) {
        LayerNode& node = br.layers[i];
        switch (node.kind) {
            case LayerKind::dense: g = dense_backward(node, g); break;
            case LayerKind::relu: g = relu_backward(node, g); break;
            case LayerKind::batchnorm: g = batchnorm_backward(node, g); break;
            case LayerKind::residual_add: {
                auto [g_main, g_skip] = residual_add_backward(g);
                g = std::move(g_main);
                skip_grad = std::move(g_skip);
                break;
            }
            default:
                throw std::logic_error(std::string("unexpected ") + layer_kind_name(node.kind) +
                                       " node in a branch");
        }
        // g now holds the gradient at the output of layers[i-1]; merge the
        // skip path once we reach the tapped activation
        if (skip_grad && i == br.tap_index + 1) {
            g = add(g, *skip_grad);
            skip_grad.reset();
        }
    }
    return g;
}

/// Probabilities (batch x 1), all strictly inside (0,1). Both branches of a
/// two-branch variant consume the same input.
inline Matrix forward(Model& model, const Matrix& X) {
    if (X.cols() != model.spec.input_dim)
        throw ShapeError("forward: input has " + std::to_string(X.cols()) +
                         " columns, model expects " + std::to_string(model.spec.input_dim));
    Matrix cur(1, 1);
    if (model.branches.size() == 1) {
        cur = branch_forward(model.branches[0], X);
    } else {
        Matrix left = branch_forward(model.branches[0], X);
        Matrix right = branch_forward(model.branches[1], X);
        cur = concat_forward(*model.concat_node, left, right);
    }
    for (LayerNode& node : model.head) cur = detail::sequence_forward_step(node, std::move(cur));
    return cur;
}

inline std::vector<ParamRef> trainable_params(Model& model) {
    std::vector<ParamRef> params;
    auto collect = [&params](std::vector<LayerNode>& layers, const std::string& prefix) {
        std::size_t dense_idx = 0;
        for (LayerNode& node : layers) {
            if (node.kind != LayerKind::dense) continue;
            const std::string base = prefix + "/dense" + std::to_string(dense_idx++);
            params.push_back({&node.params->W, &node.params->grad_W, base + "/W"});
            params.push_back({&node.params->b, &node.params->grad_b, base + "/b"});
        }
    };
    for (std::size_t b = 0; b < model.branches.size(); ++b)
        collect(model.branches[b].layers, "branch" + std::to_string(b + 1));
    collect(model.head, "head");
    return params;
}

struct WeightGroup {
    std::vector<const Matrix*> weights;       // dense W matrices only, never biases
    std::vector<Matrix*> weight_grads;
    RegularizationConfig reg;
};

inline std::vector<WeightGroup> weight_groups(Model& model) {
    std::vector<WeightGroup> groups;
    auto collect = [](std::vector<LayerNode>& layers, RegularizationConfig reg) {
        WeightGroup g;
        g.reg = reg;
        for (LayerNode& node : layers) {
            if (node.kind != LayerKind::dense) continue;
            g.weights.push_back(&node.params->W);
            g.weight_grads.push_back(&node.params->grad_W);
        }
        return g;
    };
    for (Branch& br : model.branches) groups.push_back(collect(br.layers, br.reg));
    groups.push_back(collect(model.head, model.head_reg));
    return groups;
}

/// Scaled penalty of the whole model: alpha/2 * sum W^2 over L2 groups plus
/// alpha * sum |W| over L1 groups.
inline double model_penalty(Model& model) {
    double total = 0.0;
    for (const WeightGroup& g : weight_groups(model))
        total += regularized_loss(0.0, g.weights, g.reg).penalty;
    return total;
}

inline LossReport model_loss_report(Model& model, double data_loss) {
    LossReport report;
    report.data_loss = data_loss;
    report.penalty = model_penalty(model);
    report.total_loss = report.data_loss + report.penalty;
    return report;
}

/// Populates every dense layer's grad_W/grad_b from the upstream loss
/// gradient, then adds the weight-penalty gradients in place.
inline void backward(Model& model, const Matrix& grad_loss) {
    Matrix g = grad_loss;
    for (std::size_t i = model.head.size(); i-- > 0;) {
        LayerNode& node = model.head[i];
        switch (node.kind) {
            case LayerKind::dense: g = dense_backward(node, g); break;
            case LayerKind::relu: g = relu_backward(node, g); break;
            case LayerKind::sigmoid: g = sigmoid_backward(node, g); break;
            case LayerKind::batchnorm: g = batchnorm_backward(node, g); break;
            default:
                throw std::logic_error(std::string("unexpected ") + layer_kind_name(node.kind) +
                                       " node in the head");
        }
    }
    if (model.branches.size() == 1) {
        branch_backward(model.branches[0], g);
    } else {
        auto [g_left, g_right] = concat_backward(*model.concat_node, g);
        branch_backward(model.branches[0], g_left);
        branch_backward(model.branches[1], g_right);
    }
    for (WeightGroup& group : weight_groups(model)) {
        if (group.reg.mode == RegMode::none) continue;
        std::vector<Matrix> pgrads = penalty_grad(group.weights, group.reg);
        for (std::size_t k = 0; k < pgrads.size(); ++k)
            *group.weight_grads[k] = add(*group.weight_grads[k], pgrads[k]);
    }
}

/// Label 1 iff probability >= threshold.
inline Matrix classify(Model& model, const Matrix& X, double threshold = 0.5) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw std::invalid_argument("classify: threshold must be inside (0,1)");
    Matrix p = forward(model, X);
    Matrix labels(p.rows(), p.cols());
    for (std::size_t i = 0, n = p.size(); i < n; ++i)
        labels.data()[i] = p.data()[i] >= threshold ? 1.0 : 0.0;
    return labels;
}

} // namespace regunet
