// Differentiable layer primitives with explicit forward and backward passes.
// Each LayerNode caches whatever its backward pass needs; backward consumes
// and invalidates the cache so stale gradients cannot be produced.
#pragma once

#include <optional>
#include <string>
#include <utility>

#include "regunet/matrix.hpp"

namespace regunet {

class CacheError : public std::runtime_error {
public:
    explicit CacheError(const std::string& what) : std::runtime_error(what) {}
};

enum class LayerKind { dense, relu, sigmoid, batchnorm, concat, residual_add };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::relu: return "relu";
        case LayerKind::sigmoid: return "sigmoid";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::concat: return "concat";
        case LayerKind::residual_add: return "residual_add";
    }
    return "?";
}

struct DenseParams {
    Matrix W;       // fan_in x fan_out
    Matrix b;       // 1 x fan_out
    Matrix grad_W;
    Matrix grad_b;

    DenseParams(std::size_t fan_in, std::size_t fan_out)
        : W(fan_in, fan_out), b(1, fan_out), grad_W(fan_in, fan_out), grad_b(1, fan_out) {}

    std::size_t fan_in() const { return W.rows(); }
    std::size_t fan_out() const { return W.cols(); }
    std::size_t parameter_count() const { return W.size() + b.size(); }
};

enum class BnMode { train, eval };

/// Non-affine batch normalization state: running statistics only, no
/// learnable scale or shift, so it contributes zero trainable parameters.
struct BatchNormState {
    Matrix running_mean;  // 1 x features
    Matrix running_var;   // 1 x features
    double momentum = 0.9;
    double epsilon = 1e-5;
    BnMode mode = BnMode::train;

    explicit BatchNormState(std::size_t features, double momentum_ = 0.9, double epsilon_ = 1e-5)
        : running_mean(1, features), running_var(1, features, 1.0),
          momentum(momentum_), epsilon(epsilon_) {}

    std::size_t features() const { return running_mean.cols(); }
};

struct LayerNode {
    LayerKind kind = LayerKind::relu;
    std::optional<DenseParams> params;   // dense only
    std::optional<BatchNormState> bn;    // batchnorm only

    // forward caches, consumed by backward
    std::optional<Matrix> cache_input;    // dense: x; relu: x; residual_add: unused
    std::optional<Matrix> cache_output;   // sigmoid: sigma(x)
    std::optional<Matrix> cache_norm;     // batchnorm: normalized activations
    std::optional<Matrix> cache_inv_std;  // batchnorm: 1/sqrt(var+eps) per column
    std::size_t cache_split_cols = 0;     // concat: width of the left half

    static LayerNode of_kind(LayerKind k) {
        LayerNode n;
        n.kind = k;
        return n;
    }
    static LayerNode make_dense(std::size_t fan_in, std::size_t fan_out) {
        LayerNode n = of_kind(LayerKind::dense);
        n.params.emplace(fan_in, fan_out);
        return n;
    }
    static LayerNode make_relu() { return of_kind(LayerKind::relu); }
    static LayerNode make_sigmoid() { return of_kind(LayerKind::sigmoid); }
    static LayerNode make_batchnorm(std::size_t features, double momentum = 0.9, double epsilon = 1e-5) {
        LayerNode n = of_kind(LayerKind::batchnorm);
        n.bn.emplace(features, momentum, epsilon);
        return n;
    }
    static LayerNode make_concat() { return of_kind(LayerKind::concat); }
    static LayerNode make_residual_add() { return of_kind(LayerKind::residual_add); }

    void drop_cache() {
        cache_input.reset();
        cache_output.reset();
        cache_norm.reset();
        cache_inv_std.reset();
        cache_split_cols = 0;
    }
};

namespace detail {

inline void require_cache(bool present, const char* op) {
    if (!present)
        throw CacheError(std::string(op) + ": backward called without a cached forward");
}

} // namespace detail

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

inline Matrix dense_forward(LayerNode& node, const Matrix& x) {
    DenseParams& p = *node.params;
    if (x.cols() != p.fan_in())
        throw ShapeError("dense_forward: input has " + std::to_string(x.cols()) +
                         " columns, layer expects " + std::to_string(p.fan_in()));
    node.cache_input = x;
    return add_row_vector(matmul(x, p.W), p.b);
}

/// Sets grad_W = x^T * grad_out and grad_b = column sums of grad_out;
/// returns grad_out * W^T.
inline Matrix dense_backward(LayerNode& node, const Matrix& grad_out) {
    detail::require_cache(node.cache_input.has_value(), "dense_backward");
    DenseParams& p = *node.params;
    const Matrix& x = *node.cache_input;
    if (grad_out.rows() != x.rows() || grad_out.cols() != p.fan_out())
        throw ShapeError("dense_backward: gradient shape " + grad_out.shape_str() +
                         " does not match batch " + std::to_string(x.rows()) +
                         " x fan_out " + std::to_string(p.fan_out()));
    p.grad_W = matmul(transpose(x), grad_out);
    p.grad_b = col_sum(grad_out);
    Matrix grad_in = matmul(grad_out, transpose(p.W));
    node.drop_cache();
    return grad_in;
}

// ---------------------------------------------------------------------------
// relu / sigmoid
// ---------------------------------------------------------------------------

inline Matrix relu_forward(LayerNode& node, const Matrix& x) {
    node.cache_input = x;
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0, n = x.size(); i < n; ++i)
        y.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    return y;
}

/// Derivative at exactly 0 is taken as 0.
inline Matrix relu_backward(LayerNode& node, const Matrix& grad_out) {
    detail::require_cache(node.cache_input.has_value(), "relu_backward");
    const Matrix& x = *node.cache_input;
    if (!grad_out.same_shape(x))
        throw ShapeError("relu_backward: gradient shape " + grad_out.shape_str() +
                         " does not match input " + x.shape_str());
    Matrix g(x.rows(), x.cols());
    for (std::size_t i = 0, n = x.size(); i < n; ++i)
        g.data()[i] = x.data()[i] > 0.0 ? grad_out.data()[i] : 0.0;
    node.drop_cache();
    return g;
}

inline double sigmoid_scalar(double z) {
    // split form never overflows exp
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline Matrix sigmoid_forward(LayerNode& node, const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0, n = x.size(); i < n; ++i) y.data()[i] = sigmoid_scalar(x.data()[i]);
    node.cache_output = y;
    return y;
}

inline Matrix sigmoid_backward(LayerNode& node, const Matrix& grad_out) {
    detail::require_cache(node.cache_output.has_value(), "sigmoid_backward");
    const Matrix& y = *node.cache_output;
    if (!grad_out.same_shape(y))
        throw ShapeError("sigmoid_backward: gradient shape " + grad_out.shape_str() +
                         " does not match output " + y.shape_str());
    Matrix g(y.rows(), y.cols());
    for (std::size_t i = 0, n = y.size(); i < n; ++i) {
        const double s = y.data()[i];
        g.data()[i] = grad_out.data()[i] * s * (1.0 - s);
    }
    node.drop_cache();
    return g;
}

// ---------------------------------------------------------------------------
// batchnorm (non-affine)
// ---------------------------------------------------------------------------

inline Matrix batchnorm_forward(LayerNode& node, const Matrix& x) {
    BatchNormState& bn = *node.bn;
    if (x.cols() != bn.features())
        throw ShapeError("batchnorm_forward: input has " + std::to_string(x.cols()) +
                         " columns, layer expects " + std::to_string(bn.features()));
    const std::size_t rows = x.rows(), cols = x.cols();
    Matrix y(rows, cols);
    if (bn.mode == BnMode::train) {
        if (rows < 2)
            throw ShapeError("batchnorm_forward: train mode needs a batch of at least 2 rows");
        Matrix mean = col_mean(x);
        Matrix var = col_var(x);
        Matrix inv_std(1, cols);
        for (std::size_t j = 0; j < cols; ++j)
            inv_std(0, j) = 1.0 / std::sqrt(var(0, j) + bn.epsilon);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                y(i, j) = (x(i, j) - mean(0, j)) * inv_std(0, j);
        for (std::size_t j = 0; j < cols; ++j) {
            bn.running_mean(0, j) = bn.momentum * bn.running_mean(0, j) + (1.0 - bn.momentum) * mean(0, j);
            bn.running_var(0, j) = bn.momentum * bn.running_var(0, j) + (1.0 - bn.momentum) * var(0, j);
        }
        node.cache_norm = y;
        node.cache_inv_std = inv_std;
    } else {
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                y(i, j) = (x(i, j) - bn.running_mean(0, j)) / std::sqrt(bn.running_var(0, j) + bn.epsilon);
        // eval mode caches nothing; backward requires a train-mode forward
    }
    detail::check_finite(y, "batchnorm_forward");
    return y;
}

/// Exact gradient of the train-mode normalization, including the dependence
/// of the batch mean and variance on every row:
///   dx = inv_std/N * (N*g - sum(g) - xhat * sum(g .* xhat))   per column.
inline Matrix batchnorm_backward(LayerNode& node, const Matrix& grad_out) {
    detail::require_cache(node.cache_norm.has_value(), "batchnorm_backward");
    const Matrix& xhat = *node.cache_norm;
    const Matrix& inv_std = *node.cache_inv_std;
    if (!grad_out.same_shape(xhat))
        throw ShapeError("batchnorm_backward: gradient shape " + grad_out.shape_str() +
                         " does not match input " + xhat.shape_str());
    const std::size_t rows = xhat.rows(), cols = xhat.cols();
    Matrix g_sum = col_sum(grad_out);
    Matrix gx_sum = col_sum(mul(grad_out, xhat));
    Matrix g(rows, cols);
    const double inv_n = 1.0 / static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            g(i, j) = inv_std(0, j) * inv_n *
                      (static_cast<double>(rows) * grad_out(i, j) - g_sum(0, j) - xhat(i, j) * gx_sum(0, j));
    node.drop_cache();
    detail::check_finite(g, "batchnorm_backward");
    return g;
}

// ---------------------------------------------------------------------------
// concat / residual_add
// ---------------------------------------------------------------------------

/// Column-wise join of two equal-shape inputs. Equal widths are required even
/// though joining unequal widths would be well defined.
inline Matrix concat_forward(LayerNode& node, const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw ShapeError("concat_forward: row mismatch (" + a.shape_str() + ") vs (" + b.shape_str() + ")");
    if (a.cols() != b.cols())
        throw ShapeError("concat_forward: column mismatch (" + a.shape_str() + ") vs (" +
                         b.shape_str() + "); both inputs must have equal width");
    Matrix c(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* rc = c.row(i);
        const double* ra = a.row(i);
        const double* rb = b.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) rc[j] = ra[j];
        for (std::size_t j = 0; j < b.cols(); ++j) rc[a.cols() + j] = rb[j];
    }
    node.cache_split_cols = a.cols();
    return c;
}

inline std::pair<Matrix, Matrix> concat_backward(LayerNode& node, const Matrix& grad_out) {
    detail::require_cache(node.cache_split_cols != 0, "concat_backward");
    const std::size_t left = node.cache_split_cols;
    if (grad_out.cols() <= left)
        throw ShapeError("concat_backward: gradient width " + std::to_string(grad_out.cols()) +
                         " cannot split at column " + std::to_string(left));
    const std::size_t right = grad_out.cols() - left;
    Matrix ga(grad_out.rows(), left);
    Matrix gb(grad_out.rows(), right);
    for (std::size_t i = 0; i < grad_out.rows(); ++i) {
        const double* rg = grad_out.row(i);
        double* rga = ga.row(i);
        double* rgb = gb.row(i);
        for (std::size_t j = 0; j < left; ++j) rga[j] = rg[j];
        for (std::size_t j = 0; j < right; ++j) rgb[j] = rg[left + j];
    }
    node.drop_cache();
    return {std::move(ga), std::move(gb)};
}

inline Matrix residual_add_forward(const Matrix& x, const Matrix& skip) {
    if (!x.same_shape(skip))
        throw ShapeError("residual_add_forward: shape mismatch (" + x.shape_str() + ") vs (" +
                         skip.shape_str() + ")");
    return add(x, skip);
}

inline std::pair<Matrix, Matrix> residual_add_backward(const Matrix& grad_out) {
    return {grad_out, grad_out};
}

} // namespace regunet
