#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mimir {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when a forward result contains NaN or Inf.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    // Receives this node's accumulated gradient and pushes it into parents.
    std::function<void(const std::vector<double>&)> backward;
};

}  // namespace detail

/// Dense row-major float64 tensor with reverse-mode differentiation.
///
/// Tensors are reference handles: copies share the same storage and graph
/// node. Leaves accumulate gradients across backward passes until the caller
/// invokes `zero_grad()`; intermediate gradients are recomputed every pass.
class Tensor {
public:
    Tensor() = default;

    static Tensor create(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const { return values().size(); }
    /// Extent of axis `axis`; negative values count from the back.
    std::size_t dim(int axis) const;

    std::span<const double> values() const;
    double item() const;
    double at(std::size_t flat) const { return values()[flat]; }

    /// In-place write access; only allowed on leaves (parameters, inputs).
    std::span<double> mutable_values();

    bool requires_grad() const;
    bool is_leaf() const;
    /// Accumulated gradient; empty until a backward pass reaches this tensor.
    std::span<const double> grad() const;
    bool has_grad() const;
    void zero_grad();

    /// Fresh leaf holding a copy of the values.
    Tensor detach(bool requires_grad = false) const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    static Tensor from_node(std::shared_ptr<detail::Node> node);

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// --- elementwise ---------------------------------------------------------
// Binary ops accept equal shapes or one operand whose shape is a suffix of
// the other's (scalars, bias vectors over leading batch dims).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clip(const Tensor& a, double lo, double hi);
Tensor gelu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// --- reductions ----------------------------------------------------------
Tensor sum(const Tensor& t, std::vector<int> axes, bool keepdims = false);
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t, std::vector<int> axes, bool keepdims = false);
Tensor mean(const Tensor& t);

Tensor softmax(const Tensor& t, int axis = -1);
/// Normalizes over the last axis; gamma and beta have the last axis' extent.
Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

// --- shape ---------------------------------------------------------------
Tensor reshape(const Tensor& t, Shape shape);
Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& t, int axis_a, int axis_b);
/// Tiles `t` to `shape`; t's shape must be a suffix of `shape`.
Tensor broadcast_to(const Tensor& t, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// out[b, j, :] = t[b, index[b][j], :] for a rank-3 tensor.
Tensor gather_rows(const Tensor& t, const std::vector<std::vector<std::size_t>>& index);

// --- linear algebra ------------------------------------------------------
/// [..., m, k] x [..., k, n]; b may also be a plain [k, n] shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Squared Euclidean distances between rows of an [N, d] tensor.
Tensor pairwise_sq_dist(const Tensor& x);

// --- losses --------------------------------------------------------------
Tensor mse_loss(const Tensor& pred, const Tensor& target);
/// Mean negative log-likelihood of `labels` under softmax(logits), natural log.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// --- differentiation -----------------------------------------------------
/// Reverse pass from a scalar loss. Returns the requires-grad leaves reached.
std::vector<Tensor> backward(const Tensor& loss);

struct GradReport {
    std::vector<double> max_rel_error;  // one per parameter
    double step = 0.0;
    double worst() const;
};

/// Compares analytic gradients of a scalar function against central
/// differences (f(x+h) - f(x-h)) / 2h, perturbing each parameter in place.
GradReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                             double h = 1e-4);
GradReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                             double h = 1e-4);

double relative_error(double analytic, double numeric);

}  // namespace mimir
