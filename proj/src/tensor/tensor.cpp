#include "mimir/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace mimir {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using GradFn = std::function<void(const std::vector<double>&)>;

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite result");
    }
}

Tensor make_op(Shape shape, std::vector<double> values, std::vector<NodePtr> parents, GradFn fn,
               const char* op) {
    check_finite(values, op);
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->is_leaf = false;
    bool rg = std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
    if (rg) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward = std::move(fn);
    }
    return Tensor::from_node(std::move(n));
}

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
    int r = static_cast<int>(rank);
    int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw std::invalid_argument(std::string(op) + ": invalid axis " + std::to_string(axis) +
                                    " for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

// Splits a shape around `axis` into (outer, len, inner) extents.
struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return a;
    if (shape_numel(b) == 1 && b.size() <= a.size()) return a;
    if (shape_numel(a) == 1 && a.size() <= b.size()) return b;
    if (is_suffix(b, a)) return a;
    if (is_suffix(a, b)) return b;
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
}

// Elementwise binary op over suffix-broadcast operands. `fwd(x, y)` gives the
// value; `dfa(x, y, out)` and `dfb(x, y, out)` give the local partials.
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, F fwd, DA dfa, DB dfb, const char* op) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
    std::size_t n = shape_numel(out_shape);
    std::size_t na = a.numel(), nb = b.numel();
    auto an = a.node(), bn = b.node();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(an->values[i % na], bn->values[i % nb]);
    auto out_copy = std::make_shared<std::vector<double>>(out);
    return make_op(std::move(out_shape), std::move(out), {an, bn},
                   [an, bn, na, nb, n, out_copy, dfa, dfb](const std::vector<double>& g) {
                       const auto& y = *out_copy;
                       if (an->requires_grad) {
                           for (std::size_t i = 0; i < n; ++i)
                               an->grad[i % na] += g[i] * dfa(an->values[i % na], bn->values[i % nb], y[i]);
                       }
                       if (bn->requires_grad) {
                           for (std::size_t i = 0; i < n; ++i)
                               bn->grad[i % nb] += g[i] * dfb(an->values[i % na], bn->values[i % nb], y[i]);
                       }
                   },
                   op);
}

template <class F, class D>
Tensor unary(const Tensor& a, F fwd, D dfdx, const char* op) {
    auto an = a.node();
    std::size_t n = a.numel();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(an->values[i]);
    auto out_copy = std::make_shared<std::vector<double>>(out);
    return make_op(a.shape(), std::move(out), {an},
                   [an, n, out_copy, dfdx](const std::vector<double>& g) {
                       for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i] * dfdx(an->values[i], (*out_copy)[i]);
                   },
                   op);
}

Tensor sum_axis(const Tensor& t, std::size_t axis) {
    auto sp = split_at(t.shape(), axis);
    Shape out_shape = t.shape();
    out_shape[axis] = 1;
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    auto tn = t.node();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out[o * sp.inner + i] += tn->values[(o * sp.len + l) * sp.inner + i];
    return make_op(std::move(out_shape), std::move(out), {tn},
                   [tn, sp](const std::vector<double>& g) {
                       for (std::size_t o = 0; o < sp.outer; ++o)
                           for (std::size_t l = 0; l < sp.len; ++l)
                               for (std::size_t i = 0; i < sp.inner; ++i)
                                   tn->grad[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i];
                   },
                   "sum");
}

// C[m,n] += A[m,k] * B[k,n] with optional transposes, raw row-major blocks.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
              bool ta, bool tb) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double av = ta ? a[p * m + i] : a[i * k + p];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            if (tb) {
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
            } else {
                const double* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace

// --- Tensor --------------------------------------------------------------

Tensor Tensor::create(Shape shape, std::vector<double> values, bool requires_grad) {
    for (std::size_t e : shape) {
        if (e == 0) throw std::invalid_argument("tensor_create: zero extent in shape " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("tensor_create: shape " + shape_str(shape) + " needs " +
                                    std::to_string(shape_numel(shape)) + " values, got " +
                                    std::to_string(values.size()));
    }
    check_finite(values, "tensor_create");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return create(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return create({}, {value}, requires_grad); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(int axis) const { return shape()[norm_axis(axis, rank(), "dim")]; }

std::span<const double> Tensor::values() const { return node_->values; }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->values[0];
}

std::span<double> Tensor::mutable_values() {
    if (!node_->is_leaf) throw std::logic_error("mutable_values: tensor is not a leaf");
    return node_->values;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->is_leaf; }
std::span<const double> Tensor::grad() const { return node_->grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach(bool requires_grad) const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->values = node_->values;
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

// --- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; }, "div");
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; }, "add_scalar");
}

Tensor scale(const Tensor& a, double c) {
    return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; }, "scale");
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Tensor log(const Tensor& a) {
    for (double x : a.values()) {
        if (x < 0.0) throw std::domain_error("log: negative argument");
    }
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; }, "log");
}

Tensor sqrt(const Tensor& a) {
    for (double x : a.values()) {
        if (x < 0.0) throw std::domain_error("sqrt: negative argument");
    }
    return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; }, "sqrt");
}

Tensor square(const Tensor& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; }, "square");
}

Tensor clip(const Tensor& a, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clip: lo > hi");
    return unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; }, "clip");
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [inv_sqrt_2pi](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
        },
        "gelu");
}

// --- reductions ----------------------------------------------------------

Tensor sum(const Tensor& t, std::vector<int> axes, bool keepdims) {
    std::vector<std::size_t> ax;
    for (int a : axes) ax.push_back(norm_axis(a, t.rank(), "sum"));
    std::sort(ax.begin(), ax.end());
    ax.erase(std::unique(ax.begin(), ax.end()), ax.end());
    Tensor r = t;
    for (auto it = ax.rbegin(); it != ax.rend(); ++it) r = sum_axis(r, *it);
    if (keepdims) return r;
    Shape s;
    for (std::size_t i = 0; i < t.rank(); ++i) {
        if (!std::binary_search(ax.begin(), ax.end(), i)) s.push_back(t.shape()[i]);
    }
    return reshape(r, s);
}

Tensor sum(const Tensor& t) {
    auto tn = t.node();
    double s = 0.0;
    for (double v : tn->values) s += v;
    std::size_t n = t.numel();
    return make_op({}, {s}, {tn},
                   [tn, n](const std::vector<double>& g) {
                       for (std::size_t i = 0; i < n; ++i) tn->grad[i] += g[0];
                   },
                   "sum");
}

Tensor mean(const Tensor& t, std::vector<int> axes, bool keepdims) {
    std::size_t count = 1;
    std::vector<std::size_t> seen;
    for (int a : axes) {
        std::size_t ax = norm_axis(a, t.rank(), "mean");
        if (std::find(seen.begin(), seen.end(), ax) == seen.end()) {
            seen.push_back(ax);
            count *= t.shape()[ax];
        }
    }
    return scale(sum(t, std::move(axes), keepdims), 1.0 / static_cast<double>(count));
}

Tensor mean(const Tensor& t) { return scale(sum(t), 1.0 / static_cast<double>(t.numel())); }

Tensor softmax(const Tensor& t, int axis) {
    std::size_t ax = norm_axis(axis, t.rank(), "softmax");
    auto sp = split_at(t.shape(), ax);
    auto tn = t.node();
    std::vector<double> out(t.numel());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            auto idx = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
            double mx = tn->values[idx(0)];
            for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, tn->values[idx(l)]);
            double z = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) {
                out[idx(l)] = std::exp(tn->values[idx(l)] - mx);
                z += out[idx(l)];
            }
            for (std::size_t l = 0; l < sp.len; ++l) out[idx(l)] /= z;
        }
    }
    auto y = std::make_shared<std::vector<double>>(out);
    return make_op(t.shape(), std::move(out), {tn},
                   [tn, sp, y](const std::vector<double>& g) {
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                           for (std::size_t i = 0; i < sp.inner; ++i) {
                               auto idx = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
                               double dot = 0.0;
                               for (std::size_t l = 0; l < sp.len; ++l) dot += g[idx(l)] * (*y)[idx(l)];
                               for (std::size_t l = 0; l < sp.len; ++l)
                                   tn->grad[idx(l)] += (*y)[idx(l)] * (g[idx(l)] - dot);
                           }
                       }
                   },
                   "softmax");
}

Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    if (t.rank() == 0) throw std::invalid_argument("layer_norm: scalar input");
    std::size_t d = t.dim(-1);
    if (gamma.numel() != d || beta.numel() != d) {
        throw std::invalid_argument("layer_norm: gamma/beta must have " + std::to_string(d) + " elements");
    }
    std::size_t rows = t.numel() / d;
    auto tn = t.node(), gn = gamma.node(), bn = beta.node();
    auto xhat = std::make_shared<std::vector<double>>(t.numel());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(t.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = tn->values.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(d);
        double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            double xh = (x[j] - mu) * rs;
            (*xhat)[r * d + j] = xh;
            out[r * d + j] = xh * gn->values[j] + bn->values[j];
        }
    }
    return make_op(t.shape(), std::move(out), {tn, gn, bn},
                   [tn, gn, bn, xhat, rstd, rows, d](const std::vector<double>& g) {
                       std::vector<double> dxh(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                           const double* xh = xhat->data() + r * d;
                           const double* gr = g.data() + r * d;
                           if (gn->requires_grad)
                               for (std::size_t j = 0; j < d; ++j) gn->grad[j] += gr[j] * xh[j];
                           if (bn->requires_grad)
                               for (std::size_t j = 0; j < d; ++j) bn->grad[j] += gr[j];
                           if (!tn->requires_grad) continue;
                           double s1 = 0.0, s2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                               dxh[j] = gr[j] * gn->values[j];
                               s1 += dxh[j];
                               s2 += dxh[j] * xh[j];
                           }
                           double inv_d = 1.0 / static_cast<double>(d);
                           for (std::size_t j = 0; j < d; ++j)
                               tn->grad[r * d + j] += (*rstd)[r] * (dxh[j] - inv_d * s1 - xh[j] * inv_d * s2);
                       }
                   },
                   "layer_norm");
}

// --- shape ---------------------------------------------------------------

Tensor reshape(const Tensor& t, Shape shape) {
    if (shape_numel(shape) != t.numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(shape));
    }
    auto tn = t.node();
    std::size_t n = t.numel();
    std::vector<double> v = tn->values;
    return make_op(std::move(shape), std::move(v), {tn},
                   [tn, n](const std::vector<double>& g) {
                       for (std::size_t i = 0; i < n; ++i) tn->grad[i] += g[i];
                   },
                   "reshape");
}

Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes) {
    std::size_t r = t.rank();
    if (axes.size() != r) throw std::invalid_argument("permute: axis count mismatch");
    std::vector<bool> used(r, false);
    for (std::size_t a : axes) {
        if (a >= r || used[a]) throw std::invalid_argument("permute: invalid axis permutation");
        used[a] = true;
    }
    const Shape& in = t.shape();
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
    Shape out_shape(r);
    std::vector<std::size_t> src_stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in[axes[i]];
        src_stride[i] = in_stride[axes[i]];
    }
    std::size_t n = t.numel();
    auto map = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> counter(r, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < n; ++i) {
        (*map)[i] = src;
        for (std::size_t k = r; k-- > 0;) {
            ++counter[k];
            src += src_stride[k];
            if (counter[k] < out_shape[k]) break;
            src -= src_stride[k] * counter[k];
            counter[k] = 0;
        }
    }
    auto tn = t.node();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = tn->values[(*map)[i]];
    return make_op(std::move(out_shape), std::move(out), {tn},
                   [tn, map, n](const std::vector<double>& g) {
                       for (std::size_t i = 0; i < n; ++i) tn->grad[(*map)[i]] += g[i];
                   },
                   "permute");
}

Tensor transpose(const Tensor& t, int axis_a, int axis_b) {
    std::size_t a = norm_axis(axis_a, t.rank(), "transpose");
    std::size_t b = norm_axis(axis_b, t.rank(), "transpose");
    std::vector<std::size_t> axes(t.rank());
    std::iota(axes.begin(), axes.end(), std::size_t{0});
    std::swap(axes[a], axes[b]);
    return permute(t, axes);
}

Tensor broadcast_to(const Tensor& t, Shape shape) {
    if (!is_suffix(t.shape(), shape) && t.numel() != 1) {
        throw std::invalid_argument("broadcast_to: " + shape_str(t.shape()) + " is not a suffix of " +
                                    shape_str(shape));
    }
    auto tn = t.node();
    std::size_t n = shape_numel(shape), m = t.numel();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = tn->values[i % m];
    return make_op(std::move(shape), std::move(out), {tn},
                   [tn, n, m](const std::vector<double>& g) {
                       for (std::size_t i = 0; i < n; ++i) tn->grad[i % m] += g[i];
                   },
                   "broadcast_to");
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    std::size_t ax = norm_axis(axis, parts[0].rank(), "concat");
    Shape out_shape = parts[0].shape();
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        if (p.rank() != out_shape.size()) throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t i = 0; i < p.rank(); ++i) {
            if (i != ax && p.shape()[i] != parts[0].shape()[i])
                throw std::invalid_argument("concat: shape mismatch off the concat axis");
        }
        out_shape[ax] += p.shape()[ax];
    }
    auto sp = split_at(out_shape, ax);
    std::vector<NodePtr> nodes;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        offsets.push_back(off);
        off += p.shape()[ax];
    }
    std::vector<double> out(shape_numel(out_shape));
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        std::size_t len = nodes[k]->shape[ax];
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    out[(o * sp.len + offsets[k] + l) * sp.inner + i] = nodes[k]->values[(o * len + l) * sp.inner + i];
    }
    return make_op(std::move(out_shape), std::move(out), nodes,
                   [nodes, offsets, sp, ax](const std::vector<double>& g) {
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                           if (!nodes[k]->requires_grad) continue;
                           std::size_t len = nodes[k]->shape[ax];
                           for (std::size_t o = 0; o < sp.outer; ++o)
                               for (std::size_t l = 0; l < len; ++l)
                                   for (std::size_t i = 0; i < sp.inner; ++i)
                                       nodes[k]->grad[(o * len + l) * sp.inner + i] +=
                                           g[(o * sp.len + offsets[k] + l) * sp.inner + i];
                       }
                   },
                   "concat");
}

Tensor gather_rows(const Tensor& t, const std::vector<std::vector<std::size_t>>& index) {
    if (t.rank() != 3) throw std::invalid_argument("gather_rows: expected rank-3 tensor");
    std::size_t b = t.dim(0), n = t.dim(1), d = t.dim(2);
    if (index.size() != b) throw std::invalid_argument("gather_rows: index batch mismatch");
    std::size_t k = index.empty() ? 0 : index[0].size();
    if (k == 0) throw std::invalid_argument("gather_rows: empty index");
    for (const auto& row : index) {
        if (row.size() != k) throw std::invalid_argument("gather_rows: ragged index");
        for (std::size_t j : row) {
            if (j >= n) throw std::invalid_argument("gather_rows: index out of range");
        }
    }
    auto tn = t.node();
    auto idx = std::make_shared<std::vector<std::vector<std::size_t>>>(index);
    std::vector<double> out(b * k * d);
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t j = 0; j < k; ++j)
            std::copy_n(tn->values.begin() + static_cast<std::ptrdiff_t>((bi * n + index[bi][j]) * d), d,
                        out.begin() + static_cast<std::ptrdiff_t>((bi * k + j) * d));
    return make_op({b, k, d}, std::move(out), {tn},
                   [tn, idx, b, n, k, d](const std::vector<double>& g) {
                       for (std::size_t bi = 0; bi < b; ++bi)
                           for (std::size_t j = 0; j < k; ++j)
                               for (std::size_t c = 0; c < d; ++c)
                                   tn->grad[(bi * n + (*idx)[bi][j]) * d + c] += g[(bi * k + j) * d + c];
                   },
                   "gather_rows");
}

// --- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) throw std::invalid_argument("matmul: operands must have rank >= 2");
    std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
    if (k != k2) {
        throw std::invalid_argument("matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    }
    Shape batch_a(a.shape().begin(), a.shape().end() - 2);
    Shape batch_b(b.shape().begin(), b.shape().end() - 2);
    bool shared_b = batch_b.empty();
    if (!shared_b && batch_a != batch_b) throw std::invalid_argument("matmul: batch dims not broadcastable");
    std::size_t batch = shape_numel(batch_a);
    Shape out_shape = batch_a;
    out_shape.push_back(m);
    out_shape.push_back(n);
    auto an = a.node(), bn = b.node();
    std::vector<double> out(batch * m * n, 0.0);
    for (std::size_t t = 0; t < batch; ++t) {
        const double* bp = bn->values.data() + (shared_b ? 0 : t * k * n);
        gemm_acc(an->values.data() + t * m * k, bp, out.data() + t * m * n, m, k, n, false, false);
    }
    return make_op(std::move(out_shape), std::move(out), {an, bn},
                   [an, bn, batch, m, k, n, shared_b](const std::vector<double>& g) {
                       for (std::size_t t = 0; t < batch; ++t) {
                           const double* gp = g.data() + t * m * n;
                           const double* bp = bn->values.data() + (shared_b ? 0 : t * k * n);
                           if (an->requires_grad)
                               gemm_acc(gp, bp, an->grad.data() + t * m * k, m, n, k, false, true);
                           if (bn->requires_grad)
                               gemm_acc(an->values.data() + t * m * k, gp,
                                        bn->grad.data() + (shared_b ? 0 : t * k * n), k, m, n, true, false);
                       }
                   },
                   "matmul");
}

Tensor pairwise_sq_dist(const Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("pairwise_sq_dist: expected [N, d]");
    std::size_t n = x.dim(0), d = x.dim(1);
    auto xn = x.node();
    std::vector<double> out(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                double diff = xn->values[i * d + c] - xn->values[j * d + c];
                s += diff * diff;
            }
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    return make_op({n, n}, std::move(out), {xn},
                   [xn, n, d](const std::vector<double>& g) {
                       for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < n; ++j) {
                               if (i == j) continue;
                               double w = 2.0 * (g[i * n + j] + g[j * n + i]);
                               for (std::size_t c = 0; c < d; ++c)
                                   xn->grad[i * d + c] += w * (xn->values[i * d + c] - xn->values[j * d + c]);
                           }
                       }
                   },
                   "pairwise_sq_dist");
}

// --- losses --------------------------------------------------------------

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw std::invalid_argument("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                    shape_str(target.shape()));
    }
    auto pn = pred.node(), tn = target.node();
    std::size_t n = pred.numel();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double diff = pn->values[i] - tn->values[i];
        s += diff * diff;
    }
    return make_op({}, {s / static_cast<double>(n)}, {pn, tn},
                   [pn, tn, n](const std::vector<double>& g) {
                       double c = 2.0 * g[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                           double diff = pn->values[i] - tn->values[i];
                           if (pn->requires_grad) pn->grad[i] += c * diff;
                           if (tn->requires_grad) tn->grad[i] -= c * diff;
                       }
                   },
                   "mse_loss");
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be [batch, classes]");
    std::size_t b = logits.dim(0), c = logits.dim(1);
    if (labels.size() != b) throw std::invalid_argument("cross_entropy: label count mismatch");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range");
    }
    auto ln = logits.node();
    auto probs = std::make_shared<std::vector<double>>(b * c);
    auto ys = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = ln->values.data() + i * c;
        double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - mx) / z;
        total += mx + std::log(z) - row[(*ys)[i]];
    }
    return make_op({}, {total / static_cast<double>(b)}, {ln},
                   [ln, probs, ys, b, c](const std::vector<double>& g) {
                       double s = g[0] / static_cast<double>(b);
                       for (std::size_t i = 0; i < b; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                               ln->grad[i * c + j] +=
                                   s * ((*probs)[i * c + j] - (static_cast<int>(j) == (*ys)[i] ? 1.0 : 0.0));
                   },
                   "cross_entropy");
}

// --- differentiation -----------------------------------------------------

std::vector<Tensor> backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                    (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    std::vector<Tensor> leaves;
    if (!loss.requires_grad()) return leaves;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (!n->is_leaf) {
            n->grad.assign(n->values.size(), 0.0);
        } else if (n->grad.empty()) {
            n->grad.assign(n->values.size(), 0.0);
        }
    }
    Node* root = loss.node().get();
    if (root->is_leaf) {
        root->grad[0] += 1.0;
    } else {
        root->grad[0] = 1.0;
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->is_leaf && n->backward) n->backward(n->grad);
    }
    // Leaves are owned by their children's parent lists; collect in reach order.
    std::unordered_set<Node*> seen;
    for (Node* n : order) {
        for (const auto& p : n->parents) {
            if (p->is_leaf && p->requires_grad && seen.insert(p.get()).second) leaves.push_back(Tensor::from_node(p));
        }
    }
    if (root->is_leaf) leaves.push_back(loss);
    return leaves;
}

double relative_error(double analytic, double numeric) {
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    return std::abs(analytic - numeric) / denom;
}

double GradReport::worst() const {
    double w = 0.0;
    for (double e : max_rel_error) w = std::max(w, e);
    return w;
}

GradReport finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
    for (auto& p : params) {
        if (!p.is_leaf() || !p.requires_grad())
            throw std::invalid_argument("finite_diff_check: parameters must be requires-grad leaves");
        p.zero_grad();
    }
    Tensor loss = f();
    if (loss.numel() != 1) throw std::invalid_argument("finite_diff_check: function is not scalar-valued");
    backward(loss);

    GradReport report;
    report.step = h;
    for (auto& p : params) {
        std::vector<double> analytic(p.numel(), 0.0);
        if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
        auto vals = p.mutable_values();
        double worst = 0.0;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double orig = vals[i];
            vals[i] = orig + h;
            double fp = f().item();
            vals[i] = orig - h;
            double fm = f().item();
            vals[i] = orig;
            double numeric = (fp - fm) / (2.0 * h);
            worst = std::max(worst, relative_error(analytic[i], numeric));
        }
        report.max_rel_error.push_back(worst);
    }
    return report;
}

GradReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double h) {
    Tensor x = point.detach(true);
    return finite_diff_check([&] { return f(x); }, {x}, h);
}

}  // namespace mimir
