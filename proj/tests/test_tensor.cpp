#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "mimir/rng.hpp"
#include "mimir/tensor.hpp"

using namespace mimir;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::create(std::move(shape), std::move(v), grad);
}

Shape random_shape(Rng& rng, std::size_t rank_max = 3) {
    Shape s(1 + rng.below(rank_max));
    for (auto& e : s) e = 1 + rng.below(4);
    return s;
}

// Weighted sum so every output element carries a distinct, O(1) cotangent.
Tensor weighted(const Tensor& t, Rng& rng) {
    Tensor w = random_tensor(rng, t.shape(), 0.5, 1.5);
    return sum(mul(t, w));
}

constexpr int kSeeds = 100;
constexpr double kTol = 1e-4;

void expect_values(const Tensor& t, std::vector<double> expected, double tol = 0.0) {
    ASSERT_EQ(t.numel(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.at(i), expected[i], tol) << "index " << i;
}

}  // namespace

TEST(TensorCreate, IdentityLike) {
    Tensor t = Tensor::create({2, 2}, {1, 0, 0, 1});
    EXPECT_EQ(t.shape(), (Shape{2, 2}));
    expect_values(t, {1, 0, 0, 1});
    EXPECT_TRUE(t.is_leaf());
}

TEST(TensorCreate, RejectsLengthMismatch) { EXPECT_THROW(Tensor::create({3}, {1, 2}), std::invalid_argument); }

TEST(TensorCreate, RejectsZeroExtent) { EXPECT_THROW(Tensor::create({0}, {}), std::invalid_argument); }

TEST(TensorCreate, RejectsNonFinite) { EXPECT_THROW(Tensor::create({1}, {NAN}), NumericError); }

TEST(Matmul, IdentityLeavesMatrix) {
    Tensor i2 = Tensor::create({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::create({2, 2}, {3, -1, 4, 2.5});
    expect_values(matmul(i2, m), {3, -1, 4, 2.5});
}

TEST(Matmul, HandComputed) {
    Tensor a = Tensor::create({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::create({2, 1}, {5, 6});
    Tensor c = matmul(a, b);
    EXPECT_EQ(c.shape(), (Shape{2, 1}));
    expect_values(c, {17, 39});
}

TEST(Matmul, InnerMismatchThrows) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), std::invalid_argument);
}

TEST(Matmul, GradientContract) {
    // dL/da = G b^T, dL/db = a^T G with G = ones for L = sum(a b).
    Tensor a = Tensor::create({2, 2}, {1, 2, 3, 4}, true);
    Tensor b = Tensor::create({2, 1}, {5, 6}, true);
    backward(sum(matmul(a, b)));
    expect_values(Tensor::create({2, 2}, {a.grad().begin(), a.grad().end()}), {5, 6, 5, 6});
    expect_values(Tensor::create({2, 1}, {b.grad().begin(), b.grad().end()}), {4, 6});
}

TEST(Elementwise, AddZeroIsIdentity) {
    Tensor x = Tensor::create({3}, {1.5, -2, 7});
    expect_values(add(x, Tensor::scalar(0.0)), {1.5, -2, 7});
}

TEST(Elementwise, ClipBounds) { expect_values(clip(Tensor::create({3}, {-0.2, 0.5, 1.3}), 0, 1), {0, 0.5, 1}); }

TEST(Elementwise, LogOfNegativeThrows) { EXPECT_THROW(log(Tensor::create({1}, {-1})), std::domain_error); }

TEST(Elementwise, SqrtOfNegativeThrows) { EXPECT_THROW(sqrt(Tensor::create({1}, {-1})), std::domain_error); }

TEST(Elementwise, ShapeMismatchThrows) {
    EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), std::invalid_argument);
}

TEST(Elementwise, OverflowIsNumericError) { EXPECT_THROW(exp(Tensor::create({1}, {1000})), NumericError); }

TEST(Reduce, SoftmaxOfZeros) { expect_values(softmax(Tensor::create({2}, {0, 0})), {0.5, 0.5}); }

TEST(Reduce, MeanOfVector) { EXPECT_DOUBLE_EQ(mean(Tensor::create({3}, {2, 4, 6})).item(), 4.0); }

TEST(Reduce, LayerNormOfConstantRowIsZero) {
    Tensor y = layer_norm(Tensor::full({1, 4}, 3.0), Tensor::full({4}, 1.0), Tensor::zeros({4}));
    expect_values(y, {0, 0, 0, 0});
}

TEST(Reduce, InvalidAxisThrows) {
    EXPECT_THROW(sum(Tensor::zeros({2, 2}), {2}), std::invalid_argument);
    EXPECT_THROW(softmax(Tensor::zeros({2, 2}), 5), std::invalid_argument);
}

TEST(Reduce, LayerNormStandardizes) {
    Rng rng(3);
    Tensor x = random_tensor(rng, {5, 16}, -3, 3);
    Tensor y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}));
    for (std::size_t r = 0; r < 5; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 16; ++c) m += y.at(r * 16 + c) / 16;
        for (std::size_t c = 0; c < 16; ++c) v += (y.at(r * 16 + c) - m) * (y.at(r * 16 + c) - m) / 16;
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v, 1.0, 1e-5);
    }
}

TEST(Loss, MseIdentityIsZero) {
    Tensor p = Tensor::create({2}, {0.3, 0.4});
    EXPECT_EQ(mse_loss(p, p).item(), 0.0);
}

TEST(Loss, MseHandValue) { EXPECT_DOUBLE_EQ(mse_loss(Tensor::zeros({2}), Tensor::full({2}, 1.0)).item(), 1.0); }

TEST(Loss, MseShapeMismatch) { EXPECT_THROW(mse_loss(Tensor::zeros({2}), Tensor::zeros({3})), std::invalid_argument); }

TEST(Loss, CrossEntropyUniform) {
    std::vector<int> y = {3};
    EXPECT_NEAR(cross_entropy(Tensor::zeros({1, 10}), y).item(), std::log(10.0), 1e-12);
    EXPECT_NEAR(cross_entropy(Tensor::zeros({1, 10}), y).item(), 2.302585, 1e-6);
}

TEST(Loss, CrossEntropyLargeMargin) {
    std::vector<int> y = {1};
    EXPECT_NEAR(cross_entropy(Tensor::create({1, 3}, {0, 100, 0}), y).item(), 0.0, 1e-40);
}

TEST(Loss, CrossEntropyLabelOutOfRange) {
    std::vector<int> y = {10};
    EXPECT_THROW(cross_entropy(Tensor::zeros({1, 10}), y), std::invalid_argument);
}

TEST(Backward, Polynomial) {
    Tensor x = Tensor::create({2}, {1, 2}, true);
    auto leaves = backward(sum(square(x)));
    ASSERT_EQ(leaves.size(), 1u);
    EXPECT_EQ(x.grad()[0], 2.0);
    EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, ConstantLossHasNoGradients) { EXPECT_TRUE(backward(Tensor::scalar(2.0)).empty()); }

TEST(Backward, NonScalarThrows) {
    Tensor x = Tensor::create({2}, {1, 2}, true);
    EXPECT_THROW(backward(square(x)), std::invalid_argument);
}

TEST(Backward, SecondPassDoublesLeafGradients) {
    Tensor x = Tensor::create({2}, {1, 2}, true);
    Tensor loss = sum(mul(square(x), Tensor::create({2}, {1, 3})));
    backward(loss);
    std::vector<double> once(x.grad().begin(), x.grad().end());
    backward(loss);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(x.grad()[i], 2.0 * once[i]);
    x.zero_grad();
    backward(loss);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(x.grad()[i], once[i]);
}

TEST(Backward, GradientShapeMatchesLeaf) {
    Rng rng(9);
    Tensor a = random_tensor(rng, {3, 4}, -1, 1, true);
    Tensor b = random_tensor(rng, {4}, -1, 1, true);
    backward(sum(add(a, b)));
    EXPECT_EQ(a.grad().size(), a.numel());
    EXPECT_EQ(b.grad().size(), b.numel());
    for (double g : b.grad()) EXPECT_EQ(g, 3.0);
}

TEST(FiniteDiff, SquareAtThree) {
    GradReport r = finite_diff_check([](const Tensor& x) { return sum(square(x)); }, Tensor::create({1}, {3.0}),
                                     1e-4);
    EXPECT_LT(r.worst(), 1e-6);
    EXPECT_EQ(r.step, 1e-4);
}

TEST(FiniteDiff, ZeroStepThrows) {
    EXPECT_THROW(finite_diff_check([](const Tensor& x) { return sum(x); }, Tensor::create({1}, {1.0}), 0.0),
                 std::invalid_argument);
}

TEST(FiniteDiff, NonScalarThrows) {
    EXPECT_THROW(finite_diff_check([](const Tensor& x) { return square(x); }, Tensor::create({2}, {1.0, 2.0})),
                 std::invalid_argument);
}

TEST(FiniteDiff, RelativeErrorFloor) {
    EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(relative_error(1.0, 1.5), 0.5 / 1.5);
    EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-13), 0.1);
}

// --- randomized gradient property suites ---------------------------------

namespace {

using UnaryBuilder = std::function<Tensor(const Tensor&)>;

void check_unary(const char* name, const UnaryBuilder& op, double lo, double hi,
                 const std::function<bool(double)>& keep = {}) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(1000 + seed);
        Shape s = random_shape(rng);
        std::vector<double> v(shape_numel(s));
        for (auto& x : v) {
            do x = rng.uniform(lo, hi);
            while (keep && !keep(x));
        }
        Tensor x = Tensor::create(s, std::move(v), true);
        Tensor w = random_tensor(rng, s, 0.5, 1.5);
        GradReport r = finite_diff_check([&] { return sum(mul(op(x), w)); }, {x});
        EXPECT_LE(r.worst(), kTol) << name << " seed " << seed << " shape " << shape_str(s);
    }
}

void check_binary(const char* name, const std::function<Tensor(const Tensor&, const Tensor&)>& op, double lo,
                  double hi, bool suffix_broadcast) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(2000 + seed);
        Shape s = random_shape(rng);
        Shape sb = s;
        if (suffix_broadcast && seed % 2 == 1) sb = Shape(s.end() - 1, s.end());
        Tensor a = random_tensor(rng, s, lo, hi, true);
        Tensor b = random_tensor(rng, sb, lo, hi, true);
        Tensor w = random_tensor(rng, s, 0.5, 1.5);
        GradReport r = finite_diff_check([&] { return sum(mul(op(a, b), w)); }, {a, b});
        EXPECT_LE(r.worst(), kTol) << name << " seed " << seed;
    }
}

}  // namespace

TEST(GradientSuite, Add) { check_binary("add", [](auto& a, auto& b) { return add(a, b); }, -1, 1, true); }
TEST(GradientSuite, Sub) { check_binary("sub", [](auto& a, auto& b) { return sub(a, b); }, -1, 1, true); }
TEST(GradientSuite, Mul) { check_binary("mul", [](auto& a, auto& b) { return mul(a, b); }, -1, 1, true); }
TEST(GradientSuite, Div) { check_binary("div", [](auto& a, auto& b) { return div(a, b); }, 0.5, 2, true); }

TEST(GradientSuite, Scale) { check_unary("scale", [](auto& x) { return scale(x, -1.7); }, -1, 1); }
TEST(GradientSuite, AddScalar) { check_unary("add_scalar", [](auto& x) { return add_scalar(x, 0.3); }, -1, 1); }
TEST(GradientSuite, Neg) { check_unary("neg", [](auto& x) { return neg(x); }, -1, 1); }
TEST(GradientSuite, Exp) { check_unary("exp", [](auto& x) { return exp(x); }, -2, 2); }
TEST(GradientSuite, Log) { check_unary("log", [](auto& x) { return log(x); }, 0.2, 3); }
TEST(GradientSuite, Sqrt) { check_unary("sqrt", [](auto& x) { return sqrt(x); }, 0.2, 3); }
TEST(GradientSuite, Square) { check_unary("square", [](auto& x) { return square(x); }, -2, 2); }
TEST(GradientSuite, Gelu) { check_unary("gelu", [](auto& x) { return gelu(x); }, -3, 3); }
TEST(GradientSuite, Clip) {
    // Points within 1e-3 of a kink are resampled: the derivative is undefined there.
    check_unary("clip", [](auto& x) { return clip(x, -0.5, 0.5); }, -1, 1,
                [](double x) { return std::abs(std::abs(x) - 0.5) > 1e-3; });
}

TEST(GradientSuite, SumAndMeanOverAxes) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(3000 + seed);
        Tensor x = random_tensor(rng, {2 + rng.below(2), 3, 2 + rng.below(3)}, -1, 1, true);
        int axis = static_cast<int>(rng.below(3));
        bool keep = rng.below(2) == 1;
        Tensor ws = random_tensor(rng, sum(x, {axis}, keep).shape(), 0.5, 1.5);
        Tensor wm = random_tensor(rng, ws.shape(), 0.5, 1.5);
        GradReport r = finite_diff_check(
            [&] { return add(sum(mul(sum(x, {axis}, keep), ws)), sum(mul(mean(x, {axis}, keep), wm))); }, {x});
        EXPECT_LE(r.worst(), kTol) << "seed " << seed;
    }
}

TEST(GradientSuite, Softmax) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(4000 + seed);
        Tensor x = random_tensor(rng, {1 + rng.below(3), 2 + rng.below(4)}, -2, 2, true);
        int axis = static_cast<int>(rng.below(2));
        Tensor w = random_tensor(rng, x.shape(), -1, 1);
        GradReport r = finite_diff_check([&] { return sum(mul(softmax(x, axis), w)); }, {x});
        EXPECT_LE(r.worst(), kTol) << "seed " << seed;
    }
}

TEST(GradientSuite, LayerNorm) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(5000 + seed);
        // Rows of width 2 normalize to +-1 whatever x is, so d(out)/dx is eps-sized noise.
        std::size_t d = 3 + rng.below(5);
        Tensor x = random_tensor(rng, {1 + rng.below(3), d}, -2, 2, true);
        Tensor g = random_tensor(rng, {d}, 0.5, 1.5, true);
        Tensor b = random_tensor(rng, {d}, -0.5, 0.5, true);
        Tensor w = random_tensor(rng, x.shape(), -1, 1);
        GradReport r = finite_diff_check([&] { return sum(mul(layer_norm(x, g, b), w)); }, {x, g, b});
        EXPECT_LE(r.worst(), kTol) << "seed " << seed;
    }
}

TEST(GradientSuite, MatmulBatched) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(6000 + seed);
        std::size_t bt = 1 + rng.below(2), m = 1 + rng.below(3), k = 1 + rng.below(3), n = 1 + rng.below(3);
        Tensor a = random_tensor(rng, {bt, m, k}, -1, 1, true);
        Tensor b = seed % 2 ? random_tensor(rng, {k, n}, -1, 1, true) : random_tensor(rng, {bt, k, n}, -1, 1, true);
        Tensor w = random_tensor(rng, {bt, m, n}, 0.5, 1.5);
        GradReport r = finite_diff_check([&] { return sum(mul(matmul(a, b), w)); }, {a, b});
        EXPECT_LE(r.worst(), kTol) << "seed " << seed;
    }
}

TEST(GradientSuite, ShapeOps) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(7000 + seed);
        Tensor x = random_tensor(rng, {2, 3, 2}, -1, 1, true);
        Tensor y = random_tensor(rng, {2, 1 + rng.below(2), 2}, -1, 1, true);
        std::vector<std::vector<std::size_t>> idx = {{rng.below(3), rng.below(3)}, {rng.below(3), rng.below(3)}};
        GradReport r = finite_diff_check(
            [&] {
                Tensor t = permute(x, {2, 0, 1});
                Tensor u = reshape(transpose(x, 0, 2), {3, 4});
                Tensor c = concat({x, y}, 1);
                Tensor g = gather_rows(x, idx);
                Tensor bc = broadcast_to(y, {3, 2, y.dim(1), 2});
                Rng wr(seed);
                return add(add(weighted(t, wr), weighted(u, wr)),
                           add(add(weighted(c, wr), weighted(g, wr)), weighted(bc, wr)));
            },
            {x, y});
        EXPECT_LE(r.worst(), kTol) << "seed " << seed;
    }
}

TEST(GradientSuite, PairwiseDistanceAndLosses) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(8000 + seed);
        std::size_t n = 2 + rng.below(4), c = 2 + rng.below(3);
        Tensor x = random_tensor(rng, {n, c}, -1, 1, true);
        Tensor t = random_tensor(rng, {n, c}, -1, 1);
        std::vector<int> y(n);
        for (auto& v : y) v = static_cast<int>(rng.below(c));
        Tensor w = random_tensor(rng, {n, n}, 0.5, 1.5);
        GradReport r = finite_diff_check(
            [&] { return add(add(sum(mul(pairwise_sq_dist(x), w)), mse_loss(x, t)), cross_entropy(x, y)); }, {x});
        EXPECT_LE(r.worst(), kTol) << "seed " << seed;
    }
}

TEST(Properties, SoftmaxRowsSumToOne) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(9000 + seed);
        std::size_t rows = 1 + rng.below(4), cols = 1 + rng.below(6);
        Tensor p = softmax(random_tensor(rng, {rows, cols}, -20, 20));
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < cols; ++c) {
                double v = p.at(r * cols + c);
                EXPECT_GT(v, 0.0);
                EXPECT_LE(v, 1.0);
                s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Properties, NoNaNWithinDomain) {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(9500 + seed);
        Tensor x = random_tensor(rng, {4, 5}, -30, 30);
        Tensor pos = random_tensor(rng, {4, 5}, 1e-6, 30);
        for (const Tensor& t : {gelu(x), softmax(x), layer_norm(x, Tensor::full({5}, 1.0), Tensor::zeros({5})),
                                log(pos), sqrt(pos), clip(x, -1, 1)})
            for (double v : t.values()) EXPECT_TRUE(std::isfinite(v));
    }
}

TEST(Rng, SerializeRoundTrip) {
    Rng a(42);
    for (int i = 0; i < 17; ++i) a.next_u64();
    Rng b = Rng::deserialize(a.serialize());
    EXPECT_TRUE(a == b);
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_THROW(Rng::deserialize("not a state"), std::invalid_argument);
}

TEST(Rng, TruncatedNormalWithinTwoStd) {
    Rng r(5);
    for (int i = 0; i < 10000; ++i) EXPECT_LE(std::abs(r.truncated_normal(0.02)), 0.04);
}
