#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "mimir/mi.hpp"
#include "mimir/rng.hpp"

using namespace mimir;
using namespace mimir::mi;

namespace {

Matrix random_samples(Rng& rng, std::size_t n, std::size_t d, double lo = -1.0, double hi = 1.0) {
    Matrix m(n, d);
    for (auto& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k)
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += a(i, k) * b(k, j);
    return c;
}

// Explicit (1/N^2) tr(K_x H K_y H) with every matrix materialized.
double hsic_oracle(const Matrix& kx, const Matrix& ky) {
    std::size_t n = kx.rows;
    Matrix h = identity(n);
    for (auto& v : h.data) v -= 1.0 / static_cast<double>(n);
    Matrix p = matmul(matmul(matmul(kx, h), ky), h);
    double tr = 0.0;
    for (std::size_t i = 0; i < n; ++i) tr += p(i, i);
    return tr / static_cast<double>(n * n);
}

std::vector<double> eigen_oracle(const Matrix& m) {
    Eigen::MatrixXd e(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(e, Eigen::EigenvaluesOnly);
    std::vector<double> v(solver.eigenvalues().data(), solver.eigenvalues().data() + m.rows);
    for (auto& x : v) x = std::max(x, 0.0);
    std::sort(v.rbegin(), v.rend());
    return v;
}

Matrix random_stochastic(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            // Occasional exact zeros exercise the 0 log 0 convention.
            m(i, j) = rng.below(5) == 0 ? 0.0 : rng.uniform();
            s += m(i, j);
        }
        if (s == 0.0) {
            m(i, rng.below(cols)) = 1.0;
            s = 1.0;
        }
        for (std::size_t j = 0; j < cols; ++j) m(i, j) /= s;
    }
    return m;
}

std::vector<double> random_pmf(Rng& rng, std::size_t n) {
    Matrix m = random_stochastic(rng, 1, n);
    return m.data;
}

// joint(i, j) = p(i) * channel(i, j).
Matrix joint(const std::vector<double>& p, const Matrix& channel) {
    Matrix j(channel.rows, channel.cols);
    for (std::size_t a = 0; a < channel.rows; ++a)
        for (std::size_t b = 0; b < channel.cols; ++b) j(a, b) = p[a] * channel(a, b);
    return j;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST(RbfGram, IdenticalSamplesGiveOnes) {
    Matrix x(3, 2, 0.7);
    GramMatrix g = rbf_gram(x, 1.3);
    for (double v : g.k.data) EXPECT_EQ(v, 1.0);
}

TEST(RbfGram, ClosedFormOffDiagonal) {
    double sigma = 0.8;
    Matrix x(2, 2, std::vector<double>{0, 0, sigma, sigma});
    GramMatrix g = rbf_gram(x, sigma);
    EXPECT_NEAR(g.k(0, 1), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(g.k(0, 1), 0.367879, 1e-6);
}

TEST(RbfGram, InvalidInputsThrow) {
    EXPECT_THROW(rbf_gram(Matrix(3, 1, 0.0), 0.0), std::invalid_argument);
    EXPECT_THROW(rbf_gram(Matrix(1, 1, 0.0), 1.0), std::invalid_argument);
}

TEST(RbfGram, InvariantsOnRandomSamples) {
    for (int seed = 0; seed < 30; ++seed) {
        Rng rng(seed);
        Matrix x = random_samples(rng, 2 + rng.below(10), 1 + rng.below(4));
        GramMatrix g = rbf_gram(x, median_bandwidth(x));
        for (std::size_t i = 0; i < g.size(); ++i) {
            EXPECT_EQ(g.k(i, i), 1.0);
            for (std::size_t j = 0; j < g.size(); ++j) EXPECT_LE(std::abs(g.k(i, j) - g.k(j, i)), 1e-12);
        }
        GramMatrix n = g.normalize();
        EXPECT_NEAR(n.trace(), 1.0, 1e-12);
        for (double l : eigen_oracle(n.k)) EXPECT_GE(l, -1e-10);
    }
}

TEST(MedianBandwidth, Examples) {
    EXPECT_EQ(median_bandwidth(Matrix(3, 1, std::vector<double>{0, 1, 2})), 1.0);
    EXPECT_EQ(median_bandwidth(Matrix(4, 2, 3.0)), 1.0);
    EXPECT_EQ(median_bandwidth(Matrix(2, 2, std::vector<double>{0, 0, 3, 4})), 5.0);
    EXPECT_THROW(median_bandwidth(Matrix(1, 2, 0.0)), std::invalid_argument);
}

TEST(Eigenvalues, Diagonal) {
    Matrix m(3, 3);
    m(0, 0) = 3;
    m(1, 1) = 1;
    m(2, 2) = 2;
    Spectrum s = symmetric_eigenvalues(m);
    ASSERT_EQ(s.values.size(), 3u);
    EXPECT_EQ(s.values[0], 3.0);
    EXPECT_EQ(s.values[1], 2.0);
    EXPECT_EQ(s.values[2], 1.0);
}

TEST(Eigenvalues, TwoByTwo) {
    Spectrum s = symmetric_eigenvalues(Matrix(2, 2, std::vector<double>{2, 1, 1, 2}));
    EXPECT_NEAR(s.values[0], 3.0, 1e-12);
    EXPECT_NEAR(s.values[1], 1.0, 1e-12);
}

TEST(Eigenvalues, AsymmetricThrows) {
    EXPECT_THROW(symmetric_eigenvalues(Matrix(2, 2, std::vector<double>{2, 1, 1.001, 2})), std::invalid_argument);
}

TEST(Eigenvalues, AgreesWithReferenceSolver) {
    for (int seed = 0; seed < 50; ++seed) {
        Rng rng(100 + seed);
        std::size_t n = 2 + rng.below(12);
        Matrix a = random_samples(rng, n, n);
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) m(i, j) = 0.5 * (a(i, j) + a(j, i));
        auto ref = eigen_oracle(m);
        auto got = symmetric_eigenvalues(m).values;
        ASSERT_EQ(got.size(), n);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], ref[i], 1e-10) << "seed " << seed;
    }
}

TEST(Eigenvalues, NormalizedGramSpectrumSumsToOne) {
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Matrix x = random_samples(rng, 2 + rng.below(20), 3);
        EXPECT_NEAR(symmetric_eigenvalues(rbf_gram(x, median_bandwidth(x)).normalize().k).sum(), 1.0, 1e-9);
    }
}

TEST(RenyiEntropy, UniformSpectrumIsLogN) {
    for (std::size_t n : {2u, 4u, 7u, 16u}) {
        GramMatrix g{identity(n), 1.0, false};
        for (double a : {0.5, 2.0, 4.0}) EXPECT_NEAR(renyi_entropy(g, a), std::log2(static_cast<double>(n)), 1e-9);
    }
    GramMatrix g4{identity(4), 1.0, false};
    EXPECT_NEAR(renyi_entropy(g4, 3.0), 2.0, 1e-9);
}

TEST(RenyiEntropy, RankOneIsZero) {
    GramMatrix g = rbf_gram(Matrix(5, 3, 0.25), 1.0);
    for (double a : {0.5, 2.0, 4.0}) EXPECT_NEAR(renyi_entropy(g, a), 0.0, 1e-9);
}

TEST(RenyiEntropy, HandEvaluatedSpectrum) {
    Matrix k(2, 2);
    k(0, 0) = 0.75;
    k(1, 1) = 0.25;
    EXPECT_NEAR(renyi_entropy({k, 1.0, true}, 2.0), -std::log2(0.625), 1e-12);
    EXPECT_NEAR(renyi_entropy({k, 1.0, true}, 2.0), 0.678072, 1e-6);
}

TEST(RenyiEntropy, InvalidAlphaThrows) {
    GramMatrix g{identity(3), 1.0, false};
    EXPECT_THROW(renyi_entropy(g, 1.0), std::invalid_argument);
    EXPECT_THROW(renyi_entropy(g, 0.0), std::invalid_argument);
    EXPECT_THROW(renyi_entropy(g, -2.0), std::invalid_argument);
}

TEST(RenyiEntropy, BoundedByLogN) {
    for (int seed = 0; seed < 30; ++seed) {
        Rng rng(seed);
        std::size_t n = 2 + rng.below(15);
        Matrix x = random_samples(rng, n, 2);
        GramMatrix g = rbf_gram(x, rng.uniform(0.1, 2.0));
        for (double a : {0.5, 2.0, 4.0}) {
            double h = renyi_entropy(g, a);
            EXPECT_GE(h, -1e-12);
            EXPECT_LE(h, std::log2(static_cast<double>(n)) + 1e-12);
        }
    }
}

TEST(RenyiJoint, ConstantYLeavesEntropy) {
    Rng rng(4);
    Matrix x = random_samples(rng, 6, 2);
    GramMatrix gx = rbf_gram(x, 0.7), gy = rbf_gram(Matrix(6, 1, 0.0), 1.0);
    EXPECT_NEAR(renyi_joint_entropy(gx, gy, 2.0), renyi_entropy(gx, 2.0), 1e-12);
    EXPECT_NEAR(renyi_joint_entropy(gy, gy, 2.0), 0.0, 1e-12);
}

TEST(RenyiJoint, MatchesExplicitHadamard) {
    Rng rng(8);
    GramMatrix gx = rbf_gram(random_samples(rng, 4, 3), 0.9);
    GramMatrix gy = rbf_gram(random_samples(rng, 4, 2), 0.6);
    Matrix h(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) h(i, j) = gx.k(i, j) * gy.k(i, j);
    double tr = h(0, 0) + h(1, 1) + h(2, 2) + h(3, 3);
    for (auto& v : h.data) v /= tr;
    double s = 0.0;
    for (double l : eigen_oracle(h)) s += l * l;
    EXPECT_NEAR(renyi_joint_entropy(gx, gy, 2.0), -std::log2(s), 1e-12);
}

TEST(RenyiJoint, SizeMismatchThrows) {
    EXPECT_THROW(renyi_joint_entropy(rbf_gram(Matrix(3, 1, 0.0), 1), rbf_gram(Matrix(4, 1, 0.0), 1), 2.0),
                 std::invalid_argument);
}

TEST(RenyiJoint, AtLeastMarginals) {
    for (int seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        std::size_t n = 2 + rng.below(12);
        GramMatrix gx = rbf_gram(random_samples(rng, n, 2), rng.uniform(0.2, 2));
        GramMatrix gy = rbf_gram(random_samples(rng, n, 3), rng.uniform(0.2, 2));
        for (double a : {0.5, 2.0, 4.0}) {
            double hj = renyi_joint_entropy(gx, gy, a);
            EXPECT_GE(hj, std::max(renyi_entropy(gx, a), renyi_entropy(gy, a)) - 1e-9);
        }
    }
}

TEST(RenyiMi, ConstantYIsZero) {
    Rng rng(1);
    Matrix x = random_samples(rng, 8, 2);
    EXPECT_NEAR(renyi_mi(x, Matrix(8, 1, 0.5), 2.0, 0.7, 1.0).value, 0.0, 1e-9);
}

TEST(RenyiMi, SelfInformationMatchesBruteForce) {
    Rng rng(2);
    Matrix x = random_samples(rng, 6, 2);
    GramMatrix g = rbf_gram(x, 0.8);
    Matrix kk(6, 6);
    for (std::size_t i = 0; i < 36; ++i) kk.data[i] = g.k.data[i] * g.k.data[i];
    double hx = renyi_entropy(g, 2.0);
    double hj = renyi_entropy({kk, 0.0, false}, 2.0);
    EXPECT_NEAR(renyi_mi(x, x, 2.0, 0.8, 0.8).value, 2 * hx - hj, 1e-12);
}

TEST(RenyiMi, NonNegative) {
    for (int seed = 0; seed < 100; ++seed) {
        Rng rng(500 + seed);
        std::size_t n = 2 + rng.below(14);
        Matrix x = random_samples(rng, n, 1 + rng.below(3)), y = random_samples(rng, n, 1 + rng.below(3));
        EXPECT_GE(renyi_mi(x, y, 2.0, median_bandwidth(x), median_bandwidth(y)).value, -1e-6) << "seed " << seed;
    }
}

TEST(RenyiMi, IndependentNeverExceedsSelf) {
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(700 + seed);
        Matrix x = random_samples(rng, 64, 1, 0, 1), y = random_samples(rng, 64, 1, 0, 1);
        double sx = median_bandwidth(x), sy = median_bandwidth(y);
        EXPECT_LT(renyi_mi(x, y, 2.0, sx, sy).value, renyi_mi(x, x, 2.0, sx, sx).value);
    }
}

TEST(Hsic, ConstantXIsZero) {
    Rng rng(3);
    EXPECT_EQ(hsic(Matrix(5, 2, 1.0), random_samples(rng, 5, 2), 1.0, 1.0).value, 0.0);
}

TEST(Hsic, ThreePointHandOracle) {
    double a = std::exp(-0.5), b = std::exp(-2.0);
    Matrix k(3, 3, std::vector<double>{1, a, b, a, 1, a, b, a, 1});
    Matrix x(3, 1, std::vector<double>{0, 1, 2});
    EXPECT_NEAR(hsic(x, x, 1.0, 1.0).value, hsic_oracle(k, k), 1e-15);
}

TEST(Hsic, MatchesExplicitMatrixAssembly) {
    for (int seed = 0; seed < 100; ++seed) {
        Rng rng(900 + seed);
        std::size_t n = 2 + rng.below(7);
        Matrix x = random_samples(rng, n, 1 + rng.below(4)), y = random_samples(rng, n, 1 + rng.below(4));
        double sx = rng.uniform(0.2, 2.0), sy = rng.uniform(0.2, 2.0);
        double ref = hsic_oracle(rbf_gram(x, sx).k, rbf_gram(y, sy).k);
        EXPECT_NEAR(hsic(x, y, sx, sy).value, ref, 1e-12);
        Tensor tx = Tensor::create({n, x.cols}, x.data), ty = Tensor::create({n, y.cols}, y.data);
        EXPECT_NEAR(hsic(tx, ty, sx, sy).item(), ref, 1e-12);
    }
}

TEST(Hsic, JointPermutationInvariant) {
    Rng rng(5);
    Matrix x = random_samples(rng, 7, 2), y = random_samples(rng, 7, 3);
    Matrix px(7, 2), py(7, 3);
    std::vector<std::size_t> perm = {3, 0, 6, 1, 5, 2, 4};
    for (std::size_t i = 0; i < 7; ++i) {
        for (std::size_t d = 0; d < 2; ++d) px(i, d) = x(perm[i], d);
        for (std::size_t d = 0; d < 3; ++d) py(i, d) = y(perm[i], d);
    }
    EXPECT_NEAR(hsic(x, y, 0.9, 1.1).value, hsic(px, py, 0.9, 1.1).value, 1e-12);
}

TEST(Hsic, SizeMismatchThrows) {
    EXPECT_THROW(hsic(Matrix(3, 1, 0.0), Matrix(4, 1, 0.0), 1, 1), std::invalid_argument);
}

TEST(Hsic, IndependentSamplesDecayWithN) {
    auto median_at = [](std::size_t n) {
        std::vector<double> v;
        for (int seed = 0; seed < 50; ++seed) {
            Rng rng(seed * 7919 + n);
            Matrix x = random_samples(rng, n, 2), y = random_samples(rng, n, 2);
            v.push_back(hsic(x, y, median_bandwidth(x), median_bandwidth(y)).value);
        }
        return median(v);
    };
    EXPECT_LT(median_at(256), median_at(32));
}

TEST(Estimators, RankDependenceLikeDiscreteMi) {
    // Dependent pair: y is x with small noise; independent pair: fresh y.
    Rng rng(12);
    std::size_t n = 48;
    Matrix x = random_samples(rng, n, 1, 0, 1), dep(n, 1), ind = random_samples(rng, n, 1, 0, 1);
    for (std::size_t i = 0; i < n; ++i) dep(i, 0) = std::clamp(x(i, 0) + rng.uniform(-0.05, 0.05), 0.0, 0.999);
    auto discrete = [&](const Matrix& y) {
        Matrix p(4, 4);
        for (std::size_t i = 0; i < n; ++i)
            p(static_cast<std::size_t>(x(i, 0) * 4), static_cast<std::size_t>(y(i, 0) * 4)) += 1.0 / n;
        return discrete_mi(p);
    };
    double sx = median_bandwidth(x);
    EXPECT_GT(discrete(dep), discrete(ind));
    EXPECT_GT(hsic(x, dep, sx, median_bandwidth(dep)).value, hsic(x, ind, sx, median_bandwidth(ind)).value);
    EXPECT_GT(renyi_mi(x, dep, 2.0, sx, median_bandwidth(dep)).value,
              renyi_mi(x, ind, 2.0, sx, median_bandwidth(ind)).value);
}

TEST(Penalty, ConstantLatentIsZero) {
    Rng rng(6);
    std::vector<double> xv(4 * 5);
    for (auto& v : xv) v = rng.uniform();
    Tensor x = Tensor::create({4, 5}, xv);
    Tensor z = Tensor::full({4, 3}, 0.4, true);
    EXPECT_EQ(penalty_mi(x, z, {}).item(), 0.0);
}

TEST(Penalty, BatchOfOneThrows) {
    EXPECT_THROW(penalty_mi(Tensor::zeros({1, 3}), Tensor::zeros({1, 2}), {}), std::invalid_argument);
}

TEST(Penalty, FiniteDifferenceWithFixedBandwidth) {
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(40 + seed);
        std::vector<double> xv(4 * 6), zv(4 * 3);
        for (auto& v : xv) v = rng.uniform();
        for (auto& v : zv) v = rng.uniform(-1, 1);
        Tensor x = Tensor::create({4, 6}, xv);
        Tensor z0 = Tensor::create({4, 3}, zv);
        PenaltyConfig cfg;
        cfg.sigma_x = median_bandwidth(Matrix::from_tensor(x));
        cfg.sigma_z = median_bandwidth(Matrix::from_tensor(z0));
        for (Estimator e : {Estimator::Hsic, Estimator::Renyi2}) {
            cfg.estimator = e;
            GradReport r = finite_diff_check([&](const Tensor& z) { return penalty_mi(x, z, cfg); }, z0);
            EXPECT_LE(r.worst(), 1e-4) << estimator_name(e) << " seed " << seed;
        }
    }
}

TEST(Penalty, Renyi2MatchesEigenPath) {
    Rng rng(9);
    Matrix x = random_samples(rng, 6, 4), y = random_samples(rng, 6, 2);
    Tensor tx = Tensor::create({6, 4}, x.data), ty = Tensor::create({6, 2}, y.data);
    EXPECT_NEAR(renyi2_mi(tx, ty, 0.8, 0.6).item(), renyi_mi(x, y, 2.0, 0.8, 0.6).value, 1e-10);
}

TEST(DiscreteMi, Examples) {
    EXPECT_NEAR(discrete_mi(Matrix(2, 2, 0.25)), 0.0, 1e-15);
    Matrix diag(4, 4);
    for (std::size_t i = 0; i < 4; ++i) diag(i, i) = 0.25;
    EXPECT_NEAR(discrete_mi(diag), 2.0, 1e-15);
    Matrix bsc(2, 2, std::vector<double>{0.4, 0.1, 0.1, 0.4});
    double hb = -0.2 * std::log2(0.2) - 0.8 * std::log2(0.8);
    EXPECT_NEAR(discrete_mi(bsc), 1.0 - hb, 1e-15);
    EXPECT_NEAR(discrete_mi(bsc), 0.278072, 1e-6);
}

TEST(DiscreteMi, RejectsInvalidPmf) {
    EXPECT_THROW(discrete_mi(Matrix(2, 2, 0.3)), std::invalid_argument);
    EXPECT_THROW(discrete_mi(Matrix(1, 2, std::vector<double>{1.5, -0.5})), std::invalid_argument);
}

TEST(DiscreteMi, DataProcessingInequality) {
    for (int seed = 0; seed < 200; ++seed) {
        Rng rng(3000 + seed);
        std::size_t a = 2 + rng.below(5), b = 2 + rng.below(5), c = 2 + rng.below(5);
        auto px = random_pmf(rng, a);
        Matrix yx = random_stochastic(rng, a, b), zy = random_stochastic(rng, b, c);
        Matrix xz = matmul(yx, zy);
        EXPECT_LE(discrete_mi(joint(px, xz)), discrete_mi(joint(px, yx)) + 1e-12) << "seed " << seed;
    }
}

TEST(Estimators, NameRoundTrip) {
    EXPECT_EQ(parse_estimator(estimator_name(Estimator::Hsic)), Estimator::Hsic);
    EXPECT_EQ(parse_estimator(estimator_name(Estimator::Renyi2)), Estimator::Renyi2);
    EXPECT_THROW(parse_estimator("kde"), std::invalid_argument);
}
