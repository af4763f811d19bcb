#pragma once

#include <string>
#include <vector>

#include "mimir/tensor.hpp"

namespace mimir::mi {

/// Row-major dense matrix; rows are samples when used as a sample set.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values);

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    /// Flattens every sample (leading axis) of a tensor into one row.
    static Matrix from_tensor(const Tensor& t);
};

struct GramMatrix {
    Matrix k;
    double sigma = 0.0;
    bool normalized = false;

    std::size_t size() const { return k.rows; }
    double trace() const;
    /// K / tr(K).
    GramMatrix normalize() const;
};

enum class Estimator { Hsic, Renyi2 };

std::string estimator_name(Estimator e);
Estimator parse_estimator(const std::string& name);

struct MIEstimate {
    double value = 0.0;  // bits for the Renyi path, raw score for HSIC
    Estimator estimator = Estimator::Hsic;
    double alpha = 0.0;  // Renyi order; 0 for HSIC
};

/// Eigenvalues sorted descending, negatives clamped to zero.
struct Spectrum {
    std::vector<double> values;
    double sum() const;
};

GramMatrix rbf_gram(const Matrix& samples, double sigma);
/// Median of the nonzero pairwise Euclidean distances; 1.0 if all coincide.
double median_bandwidth(const Matrix& samples);

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm is <= tol.
/// A non-positive tol selects 1e-12 * N.
Spectrum symmetric_eigenvalues(const Matrix& m, double tol = 0.0);

double renyi_entropy(const GramMatrix& gram, double alpha);
double renyi_joint_entropy(const GramMatrix& gram_x, const GramMatrix& gram_y, double alpha);
MIEstimate renyi_mi(const Matrix& x, const Matrix& y, double alpha, double sigma_x, double sigma_y);

/// (1/N^2) tr(K_x H K_y H) with H the centering matrix.
MIEstimate hsic(const Matrix& x, const Matrix& y, double sigma_x, double sigma_y);
/// Same estimator on the differentiation graph; x and y are [N, ...].
Tensor hsic(const Tensor& x, const Tensor& y, double sigma_x, double sigma_y);
/// I_2 = H_2(X) + H_2(Y) - H_2(X, Y) on the graph, using tr(K~^2) = sum K~_ij^2.
Tensor renyi2_mi(const Tensor& x, const Tensor& y, double sigma_x, double sigma_y);

struct PenaltyConfig {
    Estimator estimator = Estimator::Hsic;
    // Positive values pin the kernel widths; otherwise the median heuristic.
    double sigma_x = 0.0;
    double sigma_z = 0.0;
};

/// Dependence penalty between per-sample inputs and latents. Bandwidths come
/// from the median heuristic on the current values and are not differentiated.
Tensor penalty_mi(const Tensor& x_adv, const Tensor& z, const PenaltyConfig& config);

/// Exact Shannon MI in bits of a discrete joint pmf, 0 log 0 := 0.
double discrete_mi(const Matrix& joint_pmf);

}  // namespace mimir::mi
