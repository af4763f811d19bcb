#include "mimir/mi.hpp"

#include <limits>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mimir::mi {

namespace {

Tensor rbf_gram_tensor(const Tensor& x, double sigma) {
    return exp(scale(pairwise_sq_dist(x), -1.0 / (2.0 * sigma * sigma)));
}

Tensor flatten_samples(const Tensor& t) {
    if (t.rank() < 1) throw std::invalid_argument("expected a leading sample axis");
    std::size_t n = t.dim(0);
    return reshape(t, {n, t.numel() / n});
}

Tensor identity_tensor(std::size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return Tensor::create({n, n}, std::move(v));
}

// -log2 of tr(K~^2), K~ = K / tr(K).
Tensor renyi2_entropy_tensor(const Tensor& k) {
    Tensor tr = sum(mul(k, identity_tensor(k.dim(0))));
    Tensor kn = div(k, tr);
    return scale(log(sum(square(kn))), -1.0 / std::log(2.0));
}

void check_alpha(double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("renyi: alpha must be positive");
    if (alpha == 1.0) throw std::invalid_argument("renyi: alpha = 1 (Shannon limit) is not supported");
}

void check_paired(const Matrix& x, const Matrix& y) {
    if (x.rows != y.rows) throw std::invalid_argument("sample sets have different sizes");
    if (x.rows < 2) throw std::invalid_argument("need at least two samples");
}

}  // namespace

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw std::invalid_argument("Matrix: value count mismatch");
}

Matrix Matrix::from_tensor(const Tensor& t) {
    if (t.rank() < 1) throw std::invalid_argument("Matrix::from_tensor: scalar tensor");
    std::size_t n = t.dim(0);
    return Matrix(n, t.numel() / n, std::vector<double>(t.values().begin(), t.values().end()));
}

double GramMatrix::trace() const {
    double s = 0.0;
    for (std::size_t i = 0; i < k.rows; ++i) s += k(i, i);
    return s;
}

GramMatrix GramMatrix::normalize() const {
    double tr = trace();
    if (!(tr > 0.0)) throw std::invalid_argument("GramMatrix::normalize: non-positive trace");
    GramMatrix g = *this;
    for (auto& v : g.k.data) v /= tr;
    g.normalized = true;
    return g;
}

std::string estimator_name(Estimator e) { return e == Estimator::Hsic ? "hsic" : "renyi2"; }

Estimator parse_estimator(const std::string& name) {
    if (name == "hsic") return Estimator::Hsic;
    if (name == "renyi2") return Estimator::Renyi2;
    throw std::invalid_argument("unknown estimator '" + name + "' (expected hsic or renyi2)");
}

double Spectrum::sum() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

GramMatrix rbf_gram(const Matrix& samples, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("rbf_gram: sigma must be positive");
    if (samples.rows < 2) throw std::invalid_argument("rbf_gram: need at least two samples");
    std::size_t n = samples.rows, d = samples.cols;
    GramMatrix g;
    g.sigma = sigma;
    g.k = Matrix(n, n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                double diff = samples(i, c) - samples(j, c);
                s += diff * diff;
            }
            double v = std::exp(-s / (2.0 * sigma * sigma));
            g.k(i, j) = v;
            g.k(j, i) = v;
        }
    }
    return g;
}

double median_bandwidth(const Matrix& samples) {
    if (samples.rows < 2) throw std::invalid_argument("median_bandwidth: need at least two samples");
    std::vector<double> dist;
    for (std::size_t i = 0; i < samples.rows; ++i) {
        for (std::size_t j = i + 1; j < samples.rows; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < samples.cols; ++c) {
                double diff = samples(i, c) - samples(j, c);
                s += diff * diff;
            }
            if (s > 0.0) dist.push_back(std::sqrt(s));
        }
    }
    if (dist.empty()) return 1.0;
    std::sort(dist.begin(), dist.end());
    std::size_t m = dist.size();
    return m % 2 == 1 ? dist[m / 2] : 0.5 * (dist[m / 2 - 1] + dist[m / 2]);
}

Spectrum symmetric_eigenvalues(const Matrix& m, double tol) {
    if (m.rows != m.cols) throw std::invalid_argument("symmetric_eigenvalues: matrix is not square");
    std::size_t n = m.rows;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::abs(m(i, j) - m(j, i)) > 1e-10)
                throw std::invalid_argument("symmetric_eigenvalues: matrix is not symmetric");
        }
    }
    if (tol <= 0.0) tol = 1e-12 * static_cast<double>(n);
    Matrix a = m;
    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) s += a(i, j) * a(i, j);
        return std::sqrt(s);
    };
    constexpr int kMaxSweeps = 100;
    for (int sweep = 0; sweep < kMaxSweeps && off_norm() > tol; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (apq == 0.0) continue;
                // Rotation angle zeroing a(p, q); t is the smaller root of t^2 + 2 theta t - 1.
                double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    Spectrum sp;
    for (std::size_t i = 0; i < n; ++i) sp.values.push_back(std::max(0.0, a(i, i)));
    std::sort(sp.values.begin(), sp.values.end(), std::greater<>());
    return sp;
}

double renyi_entropy(const GramMatrix& gram, double alpha) {
    check_alpha(alpha);
    GramMatrix g = gram.normalized ? gram : gram.normalize();
    Spectrum sp = symmetric_eigenvalues(g.k);
    double s = 0.0;
    // Eigenvalues at round-off level would inflate the sum for alpha < 1.
    double top = sp.values.empty() ? 0.0 : *std::max_element(sp.values.begin(), sp.values.end());
    double floor = 64.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(sp.values.size()) * top;
    for (double l : sp.values) {
        if (l > floor) s += std::pow(l, alpha);
    }
    return std::log2(s) / (1.0 - alpha);
}

double renyi_joint_entropy(const GramMatrix& gram_x, const GramMatrix& gram_y, double alpha) {
    if (gram_x.size() != gram_y.size()) throw std::invalid_argument("renyi_joint_entropy: size mismatch");
    GramMatrix h;
    h.k = Matrix(gram_x.size(), gram_x.size());
    for (std::size_t i = 0; i < h.k.data.size(); ++i) h.k.data[i] = gram_x.k.data[i] * gram_y.k.data[i];
    return renyi_entropy(h.normalize(), alpha);
}

MIEstimate renyi_mi(const Matrix& x, const Matrix& y, double alpha, double sigma_x, double sigma_y) {
    check_paired(x, y);
    GramMatrix gx = rbf_gram(x, sigma_x), gy = rbf_gram(y, sigma_y);
    double v = renyi_entropy(gx, alpha) + renyi_entropy(gy, alpha) - renyi_joint_entropy(gx, gy, alpha);
    return {v, Estimator::Renyi2, alpha};
}

MIEstimate hsic(const Matrix& x, const Matrix& y, double sigma_x, double sigma_y) {
    check_paired(x, y);
    GramMatrix gx = rbf_gram(x, sigma_x), gy = rbf_gram(y, sigma_y);
    std::size_t n = x.rows;
    // tr(K_x H K_y H) = sum_ij (H K_x H)_ij (K_y)_ij, with H K H the double-centered Gram.
    std::vector<double> row(n, 0.0), col(n, 0.0);
    double all = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            row[i] += gx.k(i, j);
            col[j] += gx.k(i, j);
        }
    }
    for (std::size_t i = 0; i < n; ++i) all += row[i];
    double inv_n = 1.0 / static_cast<double>(n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double centered = gx.k(i, j) - row[i] * inv_n - col[j] * inv_n + all * inv_n * inv_n;
            s += centered * gy.k(i, j);
        }
    }
    return {s * inv_n * inv_n, Estimator::Hsic, 0.0};
}

namespace {

// K_ij - mean_i - mean_j + mean for a symmetric Gram.
Tensor double_center(const Tensor& k) {
    Tensor col = mean(k, {0});
    return add(sub(transpose(sub(k, col), 0, 1), col), mean(k));
}

}  // namespace

Tensor hsic(const Tensor& x, const Tensor& y, double sigma_x, double sigma_y) {
    if (x.dim(0) != y.dim(0)) throw std::invalid_argument("hsic: sample count mismatch");
    std::size_t n = x.dim(0);
    if (n < 2) throw std::invalid_argument("hsic: need at least two samples");
    if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) throw std::invalid_argument("hsic: sigma must be positive");
    Tensor kx = rbf_gram_tensor(flatten_samples(x), sigma_x);
    Tensor ky = rbf_gram_tensor(flatten_samples(y), sigma_y);
    double inv_n = 1.0 / static_cast<double>(n);
    // tr(Kx H Ky H) = <H Kx H, H Ky H>; explicit mean removal maps a constant
    // Gram to exact zeros.
    return scale(sum(mul(double_center(kx), double_center(ky))), inv_n * inv_n);
}

Tensor renyi2_mi(const Tensor& x, const Tensor& y, double sigma_x, double sigma_y) {
    if (x.dim(0) != y.dim(0)) throw std::invalid_argument("renyi2_mi: sample count mismatch");
    if (x.dim(0) < 2) throw std::invalid_argument("renyi2_mi: need at least two samples");
    Tensor kx = rbf_gram_tensor(flatten_samples(x), sigma_x);
    Tensor ky = rbf_gram_tensor(flatten_samples(y), sigma_y);
    return sub(add(renyi2_entropy_tensor(kx), renyi2_entropy_tensor(ky)), renyi2_entropy_tensor(mul(kx, ky)));
}

Tensor penalty_mi(const Tensor& x_adv, const Tensor& z, const PenaltyConfig& config) {
    if (x_adv.rank() < 1 || z.rank() < 1 || x_adv.dim(0) != z.dim(0))
        throw std::invalid_argument("penalty_mi: inputs and latents must share the batch axis");
    if (x_adv.dim(0) < 2) throw std::invalid_argument("penalty_mi: batch size must be at least 2");
    double sx = config.sigma_x > 0.0 ? config.sigma_x : median_bandwidth(Matrix::from_tensor(x_adv));
    double sz = config.sigma_z > 0.0 ? config.sigma_z : median_bandwidth(Matrix::from_tensor(z));
    if (config.estimator == Estimator::Hsic) return hsic(x_adv, z, sx, sz);
    return renyi2_mi(x_adv, z, sx, sz);
}

double discrete_mi(const Matrix& joint_pmf) {
    double total = 0.0;
    for (double p : joint_pmf.data) {
        if (p < 0.0 || !std::isfinite(p)) throw std::invalid_argument("discrete_mi: negative or non-finite entry");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("discrete_mi: pmf does not sum to 1");
    std::vector<double> px(joint_pmf.rows, 0.0), py(joint_pmf.cols, 0.0);
    for (std::size_t i = 0; i < joint_pmf.rows; ++i) {
        for (std::size_t j = 0; j < joint_pmf.cols; ++j) {
            px[i] += joint_pmf(i, j);
            py[j] += joint_pmf(i, j);
        }
    }
    double mi = 0.0;
    for (std::size_t i = 0; i < joint_pmf.rows; ++i) {
        for (std::size_t j = 0; j < joint_pmf.cols; ++j) {
            double p = joint_pmf(i, j);
            if (p > 0.0) mi += p * std::log2(p / (px[i] * py[j]));
        }
    }
    return mi;
}

}  // namespace mimir::mi
