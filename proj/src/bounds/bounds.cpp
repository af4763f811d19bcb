#include "mimir/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace mimir::ib {

void BoundsInput::validate() const {
    if (num_classes < 2) throw std::invalid_argument("bounds: num_classes must be at least 2");
    if (!(p_e >= 0.0 && p_e <= 1.0)) throw std::invalid_argument("bounds: p_e must lie in [0, 1]");
    if (!(h_pred >= 0.0)) throw std::invalid_argument("bounds: h_pred must be non-negative");
}

double binary_entropy(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("binary_entropy: p must lie in [0, 1]");
    auto term = [](double q) { return q > 0.0 ? -q * std::log2(q) : 0.0; };
    return term(p) + term(1.0 - p);
}

double fano_lower_bound(const BoundsInput& in) {
    in.validate();
    return in.h_pred - binary_entropy(in.p_e) - in.p_e * std::log2(static_cast<double>(in.num_classes - 1));
}

double hellman_raviv_upper_bound(const BoundsInput& in) {
    in.validate();
    return in.h_pred - 2.0 * in.p_e;
}

BoundCurve bound_curves(int num_classes, double grid_step) {
    if (!(grid_step > 0.0 && grid_step <= 0.1)) throw std::invalid_argument("bound_curves: step must lie in (0, 0.1]");
    if (num_classes < 2) throw std::invalid_argument("bound_curves: num_classes must be at least 2");
    auto steps = static_cast<long>(std::floor(1.0 / grid_step + 1e-9));
    BoundCurve curve;
    double h = std::log2(static_cast<double>(num_classes));
    for (long i = 0; i <= steps; ++i) {
        // Index-based grid avoids drift from repeated addition.
        double p = std::min(1.0, static_cast<double>(i) * grid_step);
        BoundsInput in{h, p, num_classes};
        curve.rows.push_back({p, fano_lower_bound(in), hellman_raviv_upper_bound(in)});
    }
    return curve;
}

std::string BoundCurve::to_csv() const {
    std::string out = "p_e,lower,upper\n";
    char buf[96];
    // Values that round to zero are printed unsigned.
    auto tidy = [](double v) { return std::abs(v) < 5e-7 ? 0.0 : v; };
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f\n", tidy(r.p_e), tidy(r.lower), tidy(r.upper));
        out += buf;
    }
    return out;
}

}  // namespace mimir::ib
