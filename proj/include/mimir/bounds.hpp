#pragma once

#include <string>
#include <vector>

namespace mimir::ib {

struct BoundsInput {
    double h_pred = 0.0;  // entropy of the predicted label, bits
    double p_e = 0.0;     // probability that the prediction is wrong
    int num_classes = 2;

    void validate() const;
};

struct BoundRow {
    double p_e;
    double lower;
    double upper;
};

struct BoundCurve {
    std::vector<BoundRow> rows;

    /// `p_e,lower,upper` with six decimals.
    std::string to_csv() const;
};

double binary_entropy(double p);

/// H(F) - H_b(p_e) - p_e log2(M - 1); a lower bound on I(x+delta, z), may be negative.
double fano_lower_bound(const BoundsInput& in);

/// H(F) - 2 p_e.
double hellman_raviv_upper_bound(const BoundsInput& in);

/// Both bounds over p_e in {0, step, ..., 1} assuming uniform predictions,
/// h_pred = log2(num_classes).
BoundCurve bound_curves(int num_classes, double grid_step);

}  // namespace mimir::ib
