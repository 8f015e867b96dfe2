#pragma once

#include <functional>
#include <string>
#include <vector>

#include "omni/tensor.hpp"

namespace omni {

struct GradCheckReport {
    double max_rel_error = 0.0;
    size_t entries_checked = 0;
    bool pass = false;
    std::string worst;  // "leaf#k[i]" of the worst entry
};

// Compares the analytic gradient of a scalar-valued map against central finite
// differences, per entry of every leaf. `f` must rebuild the scalar from the
// leaves' current values on each call; leaves must require grad. 64-bit only.
// Relative error per entry: |a - fd| / max(|a|, |fd|, 1e-6).
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::vector<Tensor> leaves, double eps = 1e-5,
                           double tol = 1e-4);

// single-leaf convenience
GradCheckReport grad_check(const std::function<Tensor()>& f, Tensor leaf,
                           double eps = 1e-5, double tol = 1e-4);

}  // namespace omni
