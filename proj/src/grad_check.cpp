#include "omni/grad_check.hpp"

#include <cmath>

#include "omni/errors.hpp"

namespace omni {

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::vector<Tensor> leaves, double eps, double tol) {
    check(!leaves.empty(), ErrorKind::domain, "grad_check: no leaves");
    for (Tensor& leaf : leaves) {
        check(leaf.defined(), ErrorKind::state, "grad_check: undefined leaf");
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }

    Tensor y = f();
    check(y.size() == 1, ErrorKind::dimension, "grad_check: f must be scalar-valued");
    check(y.all_finite(), ErrorKind::numeric, "grad_check: non-finite value of f");
    y.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (Tensor& leaf : leaves) analytic.push_back(leaf.grad());

    GradCheckReport report;
    NoGradGuard no_grad;
    for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor& leaf = leaves[li];
        for (size_t i = 0; i < leaf.size(); ++i) {
            double saved = leaf.data()[i];
            leaf.data()[i] = saved + eps;
            double up = f().item();
            leaf.data()[i] = saved - eps;
            double down = f().item();
            leaf.data()[i] = saved;
            check(std::isfinite(up) && std::isfinite(down), ErrorKind::numeric,
                  "grad_check: non-finite finite-difference probe");
            double fd = (up - down) / (2.0 * eps);
            double a = analytic[li][i];
            double denom = std::max({std::fabs(a), std::fabs(fd), 1e-6});
            double rel = std::fabs(a - fd) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = "leaf#" + std::to_string(li) + "[" + std::to_string(i) + "]";
            }
            ++report.entries_checked;
        }
    }
    report.pass = report.max_rel_error < tol;
    return report;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, Tensor leaf, double eps,
                           double tol) {
    return grad_check(f, std::vector<Tensor>{std::move(leaf)}, eps, tol);
}

}  // namespace omni
