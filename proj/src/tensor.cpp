#include "omni/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "omni/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace omni {

namespace {

thread_local int g_no_grad_depth = 0;

size_t shape_product(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<size_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void check_defined(const Tensor& t, const char* who) {
    check(t.defined(), ErrorKind::state, std::string(who) + ": undefined tensor");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    check(a.shape() == b.shape(), ErrorKind::dimension,
          std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
}

// rank-1 -> (1, d); rank-2 -> (rows, cols)
void as_matrix(const Tensor& t, const char* who, size_t* r, size_t* c) {
    if (t.rank() == 1) {
        *r = 1;
        *c = t.shape()[0];
    } else if (t.rank() == 2) {
        *r = t.shape()[0];
        *c = t.shape()[1];
    } else {
        fail(ErrorKind::dimension, std::string(who) + ": expected rank 1 or 2, got " +
                                       shape_str(t.shape()));
    }
}

}  // namespace

void detail::TensorImpl::ensure_grad() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    }
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

// ---- Tensor basics ----------------------------------------------------------

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->data.assign(shape_product(shape), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<size_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

Tensor Tensor::from(std::vector<size_t> shape, std::vector<double> data,
                    bool requires_grad) {
    check(shape_product(shape) == data.size(), ErrorKind::dimension,
          "Tensor::from: data length " + std::to_string(data.size()) +
              " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
    size_t n = values.size();
    return from({n}, std::move(values));
}

const std::vector<size_t>& Tensor::shape() const {
    check(defined(), ErrorKind::state, "shape(): undefined tensor");
    return impl_->shape;
}

size_t Tensor::size() const { return impl_ ? impl_->data.size() : 0; }

size_t Tensor::rows() const {
    size_t r, c;
    as_matrix(*this, "rows", &r, &c);
    return r;
}

size_t Tensor::cols() const {
    size_t r, c;
    as_matrix(*this, "cols", &r, &c);
    return c;
}

std::vector<double>& Tensor::data() {
    check(defined(), ErrorKind::state, "data(): undefined tensor");
    return impl_->data;
}

const std::vector<double>& Tensor::data() const {
    check(defined(), ErrorKind::state, "data(): undefined tensor");
    return impl_->data;
}

double Tensor::operator()(size_t i) const { return data()[i]; }

double Tensor::operator()(size_t i, size_t j) const {
    size_t r, c;
    as_matrix(*this, "operator()", &r, &c);
    return data()[i * c + j];
}

double& Tensor::at(size_t i) { return data()[i]; }

double& Tensor::at(size_t i, size_t j) {
    size_t r, c;
    as_matrix(*this, "at", &r, &c);
    return data()[i * c + j];
}

double Tensor::item() const {
    check(size() == 1, ErrorKind::dimension,
          "item(): tensor has " + std::to_string(size()) + " elements");
    return data()[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
    check(defined(), ErrorKind::state, "set_requires_grad on undefined tensor");
    impl_->requires_grad = value;
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    check(defined(), ErrorKind::state, "grad(): undefined tensor");
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) {
        impl_->grad.assign(impl_->data.size(), 0.0);
    }
}

Tensor Tensor::detach() const {
    check(defined(), ErrorKind::state, "detach(): undefined tensor");
    return Tensor::from(impl_->shape, impl_->data, false);
}

bool Tensor::all_finite() const {
    for (double v : data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::backward() {
    check(defined(), ErrorKind::state, "backward(): undefined tensor");
    check(size() == 1, ErrorKind::dimension, "backward(): tensor must be scalar");
    check(requires_grad(), ErrorKind::state,
          "backward(): tensor does not require grad");

    // iterative DFS topological order; parent order is fixed, so the
    // accumulation order (and hence the bits) is reproducible
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    struct Frame {
        detail::TensorImpl* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({impl_.get(), 0});
    seen.insert(impl_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::TensorImpl* p = f.node->parents[f.next_parent].impl();
            ++f.next_parent;
            if (p && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    impl_->ensure_grad();
    impl_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

// ---- op construction helper -------------------------------------------------

Tensor make_op(std::vector<size_t> shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(detail::TensorImpl&)> backward_fn) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const Tensor& p : parents) {
            if (p.defined() && p.requires_grad()) {
                needs_grad = true;
                break;
            }
        }
    }
    if (needs_grad) {
        impl->requires_grad = true;
        impl->parents = std::move(parents);
        impl->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(impl));
}

namespace {

// adds into the grad buffer of `t` if it participates in the graph
std::vector<double>* grad_sink(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) return nullptr;
    t.impl()->ensure_grad();
    return &t.impl()->grad;
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
    check_defined(a, name);
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
    Tensor ain = a;
    return make_op(a.shape(), std::move(out), {a},
                   [ain, bwd](detail::TensorImpl& self) {
                       if (auto* ga = grad_sink(ain)) {
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                               (*ga)[i] += self.grad[i] *
                                           bwd(ain.data()[i], self.data[i]);
                           }
                       }
                   });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_defined(a, "add");
    check_defined(b, "add");
    check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    Tensor ain = a, bin = b;
    return make_op(a.shape(), std::move(out), {a, b},
                   [ain, bin](detail::TensorImpl& self) {
                       if (auto* ga = grad_sink(ain))
                           for (size_t i = 0; i < self.grad.size(); ++i)
                               (*ga)[i] += self.grad[i];
                       if (auto* gb = grad_sink(bin))
                           for (size_t i = 0; i < self.grad.size(); ++i)
                               (*gb)[i] += self.grad[i];
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_defined(a, "sub");
    check_defined(b, "sub");
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    Tensor ain = a, bin = b;
    return make_op(a.shape(), std::move(out), {a, b},
                   [ain, bin](detail::TensorImpl& self) {
                       if (auto* ga = grad_sink(ain))
                           for (size_t i = 0; i < self.grad.size(); ++i)
                               (*ga)[i] += self.grad[i];
                       if (auto* gb = grad_sink(bin))
                           for (size_t i = 0; i < self.grad.size(); ++i)
                               (*gb)[i] -= self.grad[i];
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_defined(a, "mul");
    check_defined(b, "mul");
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    Tensor ain = a, bin = b;
    return make_op(a.shape(), std::move(out), {a, b},
                   [ain, bin](detail::TensorImpl& self) {
                       if (auto* ga = grad_sink(ain))
                           for (size_t i = 0; i < self.grad.size(); ++i)
                               (*ga)[i] += self.grad[i] * bin.data()[i];
                       if (auto* gb = grad_sink(bin))
                           for (size_t i = 0; i < self.grad.size(); ++i)
                               (*gb)[i] += self.grad[i] * ain.data()[i];
                   });
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(
        a, "scale", [c](double x) { return x * c; },
        [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(
        a, "add_scalar", [c](double x) { return x + c; },
        [](double, double) { return 1.0; });
}

Tensor abs(const Tensor& a) {
    return unary_op(
        a, "abs", [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& a) {
    check_defined(a, "sqrt");
    for (double v : a.data()) {
        check(v >= 0.0, ErrorKind::domain, "sqrt: negative input");
    }
    return unary_op(
        a, "sqrt", [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, "sigmoid",
        [](double x) {
            // stable in both tails; clamped to the open interval so saturated
            // inputs still satisfy 0 < y < 1
            double y = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                : std::exp(x) / (1.0 + std::exp(x));
            if (y >= 1.0) y = std::nextafter(1.0, 0.0);
            if (y <= 0.0) y = std::nextafter(0.0, 1.0);
            return y;
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary_op(
        a, "leaky_relu", [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(const Tensor& a) {
    return unary_op(
        a, "gelu",
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
        [](double x, double) {
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

Tensor silu(const Tensor& a) { return mul(a, sigmoid(a)); }

Tensor reshape(const Tensor& a, std::vector<size_t> shape) {
    check_defined(a, "reshape");
    check(shape_product(shape) == a.size(), ErrorKind::dimension,
          "reshape: element count mismatch");
    Tensor ain = a;
    return make_op(std::move(shape), a.data(), {a},
                   [ain](detail::TensorImpl& self) {
                       if (auto* ga = grad_sink(ain))
                           for (size_t i = 0; i < self.grad.size(); ++i)
                               (*ga)[i] += self.grad[i];
                   });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a) {
    check_defined(a, "sum");
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor ain = a;
    return make_op({1}, {s}, {a}, [ain](detail::TensorImpl& self) {
        if (auto* ga = grad_sink(ain))
            for (double& g : *ga) g += self.grad[0];
    });
}

Tensor mean_all(const Tensor& a) {
    check_defined(a, "mean_all");
    check(a.size() > 0, ErrorKind::dimension, "mean_all: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor row_l2norm(const Tensor& a) {
    check_defined(a, "row_l2norm");
    size_t n, d;
    as_matrix(a, "row_l2norm", &n, &d);
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double v = a.data()[i * d + j];
            s += v * v;
        }
        out[i] = std::sqrt(s);
    }
    Tensor ain = a;
    return make_op({n}, std::move(out), {a}, [ain, n, d](detail::TensorImpl& self) {
        if (auto* ga = grad_sink(ain)) {
            for (size_t i = 0; i < n; ++i) {
                double norm = self.data[i];
                if (norm <= 0.0) continue;
                double g = self.grad[i] / norm;
                for (size_t j = 0; j < d; ++j)
                    (*ga)[i * d + j] += g * ain.data()[i * d + j];
            }
        }
    });
}

Tensor mean_rows(const Tensor& a) {
    check_defined(a, "mean_rows");
    size_t n, d;
    as_matrix(a, "mean_rows", &n, &d);
    check(n > 0, ErrorKind::dimension, "mean_rows: no rows");
    std::vector<double> out(d, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) out[j] += a.data()[i * d + j];
    for (double& v : out) v /= static_cast<double>(n);
    Tensor ain = a;
    return make_op({d}, std::move(out), {a}, [ain, n, d](detail::TensorImpl& self) {
        if (auto* ga = grad_sink(ain)) {
            double inv = 1.0 / static_cast<double>(n);
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < d; ++j)
                    (*ga)[i * d + j] += self.grad[j] * inv;
        }
    });
}

// ---- matrix ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    check(a.rank() == 2 && b.rank() == 2, ErrorKind::dimension,
          "matmul: both operands must be rank 2");
    size_t m = a.shape()[0], k = a.shape()[1];
    size_t k2 = b.shape()[0], n = b.shape()[1];
    check(k == k2, ErrorKind::dimension,
          "matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
    std::vector<double> out(m * n, 0.0);
    for (size_t i = 0; i < m; ++i) {
        for (size_t p = 0; p < k; ++p) {
            double av = a.data()[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b.data().data() + p * n;
            double* orow = out.data() + i * n;
            for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Tensor ain = a, bin = b;
    return make_op({m, n}, std::move(out), {a, b},
                   [ain, bin, m, k, n](detail::TensorImpl& self) {
                       if (auto* ga = grad_sink(ain)) {
                           // dA = dY . B^T
                           for (size_t i = 0; i < m; ++i)
                               for (size_t p = 0; p < k; ++p) {
                                   double s = 0.0;
                                   for (size_t j = 0; j < n; ++j)
                                       s += self.grad[i * n + j] * bin.data()[p * n + j];
                                   (*ga)[i * k + p] += s;
                               }
                       }
                       if (auto* gb = grad_sink(bin)) {
                           // dB = A^T . dY
                           for (size_t p = 0; p < k; ++p)
                               for (size_t j = 0; j < n; ++j) {
                                   double s = 0.0;
                                   for (size_t i = 0; i < m; ++i)
                                       s += ain.data()[i * k + p] * self.grad[i * n + j];
                                   (*gb)[p * n + j] += s;
                               }
                       }
                   });
}

Tensor transpose(const Tensor& a) {
    check_defined(a, "transpose");
    check(a.rank() == 2, ErrorKind::dimension, "transpose: rank-2 only");
    size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    Tensor ain = a;
    return make_op({n, m}, std::move(out), {a},
                   [ain, m, n](detail::TensorImpl& self) {
                       if (auto* ga = grad_sink(ain))
                           for (size_t i = 0; i < m; ++i)
                               for (size_t j = 0; j < n; ++j)
                                   (*ga)[i * n + j] += self.grad[j * m + i];
                   });
}

// ---- row/col structure ------------------------------------------------------

Tensor repeat_rows(const Tensor& v, size_t n) {
    check_defined(v, "repeat_rows");
    check(v.rank() == 1, ErrorKind::dimension, "repeat_rows: rank-1 input required");
    size_t d = v.shape()[0];
    std::vector<double> out(n * d);
    for (size_t i = 0; i < n; ++i)
        std::copy(v.data().begin(), v.data().end(), out.begin() + i * d);
    Tensor vin = v;
    return make_op({n, d}, std::move(out), {v},
                   [vin, n, d](detail::TensorImpl& self) {
                       if (auto* gv = grad_sink(vin))
                           for (size_t i = 0; i < n; ++i)
                               for (size_t j = 0; j < d; ++j)
                                   (*gv)[j] += self.grad[i * d + j];
                   });
}

Tensor add_row(const Tensor& x, const Tensor& v) {
    check_defined(x, "add_row");
    check_defined(v, "add_row");
    size_t n, d;
    as_matrix(x, "add_row", &n, &d);
    check(v.rank() == 1 && v.shape()[0] == d, ErrorKind::dimension,
          "add_row: vector length mismatch");
    std::vector<double> out(x.data());
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) out[i * d + j] += v.data()[j];
    Tensor xin = x, vin = v;
    return make_op(x.shape(), std::move(out), {x, v},
                   [xin, vin, n, d](detail::TensorImpl& self) {
                       if (auto* gx = grad_sink(xin))
                           for (size_t i = 0; i < self.grad.size(); ++i)
                               (*gx)[i] += self.grad[i];
                       if (auto* gv = grad_sink(vin))
                           for (size_t i = 0; i < n; ++i)
                               for (size_t j = 0; j < d; ++j)
                                   (*gv)[j] += self.grad[i * d + j];
                   });
}

Tensor mul_row(const Tensor& x, const Tensor& v) {
    check_defined(x, "mul_row");
    check_defined(v, "mul_row");
    size_t n, d;
    as_matrix(x, "mul_row", &n, &d);
    check(v.rank() == 1 && v.shape()[0] == d, ErrorKind::dimension,
          "mul_row: vector length mismatch");
    std::vector<double> out(x.data());
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) out[i * d + j] *= v.data()[j];
    Tensor xin = x, vin = v;
    return make_op(x.shape(), std::move(out), {x, v},
                   [xin, vin, n, d](detail::TensorImpl& self) {
                       if (auto* gx = grad_sink(xin))
                           for (size_t i = 0; i < n; ++i)
                               for (size_t j = 0; j < d; ++j)
                                   (*gx)[i * d + j] += self.grad[i * d + j] * vin.data()[j];
                       if (auto* gv = grad_sink(vin))
                           for (size_t i = 0; i < n; ++i)
                               for (size_t j = 0; j < d; ++j)
                                   (*gv)[j] += self.grad[i * d + j] * xin.data()[i * d + j];
                   });
}

Tensor slice_cols(const Tensor& x, size_t c0, size_t c1) {
    check_defined(x, "slice_cols");
    size_t n, d;
    as_matrix(x, "slice_cols", &n, &d);
    check(c0 < c1 && c1 <= d, ErrorKind::dimension, "slice_cols: bad column range");
    size_t w = c1 - c0;
    std::vector<double> out(n * w);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < w; ++j) out[i * w + j] = x.data()[i * d + c0 + j];
    std::vector<size_t> oshape = x.rank() == 1 ? std::vector<size_t>{w}
                                               : std::vector<size_t>{n, w};
    Tensor xin = x;
    return make_op(std::move(oshape), std::move(out), {x},
                   [xin, n, d, c0, w](detail::TensorImpl& self) {
                       if (auto* gx = grad_sink(xin))
                           for (size_t i = 0; i < n; ++i)
                               for (size_t j = 0; j < w; ++j)
                                   (*gx)[i * d + c0 + j] += self.grad[i * w + j];
                   });
}

Tensor slice_rows(const Tensor& x, size_t r0, size_t r1) {
    check_defined(x, "slice_rows");
    check(x.rank() == 2, ErrorKind::dimension, "slice_rows: rank-2 only");
    size_t n = x.shape()[0], d = x.shape()[1];
    check(r0 < r1 && r1 <= n, ErrorKind::dimension, "slice_rows: bad row range");
    size_t h = r1 - r0;
    std::vector<double> out(x.data().begin() + r0 * d, x.data().begin() + r1 * d);
    Tensor xin = x;
    return make_op({h, d}, std::move(out), {x},
                   [xin, r0, h, d](detail::TensorImpl& self) {
                       if (auto* gx = grad_sink(xin))
                           for (size_t i = 0; i < h; ++i)
                               for (size_t j = 0; j < d; ++j)
                                   (*gx)[(r0 + i) * d + j] += self.grad[i * d + j];
                   });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
    check(!xs.empty(), ErrorKind::dimension, "concat_cols: empty list");
    size_t n = xs[0].rows();
    size_t total = 0;
    for (const Tensor& t : xs) {
        check(t.rows() == n, ErrorKind::dimension, "concat_cols: row count mismatch");
        total += t.cols();
    }
    std::vector<double> out(n * total);
    size_t off = 0;
    for (const Tensor& t : xs) {
        size_t w = t.cols();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < w; ++j) out[i * total + off + j] = t.data()[i * w + j];
        off += w;
    }
    std::vector<Tensor> parents = xs;
    return make_op({n, total}, std::move(out), xs,
                   [parents, n, total](detail::TensorImpl& self) {
                       size_t off = 0;
                       for (const Tensor& t : parents) {
                           size_t w = t.cols();
                           if (auto* gt = grad_sink(t))
                               for (size_t i = 0; i < n; ++i)
                                   for (size_t j = 0; j < w; ++j)
                                       (*gt)[i * w + j] += self.grad[i * total + off + j];
                           off += w;
                       }
                   });
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
    check(!xs.empty(), ErrorKind::dimension, "concat_rows: empty list");
    size_t d = xs[0].cols();
    size_t total = 0;
    for (const Tensor& t : xs) {
        check(t.cols() == d, ErrorKind::dimension, "concat_rows: col count mismatch");
        total += t.rows();
    }
    std::vector<double> out;
    out.reserve(total * d);
    for (const Tensor& t : xs) out.insert(out.end(), t.data().begin(), t.data().end());
    std::vector<Tensor> parents = xs;
    return make_op({total, d}, std::move(out), xs,
                   [parents, d](detail::TensorImpl& self) {
                       size_t off = 0;
                       for (const Tensor& t : parents) {
                           size_t len = t.size();
                           if (auto* gt = grad_sink(t))
                               for (size_t i = 0; i < len; ++i)
                                   (*gt)[i] += self.grad[off + i];
                           off += len;
                       }
                   });
}

Tensor select_rows(const Tensor& x, const std::vector<uint32_t>& idx) {
    check_defined(x, "select_rows");
    check(x.rank() == 2, ErrorKind::dimension, "select_rows: rank-2 only");
    size_t n = x.shape()[0], d = x.shape()[1];
    std::vector<double> out(idx.size() * d);
    for (size_t i = 0; i < idx.size(); ++i) {
        check(idx[i] < n, ErrorKind::dimension, "select_rows: index out of range");
        std::copy(x.data().begin() + idx[i] * d, x.data().begin() + (idx[i] + 1) * d,
                  out.begin() + i * d);
    }
    Tensor xin = x;
    std::vector<uint32_t> idx_copy = idx;
    return make_op({idx.size(), d}, std::move(out), {x},
                   [xin, idx_copy, d](detail::TensorImpl& self) {
                       if (auto* gx = grad_sink(xin))
                           for (size_t i = 0; i < idx_copy.size(); ++i)
                               for (size_t j = 0; j < d; ++j)
                                   (*gx)[idx_copy[i] * d + j] += self.grad[i * d + j];
                   });
}

Tensor replace_rows(const Tensor& x, const std::vector<uint8_t>& mask,
                    const Tensor& row) {
    check_defined(x, "replace_rows");
    check_defined(row, "replace_rows");
    check(x.rank() == 2, ErrorKind::dimension, "replace_rows: rank-2 only");
    size_t n = x.shape()[0], d = x.shape()[1];
    check(mask.size() == n, ErrorKind::dimension, "replace_rows: mask length mismatch");
    check(row.rank() == 1 && row.shape()[0] == d, ErrorKind::dimension,
          "replace_rows: row length mismatch");
    std::vector<double> out(x.data());
    for (size_t i = 0; i < n; ++i)
        if (mask[i])
            std::copy(row.data().begin(), row.data().end(), out.begin() + i * d);
    Tensor xin = x, rin = row;
    std::vector<uint8_t> mask_copy = mask;
    return make_op({n, d}, std::move(out), {x, row},
                   [xin, rin, mask_copy, n, d](detail::TensorImpl& self) {
                       if (auto* gx = grad_sink(xin))
                           for (size_t i = 0; i < n; ++i)
                               if (!mask_copy[i])
                                   for (size_t j = 0; j < d; ++j)
                                       (*gx)[i * d + j] += self.grad[i * d + j];
                       if (auto* gr = grad_sink(rin))
                           for (size_t i = 0; i < n; ++i)
                               if (mask_copy[i])
                                   for (size_t j = 0; j < d; ++j)
                                       (*gr)[j] += self.grad[i * d + j];
                   });
}

// ---- softmax ----------------------------------------------------------------

namespace {

// softmax along contiguous rows of width d over n rows
void softmax_rows(const std::vector<double>& in, std::vector<double>& out, size_t n,
                  size_t d) {
    for (size_t i = 0; i < n; ++i) {
        const double* row = in.data() + i * d;
        double* orow = out.data() + i * d;
        double mx = row[0];
        for (size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (size_t j = 0; j < d; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        for (size_t j = 0; j < d; ++j) orow[j] /= s;
    }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    check_defined(x, "softmax");
    if (x.rank() == 1) {
        check(axis == -1 || axis == 0, ErrorKind::domain, "softmax: bad axis for rank-1");
        size_t d = x.shape()[0];
        std::vector<double> out(d);
        softmax_rows(x.data(), out, 1, d);
        Tensor xin = x;
        return make_op({d}, std::move(out), {x}, [xin, d](detail::TensorImpl& self) {
            if (auto* gx = grad_sink(xin)) {
                double dot = 0.0;
                for (size_t j = 0; j < d; ++j) dot += self.grad[j] * self.data[j];
                for (size_t j = 0; j < d; ++j)
                    (*gx)[j] += self.data[j] * (self.grad[j] - dot);
            }
        });
    }
    check(x.rank() == 2, ErrorKind::dimension, "softmax: rank 1 or 2 only");
    check(axis == -1 || axis == 0 || axis == 1, ErrorKind::domain, "softmax: bad axis");
    if (axis == 0) {
        return transpose(softmax(transpose(x), 1));
    }
    size_t n = x.shape()[0], d = x.shape()[1];
    std::vector<double> out(n * d);
    softmax_rows(x.data(), out, n, d);
    Tensor xin = x;
    return make_op({n, d}, std::move(out), {x}, [xin, n, d](detail::TensorImpl& self) {
        if (auto* gx = grad_sink(xin)) {
            for (size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (size_t j = 0; j < d; ++j)
                    dot += self.grad[i * d + j] * self.data[i * d + j];
                for (size_t j = 0; j < d; ++j)
                    (*gx)[i * d + j] +=
                        self.data[i * d + j] * (self.grad[i * d + j] - dot);
            }
        }
    });
}

AttnMask AttnMask::full(size_t n, size_t m) {
    AttnMask mk;
    mk.n = n;
    mk.m = m;
    mk.allow.assign(n * m, 1);
    return mk;
}

AttnMask AttnMask::causal(size_t n) {
    AttnMask mk;
    mk.n = n;
    mk.m = n;
    mk.allow.assign(n * n, 0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j <= i; ++j) mk.allow[i * n + j] = 1;
    return mk;
}

Tensor masked_softmax(const Tensor& scores, const AttnMask& mask) {
    check_defined(scores, "masked_softmax");
    check(scores.rank() == 2, ErrorKind::dimension, "masked_softmax: rank-2 only");
    size_t n = scores.shape()[0], m = scores.shape()[1];
    check(mask.n == n && mask.m == m, ErrorKind::dimension,
          "masked_softmax: mask shape mismatch");
    std::vector<double> out(n * m, 0.0);
    for (size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < m; ++j)
            if (mask.allowed(i, j)) mx = std::max(mx, scores.data()[i * m + j]);
        check(std::isfinite(mx), ErrorKind::dimension,
              "masked_softmax: row " + std::to_string(i) + " allows no keys");
        double s = 0.0;
        for (size_t j = 0; j < m; ++j) {
            if (!mask.allowed(i, j)) continue;
            out[i * m + j] = std::exp(scores.data()[i * m + j] - mx);
            s += out[i * m + j];
        }
        for (size_t j = 0; j < m; ++j)
            if (mask.allowed(i, j)) out[i * m + j] /= s;
    }
    Tensor sin_ = scores;
    AttnMask mask_copy = mask;
    return make_op({n, m}, std::move(out), {scores},
                   [sin_, mask_copy, n, m](detail::TensorImpl& self) {
                       if (auto* gs = grad_sink(sin_)) {
                           for (size_t i = 0; i < n; ++i) {
                               double dot = 0.0;
                               for (size_t j = 0; j < m; ++j)
                                   if (mask_copy.allowed(i, j))
                                       dot += self.grad[i * m + j] * self.data[i * m + j];
                               for (size_t j = 0; j < m; ++j)
                                   if (mask_copy.allowed(i, j))
                                       (*gs)[i * m + j] += self.data[i * m + j] *
                                                           (self.grad[i * m + j] - dot);
                           }
                       }
                   });
}

// ---- normalization ----------------------------------------------------------

Tensor rms_normalize(const Tensor& x, double eps) {
    check_defined(x, "rms_normalize");
    size_t n, d;
    as_matrix(x, "rms_normalize", &n, &d);
    std::vector<double> out(n * d);
    std::vector<double> inv_rms(n);
    for (size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double v = x.data()[i * d + j];
            s += v * v;
        }
        double r = std::sqrt(s / static_cast<double>(d) + eps);
        inv_rms[i] = 1.0 / r;
        for (size_t j = 0; j < d; ++j) out[i * d + j] = x.data()[i * d + j] * inv_rms[i];
    }
    Tensor xin = x;
    return make_op(x.shape(), std::move(out), {x},
                   [xin, inv_rms, n, d](detail::TensorImpl& self) {
                       if (auto* gx = grad_sink(xin)) {
                           for (size_t i = 0; i < n; ++i) {
                               double dot = 0.0;
                               for (size_t j = 0; j < d; ++j)
                                   dot += self.grad[i * d + j] * self.data[i * d + j];
                               dot /= static_cast<double>(d);
                               for (size_t j = 0; j < d; ++j)
                                   (*gx)[i * d + j] +=
                                       inv_rms[i] *
                                       (self.grad[i * d + j] - self.data[i * d + j] * dot);
                           }
                       }
                   });
}

Tensor layer_normalize(const Tensor& x, double eps) {
    check_defined(x, "layer_normalize");
    size_t n, d;
    as_matrix(x, "layer_normalize", &n, &d);
    std::vector<double> out(n * d);
    std::vector<double> inv_std(n);
    for (size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (size_t j = 0; j < d; ++j) mu += x.data()[i * d + j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double v = x.data()[i * d + j] - mu;
            var += v * v;
        }
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (size_t j = 0; j < d; ++j)
            out[i * d + j] = (x.data()[i * d + j] - mu) * inv_std[i];
    }
    Tensor xin = x;
    return make_op(x.shape(), std::move(out), {x},
                   [xin, inv_std, n, d](detail::TensorImpl& self) {
                       if (auto* gx = grad_sink(xin)) {
                           for (size_t i = 0; i < n; ++i) {
                               double gmean = 0.0, gydot = 0.0;
                               for (size_t j = 0; j < d; ++j) {
                                   gmean += self.grad[i * d + j];
                                   gydot += self.grad[i * d + j] * self.data[i * d + j];
                               }
                               gmean /= static_cast<double>(d);
                               gydot /= static_cast<double>(d);
                               for (size_t j = 0; j < d; ++j)
                                   (*gx)[i * d + j] +=
                                       inv_std[i] * (self.grad[i * d + j] - gmean -
                                                     self.data[i * d + j] * gydot);
                           }
                       }
                   });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
    Tensor y = rms_normalize(x, eps);
    if (y.rank() == 1) return mul(y, gain);
    return mul_row(y, gain);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    Tensor y = layer_normalize(x, eps);
    if (y.rank() == 1) return add(mul(y, gain), bias);
    return add_row(mul_row(y, gain), bias);
}

// ---- convolution ------------------------------------------------------------

namespace {

// normalizes conv inputs: signal rank-1 -> [1,l]; kernel rank-1 -> [1,1,k]
void conv_shapes(const Tensor& x, const Tensor& w, const char* who, size_t* c_in,
                 size_t* l, size_t* c_out, size_t* k, bool transposed) {
    if (x.rank() == 1) {
        *c_in = 1;
        *l = x.shape()[0];
    } else if (x.rank() == 2) {
        *c_in = x.shape()[0];
        *l = x.shape()[1];
    } else {
        fail(ErrorKind::dimension, std::string(who) + ": signal must be rank 1 or 2");
    }
    if (w.rank() == 1) {
        *c_out = 1;
        *k = w.shape()[0];
        check(*c_in == 1, ErrorKind::dimension,
              std::string(who) + ": rank-1 kernel needs single-channel signal");
    } else if (w.rank() == 3) {
        size_t w_in = transposed ? w.shape()[0] : w.shape()[1];
        size_t w_out = transposed ? w.shape()[1] : w.shape()[0];
        check(w_in == *c_in, ErrorKind::dimension,
              std::string(who) + ": channel counts disagree (signal " +
                  std::to_string(*c_in) + ", kernel " + std::to_string(w_in) + ")");
        *c_out = w_out;
        *k = w.shape()[2];
    } else {
        fail(ErrorKind::dimension, std::string(who) + ": kernel must be rank 1 or 3");
    }
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, size_t stride,
              size_t padding) {
    check_defined(x, "conv1d");
    check_defined(w, "conv1d");
    check(stride >= 1, ErrorKind::domain, "conv1d: stride must be >= 1");
    size_t c_in, l, c_out, k;
    conv_shapes(x, w, "conv1d", &c_in, &l, &c_out, &k, false);
    check(k <= l + 2 * padding, ErrorKind::dimension,
          "conv1d: kernel larger than padded input");
    if (b.defined())
        check(b.rank() == 1 && b.shape()[0] == c_out, ErrorKind::dimension,
              "conv1d: bias length mismatch");
    size_t l_out = (l + 2 * padding - k) / stride + 1;
    std::vector<double> out(c_out * l_out, 0.0);
    for (size_t co = 0; co < c_out; ++co) {
        double bias = b.defined() ? b.data()[co] : 0.0;
        for (size_t t = 0; t < l_out; ++t) {
            double s = bias;
            for (size_t ci = 0; ci < c_in; ++ci) {
                for (size_t u = 0; u < k; ++u) {
                    long pos = static_cast<long>(t * stride + u) - static_cast<long>(padding);
                    if (pos < 0 || pos >= static_cast<long>(l)) continue;
                    double wv = w.rank() == 1 ? w.data()[u]
                                              : w.data()[(co * c_in + ci) * k + u];
                    s += wv * x.data()[ci * l + pos];
                }
            }
            out[co * l_out + t] = s;
        }
    }
    std::vector<size_t> oshape = (x.rank() == 1 && c_out == 1)
                                     ? std::vector<size_t>{l_out}
                                     : std::vector<size_t>{c_out, l_out};
    Tensor xin = x, win = w, bin = b;
    std::vector<Tensor> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    return make_op(
        std::move(oshape), std::move(out), std::move(parents),
        [xin, win, bin, c_in, l, c_out, k, l_out, stride, padding](detail::TensorImpl& self) {
            auto wval = [&](size_t co, size_t ci, size_t u) {
                return win.rank() == 1 ? win.data()[u] : win.data()[(co * c_in + ci) * k + u];
            };
            auto* gx = grad_sink(xin);
            auto* gw = grad_sink(win);
            auto* gb = bin.defined() ? grad_sink(bin) : nullptr;
            for (size_t co = 0; co < c_out; ++co) {
                for (size_t t = 0; t < l_out; ++t) {
                    double g = self.grad[co * l_out + t];
                    if (g == 0.0) continue;
                    if (gb) (*gb)[co] += g;
                    for (size_t ci = 0; ci < c_in; ++ci) {
                        for (size_t u = 0; u < k; ++u) {
                            long pos = static_cast<long>(t * stride + u) -
                                       static_cast<long>(padding);
                            if (pos < 0 || pos >= static_cast<long>(l)) continue;
                            if (gx) (*gx)[ci * l + pos] += g * wval(co, ci, u);
                            if (gw) {
                                size_t wi = win.rank() == 1 ? u : (co * c_in + ci) * k + u;
                                (*gw)[wi] += g * xin.data()[ci * l + pos];
                            }
                        }
                    }
                }
            }
        });
}

Tensor conv1d_transpose(const Tensor& x, const Tensor& w, const Tensor& b,
                        size_t stride, size_t padding) {
    check_defined(x, "conv1d_transpose");
    check_defined(w, "conv1d_transpose");
    check(stride >= 1, ErrorKind::domain, "conv1d_transpose: stride must be >= 1");
    check(w.rank() == 3, ErrorKind::dimension, "conv1d_transpose: kernel must be rank 3");
    size_t c_in, l, c_out, k;
    conv_shapes(x, w, "conv1d_transpose", &c_in, &l, &c_out, &k, true);
    long l_out_signed =
        static_cast<long>((l - 1) * stride + k) - 2 * static_cast<long>(padding);
    check(l_out_signed > 0, ErrorKind::dimension, "conv1d_transpose: empty output");
    size_t l_out = static_cast<size_t>(l_out_signed);
    if (b.defined())
        check(b.rank() == 1 && b.shape()[0] == c_out, ErrorKind::dimension,
              "conv1d_transpose: bias length mismatch");
    std::vector<double> out(c_out * l_out, 0.0);
    if (b.defined())
        for (size_t co = 0; co < c_out; ++co)
            for (size_t t = 0; t < l_out; ++t) out[co * l_out + t] = b.data()[co];
    for (size_t i = 0; i < l; ++i) {
        for (size_t u = 0; u < k; ++u) {
            long t = static_cast<long>(i * stride + u) - static_cast<long>(padding);
            if (t < 0 || t >= static_cast<long>(l_out)) continue;
            for (size_t co = 0; co < c_out; ++co) {
                double s = 0.0;
                for (size_t ci = 0; ci < c_in; ++ci)
                    s += x.data()[ci * l + i] * w.data()[(ci * c_out + co) * k + u];
                out[co * l_out + t] += s;
            }
        }
    }
    Tensor xin = x, win = w, bin = b;
    std::vector<Tensor> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    return make_op(
        {c_out, l_out}, std::move(out), std::move(parents),
        [xin, win, bin, c_in, l, c_out, k, l_out, stride, padding](detail::TensorImpl& self) {
            auto* gx = grad_sink(xin);
            auto* gw = grad_sink(win);
            auto* gb = bin.defined() ? grad_sink(bin) : nullptr;
            if (gb)
                for (size_t co = 0; co < c_out; ++co)
                    for (size_t t = 0; t < l_out; ++t) (*gb)[co] += self.grad[co * l_out + t];
            for (size_t i = 0; i < l; ++i) {
                for (size_t u = 0; u < k; ++u) {
                    long t = static_cast<long>(i * stride + u) - static_cast<long>(padding);
                    if (t < 0 || t >= static_cast<long>(l_out)) continue;
                    for (size_t co = 0; co < c_out; ++co) {
                        double g = self.grad[co * l_out + t];
                        if (g == 0.0) continue;
                        for (size_t ci = 0; ci < c_in; ++ci) {
                            if (gx)
                                (*gx)[ci * l + i] += g * win.data()[(ci * c_out + co) * k + u];
                            if (gw)
                                (*gw)[(ci * c_out + co) * k + u] += g * xin.data()[ci * l + i];
                        }
                    }
                }
            }
        });
}

// ---- serialization ----------------------------------------------------------

namespace {

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& in, const char* what) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    check(in.good(), ErrorKind::io, std::string("tensor load: truncated ") + what);
    return v;
}

constexpr char kTensorMagic[4] = {'O', 'M', 'T', 'N'};

}  // namespace

void save_tensor(const Tensor& t, std::ostream& out) {
    check(t.defined(), ErrorKind::state, "save_tensor: undefined tensor");
    out.write(kTensorMagic, 4);
    write_u32(out, static_cast<uint32_t>(t.rank()));
    for (size_t e : t.shape()) write_u32(out, static_cast<uint32_t>(e));
    std::vector<float> payload(t.size());
    for (size_t i = 0; i < payload.size(); ++i)
        payload[i] = static_cast<float>(t.data()[i]);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * 4));
    check(out.good(), ErrorKind::io, "save_tensor: write failed");
}

Tensor load_tensor(std::istream& in) {
    char magic[4] = {};
    in.read(magic, 4);
    check(in.good() && std::memcmp(magic, kTensorMagic, 4) == 0, ErrorKind::io,
          "tensor load: bad magic");
    uint32_t rank = read_u32(in, "rank");
    check(rank <= 8, ErrorKind::io, "tensor load: implausible rank");
    std::vector<size_t> shape(rank);
    size_t total = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        shape[i] = read_u32(in, "extent");
        total *= shape[i];
    }
    std::vector<float> payload(total);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(total * 4));
    check(in.good(), ErrorKind::io, "tensor load: truncated payload");
    std::vector<double> data(total);
    for (size_t i = 0; i < total; ++i) data[i] = payload[i];
    return Tensor::from(std::move(shape), std::move(data));
}

void save_tensor_file(const Tensor& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    check(out.is_open(), ErrorKind::io, "cannot open for write: " + path);
    save_tensor(t, out);
}

Tensor load_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.is_open(), ErrorKind::io, "missing file: " + path);
    return load_tensor(in);
}

const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::domain: return "domain";
        case ErrorKind::config: return "config";
        case ErrorKind::input: return "input";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::io: return "io";
        case ErrorKind::state: return "state";
        case ErrorKind::hash_mismatch: return "hash-mismatch";
        case ErrorKind::internal: return "internal";
    }
    return "unknown";
}

}  // namespace omni
