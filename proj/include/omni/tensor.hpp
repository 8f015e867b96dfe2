#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace omni {

class Tensor;

namespace detail {

struct TensorImpl {
    std::vector<size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(TensorImpl&)> backward_fn;  // reads self.grad, adds into parents

    size_t size() const { return data.size(); }
    void ensure_grad();
};

}  // namespace detail

// Dense row-major tensor with reverse-mode autodiff. Copies share the
// underlying buffer (handle semantics); detach()/clone() make value copies.
// The implicit graph built by the ops below is single-owner: one backward()
// per graph, never concurrently.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<size_t> shape, double value);
    static Tensor from(std::vector<size_t> shape, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> values);  // rank-1

    bool defined() const { return impl_ != nullptr; }
    const std::vector<size_t>& shape() const;
    size_t rank() const { return shape().size(); }
    size_t size() const;
    size_t rows() const;  // rank-1: 1, rank-2: shape[0]
    size_t cols() const;  // rank-1: shape[0], rank-2: shape[1]

    std::vector<double>& data();
    const std::vector<double>& data() const;
    double operator()(size_t i) const;
    double operator()(size_t i, size_t j) const;
    double& at(size_t i);
    double& at(size_t i, size_t j);
    double item() const;  // value of a single-element tensor

    bool requires_grad() const;
    Tensor& set_requires_grad(bool value);
    const std::vector<double>& grad() const;  // zeros until backward touches it
    void zero_grad();

    // Runs reverse-mode accumulation from this scalar.
    void backward();

    Tensor detach() const;  // value copy, no graph, requires_grad=false
    bool all_finite() const;

    detail::TensorImpl* impl() const { return impl_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend Tensor make_op(std::vector<size_t> shape, std::vector<double> data,
                          std::vector<Tensor> parents,
                          std::function<void(detail::TensorImpl&)> backward_fn);
};

// Grad mode: ops built while disabled produce detached results.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// ---- elementwise / shape ops ------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor abs(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<size_t> shape);

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a);       // -> scalar
Tensor mean_all(const Tensor& a);  // -> scalar
Tensor row_l2norm(const Tensor& a);  // [n,d] -> [n]
Tensor mean_rows(const Tensor& a);   // [n,d] -> [d]

// ---- matrix ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- row/col structure ------------------------------------------------------

Tensor repeat_rows(const Tensor& v, size_t n);              // [d] -> [n,d]
Tensor add_row(const Tensor& x, const Tensor& v);           // [n,d] + [d]
Tensor mul_row(const Tensor& x, const Tensor& v);           // [n,d] * [d]
Tensor slice_cols(const Tensor& x, size_t c0, size_t c1);   // [n,c1-c0]
Tensor slice_rows(const Tensor& x, size_t r0, size_t r1);
Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor select_rows(const Tensor& x, const std::vector<uint32_t>& idx);  // gather
// rows where mask[i]!=0 are replaced by `row`; backward splits accordingly
Tensor replace_rows(const Tensor& x, const std::vector<uint8_t>& mask, const Tensor& row);

// ---- softmax / normalization ------------------------------------------------

// axis: 0 = down columns, 1 (or -1) = along rows; rank-1 input treated as one row
Tensor softmax(const Tensor& x, int axis = -1);

// attention mask: allow[i*m+j] != 0 means query i may attend to key j;
// every row must allow at least one key
struct AttnMask {
    size_t n = 0, m = 0;
    std::vector<uint8_t> allow;

    bool allowed(size_t i, size_t j) const { return allow[i * m + j] != 0; }
    static AttnMask full(size_t n, size_t m);
    static AttnMask causal(size_t n);
};

// rows softmax over allowed entries only; disallowed outputs are exactly 0
Tensor masked_softmax(const Tensor& scores, const AttnMask& mask);

Tensor rms_normalize(const Tensor& x, double eps);    // rows: x / sqrt(mean(x^2)+eps)
Tensor layer_normalize(const Tensor& x, double eps);  // rows: (x-mu)/sqrt(var+eps)
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// ---- convolution ------------------------------------------------------------

// x: [c_in, l] (rank-1 input treated as one channel), w: [c_out, c_in, k],
// b: [c_out] or undefined. out: [c_out, floor((l + 2p - k)/s) + 1]
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, size_t stride,
              size_t padding);

// w: [c_in, c_out, k]; out length (l-1)*s - 2p + k
Tensor conv1d_transpose(const Tensor& x, const Tensor& w, const Tensor& b,
                        size_t stride, size_t padding);

// ---- serialization ----------------------------------------------------------

// binary layout: "OMTN", u32 rank, u32 extents..., f32 payload, little-endian
void save_tensor(const Tensor& t, std::ostream& out);
Tensor load_tensor(std::istream& in);
void save_tensor_file(const Tensor& t, const std::string& path);
Tensor load_tensor_file(const std::string& path);

}  // namespace omni
