#include "omni/layers.hpp"

#include <cmath>

#include "omni/errors.hpp"

namespace omni {

Tensor kaiming_uniform(std::vector<size_t> shape, size_t fan_in, Rng& rng) {
    check(fan_in >= 1, ErrorKind::domain, "kaiming_uniform: fan_in must be >= 1");
    double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

Parameter make_param(std::string name, Tensor value) {
    Parameter p;
    p.name = std::move(name);
    p.value = std::move(value);
    p.value.set_requires_grad(true);
    return p;
}

Parameter make_zero_param(std::string name, std::vector<size_t> shape) {
    return make_param(std::move(name), Tensor::zeros(std::move(shape)));
}

Linear Linear::init(const std::string& name, size_t in, size_t out, Rng& rng,
                    bool with_bias) {
    Linear l;
    l.weight = make_param(name + ".weight", kaiming_uniform({in, out}, in, rng));
    if (with_bias) l.bias = make_zero_param(name + ".bias", {out});
    return l;
}

Linear Linear::init_zero(const std::string& name, size_t in, size_t out,
                         bool with_bias) {
    Linear l;
    l.weight = make_zero_param(name + ".weight", {in, out});
    if (with_bias) l.bias = make_zero_param(name + ".bias", {out});
    return l;
}

Tensor Linear::forward(const Tensor& x) const {
    bool vector_in = x.rank() == 1;
    Tensor h = vector_in ? reshape(x, {1, x.shape()[0]}) : x;
    Tensor y = matmul(h, weight.value);
    if (bias.value.defined()) y = add_row(y, bias.value);
    if (vector_in) return reshape(y, {y.shape()[1]});
    return y;
}

void Linear::collect(ParamRefs& out) {
    out.push_back(&weight);
    if (bias.value.defined()) out.push_back(&bias);
}

Conv1dLayer Conv1dLayer::init(const std::string& name, size_t c_in, size_t c_out,
                              size_t k, size_t stride, size_t padding, Rng& rng) {
    Conv1dLayer l;
    l.weight = make_param(name + ".weight",
                          kaiming_uniform({c_out, c_in, k}, c_in * k, rng));
    l.bias = make_zero_param(name + ".bias", {c_out});
    l.stride = stride;
    l.padding = padding;
    return l;
}

Tensor Conv1dLayer::forward(const Tensor& x) const {
    return conv1d(x, weight.value, bias.value, stride, padding);
}

void Conv1dLayer::collect(ParamRefs& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

ConvT1dLayer ConvT1dLayer::init(const std::string& name, size_t c_in, size_t c_out,
                                size_t k, size_t stride, size_t padding, Rng& rng) {
    ConvT1dLayer l;
    l.weight = make_param(name + ".weight",
                          kaiming_uniform({c_in, c_out, k}, c_in * k, rng));
    l.bias = make_zero_param(name + ".bias", {c_out});
    l.stride = stride;
    l.padding = padding;
    return l;
}

Tensor ConvT1dLayer::forward(const Tensor& x) const {
    return conv1d_transpose(x, weight.value, bias.value, stride, padding);
}

void ConvT1dLayer::collect(ParamRefs& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

Tensor sinusoidal_positions(size_t n, size_t d) {
    Tensor t = Tensor::zeros({n, d});
    for (size_t pos = 0; pos < n; ++pos) {
        for (size_t i = 0; i < d; ++i) {
            double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d);
            double omega = std::pow(10000.0, -exponent);
            double angle = static_cast<double>(pos) * omega;
            t.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return t;
}

void randomize_params(const ParamRefs& params, Rng& rng, double scl) {
    for (Parameter* p : params)
        for (double& v : p->value.data()) v = rng.uniform(-scl, scl);
}

}  // namespace omni
