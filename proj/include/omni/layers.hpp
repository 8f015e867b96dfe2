#pragma once

#include <string>
#include <vector>

#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace omni {

// Named trainable tensor. Frozen parameters are excluded from graph building
// (requires_grad false), so they receive no gradient and no update.
struct Parameter {
    std::string name;
    Tensor value;
    bool frozen = false;

    void set_frozen(bool f) {
        frozen = f;
        value.set_requires_grad(!f);
    }
};

using ParamRefs = std::vector<Parameter*>;

// uniform Kaiming-style fan-in init: U(-sqrt(3/fan_in), sqrt(3/fan_in))
Tensor kaiming_uniform(std::vector<size_t> shape, size_t fan_in, Rng& rng);

Parameter make_param(std::string name, Tensor value);
Parameter make_zero_param(std::string name, std::vector<size_t> shape);

struct Linear {
    Parameter weight;  // [in, out]
    Parameter bias;    // [out]; undefined when bias-less

    static Linear init(const std::string& name, size_t in, size_t out, Rng& rng,
                       bool with_bias = true);
    static Linear init_zero(const std::string& name, size_t in, size_t out,
                            bool with_bias = true);

    // x: [n, in] or [in]
    Tensor forward(const Tensor& x) const;
    void collect(ParamRefs& out);
};

struct Conv1dLayer {
    Parameter weight;  // [c_out, c_in, k]
    Parameter bias;    // [c_out]
    size_t stride = 1;
    size_t padding = 0;

    static Conv1dLayer init(const std::string& name, size_t c_in, size_t c_out,
                            size_t k, size_t stride, size_t padding, Rng& rng);
    Tensor forward(const Tensor& x) const;  // x: [c_in, l]
    void collect(ParamRefs& out);
};

struct ConvT1dLayer {
    Parameter weight;  // [c_in, c_out, k]
    Parameter bias;    // [c_out]
    size_t stride = 1;
    size_t padding = 0;

    static ConvT1dLayer init(const std::string& name, size_t c_in, size_t c_out,
                             size_t k, size_t stride, size_t padding, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(ParamRefs& out);
};

// fixed sinusoidal position table, rows 0..n-1, dim d
Tensor sinusoidal_positions(size_t n, size_t d);

// overwrite every parameter with small random values; test helper for
// exercising backward paths through normally zero-initialized projections
void randomize_params(const ParamRefs& params, Rng& rng, double scl = 0.2);

}  // namespace omni
