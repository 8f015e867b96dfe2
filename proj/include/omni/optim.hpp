#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omni/layers.hpp"

namespace omni {

// AdamW with linear warmup. Effective lr at step k (1-based) is
// base_lr * min(1, k/warmup); frozen parameters are skipped entirely.
class AdamW {
public:
    AdamW(double base_lr, size_t warmup_steps, double beta1 = 0.9,
          double beta2 = 0.99, double eps = 1e-8, double weight_decay = 0.0);

    double lr_at(size_t step) const;
    size_t step_count() const { return step_; }

    void zero_grad(const ParamRefs& params);
    void step(const ParamRefs& params);

private:
    double base_lr_, beta1_, beta2_, eps_, weight_decay_;
    size_t warmup_steps_;
    size_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;  // parallel to params of first step()
    std::vector<Parameter*> bound_;
};

// Exponential-moving-average shadows of every trainable parameter.
// update: shadow <- decay * shadow + (1 - decay) * live.
struct EmaState {
    double decay = 0.999;
    std::vector<std::string> names;
    std::vector<Tensor> shadows;

    static EmaState init(const ParamRefs& params, double decay);
    void update(const ParamRefs& params);
    // frozen parameters are not tracked; refresh their shadows to the live
    // values (used right before serialization)
    void sync_frozen(const ParamRefs& params);
    const Tensor* find(const std::string& name) const;
    // copies shadows into the matching live parameters (frozen ones untouched)
    void apply_to(const ParamRefs& params) const;
};

}  // namespace omni
