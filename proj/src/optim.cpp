#include "omni/optim.hpp"

#include <cmath>

#include "omni/errors.hpp"

namespace omni {

AdamW::AdamW(double base_lr, size_t warmup_steps, double beta1, double beta2,
             double eps, double weight_decay)
    : base_lr_(base_lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay),
      warmup_steps_(warmup_steps) {}

double AdamW::lr_at(size_t step) const {
    if (warmup_steps_ == 0 || step >= warmup_steps_) return base_lr_;
    return base_lr_ * static_cast<double>(step) / static_cast<double>(warmup_steps_);
}

void AdamW::zero_grad(const ParamRefs& params) {
    for (Parameter* p : params) p->value.zero_grad();
}

void AdamW::step(const ParamRefs& params) {
    if (bound_.empty()) {
        bound_ = params;
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->value.size(), 0.0);
            v_[i].assign(params[i]->value.size(), 0.0);
        }
    }
    check(bound_.size() == params.size(), ErrorKind::state,
          "AdamW: parameter set changed between steps");
    ++step_;
    double lr = lr_at(step_);
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (size_t i = 0; i < params.size(); ++i) {
        Parameter* p = params[i];
        if (p->frozen) continue;
        const std::vector<double>& g = p->value.grad();
        std::vector<double>& val = p->value.data();
        for (size_t j = 0; j < val.size(); ++j) {
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
            double m_hat = m_[i][j] / bc1;
            double v_hat = v_[i][j] / bc2;
            if (weight_decay_ != 0.0) val[j] -= lr * weight_decay_ * val[j];
            val[j] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

EmaState EmaState::init(const ParamRefs& params, double decay) {
    check(decay > 0.0 && decay < 1.0, ErrorKind::config,
          "EmaState: decay must lie in (0,1)");
    EmaState state;
    state.decay = decay;
    for (const Parameter* p : params) {
        state.names.push_back(p->name);
        state.shadows.push_back(p->value.detach());
    }
    return state;
}

void EmaState::update(const ParamRefs& params) {
    check(params.size() == shadows.size(), ErrorKind::state,
          "EmaState: parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i]->frozen) continue;
        check(params[i]->value.size() == shadows[i].size(), ErrorKind::state,
              "EmaState: shape mismatch for " + params[i]->name);
        const std::vector<double>& live = params[i]->value.data();
        std::vector<double>& shadow = shadows[i].data();
        for (size_t j = 0; j < live.size(); ++j)
            shadow[j] = decay * shadow[j] + (1.0 - decay) * live[j];
    }
}

void EmaState::sync_frozen(const ParamRefs& params) {
    check(params.size() == shadows.size(), ErrorKind::state,
          "EmaState: parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i)
        if (params[i]->frozen) shadows[i] = params[i]->value.detach();
}

const Tensor* EmaState::find(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return &shadows[i];
    return nullptr;
}

void EmaState::apply_to(const ParamRefs& params) const {
    for (Parameter* p : params) {
        if (p->frozen) continue;
        if (const Tensor* shadow = find(p->name)) {
            check(shadow->size() == p->value.size(), ErrorKind::state,
                  "EmaState: shape mismatch for " + p->name);
            p->value.data() = shadow->data();
        }
    }
}

}  // namespace omni
