#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "omni/layers.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace omni {

// Per-step coefficients for the forward/reverse process, indexed t = 1..steps.
// alpha_bar is the running product of alpha, sigma^2 the posterior variance
// beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
struct DiffusionSchedule {
    size_t steps = 0;
    std::vector<double> betas, alphas, alpha_bars, sigmas;  // [steps]

    double beta(size_t t) const { return betas.at(t - 1); }
    double alpha(size_t t) const { return alphas.at(t - 1); }
    double alpha_bar(size_t t) const { return alpha_bars.at(t - 1); }
    double sigma(size_t t) const { return sigmas.at(t - 1); }

    static DiffusionSchedule cosine(size_t steps);
    void validate() const;
    // audit table: one "t beta alpha alpha_bar sigma" row per step
    void dump(std::ostream& out) const;
    void dump_file(const std::string& path) const;
};

enum class SigmaMode { posterior, zero };
SigmaMode sigma_mode_from_string(const std::string& s);
const char* sigma_mode_name(SigmaMode m);

enum class HeadMode { dit, mlp };
HeadMode head_mode_from_string(const std::string& s);
const char* head_mode_name(HeadMode m);

struct DiTConfig {
    size_t layers = 4;
    size_t hidden_dim = 1792;
    size_t heads = 8;
    HeadMode head_mode = HeadMode::dit;
    size_t token_dim = 16;
    size_t z_dim = 1024;  // transformer output width
    size_t ffn_mult = 4;
    double norm_eps = 1e-6;
    uint64_t init_seed = 5;
};

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, elementwise
Tensor add_noise(const DiffusionSchedule& sched, const Tensor& x0, size_t t,
                 const Tensor& eps);

// reverse step given a noise estimate:
// x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-alpha_bar_t) eps_hat) / sqrt(alpha_t)
//           + sigma_t * noise
// noise is ignored when t == 1 or mode == zero
Tensor ddpm_step(const DiffusionSchedule& sched, const Tensor& x_t, size_t t,
                 const Tensor& eps_hat, Rng& rng, SigmaMode mode);

// classifier-free guidance: (1 + alpha) * cond - alpha * uncond
Tensor cfg_combine(const Tensor& cond, const Tensor& uncond, double alpha);

// Noise-prediction head. In dit mode the tokens being denoised attend to each
// other through transformer blocks; in mlp mode (the ablation baseline) each
// token is processed independently. Conditioning is time-embedding + projected
// z, injected through AdaLN-zero.
class DiffusionHead {
public:
    DiffusionHead(const DiTConfig& cfg, size_t diffusion_steps);

    // x_t: [m, token_dim]; t: per-row step indices (1-based); z: [m, z_dim]
    Tensor forward(const Tensor& x_t, const std::vector<size_t>& t,
                   const Tensor& z) const;

    // spec-shaped single-position step: evaluates the head then applies
    // ddpm_step; x_t and z are single rows
    Tensor sample_step(const DiffusionSchedule& sched, const Tensor& x_t, size_t t,
                       const Tensor& z, Rng& rng, SigmaMode mode) const;

    // mean over rows of |eps - eps_hat|_2 with one (t, eps) draw per row;
    // rows are the masked positions chosen by the caller
    Tensor loss(const DiffusionSchedule& sched, const Tensor& x0,
                const Tensor& z, Rng& rng) const;

    ParamRefs parameters();
    const DiTConfig& config() const { return cfg_; }
    size_t diffusion_steps() const { return diffusion_steps_; }

private:
    struct Block {
        Linear adaln_proj;  // zero-init
        Linear wq, wk, wv, attn_out;  // absent in mlp mode
        Linear ffn1, ffn2;
    };

    Tensor time_embedding(const std::vector<size_t>& t) const;  // [m, hidden]
    Tensor block_forward(const Block& b, const Tensor& x, const Tensor& cond) const;

    DiTConfig cfg_;
    size_t diffusion_steps_;
    Linear in_proj_;    // token_dim -> hidden
    Linear cond_in_;    // z_dim -> hidden
    Linear time_mlp1_, time_mlp2_;
    std::vector<Block> blocks_;
    Linear final_adaln_;  // zero-init, produces (shift, scale)
    Linear out_proj_;     // zero-init, hidden -> token_dim
};

}  // namespace omni
