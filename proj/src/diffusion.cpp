#include "omni/diffusion.hpp"

#include <cmath>
#include <fstream>

#include "omni/errors.hpp"
#include "omni/transformer.hpp"

namespace omni {

DiffusionSchedule DiffusionSchedule::cosine(size_t steps) {
    check(steps >= 1, ErrorKind::config, "schedule: steps must be >= 1");
    DiffusionSchedule s;
    s.steps = steps;
    auto f = [](double u) {
        const double offset = 0.008;
        double v = std::cos((u + offset) / (1.0 + offset) * 1.5707963267948966);
        return v * v;
    };
    double f0 = f(0.0);
    s.betas.resize(steps);
    s.alphas.resize(steps);
    s.alpha_bars.resize(steps);
    s.sigmas.resize(steps);
    double prev_bar = 1.0;
    double running = 1.0;
    for (size_t t = 1; t <= steps; ++t) {
        double target = f(static_cast<double>(t) / static_cast<double>(steps)) / f0;
        double beta = 1.0 - target / prev_bar;
        beta = std::min(beta, 0.999);
        prev_bar = target;
        double alpha = 1.0 - beta;
        running *= alpha;  // alpha_bar is the exact product of alphas
        s.betas[t - 1] = beta;
        s.alphas[t - 1] = alpha;
        s.alpha_bars[t - 1] = running;
        double bar_prev = t == 1 ? 1.0 : s.alpha_bars[t - 2];
        s.sigmas[t - 1] = std::sqrt(beta * (1.0 - bar_prev) / (1.0 - running));
    }
    s.validate();
    return s;
}

void DiffusionSchedule::validate() const {
    check(steps >= 1 && betas.size() == steps && alphas.size() == steps &&
              alpha_bars.size() == steps && sigmas.size() == steps,
          ErrorKind::config, "schedule: inconsistent sizes");
    double prev = 1.0;
    for (size_t i = 0; i < steps; ++i) {
        check(betas[i] > 0.0 && betas[i] < 1.0, ErrorKind::numeric,
              "schedule: beta out of (0,1) at t=" + std::to_string(i + 1));
        check(alphas[i] > 0.0 && alphas[i] < 1.0, ErrorKind::numeric,
              "schedule: alpha out of (0,1) at t=" + std::to_string(i + 1));
        check(alpha_bars[i] > 0.0 && alpha_bars[i] < 1.0, ErrorKind::numeric,
              "schedule: alpha_bar out of (0,1) at t=" + std::to_string(i + 1));
        check(alpha_bars[i] < prev, ErrorKind::numeric,
              "schedule: alpha_bar not strictly decreasing at t=" + std::to_string(i + 1));
        check(sigmas[i] * sigmas[i] <= 1.0 - alpha_bars[i] + 1e-12, ErrorKind::numeric,
              "schedule: sigma exceeds posterior bound at t=" + std::to_string(i + 1));
        prev = alpha_bars[i];
    }
}

void DiffusionSchedule::dump(std::ostream& out) const {
    out << "t beta alpha alpha_bar sigma\n";
    char line[160];
    for (size_t t = 1; t <= steps; ++t) {
        std::snprintf(line, sizeof(line), "%zu %.12g %.12g %.12g %.12g\n", t, beta(t),
                      alpha(t), alpha_bar(t), sigma(t));
        out << line;
    }
}

void DiffusionSchedule::dump_file(const std::string& path) const {
    std::ofstream out(path);
    check(out.is_open(), ErrorKind::io, "cannot open for write: " + path);
    dump(out);
}

SigmaMode sigma_mode_from_string(const std::string& s) {
    if (s == "posterior") return SigmaMode::posterior;
    if (s == "zero") return SigmaMode::zero;
    fail(ErrorKind::config, "unknown sigma mode: " + s);
}

const char* sigma_mode_name(SigmaMode m) {
    return m == SigmaMode::posterior ? "posterior" : "zero";
}

HeadMode head_mode_from_string(const std::string& s) {
    if (s == "dit") return HeadMode::dit;
    if (s == "mlp") return HeadMode::mlp;
    fail(ErrorKind::config, "unknown head mode: " + s);
}

const char* head_mode_name(HeadMode m) { return m == HeadMode::dit ? "dit" : "mlp"; }

Tensor add_noise(const DiffusionSchedule& sched, const Tensor& x0, size_t t,
                 const Tensor& eps) {
    check(t >= 1 && t <= sched.steps, ErrorKind::domain,
          "add_noise: t out of range [1," + std::to_string(sched.steps) + "]");
    check(x0.shape() == eps.shape(), ErrorKind::dimension,
          "add_noise: eps shape mismatch");
    double bar = sched.alpha_bar(t);
    return add(scale(x0, std::sqrt(bar)), scale(eps, std::sqrt(1.0 - bar)));
}

Tensor ddpm_step(const DiffusionSchedule& sched, const Tensor& x_t, size_t t,
                 const Tensor& eps_hat, Rng& rng, SigmaMode mode) {
    check(t >= 1 && t <= sched.steps, ErrorKind::domain,
          "ddpm_step: t out of range [1," + std::to_string(sched.steps) + "]");
    check(x_t.shape() == eps_hat.shape(), ErrorKind::dimension,
          "ddpm_step: eps shape mismatch");
    double a = sched.alpha(t);
    double bar = sched.alpha_bar(t);
    double coeff = (1.0 - a) / std::sqrt(1.0 - bar);
    Tensor mean = scale(sub(x_t, scale(eps_hat, coeff)), 1.0 / std::sqrt(a));
    check(mean.all_finite(), ErrorKind::numeric,
          "ddpm_step: non-finite state at t=" + std::to_string(t));
    if (mode == SigmaMode::zero || t == 1) return mean;
    Tensor noise = Tensor::zeros(x_t.shape());
    for (double& v : noise.data()) v = rng.normal();
    return add(mean, scale(noise, sched.sigma(t)));
}

Tensor cfg_combine(const Tensor& cond, const Tensor& uncond, double alpha) {
    check(cond.defined() && uncond.defined(), ErrorKind::state,
          "cfg_combine: undefined input");
    check(cond.shape() == uncond.shape(), ErrorKind::dimension,
          "cfg_combine: shape mismatch");
    if (alpha == 0.0) return cond;
    return sub(scale(cond, 1.0 + alpha), scale(uncond, alpha));
}

// ---- head ---------------------------------------------------------------------

DiffusionHead::DiffusionHead(const DiTConfig& cfg, size_t diffusion_steps)
    : cfg_(cfg), diffusion_steps_(diffusion_steps) {
    check(cfg.heads >= 1 && cfg.hidden_dim % cfg.heads == 0, ErrorKind::config,
          "dit: hidden dim must be divisible by heads");
    check(diffusion_steps >= 1, ErrorKind::config, "dit: diffusion steps >= 1");
    Rng rng(Rng::mix(cfg.init_seed, 0xD17));
    size_t d = cfg.hidden_dim;
    in_proj_ = Linear::init("dit.in_proj", cfg.token_dim, d, rng);
    cond_in_ = Linear::init("dit.cond_in", cfg.z_dim, d, rng);
    time_mlp1_ = Linear::init("dit.time_mlp1", d, d, rng);
    time_mlp2_ = Linear::init("dit.time_mlp2", d, d, rng);
    for (size_t i = 0; i < cfg.layers; ++i) {
        std::string base = "dit.block" + std::to_string(i);
        Block b;
        b.adaln_proj = Linear::init_zero(base + ".adaln", d, 6 * d);
        if (cfg.head_mode == HeadMode::dit) {
            b.wq = Linear::init(base + ".wq", d, d, rng);
            b.wk = Linear::init(base + ".wk", d, d, rng);
            b.wv = Linear::init(base + ".wv", d, d, rng);
            b.attn_out = Linear::init(base + ".attn_out", d, d, rng);
        }
        b.ffn1 = Linear::init(base + ".ffn1", d, cfg.ffn_mult * d, rng);
        b.ffn2 = Linear::init(base + ".ffn2", cfg.ffn_mult * d, d, rng);
        blocks_.push_back(std::move(b));
    }
    final_adaln_ = Linear::init_zero("dit.final_adaln", d, 2 * d);
    out_proj_ = Linear::init_zero("dit.out", d, cfg.token_dim);
}

Tensor DiffusionHead::time_embedding(const std::vector<size_t>& t) const {
    size_t d = cfg_.hidden_dim;
    Tensor emb = Tensor::zeros({t.size(), d});
    for (size_t i = 0; i < t.size(); ++i) {
        check(t[i] >= 1 && t[i] <= diffusion_steps_, ErrorKind::domain,
              "time_embedding: t out of range");
        for (size_t j = 0; j < d; ++j) {
            double exponent = static_cast<double>(2 * (j / 2)) / static_cast<double>(d);
            double omega = std::pow(10000.0, -exponent);
            double angle = static_cast<double>(t[i]) * omega;
            emb.at(i, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return emb;
}

Tensor DiffusionHead::block_forward(const Block& b, const Tensor& x,
                                    const Tensor& cond) const {
    size_t d = cfg_.hidden_dim;
    Tensor mods = b.adaln_proj.forward(cond);  // [m, 6d]
    Tensor shift1 = slice_cols(mods, 0, d);
    Tensor scale1 = slice_cols(mods, d, 2 * d);
    Tensor gate1 = slice_cols(mods, 2 * d, 3 * d);
    Tensor shift2 = slice_cols(mods, 3 * d, 4 * d);
    Tensor scale2 = slice_cols(mods, 4 * d, 5 * d);
    Tensor gate2 = slice_cols(mods, 5 * d, 6 * d);

    Tensor h = x;
    if (cfg_.head_mode == HeadMode::dit) {
        Tensor attn_in =
            add(mul(layer_normalize(h, cfg_.norm_eps), add_scalar(scale1, 1.0)), shift1);
        size_t m = h.rows();
        size_t dh = d / cfg_.heads;
        double denom = std::sqrt(static_cast<double>(dh));
        Tensor q = b.wq.forward(attn_in);
        Tensor k = b.wk.forward(attn_in);
        Tensor v = b.wv.forward(attn_in);
        AttnMask mask = AttnMask::full(m, m);
        std::vector<Tensor> heads_out;
        heads_out.reserve(cfg_.heads);
        for (size_t hd = 0; hd < cfg_.heads; ++hd) {
            Tensor qh = slice_cols(q, hd * dh, (hd + 1) * dh);
            Tensor kh = slice_cols(k, hd * dh, (hd + 1) * dh);
            Tensor vh = slice_cols(v, hd * dh, (hd + 1) * dh);
            Tensor attn =
                masked_softmax(scale(matmul(qh, transpose(kh)), 1.0 / denom), mask);
            heads_out.push_back(matmul(attn, vh));
        }
        Tensor av = cfg_.heads == 1 ? heads_out[0] : concat_cols(heads_out);
        h = add(h, mul(b.attn_out.forward(av), gate1));
    }
    Tensor ffn_in =
        add(mul(layer_normalize(h, cfg_.norm_eps), add_scalar(scale2, 1.0)), shift2);
    Tensor ffn_out = b.ffn2.forward(gelu(b.ffn1.forward(ffn_in)));
    return add(h, mul(ffn_out, gate2));
}

Tensor DiffusionHead::forward(const Tensor& x_t, const std::vector<size_t>& t,
                              const Tensor& z) const {
    check(x_t.defined() && x_t.rank() == 2 && x_t.shape()[1] == cfg_.token_dim,
          ErrorKind::dimension, "dit forward: x_t must be [m, token_dim]");
    size_t m = x_t.shape()[0];
    check(t.size() == m, ErrorKind::dimension, "dit forward: t length mismatch");
    check(z.defined() && z.rank() == 2 && z.shape()[0] == m &&
              z.shape()[1] == cfg_.z_dim,
          ErrorKind::dimension, "dit forward: z must be [m, z_dim]");
    // conditioning: time embedding + projected transformer output, per token
    Tensor cond = add(time_mlp2_.forward(silu(time_mlp1_.forward(time_embedding(t)))),
                      cond_in_.forward(z));
    Tensor h = in_proj_.forward(x_t);
    for (const Block& b : blocks_) h = block_forward(b, h, cond);
    Tensor mods = final_adaln_.forward(cond);
    Tensor shift = slice_cols(mods, 0, cfg_.hidden_dim);
    Tensor scl = slice_cols(mods, cfg_.hidden_dim, 2 * cfg_.hidden_dim);
    h = add(mul(layer_normalize(h, cfg_.norm_eps), add_scalar(scl, 1.0)), shift);
    return out_proj_.forward(h);
}

Tensor DiffusionHead::sample_step(const DiffusionSchedule& sched, const Tensor& x_t,
                                  size_t t, const Tensor& z, Rng& rng,
                                  SigmaMode mode) const {
    Tensor eps_hat = forward(x_t, std::vector<size_t>(x_t.shape()[0], t), z);
    return ddpm_step(sched, x_t, t, eps_hat, rng, mode);
}

Tensor DiffusionHead::loss(const DiffusionSchedule& sched, const Tensor& x0,
                           const Tensor& z, Rng& rng) const {
    check(x0.defined() && x0.rank() == 2, ErrorKind::dimension,
          "diffusion loss: x0 must be [m, token_dim]");
    size_t m = x0.shape()[0];
    size_t d = x0.shape()[1];
    check(m >= 1, ErrorKind::dimension, "diffusion loss: empty batch");
    // one (t, eps) draw per row
    std::vector<size_t> ts(m);
    Tensor eps = Tensor::zeros({m, d});
    for (size_t i = 0; i < m; ++i) {
        ts[i] = 1 + static_cast<size_t>(rng.below(sched.steps));
        for (size_t j = 0; j < d; ++j) eps.at(i, j) = rng.normal();
    }
    std::vector<Tensor> noised_rows;
    noised_rows.reserve(m);
    for (size_t i = 0; i < m; ++i) {
        Tensor row0 = slice_rows(x0, i, i + 1);
        Tensor rowe = slice_rows(eps, i, i + 1);
        noised_rows.push_back(add_noise(sched, row0, ts[i], rowe));
    }
    Tensor x_t = m == 1 ? noised_rows[0] : concat_rows(noised_rows);
    Tensor eps_hat = forward(x_t, ts, z);
    return mean_all(row_l2norm(sub(eps, eps_hat)));
}

ParamRefs DiffusionHead::parameters() {
    ParamRefs out;
    in_proj_.collect(out);
    cond_in_.collect(out);
    time_mlp1_.collect(out);
    time_mlp2_.collect(out);
    for (Block& b : blocks_) {
        b.adaln_proj.collect(out);
        if (cfg_.head_mode == HeadMode::dit) {
            b.wq.collect(out);
            b.wk.collect(out);
            b.wv.collect(out);
            b.attn_out.collect(out);
        }
        b.ffn1.collect(out);
        b.ffn2.collect(out);
    }
    final_adaln_.collect(out);
    out_proj_.collect(out);
    return out;
}

}  // namespace omni
