#include "omni/transformer.hpp"

#include <cmath>

#include "omni/errors.hpp"

namespace omni {

AttnScaleMode attn_scale_mode_from_string(const std::string& s) {
    if (s == "paper_dk") return AttnScaleMode::paper_dk;
    if (s == "sqrt_dk") return AttnScaleMode::sqrt_dk;
    fail(ErrorKind::config, "unknown attention_scale_mode: " + s);
}

OrderMode order_mode_from_string(const std::string& s) {
    if (s == "causal_sequential") return OrderMode::causal_sequential;
    if (s == "bidirectional_reordered") return OrderMode::bidirectional_reordered;
    fail(ErrorKind::config, "unknown order_mode: " + s);
}

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "rmsnorm") return NormKind::rmsnorm;
    if (s == "layernorm") return NormKind::layernorm;
    fail(ErrorKind::config, "unknown norm kind: " + s);
}

const char* attn_scale_mode_name(AttnScaleMode m) {
    return m == AttnScaleMode::paper_dk ? "paper_dk" : "sqrt_dk";
}

const char* order_mode_name(OrderMode m) {
    return m == OrderMode::causal_sequential ? "causal_sequential"
                                             : "bidirectional_reordered";
}

const char* norm_kind_name(NormKind k) {
    return k == NormKind::rmsnorm ? "rmsnorm" : "layernorm";
}

AttnMask causal_mask(size_t n, OrderMode mode) {
    check(n >= 1, ErrorKind::domain, "causal_mask: n must be >= 1");
    return mode == OrderMode::causal_sequential ? AttnMask::causal(n)
                                                : AttnMask::full(n, n);
}

Tensor normalize_rows(const Tensor& x, NormKind kind, double eps) {
    return kind == NormKind::rmsnorm ? rms_normalize(x, eps)
                                     : layer_normalize(x, eps);
}

Tensor adaln_modulate(const Tensor& h, const Tensor& scl, const Tensor& shift,
                      NormKind kind, double eps) {
    Tensor normed = normalize_rows(h, kind, eps);
    if (scl.rank() == 1 && normed.rank() == 2) {
        return add_row(mul_row(normed, add_scalar(scl, 1.0)), shift);
    }
    check(scl.shape() == normed.shape() && shift.shape() == normed.shape(),
          ErrorKind::dimension, "adaln_modulate: modulation shape mismatch");
    return add(mul(normed, add_scalar(scl, 1.0)), shift);
}

// ---- gated attention ---------------------------------------------------------

GatedMultiheadAttention GatedMultiheadAttention::init(const std::string& name,
                                                      size_t dim, size_t heads,
                                                      AttnScaleMode mode, bool gating,
                                                      Rng& rng) {
    check(heads >= 1 && dim % heads == 0, ErrorKind::config,
          "attention: hidden dim must be divisible by heads");
    GatedMultiheadAttention a;
    a.wq = Linear::init(name + ".wq", dim, dim, rng);
    a.wk = Linear::init(name + ".wk", dim, dim, rng);
    a.wv = Linear::init(name + ".wv", dim, dim, rng);
    a.gate = Linear::init(name + ".gate", dim, dim, rng);
    a.heads = heads;
    a.scale_mode = mode;
    a.gating = gating;
    return a;
}

Tensor GatedMultiheadAttention::attend(const Tensor& x, const AttnMask& mask) const {
    size_t dim = x.cols();
    size_t dh = dim / heads;
    double denom = scale_mode == AttnScaleMode::paper_dk
                       ? static_cast<double>(dh)
                       : std::sqrt(static_cast<double>(dh));
    Tensor q = wq.forward(x);
    Tensor k = wk.forward(x);
    Tensor v = wv.forward(x);
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / denom);
        Tensor attn = masked_softmax(scores, mask);
        head_outs.push_back(matmul(attn, vh));
    }
    Tensor av = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    if (!gating) return av;
    Tensor g = sigmoid(gate.forward(x));
    return mul(g, av);
}

void GatedMultiheadAttention::collect(ParamRefs& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    gate.collect(out);
}

// ---- cross attention -----------------------------------------------------------

CrossAttention CrossAttention::init(const std::string& name, size_t dim,
                                    size_t cond_dim, size_t heads, Rng& rng) {
    check(heads >= 1 && dim % heads == 0, ErrorKind::config,
          "cross attention: hidden dim must be divisible by heads");
    CrossAttention c;
    c.wq = Linear::init(name + ".wq", dim, dim, rng);
    c.wk = Linear::init(name + ".wk", cond_dim, dim, rng);
    c.wv = Linear::init(name + ".wv", cond_dim, dim, rng);
    c.out_proj = Linear::init_zero(name + ".out", dim, dim);
    c.heads = heads;
    return c;
}

Tensor CrossAttention::forward(const Tensor& x, const Tensor& cond_seq) const {
    size_t dim = x.cols();
    size_t dh = dim / heads;
    Tensor q = wq.forward(x);
    Tensor k = wk.forward(cond_seq);
    Tensor v = wv.forward(cond_seq);
    AttnMask mask = AttnMask::full(x.rows(), cond_seq.rows());
    double denom = std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor attn = masked_softmax(scale(matmul(qh, transpose(kh)), 1.0 / denom), mask);
        head_outs.push_back(matmul(attn, vh));
    }
    Tensor av = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    return out_proj.forward(av);
}

void CrossAttention::collect(ParamRefs& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    out_proj.collect(out);
}

// ---- transformer ----------------------------------------------------------------

MarTransformer::MarTransformer(const TransformerConfig& cfg) : cfg_(cfg) {
    check(cfg.heads >= 1 && cfg.hidden_dim % cfg.heads == 0, ErrorKind::config,
          "transformer: hidden dim must be divisible by heads");
    Rng rng(Rng::mix(cfg.init_seed, 0x7F0));
    size_t d = cfg.hidden_dim;
    in_proj_ = Linear::init("tf.in_proj", cfg.token_dim, d, rng);
    Tensor memb = Tensor::zeros({d});
    for (double& v : memb.data()) v = 0.02 * rng.normal();
    mask_emb_ = make_param("tf.mask_emb", std::move(memb));
    positions_ = sinusoidal_positions(cfg.max_tokens, d);
    cond_trunk_ = Linear::init("tf.cond_trunk", cfg.cond_dim, d, rng);
    for (size_t i = 0; i < cfg.layers; ++i) {
        std::string base = "tf.block" + std::to_string(i);
        Block b;
        b.adaln_proj = Linear::init_zero(base + ".adaln", d, 6 * d);
        b.attn = GatedMultiheadAttention::init(base + ".attn", d, cfg.heads,
                                               cfg.attention_scale_mode, cfg.gating, rng);
        b.attn_out = Linear::init(base + ".attn_out", d, d, rng);
        if (cfg.cross_attention) {
            b.xattn = CrossAttention::init(base + ".xattn", d, cfg.cond_dim,
                                           cfg.heads, rng);
            b.has_xattn = true;
        }
        b.ffn1 = Linear::init(base + ".ffn1", d, cfg.ffn_mult * d, rng);
        b.ffn2 = Linear::init(base + ".ffn2", cfg.ffn_mult * d, d, rng);
        blocks_.push_back(std::move(b));
    }
    final_gain_ = make_param("tf.final_gain", Tensor::full({d}, 1.0));
    final_bias_ = make_zero_param("tf.final_bias", {d});
}

Tensor MarTransformer::embed_stream(const TokenStream& stream) const {
    check(stream.tokens.defined(), ErrorKind::state, "embed_stream: no tokens");
    size_t n = stream.count();
    check(n >= 1, ErrorKind::dimension, "embed_stream: empty stream");
    check(n <= cfg_.max_tokens, ErrorKind::dimension,
          "embed_stream: stream longer than max_tokens");
    check(stream.mask.n_tokens == n, ErrorKind::dimension,
          "embed_stream: mask plan size mismatch");
    Tensor h = in_proj_.forward(stream.tokens);
    return replace_rows(h, stream.mask.mask_bits(), mask_emb_.value);
}

Tensor MarTransformer::block_forward(const Block& b, const Tensor& x,
                                     const Tensor& cond_hidden, const AttnMask& mask,
                                     const Tensor& cross_seq) const {
    size_t d = cfg_.hidden_dim;
    Tensor mods = b.adaln_proj.forward(cond_hidden);  // [6d]
    Tensor shift1 = slice_cols(mods, 0, d);
    Tensor scale1 = slice_cols(mods, d, 2 * d);
    Tensor gate1 = slice_cols(mods, 2 * d, 3 * d);
    Tensor shift2 = slice_cols(mods, 3 * d, 4 * d);
    Tensor scale2 = slice_cols(mods, 4 * d, 5 * d);
    Tensor gate2 = slice_cols(mods, 5 * d, 6 * d);

    // residual branches are scaled by the zero-initialized gates, so a fresh
    // block is an exact identity (the "-zero" part of AdaLN-zero)
    Tensor h = x;
    Tensor attn_in = adaln_modulate(h, scale1, shift1, cfg_.norm, cfg_.norm_eps);
    Tensor attn_out = b.attn_out.forward(b.attn.attend(attn_in, mask));
    h = add(h, mul_row(attn_out, gate1));

    if (b.has_xattn && cross_seq.defined()) {
        Tensor q_in = normalize_rows(h, cfg_.norm, cfg_.norm_eps);
        h = add(h, b.xattn.forward(q_in, cross_seq));
    }

    Tensor ffn_in = adaln_modulate(h, scale2, shift2, cfg_.norm, cfg_.norm_eps);
    Tensor ffn_out = b.ffn2.forward(gelu(b.ffn1.forward(ffn_in)));
    return add(h, mul_row(ffn_out, gate2));
}

Tensor MarTransformer::forward(const TokenStream& stream, const Tensor& adaln_vec,
                               const Tensor& cross_seq) const {
    check(adaln_vec.defined() && adaln_vec.rank() == 1 &&
              adaln_vec.shape()[0] == cfg_.cond_dim,
          ErrorKind::config, "forward: adaln vector must be [cond_dim]");
    if (cross_seq.defined())
        check(cross_seq.rank() == 2 && cross_seq.shape()[1] == cfg_.cond_dim,
              ErrorKind::config, "forward: cross sequence must be [l, cond_dim]");
    size_t n = stream.count();
    Tensor h = embed_stream(stream);
    Tensor pe = slice_rows(positions_, 0, n);
    h = add(h, pe);
    Tensor cond_hidden = silu(cond_trunk_.forward(adaln_vec));  // [hidden]
    AttnMask mask = causal_mask(n, cfg_.order_mode);
    for (const Block& b : blocks_) {
        h = block_forward(b, h, cond_hidden, mask, cross_seq);
    }
    Tensor z = normalize_rows(h, cfg_.norm, cfg_.norm_eps);
    z = mul_row(z, final_gain_.value);
    if (cfg_.norm == NormKind::layernorm) z = add_row(z, final_bias_.value);
    return z;
}

ParamRefs MarTransformer::parameters() {
    ParamRefs out;
    in_proj_.collect(out);
    out.push_back(&mask_emb_);
    cond_trunk_.collect(out);
    for (Block& b : blocks_) {
        b.adaln_proj.collect(out);
        b.attn.collect(out);
        b.attn_out.collect(out);
        if (b.has_xattn) b.xattn.collect(out);
        b.ffn1.collect(out);
        b.ffn2.collect(out);
    }
    out.push_back(&final_gain_);
    out.push_back(&final_bias_);
    return out;
}

}  // namespace omni
