#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omni/layers.hpp"
#include "omni/motion_data.hpp"
#include "omni/tensor.hpp"

namespace omni {

enum class AttnScaleMode { paper_dk, sqrt_dk };
enum class OrderMode { causal_sequential, bidirectional_reordered };
enum class NormKind { rmsnorm, layernorm };

AttnScaleMode attn_scale_mode_from_string(const std::string& s);
OrderMode order_mode_from_string(const std::string& s);
NormKind norm_kind_from_string(const std::string& s);
const char* attn_scale_mode_name(AttnScaleMode m);
const char* order_mode_name(OrderMode m);
const char* norm_kind_name(NormKind k);

struct TransformerConfig {
    size_t layers = 4;
    size_t hidden_dim = 1024;
    size_t heads = 16;
    AttnScaleMode attention_scale_mode = AttnScaleMode::paper_dk;
    OrderMode order_mode = OrderMode::causal_sequential;
    bool gating = true;
    NormKind norm = NormKind::rmsnorm;
    bool cross_attention = false;
    size_t token_dim = 16;
    size_t cond_dim = 64;
    size_t max_tokens = kMaxMotionFrames / 4;
    size_t ffn_mult = 4;
    double norm_eps = 1e-6;
    uint64_t init_seed = 4;
};

// token sequence entering the transformer; rows in mask are presented as the
// learned mask embedding instead of their values
struct TokenStream {
    Tensor tokens;  // [n, token_dim]
    MaskPlan mask;

    size_t count() const { return tokens.defined() ? tokens.shape()[0] : 0; }
};

// causal_sequential: position i attends to j <= i; bidirectional_reordered
// (the visual-MAR style baseline) attends everywhere
AttnMask causal_mask(size_t n, OrderMode mode);

// row-wise normalize without learned affine, per configured norm kind
Tensor normalize_rows(const Tensor& x, NormKind kind, double eps);

// h' = norm(h) * (1 + scale) + shift.  scale/shift are [d] (shared across
// rows) or [n,d] (per row)
Tensor adaln_modulate(const Tensor& h, const Tensor& scl, const Tensor& shift,
                      NormKind kind, double eps);

// multi-head attention with the sigmoid gate of the gated linear attention
// mechanism: o = g (.) concat_h(softmax(Q_h K_h^T / denom) V_h),
// g = sigmoid(g_o(x)). attend() returns o, before the output projection.
struct GatedMultiheadAttention {
    Linear wq, wk, wv;
    Linear gate;  // g_o
    size_t heads = 1;
    AttnScaleMode scale_mode = AttnScaleMode::paper_dk;
    bool gating = true;

    static GatedMultiheadAttention init(const std::string& name, size_t dim,
                                        size_t heads, AttnScaleMode mode, bool gating,
                                        Rng& rng);
    Tensor attend(const Tensor& x, const AttnMask& mask) const;
    void collect(ParamRefs& out);
};

// cross-attention from motion tokens to a condition sequence; the output
// projection starts at zero so a fresh layer is an exact identity residual
struct CrossAttention {
    Linear wq;        // [d, d]
    Linear wk, wv;    // [cond_dim, d]
    Linear out_proj;  // zero-init
    size_t heads = 1;

    static CrossAttention init(const std::string& name, size_t dim, size_t cond_dim,
                               size_t heads, Rng& rng);
    Tensor forward(const Tensor& x, const Tensor& cond_seq) const;
    void collect(ParamRefs& out);
};

// Masked autoregressive transformer. forward() maps a token stream plus
// conditions to per-token condition vectors z (one per position).
class MarTransformer {
public:
    explicit MarTransformer(const TransformerConfig& cfg);

    // hidden states before positional encoding; masked rows hold the mask
    // embedding exactly
    Tensor embed_stream(const TokenStream& stream) const;

    // adaln_vec: [cond_dim]; cross_seq: [l, cond_dim] or undefined
    Tensor forward(const TokenStream& stream, const Tensor& adaln_vec,
                   const Tensor& cross_seq) const;

    ParamRefs parameters();
    const TransformerConfig& config() const { return cfg_; }

private:
    struct Block {
        Linear adaln_proj;  // [hidden, 6*hidden], zero-init
        GatedMultiheadAttention attn;
        Linear attn_out;
        CrossAttention xattn;  // present iff cfg.cross_attention
        bool has_xattn = false;
        Linear ffn1, ffn2;
    };

    Tensor block_forward(const Block& b, const Tensor& x, const Tensor& cond_hidden,
                         const AttnMask& mask, const Tensor& cross_seq) const;

    TransformerConfig cfg_;
    Linear in_proj_;
    Parameter mask_emb_;  // [hidden]
    Tensor positions_;    // constant [max_tokens, hidden]
    Linear cond_trunk_;   // [cond_dim, hidden]
    std::vector<Block> blocks_;
    Parameter final_gain_;  // [hidden]
    Parameter final_bias_;  // [hidden], used by layernorm only
};

}  // namespace omni
