#pragma once

#include <cstdint>
#include <vector>

#include "omni/layers.hpp"
#include "omni/motion_data.hpp"
#include "omni/tensor.hpp"

namespace omni {

struct AutoencoderConfig {
    size_t input_dims = kDefaultMotionDims;
    size_t hidden_dim = 512;
    size_t latent_dim = 16;
    size_t conv_layers = 3;
    size_t downsample_blocks = 2;  // each halves the length
    uint64_t init_seed = 1;

    size_t downsample_rate() const { return size_t{1} << downsample_blocks; }
};

// continuous tokens: [n, latent] at 1/4 temporal resolution
struct MotionTokens {
    Tensor tokens;
    double source_fps = 20.0;

    size_t count() const { return tokens.defined() ? tokens.shape()[0] : 0; }
};

// sum over frames of the L1 norm of (m_hat - m)
Tensor ae_loss(const Tensor& m, const Tensor& m_hat);

// Continuous (non-quantized) encoder/decoder. Encoder: conv+ReLU stack, then
// strided residual downsample blocks, then a latent projection; decoder is the
// mirror with transposed convolutions.
class MotionAutoencoder {
public:
    explicit MotionAutoencoder(const AutoencoderConfig& cfg);

    // frames [t, d] with t divisible by the downsample rate -> [t/rate, latent]
    Tensor encode_frames(const Tensor& frames) const;
    // tokens [n, latent] -> frames [n*rate, d]
    Tensor decode_tokens(const Tensor& tokens) const;

    MotionTokens encode(const MotionSequence& m) const;
    MotionSequence decode(const MotionTokens& z) const;

    ParamRefs parameters();
    const AutoencoderConfig& config() const { return cfg_; }
    void set_frozen(bool frozen);

private:
    struct DownBlock {
        Conv1dLayer conv1, conv2, skip;
    };
    struct UpBlock {
        ConvT1dLayer convt, skip;
        Conv1dLayer conv2;
    };

    AutoencoderConfig cfg_;
    std::vector<Conv1dLayer> enc_stack_;
    std::vector<DownBlock> down_;
    Conv1dLayer to_latent_;
    Conv1dLayer from_latent_;
    std::vector<UpBlock> up_;
    std::vector<Conv1dLayer> dec_stack_;
    Conv1dLayer out_proj_;
};

struct AeTrainConfig {
    size_t steps = 3000;
    size_t batch_size = 8;
    double lr = 1e-3;
    size_t warmup_steps = 100;
    uint64_t seed = 0;
    size_t log_every = 50;
};

struct AeTrainResult {
    std::vector<double> losses;     // per-step mean per-element L1
    double initial_loss = 0.0;      // mean of the first window
    double final_loss = 0.0;        // mean of the last window
    double corpus_l1 = 0.0;         // full-corpus per-element L1 after training
};

// one AdamW pass per step on a random batch; deterministic in cfg.seed
AeTrainResult train_autoencoder(MotionAutoencoder& ae,
                                const std::vector<CorpusItem>& corpus,
                                const AeTrainConfig& cfg);

// same loop on new data starting from the current weights
AeTrainResult finetune_autoencoder(MotionAutoencoder& ae,
                                   const std::vector<CorpusItem>& corpus,
                                   const AeTrainConfig& cfg);

// mean |m_hat - m| per element across the whole corpus (no grad)
double reconstruction_l1(const MotionAutoencoder& ae,
                         const std::vector<CorpusItem>& corpus);

}  // namespace omni
