#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "omni/autoencoder.hpp"
#include "omni/checkpoint.hpp"
#include "omni/conditioning.hpp"
#include "omni/diffusion.hpp"
#include "omni/optim.hpp"
#include "omni/transformer.hpp"

namespace omni {

struct ModelConfig {
    Modality task = Modality::text;
    size_t diffusion_steps = 100;
    size_t token_dim = 16;
    TransformerConfig tf;
    DiTConfig dit;
    TextEncoderConfig text;
    AudioEncoderConfig audio;

    std::map<std::string, std::string> to_meta() const;
    static ModelConfig from_meta(const std::map<std::string, std::string>& meta);
};

// Generator bundle: text encoder (+ audio encoder for speech/music), masked
// transformer, diffusion head, schedule, and the token normalizer that pairs
// the diffusion space with a specific autoencoder.
class OmniModel {
public:
    explicit OmniModel(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    MarTransformer& transformer() { return *transformer_; }
    const MarTransformer& transformer() const { return *transformer_; }
    DiffusionHead& head() { return *head_; }
    const DiffusionHead& head() const { return *head_; }
    TextEncoder& text_encoder() { return *text_; }
    const TextEncoder& text_encoder() const { return *text_; }
    AudioEncoder* audio_encoder() { return audio_ ? audio_.get() : nullptr; }
    const AudioEncoder* audio_encoder() const { return audio_ ? audio_.get() : nullptr; }
    const DiffusionSchedule& schedule() const { return schedule_; }

    // deterministic order; includes the frozen token normalizer entries
    ParamRefs parameters();
    ParamRefs trainable_parameters();
    void freeze_dit(bool frozen);
    bool dit_frozen() const { return dit_frozen_; }

    // token normalization (per latent channel) fitted on a token population
    void fit_token_stats(const std::vector<Tensor>& token_batches);
    Tensor normalize_tokens(const Tensor& tokens) const;
    Tensor denormalize_tokens(const Tensor& tokens) const;

    void save(const std::string& path, const std::string& ae_hash,
              const EmaState* ema,
              const std::map<std::string, std::string>& extra_meta = {}) const;

    struct Loaded {
        std::unique_ptr<OmniModel> model;
        EmaState ema;
        std::string ae_hash;
        std::map<std::string, std::string> meta;
    };
    // freeze_dit: freeze before restoring EMA so frozen shadows equal the
    // frozen live weights; allow_fresh lets named prefixes be absent from the
    // file (newly introduced cross-attention / audio encoder layers)
    static Loaded load(const std::string& path, bool freeze_dit = false,
                       const std::vector<std::string>& allow_fresh = {});

private:
    ModelConfig cfg_;
    std::unique_ptr<TextEncoder> text_;
    std::unique_ptr<AudioEncoder> audio_;
    std::unique_ptr<MarTransformer> transformer_;
    std::unique_ptr<DiffusionHead> head_;
    DiffusionSchedule schedule_;
    Parameter token_mean_, token_std_;
    bool dit_frozen_ = false;
};

}  // namespace omni
