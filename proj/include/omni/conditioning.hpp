#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "omni/layers.hpp"
#include "omni/motion_data.hpp"
#include "omni/tensor.hpp"

namespace omni {

enum class Modality { text, speech, music };

const char* modality_name(Modality m);
Modality modality_from_string(const std::string& name);

struct ConditionEmbedding {
    Modality modality = Modality::text;
    Tensor global;    // [d]; always present
    Tensor sequence;  // [l, d] for speech/music; undefined for text

    bool has_sequence() const { return sequence.defined(); }
};

struct TextEncoderConfig {
    size_t dim = 64;
    size_t vocab = 4096;  // hash buckets
    uint64_t init_seed = 2;
};

// Deterministic stand-in for a pretrained text model: tokens are hashed into
// a learned embedding table and mean-pooled. Not semantic; the same prompt
// always maps to the same embedding, and the empty prompt maps to a dedicated
// learned unconditional embedding.
class TextEncoder {
public:
    explicit TextEncoder(const TextEncoderConfig& cfg);

    ConditionEmbedding encode(const std::string& prompt) const;
    ConditionEmbedding unconditional() const;

    static std::vector<uint32_t> hash_tokens(const std::string& prompt, size_t vocab);

    ParamRefs parameters();
    const TextEncoderConfig& config() const { return cfg_; }

private:
    TextEncoderConfig cfg_;
    Parameter table_;   // [vocab, dim]
    Parameter uncond_;  // [dim]
};

struct AudioEncoderConfig {
    size_t dim = 64;
    std::vector<size_t> channels = {16, 32, 64, 64};
    std::vector<size_t> strides = {2, 2, 2, 2};
    size_t kernel = 4;
    double leaky_slope = 0.2;
    uint64_t init_seed = 3;
};

// Strided 1-D conv stack with leaky ReLU; output is time-major [l, dim] with
// the temporal mean as the global vector.
class AudioEncoder {
public:
    explicit AudioEncoder(const AudioEncoderConfig& cfg);

    ConditionEmbedding encode(const AudioClip& clip, Modality modality) const;

    size_t cumulative_stride() const;
    size_t receptive_field() const;
    size_t output_length(size_t samples) const;

    ParamRefs parameters();
    const AudioEncoderConfig& config() const { return cfg_; }

private:
    AudioEncoderConfig cfg_;
    std::vector<Conv1dLayer> stack_;
    Linear proj_;
};

// adaln vector = text.global + aux.global (text.global alone when aux absent);
// cross sequence = aux.sequence (undefined tensor when absent)
std::pair<Tensor, Tensor> merge_conditions(const ConditionEmbedding& text,
                                           const ConditionEmbedding* aux);

// per-item tensor cache keyed by content hash; one .omtn file per key
class EmbeddingCache {
public:
    explicit EmbeddingCache(std::string dir);
    std::optional<Tensor> get(uint64_t key) const;
    void put(uint64_t key, const Tensor& value) const;
    static uint64_t content_key(const void* data, size_t bytes);

private:
    std::string dir_;
};

}  // namespace omni
