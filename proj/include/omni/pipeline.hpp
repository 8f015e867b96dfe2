#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omni/autoencoder.hpp"
#include "omni/model.hpp"
#include "omni/motion_data.hpp"

namespace omni {

enum class UnmaskMode { sequential, cosine };
UnmaskMode unmask_mode_from_string(const std::string& s);
const char* unmask_mode_name(UnmaskMode m);

// Per-iteration unmask counts. sequential: one token per iteration (iterations
// is clamped to the total); cosine: counts follow the mask-ratio schedule,
// each at least 1, summing to n_masked_total.
std::vector<size_t> unmask_schedule(size_t n_masked_total, size_t iterations,
                                    UnmaskMode mode);

struct GenerationRequest {
    std::string prompt;
    std::optional<AudioClip> audio;
    size_t frames = 64;          // requested output length; tokens = ceil(frames/rate)
    double cfg_scale = -1.0;     // < 0 selects the per-task default (4.5 text, 6.5 audio)
    uint64_t seed = 0;
    size_t iterations = 0;       // 0 = one per token (sequential) / 8 (cosine)
    UnmaskMode unmask_mode = UnmaskMode::sequential;
    SigmaMode sigma_mode = SigmaMode::zero;
    bool conditional_only = false;  // skip the unconditional CFG branch entirely
    double fps = 20.0;

    double effective_cfg(bool has_audio) const {
        if (cfg_scale >= 0.0) return cfg_scale;
        return has_audio ? 6.5 : 4.5;
    }
};

// All-masked start, iterative unmasking through the transformer, per-token
// reverse diffusion with CFG at every step, then decode and crop.
MotionSequence generate(const OmniModel& model, const MotionAutoencoder& ae,
                        const GenerationRequest& req);

}  // namespace omni
