#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace omni {

// Whole-body motion clip: frames [t, d], row-major. The default layout is the
// 322-channel SMPL-X parameterization (root 0:3, body 3:66, hands 66:156,
// jaw 156:159, expression 159:209, face shape 209:309, translation 309:312,
// betas 312:322).
struct MotionSequence {
    Tensor frames;  // [t, d]
    double fps = 20.0;

    size_t num_frames() const { return frames.defined() ? frames.shape()[0] : 0; }
    size_t dims() const { return frames.defined() ? frames.shape()[1] : 0; }
};

constexpr size_t kDefaultMotionDims = 322;
constexpr size_t kMaxMotionFrames = 196;

// mask ratio schedule gamma(tau) = cos(pi tau / 2), tau in [0,1]
double mask_ratio(double tau);

struct MaskPlan {
    std::vector<uint32_t> masked;  // sorted, unique, < n_tokens
    size_t n_tokens = 0;
    double tau = 0.0;
    double ratio = 0.0;

    size_t count() const { return masked.size(); }
    bool is_masked(size_t i) const;
    std::vector<uint8_t> mask_bits() const;  // length n_tokens, 1 = masked
    static MaskPlan all_masked(size_t n_tokens);
};

// draws round(gamma(tau) * n) positions uniformly without replacement,
// clamped to [1, n] so every training step has a target
MaskPlan sample_mask(size_t n_tokens, double tau, Rng& rng);

// ---- synthetic corpus ---------------------------------------------------

enum class SynthFamily { sinusoid_mixture, piecewise_pose, random_walk_smoothed };

SynthFamily synth_family_from_string(const std::string& name);
const char* synth_family_name(SynthFamily f);

struct AudioClip {
    uint32_t sample_rate = 4000;
    std::vector<double> samples;
};

struct SyntheticSpec {
    uint64_t seed = 0;
    SynthFamily family = SynthFamily::sinusoid_mixture;
    size_t count = 8;
    size_t min_frames = 16;
    size_t max_frames = 64;
    size_t dims = kDefaultMotionDims;
    double fps = 20.0;
    bool with_audio = false;
    uint32_t audio_rate = 4000;
};

struct CorpusItem {
    MotionSequence motion;
    std::string caption;
    std::optional<AudioClip> audio;
};

// Deterministic in spec.seed; per-item streams are derived so the result does
// not depend on generation order. All families emit values in [-1.2, 1.2].
std::vector<CorpusItem> synthesize_corpus(const SyntheticSpec& spec);

// ---- padding / cropping --------------------------------------------------

// repeats the last frame until num_frames is a multiple of k; *original_frames
// (optional) receives the pre-padding length
MotionSequence pad_to_multiple(const MotionSequence& m, size_t k,
                               size_t* original_frames = nullptr);
MotionSequence crop_frames(const MotionSequence& m, size_t t);

// ---- file I/O -------------------------------------------------------------

// motion container: "OMNI", u32 version=1, u32 t, u32 d, f32 fps,
// then t*d little-endian f32 row-major frames
void save_motion(const MotionSequence& m, const std::string& path);
MotionSequence load_motion(const std::string& path);

// audio container: "OMAU", u32 sample rate, then f32 samples to EOF
void save_audio(const AudioClip& a, const std::string& path);
AudioClip load_audio(const std::string& path);

// writes item_NNNNN.omni plus .txt caption sidecars (and .omau when present)
void save_corpus(const std::vector<CorpusItem>& items, const std::string& dir);
// loads every *.omni under dir in name order, with sidecars when present
std::vector<CorpusItem> load_corpus(const std::string& dir);

}  // namespace omni
