#include "omni/motion_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "omni/errors.hpp"

namespace fs = std::filesystem;

namespace omni {

double mask_ratio(double tau) {
    check(tau >= 0.0 && tau <= 1.0, ErrorKind::domain,
          "mask_ratio: tau must lie in [0,1], got " + std::to_string(tau));
    return std::cos(1.5707963267948966 * tau);
}

bool MaskPlan::is_masked(size_t i) const {
    return std::binary_search(masked.begin(), masked.end(), static_cast<uint32_t>(i));
}

std::vector<uint8_t> MaskPlan::mask_bits() const {
    std::vector<uint8_t> bits(n_tokens, 0);
    for (uint32_t i : masked) bits[i] = 1;
    return bits;
}

MaskPlan MaskPlan::all_masked(size_t n_tokens) {
    MaskPlan plan;
    plan.n_tokens = n_tokens;
    plan.tau = 0.0;
    plan.ratio = 1.0;
    plan.masked.resize(n_tokens);
    for (size_t i = 0; i < n_tokens; ++i) plan.masked[i] = static_cast<uint32_t>(i);
    return plan;
}

MaskPlan sample_mask(size_t n_tokens, double tau, Rng& rng) {
    check(n_tokens >= 1, ErrorKind::domain, "sample_mask: n_tokens must be >= 1");
    MaskPlan plan;
    plan.n_tokens = n_tokens;
    plan.tau = tau;
    plan.ratio = mask_ratio(tau);
    // round half up, clamped so at least one token is predicted
    double raw = plan.ratio * static_cast<double>(n_tokens);
    size_t k = static_cast<size_t>(std::floor(raw + 0.5));
    k = std::min(std::max<size_t>(k, 1), n_tokens);
    plan.masked = rng.sample_without_replacement(static_cast<uint32_t>(n_tokens),
                                                 static_cast<uint32_t>(k));
    return plan;
}

// ---- synthetic corpus -------------------------------------------------------

SynthFamily synth_family_from_string(const std::string& name) {
    if (name == "sinusoid-mixture") return SynthFamily::sinusoid_mixture;
    if (name == "piecewise-pose") return SynthFamily::piecewise_pose;
    if (name == "random-walk-smoothed") return SynthFamily::random_walk_smoothed;
    fail(ErrorKind::config, "unknown synthetic family: " + name);
}

const char* synth_family_name(SynthFamily f) {
    switch (f) {
        case SynthFamily::sinusoid_mixture: return "sinusoid-mixture";
        case SynthFamily::piecewise_pose: return "piecewise-pose";
        case SynthFamily::random_walk_smoothed: return "random-walk-smoothed";
    }
    return "?";
}

namespace {

struct SinusoidParams {
    std::vector<double> freq, amp, phase;  // per oscillator
    std::vector<double> mix;               // [d x r], rows L1-normalized
    std::vector<double> offset;            // per channel, in [-0.2, 0.2]
};

constexpr size_t kOscillators = 3;

SinusoidParams draw_sinusoid_params(size_t dims, Rng& rng) {
    SinusoidParams p;
    for (size_t j = 0; j < kOscillators; ++j) {
        p.freq.push_back(rng.uniform(0.5, 3.0));  // Hz
        p.amp.push_back(rng.uniform(0.2, 1.0));
        p.phase.push_back(rng.uniform(0.0, 6.283185307179586));
    }
    p.mix.resize(dims * kOscillators);
    p.offset.resize(dims);
    for (size_t d = 0; d < dims; ++d) {
        double l1 = 0.0;
        for (size_t j = 0; j < kOscillators; ++j) {
            double w = rng.uniform(-1.0, 1.0);
            p.mix[d * kOscillators + j] = w;
            l1 += std::fabs(w);
        }
        if (l1 < 1e-9) {
            p.mix[d * kOscillators] = 1.0;
            l1 = 1.0;
        }
        for (size_t j = 0; j < kOscillators; ++j) p.mix[d * kOscillators + j] /= l1;
        p.offset[d] = rng.uniform(-0.2, 0.2);
    }
    return p;
}

// |value| <= sum_j |mix|*amp + |offset| <= 1 + 0.2 by construction
MotionSequence gen_sinusoid(size_t t_frames, size_t dims, double fps,
                            const SinusoidParams& p) {
    MotionSequence m;
    m.fps = fps;
    m.frames = Tensor::zeros({t_frames, dims});
    for (size_t t = 0; t < t_frames; ++t) {
        double latent[kOscillators];
        for (size_t j = 0; j < kOscillators; ++j)
            latent[j] = p.amp[j] * std::sin(6.283185307179586 * p.freq[j] *
                                                static_cast<double>(t) / fps +
                                            p.phase[j]);
        for (size_t d = 0; d < dims; ++d) {
            double v = p.offset[d];
            for (size_t j = 0; j < kOscillators; ++j)
                v += p.mix[d * kOscillators + j] * latent[j];
            m.frames.at(t, d) = v;
        }
    }
    return m;
}

MotionSequence gen_piecewise(size_t t_frames, size_t dims, double fps, Rng& rng,
                             size_t* segments_out) {
    size_t segments = 2 + rng.below(4);  // 2..5 held poses
    std::vector<std::vector<double>> poses(segments, std::vector<double>(dims));
    for (auto& pose : poses)
        for (double& v : pose) v = rng.uniform(-1.0, 1.0);
    std::vector<size_t> bounds(segments + 1, 0);
    bounds[segments] = t_frames;
    for (size_t s = 1; s < segments; ++s) bounds[s] = (t_frames * s) / segments;
    MotionSequence m;
    m.fps = fps;
    m.frames = Tensor::zeros({t_frames, dims});
    const size_t blend = 4;
    for (size_t s = 0; s < segments; ++s) {
        for (size_t t = bounds[s]; t < bounds[s + 1]; ++t) {
            double alpha = 1.0;
            if (s + 1 < segments && bounds[s + 1] - t <= blend)
                alpha = static_cast<double>(bounds[s + 1] - t) / (blend + 1);
            for (size_t d = 0; d < dims; ++d) {
                double next = s + 1 < segments ? poses[s + 1][d] : poses[s][d];
                m.frames.at(t, d) = alpha * poses[s][d] + (1.0 - alpha) * next;
            }
        }
    }
    *segments_out = segments;
    return m;
}

MotionSequence gen_walk(size_t t_frames, size_t dims, double fps, Rng& rng,
                        double* strength_out) {
    double step = rng.uniform(0.05, 0.25);
    std::vector<std::vector<double>> raw(t_frames, std::vector<double>(dims));
    std::vector<double> state(dims, 0.0);
    for (size_t t = 0; t < t_frames; ++t) {
        for (size_t d = 0; d < dims; ++d) {
            state[d] += step * rng.normal();
            raw[t][d] = state[d];
        }
    }
    // moving-average smoothing then tanh squash keeps values inside (-1,1)
    MotionSequence m;
    m.fps = fps;
    m.frames = Tensor::zeros({t_frames, dims});
    const long window = 2;
    for (size_t t = 0; t < t_frames; ++t) {
        for (size_t d = 0; d < dims; ++d) {
            double acc = 0.0;
            size_t n = 0;
            for (long u = -window; u <= window; ++u) {
                long idx = static_cast<long>(t) + u;
                if (idx < 0 || idx >= static_cast<long>(t_frames)) continue;
                acc += raw[idx][d];
                ++n;
            }
            m.frames.at(t, d) = std::tanh(acc / static_cast<double>(n));
        }
    }
    *strength_out = step;
    return m;
}

// harmonics tied to the motion's oscillators so the caption/audio/motion
// triple is mutually predictive
AudioClip gen_audio(const SinusoidParams& p, double duration_s, uint32_t rate) {
    AudioClip clip;
    clip.sample_rate = rate;
    size_t n = static_cast<size_t>(std::lround(duration_s * rate));
    clip.samples.resize(std::max<size_t>(n, 1));
    const double carrier = 55.0;
    for (size_t i = 0; i < clip.samples.size(); ++i) {
        double u = static_cast<double>(i) / rate;
        double v = 0.0;
        for (size_t j = 0; j < p.freq.size(); ++j)
            v += p.amp[j] *
                 std::sin(6.283185307179586 * p.freq[j] * carrier * u + p.phase[j]);
        clip.samples[i] = v / static_cast<double>(p.freq.size());
    }
    return clip;
}

std::string bucket3(double v, double lo, double hi, const char* a, const char* b,
                    const char* c) {
    double span = (hi - lo) / 3.0;
    if (v < lo + span) return a;
    if (v < lo + 2 * span) return b;
    return c;
}

}  // namespace

std::vector<CorpusItem> synthesize_corpus(const SyntheticSpec& spec) {
    check(spec.count >= 1, ErrorKind::config, "synthesize_corpus: count must be >= 1");
    check(spec.min_frames >= 1 && spec.min_frames <= spec.max_frames, ErrorKind::config,
          "synthesize_corpus: bad frame range");
    check(spec.max_frames <= kMaxMotionFrames, ErrorKind::config,
          "synthesize_corpus: max_frames exceeds " + std::to_string(kMaxMotionFrames));
    check(spec.dims >= 1, ErrorKind::config, "synthesize_corpus: dims must be >= 1");

    std::vector<CorpusItem> items;
    items.reserve(spec.count);
    for (size_t i = 0; i < spec.count; ++i) {
        Rng rng(Rng::mix(spec.seed, i));
        size_t t_frames =
            spec.min_frames + rng.below(spec.max_frames - spec.min_frames + 1);
        CorpusItem item;
        SinusoidParams sp = draw_sinusoid_params(spec.dims, rng);
        switch (spec.family) {
            case SynthFamily::sinusoid_mixture: {
                item.motion = gen_sinusoid(t_frames, spec.dims, spec.fps, sp);
                double mean_freq = (sp.freq[0] + sp.freq[1] + sp.freq[2]) / 3.0;
                double mean_amp = (sp.amp[0] + sp.amp[1] + sp.amp[2]) / 3.0;
                item.caption = "a person sways in a " +
                               bucket3(mean_freq, 0.5, 3.0, "slow", "steady", "brisk") +
                               " rhythm with " +
                               bucket3(mean_amp, 0.2, 1.0, "slight", "moderate", "broad") +
                               " range";
                break;
            }
            case SynthFamily::piecewise_pose: {
                size_t segments = 0;
                item.motion = gen_piecewise(t_frames, spec.dims, spec.fps, rng, &segments);
                item.caption = "a person holds a pose and shifts " +
                               std::string(segments <= 2   ? "rarely"
                                           : segments <= 4 ? "sometimes"
                                                           : "often");
                break;
            }
            case SynthFamily::random_walk_smoothed: {
                double strength = 0.0;
                item.motion = gen_walk(t_frames, spec.dims, spec.fps, rng, &strength);
                item.caption =
                    "a person drifts " +
                    bucket3(strength, 0.05, 0.25, "gently", "restlessly", "wildly") +
                    " around the spot";
                break;
            }
        }
        if (spec.with_audio) {
            double duration = static_cast<double>(t_frames) / spec.fps;
            item.audio = gen_audio(sp, duration, spec.audio_rate);
        }
        items.push_back(std::move(item));
    }
    return items;
}

// ---- padding / cropping -------------------------------------------------------

MotionSequence pad_to_multiple(const MotionSequence& m, size_t k,
                               size_t* original_frames) {
    check(k >= 1, ErrorKind::domain, "pad_to_multiple: k must be >= 1");
    size_t t = m.num_frames();
    check(t >= 1, ErrorKind::dimension, "pad_to_multiple: empty motion");
    if (original_frames) *original_frames = t;
    size_t target = ((t + k - 1) / k) * k;
    if (target == t) return m;
    size_t d = m.dims();
    MotionSequence out;
    out.fps = m.fps;
    out.frames = Tensor::zeros({target, d});
    std::copy(m.frames.data().begin(), m.frames.data().end(), out.frames.data().begin());
    for (size_t t2 = t; t2 < target; ++t2)
        for (size_t j = 0; j < d; ++j) out.frames.at(t2, j) = m.frames(t - 1, j);
    return out;
}

MotionSequence crop_frames(const MotionSequence& m, size_t t) {
    check(t >= 1 && t <= m.num_frames(), ErrorKind::dimension, "crop_frames: bad length");
    if (t == m.num_frames()) return m;
    MotionSequence out;
    out.fps = m.fps;
    out.frames = Tensor::zeros({t, m.dims()});
    std::copy(m.frames.data().begin(), m.frames.data().begin() + t * m.dims(),
              out.frames.data().begin());
    return out;
}

// ---- file I/O -----------------------------------------------------------------

namespace {

constexpr char kMotionMagic[4] = {'O', 'M', 'N', 'I'};
constexpr char kAudioMagic[4] = {'O', 'M', 'A', 'U'};

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

void write_f32(std::ostream& out, float v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& in, const std::string& what) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    check(in.good(), ErrorKind::io, "truncated " + what);
    return v;
}

float read_f32(std::istream& in, const std::string& what) {
    float v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    check(in.good(), ErrorKind::io, "truncated " + what);
    return v;
}

}  // namespace

void save_motion(const MotionSequence& m, const std::string& path) {
    check(m.num_frames() >= 1, ErrorKind::dimension, "save_motion: empty motion");
    check(m.frames.all_finite(), ErrorKind::numeric, "save_motion: non-finite frames");
    std::ofstream out(path, std::ios::binary);
    check(out.is_open(), ErrorKind::io, "cannot open for write: " + path);
    out.write(kMotionMagic, 4);
    write_u32(out, 1);
    write_u32(out, static_cast<uint32_t>(m.num_frames()));
    write_u32(out, static_cast<uint32_t>(m.dims()));
    write_f32(out, static_cast<float>(m.fps));
    for (double v : m.frames.data()) write_f32(out, static_cast<float>(v));
    check(out.good(), ErrorKind::io, "save_motion: write failed");
}

MotionSequence load_motion(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.is_open(), ErrorKind::io, "missing file: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    check(in.good() && std::memcmp(magic, kMotionMagic, 4) == 0, ErrorKind::io,
          "bad motion magic in " + path);
    uint32_t version = read_u32(in, "version");
    check(version == 1, ErrorKind::io, "unsupported motion version");
    uint32_t t = read_u32(in, "frame count");
    uint32_t d = read_u32(in, "dims");
    check(t >= 1 && d >= 1, ErrorKind::io, "degenerate motion header in " + path);
    float fps = read_f32(in, "fps");
    check(fps > 0.0f, ErrorKind::io, "non-positive fps in " + path);
    MotionSequence m;
    m.fps = fps;
    m.frames = Tensor::zeros({t, d});
    for (double& v : m.frames.data()) v = read_f32(in, "frame data");
    check(m.frames.all_finite(), ErrorKind::numeric, "non-finite frames in " + path);
    return m;
}

void save_audio(const AudioClip& a, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    check(out.is_open(), ErrorKind::io, "cannot open for write: " + path);
    out.write(kAudioMagic, 4);
    write_u32(out, a.sample_rate);
    for (double v : a.samples) write_f32(out, static_cast<float>(v));
    check(out.good(), ErrorKind::io, "save_audio: write failed");
}

AudioClip load_audio(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    check(in.is_open(), ErrorKind::io, "missing file: " + path);
    auto size = static_cast<size_t>(in.tellg());
    check(size >= 8 && (size - 8) % 4 == 0, ErrorKind::io,
          "malformed audio file: " + path);
    in.seekg(0);
    char magic[4] = {};
    in.read(magic, 4);
    check(in.good() && std::memcmp(magic, kAudioMagic, 4) == 0, ErrorKind::io,
          "bad audio magic in " + path);
    AudioClip a;
    a.sample_rate = read_u32(in, "sample rate");
    check(a.sample_rate > 0, ErrorKind::io, "non-positive sample rate in " + path);
    size_t n = (size - 8) / 4;
    a.samples.resize(n);
    for (double& v : a.samples) v = read_f32(in, "samples");
    return a;
}

namespace {

std::string item_stem(size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "item_%05zu", i);
    return buf;
}

}  // namespace

void save_corpus(const std::vector<CorpusItem>& items, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    check(!ec, ErrorKind::io, "cannot create directory: " + dir);
    for (size_t i = 0; i < items.size(); ++i) {
        std::string stem = (fs::path(dir) / item_stem(i)).string();
        save_motion(items[i].motion, stem + ".omni");
        std::ofstream cap(stem + ".txt");
        check(cap.is_open(), ErrorKind::io, "cannot write caption: " + stem + ".txt");
        cap << items[i].caption;
        if (items[i].audio) save_audio(*items[i].audio, stem + ".omau");
    }
}

std::vector<CorpusItem> load_corpus(const std::string& dir) {
    check(fs::is_directory(dir), ErrorKind::io, "missing file: " + dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".omni") names.push_back(entry.path().string());
    }
    std::sort(names.begin(), names.end());
    check(!names.empty(), ErrorKind::input, "no .omni files under " + dir);
    std::vector<CorpusItem> items;
    for (const std::string& name : names) {
        CorpusItem item;
        item.motion = load_motion(name);
        fs::path stem = fs::path(name).replace_extension();
        fs::path cap = stem;
        cap += ".txt";
        if (fs::exists(cap)) {
            std::ifstream in(cap);
            std::string text((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
            item.caption = text;
        }
        fs::path aud = stem;
        aud += ".omau";
        if (fs::exists(aud)) item.audio = load_audio(aud.string());
        items.push_back(std::move(item));
    }
    return items;
}

}  // namespace omni
