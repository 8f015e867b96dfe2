#include "omni/conditioning.hpp"

#include <cctype>
#include <filesystem>

#include "omni/errors.hpp"

namespace fs = std::filesystem;

namespace omni {

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::text: return "text";
        case Modality::speech: return "speech";
        case Modality::music: return "music";
    }
    return "?";
}

Modality modality_from_string(const std::string& name) {
    if (name == "text" || name == "t2m") return Modality::text;
    if (name == "speech") return Modality::speech;
    if (name == "music") return Modality::music;
    fail(ErrorKind::config, "unknown modality: " + name);
}

// ---- text stub ----------------------------------------------------------------

TextEncoder::TextEncoder(const TextEncoderConfig& cfg) : cfg_(cfg) {
    Rng rng(Rng::mix(cfg.init_seed, 0x7E27));
    // plain Gaussian rows; the table is trained jointly with the generator
    Tensor table = Tensor::zeros({cfg.vocab, cfg.dim});
    for (double& v : table.data()) v = 0.2 * rng.normal();
    table_ = make_param("text.table", std::move(table));
    Tensor uncond = Tensor::zeros({cfg.dim});
    for (double& v : uncond.data()) v = 0.2 * rng.normal();
    uncond_ = make_param("text.uncond", std::move(uncond));
}

std::vector<uint32_t> TextEncoder::hash_tokens(const std::string& prompt,
                                               size_t vocab) {
    std::vector<uint32_t> out;
    size_t i = 0;
    while (i < prompt.size()) {
        while (i < prompt.size() && !std::isalnum(static_cast<unsigned char>(prompt[i])))
            ++i;
        if (i >= prompt.size()) break;
        uint64_t h = 1469598103934665603ull;  // FNV-1a
        while (i < prompt.size() && std::isalnum(static_cast<unsigned char>(prompt[i]))) {
            h ^= static_cast<uint64_t>(std::tolower(static_cast<unsigned char>(prompt[i])));
            h *= 1099511628211ull;
            ++i;
        }
        out.push_back(static_cast<uint32_t>(h % vocab));
    }
    return out;
}

ConditionEmbedding TextEncoder::encode(const std::string& prompt) const {
    std::vector<uint32_t> tokens = hash_tokens(prompt, cfg_.vocab);
    ConditionEmbedding emb;
    emb.modality = Modality::text;
    if (tokens.empty()) {
        emb.global = uncond_.value;
        return emb;
    }
    emb.global = mean_rows(select_rows(table_.value, tokens));
    return emb;
}

ConditionEmbedding TextEncoder::unconditional() const {
    ConditionEmbedding emb;
    emb.modality = Modality::text;
    emb.global = uncond_.value;
    return emb;
}

ParamRefs TextEncoder::parameters() {
    return {&table_, &uncond_};
}

// ---- audio encoder --------------------------------------------------------------

AudioEncoder::AudioEncoder(const AudioEncoderConfig& cfg) : cfg_(cfg) {
    check(cfg.channels.size() == cfg.strides.size(), ErrorKind::config,
          "audio encoder: channels/strides length mismatch");
    check(!cfg.channels.empty(), ErrorKind::config, "audio encoder: empty stack");
    Rng rng(Rng::mix(cfg.init_seed, 0xA0D10));
    size_t c = 1;
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
        check(cfg.strides[i] >= 1, ErrorKind::config, "audio encoder: bad stride");
        stack_.push_back(Conv1dLayer::init("audio.conv" + std::to_string(i), c,
                                           cfg.channels[i], cfg.kernel, cfg.strides[i],
                                           cfg.kernel / 2, rng));
        c = cfg.channels[i];
    }
    proj_ = Linear::init("audio.proj", c, cfg.dim, rng);
}

size_t AudioEncoder::cumulative_stride() const {
    size_t s = 1;
    for (const auto& l : stack_) s *= l.stride;
    return s;
}

size_t AudioEncoder::receptive_field() const {
    // r_{i} = r_{i-1} + (k-1) * prod(strides before layer i)
    size_t r = 1, jump = 1;
    for (const auto& l : stack_) {
        r += (cfg_.kernel - 1) * jump;
        jump *= l.stride;
    }
    return r;
}

size_t AudioEncoder::output_length(size_t samples) const {
    size_t l = samples;
    for (const auto& layer : stack_) {
        size_t padded = l + 2 * layer.padding;
        check(padded >= cfg_.kernel, ErrorKind::input,
              "audio too short for the encoder (need at least " +
                  std::to_string(receptive_field()) + " samples)");
        l = (padded - cfg_.kernel) / layer.stride + 1;
    }
    return l;
}

ConditionEmbedding AudioEncoder::encode(const AudioClip& clip, Modality modality) const {
    check(modality != Modality::text, ErrorKind::config,
          "audio encoder cannot produce text embeddings");
    check(clip.samples.size() >= receptive_field(), ErrorKind::input,
          "audio too short: " + std::to_string(clip.samples.size()) + " samples, need " +
              std::to_string(receptive_field()));
    Tensor x = Tensor::from({1, clip.samples.size()},
                            std::vector<double>(clip.samples.begin(), clip.samples.end()));
    for (const auto& layer : stack_) x = leaky_relu(layer.forward(x), cfg_.leaky_slope);
    // transpose to time-major before the latent projection
    Tensor seq = proj_.forward(transpose(x));  // [l, dim]
    ConditionEmbedding emb;
    emb.modality = modality;
    emb.sequence = seq;
    emb.global = mean_rows(seq);
    return emb;
}

ParamRefs AudioEncoder::parameters() {
    ParamRefs out;
    for (auto& l : stack_) l.collect(out);
    proj_.collect(out);
    return out;
}

// ---- merge --------------------------------------------------------------------

std::pair<Tensor, Tensor> merge_conditions(const ConditionEmbedding& text,
                                           const ConditionEmbedding* aux) {
    check(text.modality == Modality::text, ErrorKind::config,
          "merge_conditions: first argument must be a text embedding");
    check(text.global.defined(), ErrorKind::state, "merge_conditions: missing global");
    if (!aux) {
        return {text.global, Tensor()};
    }
    check(aux->modality != Modality::text, ErrorKind::config,
          "merge_conditions: aux must be speech or music");
    check(aux->global.defined(), ErrorKind::state, "merge_conditions: aux missing global");
    check(aux->global.shape() == text.global.shape(), ErrorKind::config,
          "merge_conditions: condition dims disagree");
    return {add(text.global, aux->global), aux->sequence};
}

// ---- embedding cache ------------------------------------------------------------

EmbeddingCache::EmbeddingCache(std::string dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    check(!ec, ErrorKind::io, "cannot create cache directory: " + dir_);
}

namespace {

std::string key_path(const std::string& dir, uint64_t key) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx.omtn", static_cast<unsigned long long>(key));
    return (fs::path(dir) / buf).string();
}

}  // namespace

std::optional<Tensor> EmbeddingCache::get(uint64_t key) const {
    std::string path = key_path(dir_, key);
    if (!fs::exists(path)) return std::nullopt;
    return load_tensor_file(path);
}

void EmbeddingCache::put(uint64_t key, const Tensor& value) const {
    save_tensor_file(value, key_path(dir_, key));
}

uint64_t EmbeddingCache::content_key(const void* data, size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace omni
