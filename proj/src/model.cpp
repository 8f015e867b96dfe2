#include "omni/model.hpp"

#include <cmath>
#include <sstream>

#include "omni/errors.hpp"

namespace omni {

namespace {

std::string join_sizes(const std::vector<size_t>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<size_t> split_sizes(const std::string& s) {
    std::vector<size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
    return out;
}

std::string meta_get(const std::map<std::string, std::string>& meta,
                     const std::string& key) {
    auto it = meta.find(key);
    check(it != meta.end(), ErrorKind::config, "checkpoint meta missing key: " + key);
    return it->second;
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_meta() const {
    std::map<std::string, std::string> m;
    m["task"] = modality_name(task);
    m["diffusion_steps"] = std::to_string(diffusion_steps);
    m["token_dim"] = std::to_string(token_dim);
    m["tf.layers"] = std::to_string(tf.layers);
    m["tf.hidden_dim"] = std::to_string(tf.hidden_dim);
    m["tf.heads"] = std::to_string(tf.heads);
    m["tf.attention_scale_mode"] = attn_scale_mode_name(tf.attention_scale_mode);
    m["tf.order_mode"] = order_mode_name(tf.order_mode);
    m["tf.gating"] = tf.gating ? "true" : "false";
    m["tf.norm"] = norm_kind_name(tf.norm);
    m["tf.cross_attention"] = tf.cross_attention ? "true" : "false";
    m["tf.max_tokens"] = std::to_string(tf.max_tokens);
    m["tf.ffn_mult"] = std::to_string(tf.ffn_mult);
    m["tf.init_seed"] = std::to_string(tf.init_seed);
    m["dit.layers"] = std::to_string(dit.layers);
    m["dit.hidden_dim"] = std::to_string(dit.hidden_dim);
    m["dit.heads"] = std::to_string(dit.heads);
    m["dit.head_mode"] = head_mode_name(dit.head_mode);
    m["dit.ffn_mult"] = std::to_string(dit.ffn_mult);
    m["dit.init_seed"] = std::to_string(dit.init_seed);
    m["cond.dim"] = std::to_string(text.dim);
    m["cond.vocab"] = std::to_string(text.vocab);
    m["cond.init_seed"] = std::to_string(text.init_seed);
    m["audio.channels"] = join_sizes(audio.channels);
    m["audio.strides"] = join_sizes(audio.strides);
    m["audio.kernel"] = std::to_string(audio.kernel);
    m["audio.leaky_slope"] = std::to_string(audio.leaky_slope);
    m["audio.init_seed"] = std::to_string(audio.init_seed);
    return m;
}

ModelConfig ModelConfig::from_meta(const std::map<std::string, std::string>& meta) {
    ModelConfig c;
    c.task = modality_from_string(meta_get(meta, "task"));
    c.diffusion_steps = std::stoul(meta_get(meta, "diffusion_steps"));
    c.token_dim = std::stoul(meta_get(meta, "token_dim"));
    c.tf.layers = std::stoul(meta_get(meta, "tf.layers"));
    c.tf.hidden_dim = std::stoul(meta_get(meta, "tf.hidden_dim"));
    c.tf.heads = std::stoul(meta_get(meta, "tf.heads"));
    c.tf.attention_scale_mode =
        attn_scale_mode_from_string(meta_get(meta, "tf.attention_scale_mode"));
    c.tf.order_mode = order_mode_from_string(meta_get(meta, "tf.order_mode"));
    c.tf.gating = meta_get(meta, "tf.gating") == "true";
    c.tf.norm = norm_kind_from_string(meta_get(meta, "tf.norm"));
    c.tf.cross_attention = meta_get(meta, "tf.cross_attention") == "true";
    c.tf.max_tokens = std::stoul(meta_get(meta, "tf.max_tokens"));
    c.tf.ffn_mult = std::stoul(meta_get(meta, "tf.ffn_mult"));
    c.tf.init_seed = std::stoull(meta_get(meta, "tf.init_seed"));
    c.dit.layers = std::stoul(meta_get(meta, "dit.layers"));
    c.dit.hidden_dim = std::stoul(meta_get(meta, "dit.hidden_dim"));
    c.dit.heads = std::stoul(meta_get(meta, "dit.heads"));
    c.dit.head_mode = head_mode_from_string(meta_get(meta, "dit.head_mode"));
    c.dit.ffn_mult = std::stoul(meta_get(meta, "dit.ffn_mult"));
    c.dit.init_seed = std::stoull(meta_get(meta, "dit.init_seed"));
    c.text.dim = std::stoul(meta_get(meta, "cond.dim"));
    c.text.vocab = std::stoul(meta_get(meta, "cond.vocab"));
    c.text.init_seed = std::stoull(meta_get(meta, "cond.init_seed"));
    c.audio.dim = c.text.dim;
    c.audio.channels = split_sizes(meta_get(meta, "audio.channels"));
    c.audio.strides = split_sizes(meta_get(meta, "audio.strides"));
    c.audio.kernel = std::stoul(meta_get(meta, "audio.kernel"));
    c.audio.leaky_slope = std::stod(meta_get(meta, "audio.leaky_slope"));
    c.audio.init_seed = std::stoull(meta_get(meta, "audio.init_seed"));
    c.tf.token_dim = c.token_dim;
    c.tf.cond_dim = c.text.dim;
    c.dit.token_dim = c.token_dim;
    c.dit.z_dim = c.tf.hidden_dim;
    return c;
}

OmniModel::OmniModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.tf.token_dim = cfg_.token_dim;
    cfg_.tf.cond_dim = cfg_.text.dim;
    cfg_.dit.token_dim = cfg_.token_dim;
    cfg_.dit.z_dim = cfg_.tf.hidden_dim;
    cfg_.audio.dim = cfg_.text.dim;
    text_ = std::make_unique<TextEncoder>(cfg_.text);
    if (cfg_.task != Modality::text)
        audio_ = std::make_unique<AudioEncoder>(cfg_.audio);
    transformer_ = std::make_unique<MarTransformer>(cfg_.tf);
    head_ = std::make_unique<DiffusionHead>(cfg_.dit, cfg_.diffusion_steps);
    schedule_ = DiffusionSchedule::cosine(cfg_.diffusion_steps);
    token_mean_ = make_zero_param("token_norm.mean", {cfg_.token_dim});
    token_std_ = make_param("token_norm.std", Tensor::full({cfg_.token_dim}, 1.0));
    token_mean_.set_frozen(true);
    token_std_.set_frozen(true);
}

ParamRefs OmniModel::parameters() {
    ParamRefs out;
    for (Parameter* p : text_->parameters()) out.push_back(p);
    if (audio_)
        for (Parameter* p : audio_->parameters()) out.push_back(p);
    for (Parameter* p : transformer_->parameters()) out.push_back(p);
    for (Parameter* p : head_->parameters()) out.push_back(p);
    out.push_back(&token_mean_);
    out.push_back(&token_std_);
    return out;
}

ParamRefs OmniModel::trainable_parameters() {
    ParamRefs out;
    for (Parameter* p : parameters())
        if (!p->frozen) out.push_back(p);
    return out;
}

void OmniModel::freeze_dit(bool frozen) {
    for (Parameter* p : head_->parameters()) p->set_frozen(frozen);
    dit_frozen_ = frozen;
}

void OmniModel::fit_token_stats(const std::vector<Tensor>& token_batches) {
    check(!token_batches.empty(), ErrorKind::config, "fit_token_stats: no tokens");
    size_t d = cfg_.token_dim;
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    size_t rows = 0;
    for (const Tensor& t : token_batches) {
        check(t.rank() == 2 && t.shape()[1] == d, ErrorKind::dimension,
              "fit_token_stats: bad token shape");
        for (size_t i = 0; i < t.shape()[0]; ++i)
            for (size_t j = 0; j < d; ++j) mean[j] += t(i, j);
        rows += t.shape()[0];
    }
    for (double& v : mean) v /= static_cast<double>(rows);
    for (const Tensor& t : token_batches)
        for (size_t i = 0; i < t.shape()[0]; ++i)
            for (size_t j = 0; j < d; ++j) {
                double dv = t(i, j) - mean[j];
                var[j] += dv * dv;
            }
    for (size_t j = 0; j < d; ++j) {
        var[j] = std::sqrt(var[j] / static_cast<double>(rows));
        if (var[j] < 1e-6) var[j] = 1.0;  // constant channel: leave unscaled
    }
    token_mean_.value.data() = mean;
    token_std_.value.data() = var;
}

Tensor OmniModel::normalize_tokens(const Tensor& tokens) const {
    Tensor out = tokens.detach();
    size_t d = cfg_.token_dim;
    for (size_t i = 0; i < out.shape()[0]; ++i)
        for (size_t j = 0; j < d; ++j)
            out.at(i, j) = (out(i, j) - token_mean_.value(j)) / token_std_.value(j);
    return out;
}

Tensor OmniModel::denormalize_tokens(const Tensor& tokens) const {
    Tensor out = tokens.detach();
    size_t d = cfg_.token_dim;
    for (size_t i = 0; i < out.shape()[0]; ++i)
        for (size_t j = 0; j < d; ++j)
            out.at(i, j) = out(i, j) * token_std_.value(j) + token_mean_.value(j);
    return out;
}

void OmniModel::save(const std::string& path, const std::string& ae_hash,
                     const EmaState* ema,
                     const std::map<std::string, std::string>& extra_meta) const {
    Checkpoint ck;
    ck.meta = cfg_.to_meta();
    ck.meta["ae_hash"] = ae_hash;
    for (const auto& [k, v] : extra_meta) ck.meta[k] = v;
    for (const Parameter* p : const_cast<OmniModel*>(this)->parameters())
        ck.params[p->name] = p->value.detach();
    if (ema) {
        for (size_t i = 0; i < ema->names.size(); ++i)
            ck.params["ema." + ema->names[i]] = ema->shadows[i].detach();
    }
    ck.save(path);
}

OmniModel::Loaded OmniModel::load(const std::string& path, bool freeze_dit,
                                  const std::vector<std::string>& allow_fresh) {
    Checkpoint ck = Checkpoint::load(path);
    Loaded out;
    out.meta = ck.meta;
    out.ae_hash = ck.meta.count("ae_hash") ? ck.meta.at("ae_hash") : "";
    out.model = std::make_unique<OmniModel>(ModelConfig::from_meta(ck.meta));
    if (freeze_dit) out.model->freeze_dit(true);
    ck.apply_to(out.model->parameters(), allow_fresh);
    // shadows: stored EMA for live params, live values for frozen/fresh ones
    ParamRefs params = out.model->parameters();
    out.ema = EmaState::init(params, 0.999);
    for (size_t i = 0; i < out.ema.names.size(); ++i) {
        if (params[i]->frozen) continue;
        auto it = ck.params.find("ema." + out.ema.names[i]);
        if (it != ck.params.end()) {
            check(it->second.shape() == out.ema.shadows[i].shape(), ErrorKind::config,
                  "checkpoint EMA shape mismatch for " + out.ema.names[i]);
            out.ema.shadows[i] = it->second.detach();
        }
    }
    return out;
}

}  // namespace omni
