#include "omni/training.hpp"

#include <cmath>
#include <fstream>

#include "omni/errors.hpp"

namespace omni {

std::vector<std::pair<std::string, std::string>> TrainRunConfig::manifest() const {
    return {
        {"task", task},
        {"batch_size", std::to_string(batch_size)},
        {"max_frames", std::to_string(max_frames)},
        {"lr", std::to_string(lr)},
        {"warmup_steps", std::to_string(warmup_steps)},
        {"steps", std::to_string(steps)},
        {"ema_decay", std::to_string(ema_decay)},
        {"seed", std::to_string(seed)},
        {"cond_dropout", std::to_string(cond_dropout)},
    };
}

void ema_update(EmaState& state, const ParamRefs& params) { state.update(params); }

namespace {

struct PreparedItem {
    Tensor tokens;  // normalized, [n, token_dim]
    std::string caption;
    const AudioClip* audio = nullptr;
};

std::vector<PreparedItem> prepare_items(OmniModel& model, const MotionAutoencoder& ae,
                                        const std::vector<CorpusItem>& corpus,
                                        const TrainRunConfig& cfg, bool need_audio,
                                        bool fit_stats) {
    check(!corpus.empty(), ErrorKind::config, "training: empty corpus");
    check(ae.config().latent_dim == model.config().token_dim, ErrorKind::config,
          "training: autoencoder latent dim does not match model token dim");
    size_t rate = ae.config().downsample_rate();
    std::vector<Tensor> raw_tokens;
    raw_tokens.reserve(corpus.size());
    for (const CorpusItem& item : corpus) {
        check(item.motion.num_frames() <= cfg.max_frames, ErrorKind::config,
              "training: sequence longer than max_frames");
        if (need_audio)
            check(item.audio.has_value(), ErrorKind::config,
                  "training: corpus item lacks the audio track required by task " +
                      cfg.task);
        MotionSequence padded = pad_to_multiple(item.motion, rate);
        raw_tokens.push_back(ae.encode(padded).tokens);
    }
    if (fit_stats) model.fit_token_stats(raw_tokens);
    std::vector<PreparedItem> out;
    out.reserve(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        PreparedItem p;
        p.tokens = model.normalize_tokens(raw_tokens[i]);
        p.caption = corpus[i].caption;
        if (corpus[i].audio) p.audio = &*corpus[i].audio;
        out.push_back(std::move(p));
    }
    return out;
}

TrainResult run_training(OmniModel& model, const MotionAutoencoder& ae,
                         const std::vector<CorpusItem>& corpus,
                         const TrainRunConfig& cfg, EmaState* ema, bool multimodal) {
    Modality task = modality_from_string(cfg.task);
    bool need_audio = task != Modality::text;
    check(!multimodal || need_audio, ErrorKind::config,
          "finetune: task must be speech or music");
    if (multimodal && !model.dit_frozen())
        check(cfg.allow_dit_unfreeze, ErrorKind::config,
              "finetune: DiT must stay frozen (allow_dit_unfreeze overrides)");
    if (need_audio)
        check(model.audio_encoder() != nullptr, ErrorKind::config,
              "training: model has no audio encoder for task " + cfg.task);

    std::vector<PreparedItem> items =
        prepare_items(model, ae, corpus, cfg, need_audio, /*fit_stats=*/true);

    ParamRefs trainable = model.trainable_parameters();
    ParamRefs all_params = model.parameters();
    if (ema) {
        if (ema->names.empty())
            *ema = EmaState::init(all_params, cfg.ema_decay);
        else
            ema->decay = cfg.ema_decay;
    }
    AdamW opt(cfg.lr, cfg.warmup_steps);
    Rng rng(Rng::mix(cfg.seed, 0x7 + (multimodal ? 1 : 0)));
    std::ofstream metrics;
    if (!cfg.metrics_path.empty()) {
        metrics.open(cfg.metrics_path);
        check(metrics.is_open(), ErrorKind::io,
              "cannot open for write: " + cfg.metrics_path);
        metrics << "step,loss,lr\n";
    }

    TrainResult result;
    double last_finite = 0.0;
    size_t batch = std::min(cfg.batch_size, items.size());
    for (size_t step = 0; step < cfg.steps; ++step) {
        opt.zero_grad(trainable);
        Tensor loss;
        for (size_t b = 0; b < batch; ++b) {
            const PreparedItem& item = items[rng.below(items.size())];
            size_t n = item.tokens.shape()[0];
            double tau = rng.uniform();
            MaskPlan plan = sample_mask(n, tau, rng);
            bool drop_cond = rng.uniform() < cfg.cond_dropout;

            ConditionEmbedding text_emb = drop_cond
                                              ? model.text_encoder().unconditional()
                                              : model.text_encoder().encode(item.caption);
            Tensor adaln_vec, cross_seq;
            if (need_audio && !drop_cond) {
                ConditionEmbedding aux =
                    model.audio_encoder()->encode(*item.audio, task);
                std::tie(adaln_vec, cross_seq) = merge_conditions(text_emb, &aux);
            } else {
                std::tie(adaln_vec, cross_seq) = merge_conditions(text_emb, nullptr);
            }

            TokenStream stream{item.tokens, plan};
            Tensor z = model.transformer().forward(stream, adaln_vec, cross_seq);
            Tensor z_masked = select_rows(z, plan.masked);
            Tensor x0_masked = select_rows(item.tokens, plan.masked);
            Tensor item_loss =
                model.head().loss(model.schedule(), x0_masked, z_masked, rng);
            loss = loss.defined() ? add(loss, item_loss) : item_loss;
        }
        loss = scale(loss, 1.0 / static_cast<double>(batch));
        double loss_val = loss.item();
        if (!std::isfinite(loss_val))
            fail(ErrorKind::numeric,
                 "training: non-finite loss at step " + std::to_string(step) +
                     " (last finite " + std::to_string(last_finite) + ")");
        last_finite = loss_val;
        loss.backward();
        opt.step(trainable);
        if (ema) ema->update(all_params);
        double lr_now = opt.lr_at(opt.step_count());
        result.losses.push_back(loss_val);
        result.lrs.push_back(lr_now);
        if (metrics.is_open())
            metrics << step << "," << loss_val << "," << lr_now << "\n";
    }
    if (ema) ema->sync_frozen(all_params);
    size_t window = std::min<size_t>(50, result.losses.size());
    double head = 0.0, tail = 0.0;
    for (size_t i = 0; i < window; ++i) {
        head += result.losses[i];
        tail += result.losses[result.losses.size() - 1 - i];
    }
    result.initial_loss = head / static_cast<double>(window);
    result.final_loss = tail / static_cast<double>(window);
    return result;
}

}  // namespace

TrainResult pretrain_t2m(OmniModel& model, const MotionAutoencoder& ae,
                         const std::vector<CorpusItem>& corpus,
                         const TrainRunConfig& cfg, EmaState* ema) {
    check(cfg.task == "t2m" || cfg.task == "text", ErrorKind::config,
          "pretrain_t2m: task must be t2m");
    TrainRunConfig cfg2 = cfg;
    cfg2.task = "text";
    return run_training(model, ae, corpus, cfg2, ema, /*multimodal=*/false);
}

TrainResult finetune_multimodal(OmniModel& model, const MotionAutoencoder& ae,
                                const std::vector<CorpusItem>& corpus,
                                const TrainRunConfig& cfg, EmaState* ema) {
    return run_training(model, ae, corpus, cfg, ema, /*multimodal=*/true);
}

}  // namespace omni
