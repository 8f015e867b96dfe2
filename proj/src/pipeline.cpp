#include "omni/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "omni/errors.hpp"

namespace omni {

UnmaskMode unmask_mode_from_string(const std::string& s) {
    if (s == "sequential") return UnmaskMode::sequential;
    if (s == "cosine") return UnmaskMode::cosine;
    fail(ErrorKind::config, "unknown unmask mode: " + s);
}

const char* unmask_mode_name(UnmaskMode m) {
    return m == UnmaskMode::sequential ? "sequential" : "cosine";
}

std::vector<size_t> unmask_schedule(size_t n_masked_total, size_t iterations,
                                    UnmaskMode mode) {
    check(n_masked_total >= 1, ErrorKind::domain, "unmask_schedule: nothing masked");
    check(iterations >= 1, ErrorKind::domain, "unmask_schedule: iterations must be >= 1");
    if (mode == UnmaskMode::sequential) {
        if (iterations > n_masked_total)
            std::fprintf(stderr,
                         "warning: sequential unmasking clamps %zu iterations to %zu\n",
                         iterations, n_masked_total);
        return std::vector<size_t>(n_masked_total, 1);
    }
    size_t k_iters = std::min(iterations, n_masked_total);
    std::vector<size_t> counts;
    counts.reserve(k_iters);
    size_t done = 0;
    for (size_t k = 1; k <= k_iters; ++k) {
        double tau = static_cast<double>(k) / static_cast<double>(k_iters);
        double remaining = mask_ratio(tau) * static_cast<double>(n_masked_total);
        size_t target = n_masked_total - static_cast<size_t>(std::floor(remaining + 0.5));
        if (k == k_iters) target = n_masked_total;
        // keep every iteration productive and leave room for the rest
        target = std::max(target, done + 1);
        target = std::min(target, n_masked_total - (k_iters - k));
        counts.push_back(target - done);
        done = target;
    }
    return counts;
}

MotionSequence generate(const OmniModel& model, const MotionAutoencoder& ae,
                        const GenerationRequest& req) {
    check(req.frames >= 1, ErrorKind::input, "generate: frames must be >= 1");
    check(ae.config().latent_dim == model.config().token_dim, ErrorKind::config,
          "generate: autoencoder latent dim does not match model token dim");
    size_t rate = ae.config().downsample_rate();
    size_t n_tokens = (req.frames + rate - 1) / rate;
    check(n_tokens <= model.config().tf.max_tokens, ErrorKind::input,
          "generate: requested length exceeds max tokens");
    if (req.audio)
        check(model.audio_encoder() != nullptr, ErrorKind::config,
              "generate: model has no audio encoder but an audio file was given");

    NoGradGuard no_grad;
    Rng rng(Rng::mix(req.seed, 0x6E9));

    // conditional and unconditional branches
    ConditionEmbedding text_emb = model.text_encoder().encode(req.prompt);
    Tensor adaln_c, cross_c;
    if (req.audio) {
        ConditionEmbedding aux =
            model.audio_encoder()->encode(*req.audio, model.config().task);
        std::tie(adaln_c, cross_c) = merge_conditions(text_emb, &aux);
    } else {
        std::tie(adaln_c, cross_c) = merge_conditions(text_emb, nullptr);
    }
    ConditionEmbedding uncond = model.text_encoder().unconditional();
    Tensor adaln_uc, cross_uc;
    std::tie(adaln_uc, cross_uc) = merge_conditions(uncond, nullptr);
    double alpha = req.effective_cfg(req.audio.has_value());
    check(alpha >= 0.0, ErrorKind::input, "generate: cfg scale must be >= 0");

    size_t d = model.config().token_dim;
    Tensor tokens = Tensor::zeros({n_tokens, d});
    MaskPlan plan = MaskPlan::all_masked(n_tokens);

    size_t iterations = req.iterations;
    if (iterations == 0)
        iterations = req.unmask_mode == UnmaskMode::sequential
                         ? n_tokens
                         : std::min<size_t>(8, n_tokens);
    std::vector<size_t> counts = unmask_schedule(n_tokens, iterations, req.unmask_mode);

    // unmask order: temporal for the causal design, pseudo-random for the
    // reordered baseline
    std::vector<uint32_t> order(n_tokens);
    std::iota(order.begin(), order.end(), 0u);
    if (req.unmask_mode == UnmaskMode::cosine) {
        for (size_t i = n_tokens; i > 1; --i) {
            size_t j = rng.below(i);
            std::swap(order[i - 1], order[j]);
        }
    }

    const DiffusionSchedule& sched = model.schedule();
    size_t cursor = 0;
    for (size_t count : counts) {
        TokenStream stream{tokens, plan};
        Tensor z_c = model.transformer().forward(stream, adaln_c, cross_c);
        Tensor z_uc;
        if (!req.conditional_only)
            z_uc = model.transformer().forward(stream, adaln_uc, cross_uc);

        std::vector<uint32_t> selected(order.begin() + cursor,
                                       order.begin() + cursor + count);
        cursor += count;
        std::sort(selected.begin(), selected.end());

        Tensor z_sel_c = select_rows(z_c, selected);
        Tensor z_sel_uc = req.conditional_only ? Tensor() : select_rows(z_uc, selected);

        Tensor x = Tensor::zeros({count, d});
        for (double& v : x.data()) v = rng.normal();
        for (size_t t = sched.steps; t >= 1; --t) {
            std::vector<size_t> ts(count, t);
            Tensor eps = model.head().forward(x, ts, z_sel_c);
            if (!req.conditional_only) {
                Tensor eps_uc = model.head().forward(x, ts, z_sel_uc);
                eps = cfg_combine(eps, eps_uc, alpha);
            }
            try {
                x = ddpm_step(sched, x, t, eps, rng, req.sigma_mode);
            } catch (const Error& e) {
                fail(ErrorKind::numeric, std::string("generate: ") + e.what() +
                                             " (first position " +
                                             std::to_string(selected.front()) + ")");
            }
        }

        for (size_t i = 0; i < selected.size(); ++i)
            for (size_t j = 0; j < d; ++j) tokens.at(selected[i], j) = x(i, j);
        std::vector<uint32_t> still_masked;
        for (uint32_t idx : plan.masked)
            if (!std::binary_search(selected.begin(), selected.end(), idx))
                still_masked.push_back(idx);
        plan.masked = std::move(still_masked);
    }
    check(plan.masked.empty(), ErrorKind::internal, "generate: positions left masked");

    MotionTokens z;
    z.tokens = model.denormalize_tokens(tokens);
    z.source_fps = req.fps;
    MotionSequence decoded = ae.decode(z);
    check(decoded.frames.all_finite(), ErrorKind::numeric,
          "generate: non-finite decoded motion");
    return crop_frames(decoded, req.frames);
}

}  // namespace omni
