#include "omni/autoencoder.hpp"

#include <cmath>

#include "omni/errors.hpp"
#include "omni/optim.hpp"

namespace omni {

Tensor ae_loss(const Tensor& m, const Tensor& m_hat) {
    check(m.defined() && m_hat.defined(), ErrorKind::state, "ae_loss: undefined input");
    check(m.shape() == m_hat.shape(), ErrorKind::dimension,
          "ae_loss: shape mismatch");
    return sum(abs(sub(m_hat, m)));
}

MotionAutoencoder::MotionAutoencoder(const AutoencoderConfig& cfg) : cfg_(cfg) {
    check(cfg.conv_layers >= 1, ErrorKind::config, "autoencoder: conv_layers >= 1");
    check(cfg.downsample_blocks >= 1, ErrorKind::config,
          "autoencoder: downsample_blocks >= 1");
    Rng rng(Rng::mix(cfg.init_seed, 0x0AE));
    size_t h = cfg.hidden_dim;

    size_t c = cfg.input_dims;
    for (size_t i = 0; i < cfg.conv_layers; ++i) {
        enc_stack_.push_back(
            Conv1dLayer::init("ae.enc" + std::to_string(i), c, h, 3, 1, 1, rng));
        c = h;
    }
    for (size_t i = 0; i < cfg.downsample_blocks; ++i) {
        DownBlock b;
        std::string base = "ae.down" + std::to_string(i);
        b.conv1 = Conv1dLayer::init(base + ".conv1", h, h, 3, 2, 1, rng);
        b.conv2 = Conv1dLayer::init(base + ".conv2", h, h, 3, 1, 1, rng);
        b.skip = Conv1dLayer::init(base + ".skip", h, h, 1, 2, 0, rng);
        down_.push_back(std::move(b));
    }
    to_latent_ = Conv1dLayer::init("ae.to_latent", h, cfg.latent_dim, 3, 1, 1, rng);

    from_latent_ = Conv1dLayer::init("ae.from_latent", cfg.latent_dim, h, 3, 1, 1, rng);
    for (size_t i = 0; i < cfg.downsample_blocks; ++i) {
        UpBlock b;
        std::string base = "ae.up" + std::to_string(i);
        b.convt = ConvT1dLayer::init(base + ".convt", h, h, 4, 2, 1, rng);
        b.conv2 = Conv1dLayer::init(base + ".conv2", h, h, 3, 1, 1, rng);
        b.skip = ConvT1dLayer::init(base + ".skip", h, h, 2, 2, 0, rng);
        up_.push_back(std::move(b));
    }
    for (size_t i = 0; i < cfg.conv_layers - 1; ++i) {
        dec_stack_.push_back(
            Conv1dLayer::init("ae.dec" + std::to_string(i), h, h, 3, 1, 1, rng));
    }
    out_proj_ = Conv1dLayer::init("ae.out", h, cfg.input_dims, 3, 1, 1, rng);
}

Tensor MotionAutoencoder::encode_frames(const Tensor& frames) const {
    check(frames.rank() == 2, ErrorKind::dimension, "encode: frames must be [t,d]");
    size_t t = frames.shape()[0];
    check(frames.shape()[1] == cfg_.input_dims, ErrorKind::dimension,
          "encode: expected " + std::to_string(cfg_.input_dims) + " channels, got " +
              std::to_string(frames.shape()[1]));
    check(t % cfg_.downsample_rate() == 0, ErrorKind::state,
          "encode: frame count " + std::to_string(t) + " not divisible by " +
              std::to_string(cfg_.downsample_rate()) + "; pad first");
    Tensor x = transpose(frames);  // [d, t]
    for (const auto& layer : enc_stack_) x = relu(layer.forward(x));
    for (const auto& b : down_) {
        Tensor path = b.conv2.forward(relu(b.conv1.forward(x)));
        x = add(path, b.skip.forward(x));
        x = relu(x);
    }
    x = to_latent_.forward(x);  // [latent, n]
    return transpose(x);
}

Tensor MotionAutoencoder::decode_tokens(const Tensor& tokens) const {
    check(tokens.rank() == 2, ErrorKind::dimension, "decode: tokens must be [n,latent]");
    check(tokens.shape()[0] >= 1, ErrorKind::dimension, "decode: empty token sequence");
    check(tokens.shape()[1] == cfg_.latent_dim, ErrorKind::dimension,
          "decode: latent dim mismatch");
    Tensor x = transpose(tokens);  // [latent, n]
    x = relu(from_latent_.forward(x));
    for (const auto& b : up_) {
        Tensor path = b.conv2.forward(relu(b.convt.forward(x)));
        x = add(path, b.skip.forward(x));
        x = relu(x);
    }
    for (const auto& layer : dec_stack_) x = relu(layer.forward(x));
    x = out_proj_.forward(x);  // [d, t]
    return transpose(x);
}

MotionTokens MotionAutoencoder::encode(const MotionSequence& m) const {
    NoGradGuard no_grad;
    MotionTokens z;
    z.tokens = encode_frames(m.frames);
    z.source_fps = m.fps;
    check(z.tokens.all_finite(), ErrorKind::numeric, "encode: non-finite tokens");
    return z;
}

MotionSequence MotionAutoencoder::decode(const MotionTokens& z) const {
    NoGradGuard no_grad;
    MotionSequence m;
    m.frames = decode_tokens(z.tokens);
    m.fps = z.source_fps;
    return m;
}

ParamRefs MotionAutoencoder::parameters() {
    ParamRefs out;
    for (auto& l : enc_stack_) l.collect(out);
    for (auto& b : down_) {
        b.conv1.collect(out);
        b.conv2.collect(out);
        b.skip.collect(out);
    }
    to_latent_.collect(out);
    from_latent_.collect(out);
    for (auto& b : up_) {
        b.convt.collect(out);
        b.conv2.collect(out);
        b.skip.collect(out);
    }
    for (auto& l : dec_stack_) l.collect(out);
    out_proj_.collect(out);
    return out;
}

void MotionAutoencoder::set_frozen(bool frozen) {
    for (Parameter* p : parameters()) p->set_frozen(frozen);
}

namespace {

AeTrainResult run_ae_training(MotionAutoencoder& ae,
                              const std::vector<CorpusItem>& corpus,
                              const AeTrainConfig& cfg) {
    check(!corpus.empty(), ErrorKind::config, "ae training: empty corpus");
    for (const CorpusItem& item : corpus)
        check(item.motion.dims() == ae.config().input_dims, ErrorKind::config,
              "ae training: corpus dims do not match autoencoder input dims");

    // pre-pad once; shapes are fixed for the whole run
    std::vector<Tensor> padded;
    padded.reserve(corpus.size());
    size_t rate = ae.config().downsample_rate();
    for (const CorpusItem& item : corpus)
        padded.push_back(pad_to_multiple(item.motion, rate).frames);

    ParamRefs params = ae.parameters();
    bool any_trainable = false;
    for (Parameter* p : params) any_trainable |= !p->frozen;

    AdamW opt(cfg.lr, cfg.warmup_steps);
    Rng rng(Rng::mix(cfg.seed, 0xA11));
    AeTrainResult result;
    size_t batch = std::min(cfg.batch_size, corpus.size());
    for (size_t step = 0; step < cfg.steps; ++step) {
        opt.zero_grad(params);
        Tensor loss;
        size_t elements = 0;
        for (size_t b = 0; b < batch; ++b) {
            size_t pick = static_cast<size_t>(rng.below(corpus.size()));
            const Tensor& frames = padded[pick];
            Tensor rec = ae.decode_tokens(ae.encode_frames(frames));
            Tensor item_loss = ae_loss(frames, rec);
            loss = loss.defined() ? add(loss, item_loss) : item_loss;
            elements += frames.size();
        }
        Tensor mean_loss = scale(loss, 1.0 / static_cast<double>(elements));
        double loss_val = mean_loss.item();
        check(std::isfinite(loss_val), ErrorKind::numeric,
              "ae training: non-finite loss at step " + std::to_string(step));
        result.losses.push_back(loss_val);
        if (any_trainable) {
            mean_loss.backward();
            opt.step(params);
        }
    }
    size_t window = std::min<size_t>(50, result.losses.size());
    double head = 0.0, tail = 0.0;
    for (size_t i = 0; i < window; ++i) {
        head += result.losses[i];
        tail += result.losses[result.losses.size() - 1 - i];
    }
    result.initial_loss = head / static_cast<double>(window);
    result.final_loss = tail / static_cast<double>(window);
    result.corpus_l1 = reconstruction_l1(ae, corpus);
    return result;
}

}  // namespace

AeTrainResult train_autoencoder(MotionAutoencoder& ae,
                                const std::vector<CorpusItem>& corpus,
                                const AeTrainConfig& cfg) {
    return run_ae_training(ae, corpus, cfg);
}

AeTrainResult finetune_autoencoder(MotionAutoencoder& ae,
                                   const std::vector<CorpusItem>& corpus,
                                   const AeTrainConfig& cfg) {
    return run_ae_training(ae, corpus, cfg);
}

double reconstruction_l1(const MotionAutoencoder& ae,
                         const std::vector<CorpusItem>& corpus) {
    NoGradGuard no_grad;
    double total = 0.0;
    size_t elements = 0;
    size_t rate = ae.config().downsample_rate();
    for (const CorpusItem& item : corpus) {
        Tensor frames = pad_to_multiple(item.motion, rate).frames;
        Tensor rec = ae.decode_tokens(ae.encode_frames(frames));
        for (size_t i = 0; i < frames.size(); ++i)
            total += std::fabs(rec.data()[i] - frames.data()[i]);
        elements += frames.size();
    }
    return total / static_cast<double>(elements);
}

}  // namespace omni
