#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omni/autoencoder.hpp"
#include "omni/model.hpp"
#include "omni/motion_data.hpp"
#include "omni/optim.hpp"

namespace omni {

struct TrainRunConfig {
    std::string task = "t2m";  // t2m | speech | music
    size_t batch_size = 8;
    size_t max_frames = kMaxMotionFrames;
    double lr = 2e-4;
    size_t warmup_steps = 2000;
    size_t steps = 2000;
    double ema_decay = 0.999;
    uint64_t seed = 0;
    double cond_dropout = 0.1;  // probability of training the unconditional branch
    bool allow_dit_unfreeze = false;
    std::string metrics_path;  // step,loss,lr CSV when non-empty

    std::vector<std::pair<std::string, std::string>> manifest() const;
};

struct TrainResult {
    std::vector<double> losses;
    std::vector<double> lrs;
    double initial_loss = 0.0;  // mean of the first window
    double final_loss = 0.0;    // mean of the last window
};

// Stage 2: joint transformer + DiT training on text/motion pairs. The
// autoencoder only tokenizes (frozen); token statistics are fitted here.
TrainResult pretrain_t2m(OmniModel& model, const MotionAutoencoder& ae,
                         const std::vector<CorpusItem>& corpus,
                         const TrainRunConfig& cfg, EmaState* ema);

// Stage 3: adaptation to speech/music with the DiT frozen. Requires audio on
// every corpus item and a model built with cross-attention.
TrainResult finetune_multimodal(OmniModel& model, const MotionAutoencoder& ae,
                                const std::vector<CorpusItem>& corpus,
                                const TrainRunConfig& cfg, EmaState* ema);

// shadow <- decay * shadow + (1 - decay) * live for every trainable parameter
void ema_update(EmaState& state, const ParamRefs& params);

}  // namespace omni
