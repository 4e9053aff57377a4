#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seqvae/metrics.hpp"
#include "seqvae/schedule.hpp"
#include "seqvae/vae.hpp"

namespace seqvae {

enum class TrainScheme { Standard, Aggressive };

struct TrainConfig {
    double learning_rate = 1.0;
    double lr_decay_factor = 0.5;
    double grad_clip_norm = 5.0;  // <= 0 disables clipping
    int max_epochs = 15;
    int patience = 5;
    int batch_size = 32;
    uint64_t seed = 1;
    TrainScheme scheme = TrainScheme::Standard;
    AnnealSchedule schedule = AnnealSchedule::constant(1.0);
    // Aggressive scheme: encoder inner loop stops when the probe-batch ELBO
    // fails to improve over this many consecutive encoder updates.
    int inner_batch_window = 10;
    // Aggressive mode ends permanently once the epoch-over-epoch validation
    // MI gain falls below this threshold.
    double mi_plateau_threshold = 0.01;
    // Per-epoch validation metrics.
    int eval_K = 50;
    int eval_iwae_max_items = 128;
    double au_threshold = 0.01;
    int dispersion_max_items = 1000;
    // Best checkpoint lands at <out_dir>/best.ckpt when out_dir is nonempty.
    std::string out_dir;
};

struct EpochRecord {
    int epoch = 0;
    double beta = 0.0;  // value used on the last batch of the epoch
    double lr = 0.0;
    double train_total = 0.0;
    double train_recon = 0.0;
    double train_kl = 0.0;
    double train_cos = 0.0;
    MetricsReport val;
    double val_nll_bound = 0.0;  // -elbo_bound, the model-selection objective
    int64_t updates = 0;         // cumulative applied parameter updates
    int64_t enc_updates = 0;     // aggressive scheme accounting
    int64_t dec_updates = 0;
    int64_t skipped = 0;
    double wall_seconds = 0.0;  // console diagnostics only, never serialized
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_bound = 0.0;
    int64_t total_updates = 0;
    int64_t total_skipped = 0;
    std::string checkpoint_path;
};

// Global-norm clip then p <- p - lr * grad for every parameter; gradients are
// reset afterwards. A non-finite gradient skips the update (parameters
// untouched) and returns false.
bool sgd_step(std::span<Tensor> params, double learning_rate, double grad_clip_norm);

TrainLog train_standard(VaeModel& model, const Corpus& data, const TrainConfig& config);
TrainLog train_aggressive(VaeModel& model, const Corpus& data, const TrainConfig& config);
TrainLog train(VaeModel& model, const Corpus& data, const TrainConfig& config);

// One row per epoch; leading "# format_version=1" comment then the header.
void write_train_log_csv(const TrainLog& log, const std::string& path);
std::string train_log_csv(const TrainLog& log);

}  // namespace seqvae
