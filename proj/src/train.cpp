#include "seqvae/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "seqvae/checkpoint.hpp"
#include "seqvae/kernels.hpp"

namespace seqvae {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, static_cast<size_t>(ptr - buf));
}

// Reshuffled pass-after-pass batch source; batch order depends only on the
// seed and pass index.
class BatchStream {
public:
    BatchStream(const std::vector<std::vector<int>>& split, int batch_size, Rng seed_rng)
        : split_(&split), batch_size_(batch_size), rng_(std::move(seed_rng)) {}

    const Batch& next() {
        if (idx_ >= current_.size()) {
            current_ = make_batches(*split_, batch_size_, rng_.fork("pass", static_cast<uint64_t>(pass_)).seed());
            ++pass_;
            idx_ = 0;
        }
        return current_[idx_++];
    }

private:
    const std::vector<std::vector<int>>* split_;
    int batch_size_;
    Rng rng_;
    int64_t pass_ = 0;
    size_t idx_ = 0;
    std::vector<Batch> current_;
};

std::vector<Tensor> encoder_side(const VaeModel& m) {
    return {m.enc_embed.table, m.encoder.w_input, m.encoder.w_hidden, m.encoder.bias,
            m.mu_head.weight,  m.mu_head.bias,    m.logvar_head.weight, m.logvar_head.bias};
}

std::vector<Tensor> decoder_side(const VaeModel& m) {
    return {m.dec_embed.table,       m.decoder.w_input,     m.decoder.w_hidden, m.decoder.bias,
            m.latent_to_state.weight, m.latent_to_state.bias, m.output_head.weight, m.output_head.bias};
}

void zero_all_grads(std::span<Tensor> params) {
    for (Tensor& p : params) p.zero_grad();
}

// Single-sample ELBO of a fixed probe batch with frozen noise; value mode.
double probe_elbo(const VaeModel& model, const Batch& probe, const Tensor& noise) {
    EncodeResult enc = model.encode(probe);
    Tensor kl_rows = analytic_kl(enc.posterior);
    Tensor z = reparameterize(enc.posterior, noise);
    Tensor recon = model.decode_nll(z, probe, 0.0, nullptr);
    return -(mean(recon).item() + mean(kl_rows).item());
}

struct TrainerState {
    double lr;
    int64_t updates = 0, enc_updates = 0, dec_updates = 0, skipped = 0;
    double sum_total = 0, sum_recon = 0, sum_kl = 0, sum_cos = 0;
    int64_t loss_count = 0;
    double last_beta = 0;

    void account(const LossBreakdown& lb, bool applied) {
        sum_total += lb.total;
        sum_recon += lb.reconstruction_nll;
        sum_kl += lb.kl;
        sum_cos += lb.cosine_penalty;
        ++loss_count;
        last_beta = lb.beta;
        if (applied) {
            ++updates;
        } else {
            ++skipped;
        }
    }
    void reset_epoch_sums() {
        sum_total = sum_recon = sum_kl = sum_cos = 0;
        loss_count = 0;
    }
};

TrainLog train_impl(VaeModel& model, const Corpus& data, const TrainConfig& cfg, bool aggressive) {
    if (cfg.learning_rate <= 0) throw ContractError("train: learning_rate must be positive");
    if (cfg.patience < 1) throw ContractError("train: patience must be >= 1");
    if (cfg.batch_size < 2) throw ContractError("train: batch_size must be >= 2 (cosine penalty needs pairs)");
    if (cfg.max_epochs < 0) throw ContractError("train: max_epochs must be >= 0");
    if (data.train.empty() || data.valid.empty()) throw ContractError("train: train and valid splits required");

    Rng root(cfg.seed);
    Rng loss_rng = root.fork("loss");
    BatchStream outer(data.train, cfg.batch_size, root.fork("outer"));
    BatchStream inner(data.train, cfg.batch_size, root.fork("inner"));
    int64_t batches_per_epoch =
        (static_cast<int64_t>(data.train.size()) + cfg.batch_size - 1) / cfg.batch_size;

    TrainLog log;
    log.best_val_bound = std::numeric_limits<double>::infinity();
    std::string ckpt_path;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        ckpt_path = (std::filesystem::path(cfg.out_dir) / "best.ckpt").string();
        save_checkpoint(ckpt_path, model);  // aborts always leave a checkpoint behind
        log.checkpoint_path = ckpt_path;
    }

    std::vector<Tensor> all_params = model.parameters();
    std::vector<Tensor> enc_params = encoder_side(model);
    std::vector<Tensor> dec_params = decoder_side(model);

    // Probe batch for the aggressive inner-loop stop: first validation batch
    // with noise frozen for the whole run.
    Batch probe;
    Tensor probe_noise;
    if (aggressive) {
        auto vb = make_eval_batches(data.valid, cfg.batch_size);
        probe = vb.front();
        Rng pr = root.fork("probe");
        probe_noise = Tensor(Shape{probe.batch_size, model.cfg.latent_dim},
                             pr.normal_vec(static_cast<size_t>(probe.batch_size) * model.cfg.latent_dim));
    }

    TrainerState state{cfg.learning_rate};
    bool aggressive_active = aggressive;
    double prev_mi = -std::numeric_limits<double>::infinity();
    int stall_epochs = 0;

    auto do_update = [&](const Batch& batch, double beta, std::span<Tensor> subset) {
        Graph graph;
        LossBreakdown lb;
        {
            GraphScope scope(graph);
            lb = model.loss(batch, beta, loss_rng);
            graph.backward(lb.total_node);
        }
        bool applied = sgd_step(subset, state.lr, cfg.grad_clip_norm);
        zero_all_grads(all_params);
        if (!applied) {
            std::cerr << "[seqvae] non-finite gradient: update skipped\n";
        }
        state.account(lb, applied);
        return applied;
    };

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        auto epoch_start = std::chrono::steady_clock::now();
        state.reset_epoch_sums();
        for (int64_t i = 0; i < batches_per_epoch; ++i) {
            int64_t step = static_cast<int64_t>(epoch) * batches_per_epoch + i;
            double beta = cfg.schedule.beta_at(step);
            if (aggressive_active) {
                // Encoder-only updates on fresh inner batches until the probe
                // ELBO stops improving over the window, then one decoder
                // update on the outer batch.
                double best = probe_elbo(model, probe, probe_noise);
                int stall = 0;
                while (stall < cfg.inner_batch_window) {
                    do_update(inner.next(), beta, enc_params);
                    ++state.enc_updates;
                    double p = probe_elbo(model, probe, probe_noise);
                    if (p > best) {
                        best = p;
                        stall = 0;
                    } else {
                        ++stall;
                    }
                }
                do_update(outer.next(), beta, dec_params);
                ++state.dec_updates;
            } else {
                do_update(outer.next(), beta, all_params);
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.beta = state.last_beta;
        rec.lr = state.lr;
        rec.train_total = state.sum_total / static_cast<double>(state.loss_count);
        rec.train_recon = state.sum_recon / static_cast<double>(state.loss_count);
        rec.train_kl = state.sum_kl / static_cast<double>(state.loss_count);
        rec.train_cos = state.sum_cos / static_cast<double>(state.loss_count);
        EvaluateOptions ev;
        ev.K = cfg.eval_K;
        ev.batch_size = cfg.batch_size;
        ev.au_threshold = cfg.au_threshold;
        ev.dispersion_max_items = cfg.dispersion_max_items;
        ev.iwae_max_items = cfg.eval_iwae_max_items;
        ev.split_tag = "valid";
        Rng eval_rng = root.fork("eval", static_cast<uint64_t>(epoch));
        rec.val = evaluate(model, data.valid, ev, eval_rng);
        rec.val_nll_bound = -rec.val.elbo_bound;
        rec.updates = state.updates;
        rec.enc_updates = state.enc_updates;
        rec.dec_updates = state.dec_updates;
        rec.skipped = state.skipped;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        log.epochs.push_back(rec);

        std::cerr << "[seqvae] epoch " << epoch << " beta=" << rec.beta << " train=" << rec.train_total
                  << " val_bound=" << rec.val_nll_bound << " val_kl=" << rec.val.kl << " mi=" << rec.val.mi
                  << " au=" << rec.val.active_units << " cos=" << rec.val.mean_pairwise_cosine
                  << " updates=" << rec.updates << " (" << rec.wall_seconds << "s)\n";

        if (aggressive_active && std::isfinite(prev_mi) &&
            rec.val.mi - prev_mi < cfg.mi_plateau_threshold) {
            aggressive_active = false;  // permanent
            std::cerr << "[seqvae] aggressive phase ended at epoch " << epoch << "\n";
        }
        prev_mi = rec.val.mi;

        if (rec.val_nll_bound < log.best_val_bound) {
            log.best_val_bound = rec.val_nll_bound;
            log.best_epoch = epoch;
            stall_epochs = 0;
            if (!ckpt_path.empty()) save_checkpoint(ckpt_path, model);
        } else {
            ++stall_epochs;
            state.lr *= cfg.lr_decay_factor;
            if (stall_epochs >= cfg.patience) break;
        }
    }

    log.total_updates = state.updates;
    log.total_skipped = state.skipped;
    return log;
}

}  // namespace

bool sgd_step(std::span<Tensor> params, double learning_rate, double grad_clip_norm) {
    double sq = 0.0;
    for (Tensor& p : params) {
        if (!p.grad_allocated()) continue;
        auto g = p.grad();
        sq += kernels::block_dot(g.data(), g.data(), static_cast<int64_t>(g.size()));
    }
    if (!std::isfinite(sq)) {
        for (Tensor& p : params) p.zero_grad();
        return false;
    }
    double norm = std::sqrt(sq);
    double scale = 1.0;
    if (grad_clip_norm > 0.0 && norm > grad_clip_norm) scale = grad_clip_norm / norm;
    double factor = learning_rate * scale;
    for (Tensor& p : params) {
        if (!p.grad_allocated()) continue;
        auto g = p.grad();
        auto v = p.value();
        kernels::parallel_for(static_cast<int64_t>(g.size()), [&](int64_t i) { v[i] -= factor * g[i]; });
        p.zero_grad();
    }
    return true;
}

TrainLog train_standard(VaeModel& model, const Corpus& data, const TrainConfig& config) {
    return train_impl(model, data, config, false);
}

TrainLog train_aggressive(VaeModel& model, const Corpus& data, const TrainConfig& config) {
    return train_impl(model, data, config, true);
}

TrainLog train(VaeModel& model, const Corpus& data, const TrainConfig& config) {
    return train_impl(model, data, config, config.scheme == TrainScheme::Aggressive);
}

std::string train_log_csv(const TrainLog& log) {
    std::ostringstream os;
    os << "# format_version=1\n";
    os << "epoch,beta,lr,train_total,train_nll,train_kl,train_cos,val_nll_bound,val_nll_iwae,val_kl,"
          "val_mi,val_au,val_cosine,updates,enc_updates,dec_updates,skipped\n";
    for (const EpochRecord& r : log.epochs) {
        os << r.epoch << ',' << fmt_double(r.beta) << ',' << fmt_double(r.lr) << ','
           << fmt_double(r.train_total) << ',' << fmt_double(r.train_recon) << ','
           << fmt_double(r.train_kl) << ',' << fmt_double(r.train_cos) << ','
           << fmt_double(r.val_nll_bound) << ',' << fmt_double(r.val.nll_iwae) << ','
           << fmt_double(r.val.kl) << ',' << fmt_double(r.val.mi) << ',' << r.val.active_units << ','
           << fmt_double(r.val.mean_pairwise_cosine) << ',' << r.updates << ',' << r.enc_updates << ','
           << r.dec_updates << ',' << r.skipped << '\n';
    }
    return os.str();
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ContractError("write_train_log_csv: cannot open " + path);
    os << train_log_csv(log);
}

}  // namespace seqvae
