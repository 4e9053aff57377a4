#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "seqvae/nn.hpp"
#include "seqvae/vae.hpp"

namespace seqvae {

// Fenchel-dual KL machinery: for any auxiliary function v,
//   E_{z~q}[v(x,z)] - E_{z~p}[exp(v(x,z))] + 1  <=  KL(q || p),
// with equality at the optimal v* = log(q/p). A fixed-capacity network can
// only ever produce a lower bound.

// Fills a latent sample; used for both posterior and prior draws.
using Sampler = std::function<void(Rng&, std::span<double>)>;

Sampler gaussian_sampler(std::vector<double> mu, std::vector<double> log_var);
Sampler standard_normal_sampler(int dim);

// v(x, z): an MLP over the concatenated (conditioning, z) row. The
// conditioning signal is the posterior mean of x; cond_dim 0 drops it.
struct DualFunction {
    Mlp net;
    int cond_dim = 0;
    int latent_dim = 0;

    static DualFunction init(int cond_dim, int latent_dim, const std::vector<int>& hidden, Rng& rng);
    // rows: B x (cond_dim + latent_dim)  ->  {B}
    Tensor apply(const Tensor& rows) const;
    double eval_one(std::span<const double> cond, std::span<const double> z) const;
    std::vector<Tensor> parameters() const;
};

struct DualEstimate {
    double value = 0.0;
    double std_error = 0.0;
    bool saturated = false;  // raised iff any sampled v exceeded the clamp at 30
};

// Monte Carlo estimate of the dual objective for a fixed conditioning row.
// v values are clamped above at 30 before use.
DualEstimate dual_kl_estimate(const std::function<double(std::span<const double>)>& v,
                              const Sampler& posterior, const Sampler& prior, int n_samples, int dim,
                              Rng& rng);
DualEstimate dual_kl_estimate(const DualFunction& v, std::span<const double> cond, const Sampler& posterior,
                              const Sampler& prior, int n_samples, Rng& rng);

struct DualTrainTrace {
    std::vector<double> objective;  // Monte Carlo dual estimate per step
    std::vector<double> std_error;
    bool diverged = false;
    bool saturated = false;
};

// Gradient ascent on the dual objective averaged over datapoints, against
// frozen posteriors. Aborts on a non-finite objective, keeping the trace.
// The objective/std-error trace records every log_every-th step (and the
// final one); updates happen every step.
DualTrainTrace train_dual(DualFunction& v, const std::vector<std::vector<double>>& conds,
                          const std::vector<Sampler>& posteriors, const Sampler& prior, int steps,
                          int samples_per_step, double learning_rate, Rng& rng, int log_every = 1);

struct BoundGapItem {
    int index = 0;
    double analytic_kl = 0.0;
    double dual_estimate = 0.0;
    double dual_se = 0.0;
    double gap = 0.0;  // analytic - dual
};

struct BoundGapReport {
    std::vector<BoundGapItem> items;
    double mean_analytic = 0.0;
    double mean_dual = 0.0;
    double mean_gap = 0.0;
    double mean_gap_se = 0.0;
    DualTrainTrace trace;
    // mean gap >= -3 se and no trace step above mean analytic KL + 3 sigma.
    bool inequality_pass = false;
};

struct DualKlOptions {
    int max_items = 128;
    int train_steps = 2000;
    int samples_per_step = 64;
    int final_samples = 4096;
    double learning_rate = 0.01;
    int log_every = 10;
    std::vector<int> hidden = {64, 64};
    int batch_size = 64;
};

// Trains a dual function against the frozen model, then reports the
// per-datapoint analytic-vs-dual gap.
BoundGapReport bound_gap_report(const VaeModel& model, const std::vector<std::vector<int>>& split,
                                const DualKlOptions& options, Rng& rng);

std::string bound_gap_csv(const BoundGapReport& report);

}  // namespace seqvae
