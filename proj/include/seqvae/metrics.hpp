#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "seqvae/vae.hpp"

namespace seqvae {

struct MetricsReport {
    double nll_iwae = 0.0;    // importance-weighted NLL estimate, nats/sequence
    double elbo_bound = 0.0;  // single-sample ELBO estimate (shares the first z draw)
    double kl = 0.0;          // mean analytic KL, nats
    double mi = 0.0;          // mutual-information estimate, clipped at 0
    int active_units = 0;
    double mean_pairwise_cosine = 0.0;
    int num_samples_K = 0;
    std::string split;

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

// -logsumexp_k[log p(x|z_k) + log p(z_k) - log q(z_k|x)] + log K per row,
// averaged over the batch. Word dropout is disabled. K samples per row.
double iwae_nll(const VaeModel& model, const Batch& batch, int K, Rng& rng);

// MI estimate: mean KL(q(z|x_i)||p) - mean_i[log q(z_i) - log p(z_i)] with
// z_i ~ q(z|x_i) and the aggregate posterior evaluated by log-sum-exp over
// the sample; clipped below at 0.
double mutual_information(const VaeModel& model, const std::vector<std::vector<int>>& sample, Rng& rng,
                          int batch_size = 64);
// Same estimator over an n x d table of posterior parameters.
double mutual_information_from_posteriors(const std::vector<double>& mu,
                                          const std::vector<double>& log_var, int n, int d, Rng& rng);

// Count of latent dimensions whose posterior mean varies across the sample
// (unbiased variance > threshold).
int active_units(const VaeModel& model, const std::vector<std::vector<int>>& sample,
                 double threshold = 0.01, int batch_size = 64);
// Same count over an n x d posterior-mean table.
int active_units_from_table(const std::vector<double>& mu, int n, int d, double threshold);

// Mean pairwise cosine over n x h feature rows (epsilon-guarded norms).
double mean_pairwise_cosine(const std::vector<double>& rows, int n, int h);

// Mean pairwise cosine similarity of encoder features over a deterministic
// sample prefix. No sampling involved.
double dispersion_trace(const VaeModel& model, const std::vector<std::vector<int>>& sample,
                        int max_items = 1000, int batch_size = 64);

struct EvaluateOptions {
    int K = 500;
    int batch_size = 32;
    double au_threshold = 0.01;
    int dispersion_max_items = 1000;
    // IWAE runs on whole batches until at least this many rows are covered;
    // < 0 means the full split.
    int iwae_max_items = -1;
    std::string split_tag;
};

MetricsReport evaluate(const VaeModel& model, const std::vector<std::vector<int>>& split,
                       const EvaluateOptions& options, Rng& rng);

}  // namespace seqvae
