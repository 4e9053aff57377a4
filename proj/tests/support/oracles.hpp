#pragma once

// Independent numeric oracles used by tests and the acceptance suite. These
// deliberately avoid the estimator code paths they check: log p(x) comes from
// explicit 1-D quadrature over the latent, not from importance sampling.

#include <cmath>
#include <vector>

#include "seqvae/metrics.hpp"
#include "seqvae/vae.hpp"

namespace seqvae::testing {

// Tiny model for latent-quadrature checks: 2 content tokens, 1-D latent.
inline VaeModel make_quadrature_toy(uint64_t seed) {
    VaeConfig cfg;
    cfg.vocab_size = 6;  // 4 reserved + 2 tokens
    cfg.embed_dim = 4;
    cfg.hidden_dim = 4;
    cfg.latent_dim = 1;
    cfg.aggregation = AggregationMethod::MaxPool;
    Rng rng(seed);
    return VaeModel::init(cfg, rng);
}

// log p(x) = log integral phi(z) p(x|z) dz by the trapezoid rule on a dense
// grid; valid for 1-D latents. p(x|z) is the deterministic teacher-forced
// decoder likelihood.
inline double quadrature_log_px(const VaeModel& model, const Batch& row, double z_lo = -10.0,
                                double z_hi = 10.0, int grid = 2001) {
    if (model.cfg.latent_dim != 1 || row.batch_size != 1) {
        throw ContractError("quadrature_log_px: needs a 1-D latent and a single-row batch");
    }
    double h = (z_hi - z_lo) / (grid - 1);
    // log-sum-exp over log(w_i) + log phi(z_i) - nll(z_i).
    std::vector<double> terms(static_cast<size_t>(grid));
    for (int i = 0; i < grid; ++i) {
        double z = z_lo + h * i;
        Tensor zt(Shape{1, 1}, {z});
        double nll = model.decode_nll(zt, row, 0.0, nullptr).value()[0];
        double log_phi = -0.5 * (z * z + std::log(2.0 * M_PI));
        double log_w = std::log(h) + (i == 0 || i == grid - 1 ? std::log(0.5) : 0.0);
        terms[static_cast<size_t>(i)] = log_w + log_phi - nll;
    }
    double m = terms[0];
    for (double t : terms) m = std::max(m, t);
    double s = 0.0;
    for (double t : terms) s += std::exp(t - m);
    return m + std::log(s);
}

// True MI of a two-component 1-D Gaussian mixture with equal weights:
// mean_i KL(q_i || qbar) by quadrature.
inline double quadrature_mixture_mi(double mu0, double mu1, double var, double z_lo = -12.0,
                                    double z_hi = 12.0, int grid = 40001) {
    double h = (z_hi - z_lo) / (grid - 1);
    auto log_gauss = [](double z, double mu, double v) {
        return -0.5 * ((z - mu) * (z - mu) / v + std::log(2.0 * M_PI * v));
    };
    double mi = 0.0;
    for (double mu : {mu0, mu1}) {
        double acc = 0.0;
        for (int i = 0; i < grid; ++i) {
            double z = z_lo + h * i;
            double w = (i == 0 || i == grid - 1) ? 0.5 * h : h;
            double lq = log_gauss(z, mu, var);
            double q = std::exp(lq);
            if (q < 1e-300) continue;
            double lbar = std::log(0.5 * std::exp(log_gauss(z, mu0, var)) +
                                   0.5 * std::exp(log_gauss(z, mu1, var)));
            acc += w * q * (lq - lbar);
        }
        mi += 0.5 * acc;
    }
    return mi;
}

}  // namespace seqvae::testing
