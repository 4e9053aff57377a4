#include "seqvae/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "seqvae/kernels.hpp"

namespace seqvae {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Flat row-major table of per-datapoint posterior parameters and features.
struct EncodedSplit {
    int n = 0, latent = 0, hidden = 0;
    std::vector<double> mu, log_var;  // n x latent
    std::vector<double> feature;      // n x hidden (first feature_rows rows)
    int feature_rows = 0;
    std::vector<double> kl;           // n
};

EncodedSplit encode_split(const VaeModel& model, const std::vector<std::vector<int>>& split,
                          int batch_size, int feature_cap) {
    EncodedSplit out;
    out.latent = model.cfg.latent_dim;
    out.hidden = model.cfg.hidden_dim;
    out.n = static_cast<int>(split.size());
    out.feature_rows = feature_cap < 0 ? out.n : std::min(out.n, feature_cap);
    out.mu.reserve(static_cast<size_t>(out.n) * out.latent);
    out.log_var.reserve(static_cast<size_t>(out.n) * out.latent);
    out.feature.reserve(static_cast<size_t>(out.feature_rows) * out.hidden);
    int row = 0;
    for (const Batch& batch : make_eval_batches(split, batch_size)) {
        EncodeResult enc = model.encode(batch);
        Tensor kl_rows = analytic_kl(enc.posterior);
        auto mu = enc.posterior.mu.value();
        auto lv = enc.posterior.log_var.value();
        auto fv = enc.feature.value();
        for (int i = 0; i < batch.batch_size; ++i, ++row) {
            for (int d = 0; d < out.latent; ++d) {
                out.mu.push_back(mu[static_cast<size_t>(i * out.latent + d)]);
                out.log_var.push_back(lv[static_cast<size_t>(i * out.latent + d)]);
            }
            if (row < out.feature_rows) {
                for (int d = 0; d < out.hidden; ++d) {
                    out.feature.push_back(fv[static_cast<size_t>(i * out.hidden + d)]);
                }
            }
            out.kl.push_back(kl_rows.value()[static_cast<size_t>(i)]);
        }
    }
    return out;
}

double log_gauss_diag(const double* z, const double* mu, const double* log_var, int d) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) {
        double diff = z[k] - mu[k];
        s += diff * diff * std::exp(-log_var[k]) + log_var[k] + kLog2Pi;
    }
    return -0.5 * s;
}

double log_prior(const double* z, int d) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += z[k] * z[k] + kLog2Pi;
    return -0.5 * s;
}

struct BatchIwae {
    double nll_sum = 0.0;   // sum over rows of -(logsumexp_k w - log K)
    double elbo_sum = 0.0;  // sum over rows of w_0
};

// One encode, K teacher-forced decodes; the K loop is parallel with all
// noise drawn up front, so results are identical for any thread count.
BatchIwae iwae_batch(const VaeModel& model, const Batch& batch, std::span<const double> mu,
                     std::span<const double> log_var, int K, Rng& rng) {
    int b = batch.batch_size, d = model.cfg.latent_dim;
    std::vector<double> noise = rng.normal_vec(static_cast<size_t>(K) * b * d);
    std::vector<double> logw(static_cast<size_t>(K) * b);
    kernels::parallel_for(
        K,
        [&](int64_t k) {
            std::vector<double> zv(static_cast<size_t>(b) * d);
            for (int i = 0; i < b * d; ++i) {
                zv[static_cast<size_t>(i)] =
                    mu[static_cast<size_t>(i)] +
                    std::exp(0.5 * log_var[static_cast<size_t>(i)]) * noise[static_cast<size_t>(k * b * d + i)];
            }
            Tensor z(Shape{b, d}, zv);
            Tensor recon = model.decode_nll(z, batch, 0.0, nullptr);
            for (int i = 0; i < b; ++i) {
                const double* zrow = zv.data() + static_cast<size_t>(i) * d;
                double lq = log_gauss_diag(zrow, mu.data() + static_cast<size_t>(i) * d,
                                           log_var.data() + static_cast<size_t>(i) * d, d);
                double lp = log_prior(zrow, d);
                logw[static_cast<size_t>(k * b + i)] =
                    -recon.value()[static_cast<size_t>(i)] + lp - lq;
            }
        },
        2);
    BatchIwae out;
    double log_k = std::log(static_cast<double>(K));
    for (int i = 0; i < b; ++i) {
        double m = logw[static_cast<size_t>(i)];
        for (int k = 1; k < K; ++k) m = std::max(m, logw[static_cast<size_t>(k * b + i)]);
        double s = 0.0;
        for (int k = 0; k < K; ++k) s += std::exp(logw[static_cast<size_t>(k * b + i)] - m);
        out.nll_sum += -(m + std::log(s) - log_k);
        out.elbo_sum += logw[static_cast<size_t>(i)];
    }
    return out;
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
    return nlohmann::json{{"format_version", 1},
                          {"nll_iwae", nll_iwae},
                          {"elbo_bound", elbo_bound},
                          {"kl", kl},
                          {"mi", mi},
                          {"active_units", active_units},
                          {"mean_pairwise_cosine", mean_pairwise_cosine},
                          {"num_samples_K", num_samples_K},
                          {"split", split}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.nll_iwae = j.at("nll_iwae").get<double>();
    r.elbo_bound = j.at("elbo_bound").get<double>();
    r.kl = j.at("kl").get<double>();
    r.mi = j.at("mi").get<double>();
    r.active_units = j.at("active_units").get<int>();
    r.mean_pairwise_cosine = j.at("mean_pairwise_cosine").get<double>();
    r.num_samples_K = j.at("num_samples_K").get<int>();
    r.split = j.at("split").get<std::string>();
    return r;
}

double iwae_nll(const VaeModel& model, const Batch& batch, int K, Rng& rng) {
    if (K < 1) throw ContractError("iwae_nll: K must be >= 1");
    EncodeResult enc = model.encode(batch);
    BatchIwae acc = iwae_batch(model, batch, enc.posterior.mu.value(), enc.posterior.log_var.value(), K, rng);
    return acc.nll_sum / batch.batch_size;
}

namespace {

}  // namespace

// One z per datapoint; aggregate posterior density by log-sum-exp over the
// sample; deterministic ordered reduction.
double mutual_information_from_posteriors(const std::vector<double>& mu,
                                          const std::vector<double>& log_var, int n, int d, Rng& rng) {
    if (n < 2) throw ContractError("mutual_information: need at least 2 datapoints");
    std::vector<double> z = rng.normal_vec(static_cast<size_t>(n) * d);
    for (int i = 0; i < n * d; ++i) {
        z[static_cast<size_t>(i)] =
            mu[static_cast<size_t>(i)] + std::exp(0.5 * log_var[static_cast<size_t>(i)]) * z[static_cast<size_t>(i)];
    }
    std::vector<double> kl(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = 0; k < d; ++k) {
            double m = mu[static_cast<size_t>(i * d + k)];
            double lv = log_var[static_cast<size_t>(i * d + k)];
            s += m * m + std::exp(lv) - 1.0 - lv;
        }
        kl[static_cast<size_t>(i)] = 0.5 * s;
    }
    double term1 = kernels::block_sum(kl.data(), n) / n;
    std::vector<double> term2(static_cast<size_t>(n));
    kernels::parallel_for(
        n,
        [&](int64_t i) {
            const double* zi = z.data() + static_cast<size_t>(i) * d;
            double m = -1e300;
            std::vector<double> dens(static_cast<size_t>(n));
            for (int j = 0; j < n; ++j) {
                dens[static_cast<size_t>(j)] =
                    log_gauss_diag(zi, mu.data() + static_cast<size_t>(j) * d,
                                   log_var.data() + static_cast<size_t>(j) * d, d);
                m = std::max(m, dens[static_cast<size_t>(j)]);
            }
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += std::exp(dens[static_cast<size_t>(j)] - m);
            double log_agg = m + std::log(s) - std::log(static_cast<double>(n));
            term2[static_cast<size_t>(i)] = log_agg - log_prior(zi, d);
        },
        8);
    double mi = term1 - kernels::block_sum(term2.data(), n) / n;
    return std::max(0.0, mi);
}

int active_units_from_table(const std::vector<double>& mu, int n, int d, double threshold) {
    int active = 0;
    for (int k = 0; k < d; ++k) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += mu[static_cast<size_t>(i * d + k)];
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            double diff = mu[static_cast<size_t>(i * d + k)] - mean;
            var += diff * diff;
        }
        var /= (n - 1);
        if (var > threshold) ++active;
    }
    return active;
}

double mutual_information(const VaeModel& model, const std::vector<std::vector<int>>& sample, Rng& rng,
                          int batch_size) {
    if (sample.size() < 2) throw ContractError("mutual_information: need at least 2 datapoints");
    EncodedSplit enc = encode_split(model, sample, batch_size, 0);
    return mutual_information_from_posteriors(enc.mu, enc.log_var, enc.n, enc.latent, rng);
}

int active_units(const VaeModel& model, const std::vector<std::vector<int>>& sample, double threshold,
                 int batch_size) {
    if (sample.size() < 2) throw ContractError("active_units: need at least 2 datapoints");
    EncodedSplit enc = encode_split(model, sample, batch_size, 0);
    return active_units_from_table(enc.mu, enc.n, enc.latent, threshold);
}

double mean_pairwise_cosine(const std::vector<double>& rows, int n, int h) {
    std::vector<double> norm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = 0; k < h; ++k) {
            double v = rows[static_cast<size_t>(i * h + k)];
            s += v * v;
        }
        norm[static_cast<size_t>(i)] = std::sqrt(s) + 1e-8;
    }
    std::vector<double> partial(static_cast<size_t>(n), 0.0);
    kernels::parallel_for(
        n,
        [&](int64_t i) {
            double acc = 0.0;
            for (int j = static_cast<int>(i) + 1; j < n; ++j) {
                double dot = 0.0;
                for (int k = 0; k < h; ++k) {
                    dot += rows[static_cast<size_t>(i * h + k)] * rows[static_cast<size_t>(j * h + k)];
                }
                acc += dot / (norm[static_cast<size_t>(i)] * norm[static_cast<size_t>(j)]);
            }
            partial[static_cast<size_t>(i)] = acc;
        },
        4);
    double total = 0.0;
    for (double p : partial) total += p;
    return total / (0.5 * n * (n - 1));
}

double dispersion_trace(const VaeModel& model, const std::vector<std::vector<int>>& sample, int max_items,
                        int batch_size) {
    if (sample.size() < 2) throw ContractError("dispersion_trace: need at least 2 datapoints");
    std::vector<std::vector<int>> prefix(sample.begin(),
                                         sample.begin() + static_cast<ptrdiff_t>(std::min(
                                             sample.size(), static_cast<size_t>(std::max(2, max_items)))));
    EncodedSplit enc = encode_split(model, prefix, batch_size, static_cast<int>(prefix.size()));
    return mean_pairwise_cosine(enc.feature, enc.feature_rows, enc.hidden);
}

MetricsReport evaluate(const VaeModel& model, const std::vector<std::vector<int>>& split,
                       const EvaluateOptions& options, Rng& rng) {
    if (options.K < 1) throw ContractError("evaluate: K must be >= 1");
    if (split.size() < 2) throw ContractError("evaluate: split needs at least 2 datapoints");
    EncodedSplit enc = encode_split(model, split, options.batch_size, options.dispersion_max_items);
    int n = enc.n, d = enc.latent;

    MetricsReport report;
    report.num_samples_K = options.K;
    report.split = options.split_tag;
    report.kl = kernels::block_sum(enc.kl.data(), n) / n;

    // IWAE over whole batches until the row cap is reached.
    int64_t iwae_rows = 0;
    double nll_sum = 0.0, elbo_sum = 0.0;
    int64_t cap = options.iwae_max_items < 0 ? n : std::min<int64_t>(n, options.iwae_max_items);
    int row = 0;
    for (const Batch& batch : make_eval_batches(split, options.batch_size)) {
        if (iwae_rows >= cap) break;
        std::span<const double> mu(enc.mu.data() + static_cast<size_t>(row) * d,
                                   static_cast<size_t>(batch.batch_size) * d);
        std::span<const double> lv(enc.log_var.data() + static_cast<size_t>(row) * d,
                                   static_cast<size_t>(batch.batch_size) * d);
        BatchIwae acc = iwae_batch(model, batch, mu, lv, options.K, rng);
        nll_sum += acc.nll_sum;
        elbo_sum += acc.elbo_sum;
        iwae_rows += batch.batch_size;
        row += batch.batch_size;
    }
    report.nll_iwae = nll_sum / static_cast<double>(iwae_rows);
    report.elbo_bound = elbo_sum / static_cast<double>(iwae_rows);

    // Draw order is fixed: IWAE noise first (batch by batch), then one z per
    // datapoint for the MI estimate.
    report.mi = mutual_information_from_posteriors(enc.mu, enc.log_var, n, d, rng);
    report.active_units = active_units_from_table(enc.mu, n, d, options.au_threshold);
    report.mean_pairwise_cosine = mean_pairwise_cosine(enc.feature, enc.feature_rows, enc.hidden);
    return report;
}

}  // namespace seqvae
