#include "seqvae/dualkl.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "seqvae/kernels.hpp"
#include "seqvae/metrics.hpp"
#include "seqvae/train.hpp"

namespace seqvae {

namespace {

constexpr double kClamp = 30.0;

std::string fmt_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, static_cast<size_t>(ptr - buf));
}

struct MeanVar {
    double mean = 0.0, var = 0.0;
};

MeanVar mean_var(const std::vector<double>& xs) {
    MeanVar out;
    double n = static_cast<double>(xs.size());
    for (double x : xs) out.mean += x;
    out.mean /= n;
    for (double x : xs) out.var += (x - out.mean) * (x - out.mean);
    out.var = xs.size() > 1 ? out.var / (n - 1) : 0.0;
    return out;
}

}  // namespace

Sampler gaussian_sampler(std::vector<double> mu, std::vector<double> log_var) {
    if (mu.size() != log_var.size()) throw ContractError("gaussian_sampler: mu/log_var length mismatch");
    return [mu = std::move(mu), log_var = std::move(log_var)](Rng& rng, std::span<double> out) {
        if (out.size() != mu.size()) throw ContractError("gaussian_sampler: wrong output width");
        for (size_t i = 0; i < out.size(); ++i) {
            out[i] = mu[i] + std::exp(0.5 * log_var[i]) * rng.normal();
        }
    };
}

Sampler standard_normal_sampler(int dim) {
    return [dim](Rng& rng, std::span<double> out) {
        if (static_cast<int>(out.size()) != dim) throw ContractError("standard_normal_sampler: wrong width");
        for (auto& x : out) x = rng.normal();
    };
}

DualFunction DualFunction::init(int cond_dim, int latent_dim, const std::vector<int>& hidden, Rng& rng) {
    if (cond_dim < 0 || latent_dim < 1) throw ContractError("DualFunction::init: invalid dimensions");
    DualFunction v;
    v.cond_dim = cond_dim;
    v.latent_dim = latent_dim;
    std::vector<int> widths;
    widths.push_back(cond_dim + latent_dim);
    for (int h : hidden) widths.push_back(h);
    widths.push_back(1);
    v.net = Mlp::init(widths, rng);
    return v;
}

Tensor DualFunction::apply(const Tensor& rows) const {
    if (rows.rank() != 2 || rows.dim(1) != cond_dim + latent_dim) {
        throw ShapeError("DualFunction::apply: rows " + shape_str(rows.shape()) + ", expected width " +
                         std::to_string(cond_dim + latent_dim));
    }
    return reshape(net.apply(rows), {rows.dim(0)});
}

double DualFunction::eval_one(std::span<const double> cond, std::span<const double> z) const {
    std::vector<double> row;
    row.reserve(cond.size() + z.size());
    row.insert(row.end(), cond.begin(), cond.end());
    row.insert(row.end(), z.begin(), z.end());
    Tensor t(Shape{1, static_cast<int>(row.size())}, row);
    return net.apply(t).item();
}

std::vector<Tensor> DualFunction::parameters() const {
    std::vector<Tensor> out;
    for (const Affine& layer : net.layers) {
        out.push_back(layer.weight);
        out.push_back(layer.bias);
    }
    return out;
}

DualEstimate dual_kl_estimate(const std::function<double(std::span<const double>)>& v,
                              const Sampler& posterior, const Sampler& prior, int n_samples, int dim,
                              Rng& rng) {
    if (n_samples < 1) throw ContractError("dual_kl_estimate: n_samples must be >= 1");
    std::vector<double> z(static_cast<size_t>(dim));
    std::vector<double> vq(static_cast<size_t>(n_samples));
    std::vector<double> evp(static_cast<size_t>(n_samples));
    bool saturated = false;
    for (int k = 0; k < n_samples; ++k) {
        posterior(rng, z);
        double val = v(z);
        if (val > kClamp) {
            saturated = true;
            val = kClamp;
        }
        vq[static_cast<size_t>(k)] = val;
    }
    for (int k = 0; k < n_samples; ++k) {
        prior(rng, z);
        double val = v(z);
        if (val > kClamp) {
            saturated = true;
            val = kClamp;
        }
        evp[static_cast<size_t>(k)] = std::exp(val);
    }
    MeanVar q = mean_var(vq);
    MeanVar p = mean_var(evp);
    DualEstimate out;
    out.value = q.mean - p.mean + 1.0;
    out.std_error = std::sqrt((q.var + p.var) / static_cast<double>(n_samples));
    out.saturated = saturated;
    return out;
}

DualEstimate dual_kl_estimate(const DualFunction& v, std::span<const double> cond, const Sampler& posterior,
                              const Sampler& prior, int n_samples, Rng& rng) {
    if (n_samples < 1) throw ContractError("dual_kl_estimate: n_samples must be >= 1");
    if (static_cast<int>(cond.size()) != v.cond_dim) {
        throw ContractError("dual_kl_estimate: conditioning width " + std::to_string(cond.size()) +
                            ", expected " + std::to_string(v.cond_dim));
    }
    int d = v.latent_dim, width = v.cond_dim + d;
    // Draw order matches the callable overload: all posterior samples first.
    std::vector<double> zq(static_cast<size_t>(n_samples) * d);
    std::vector<double> zp(static_cast<size_t>(n_samples) * d);
    for (int k = 0; k < n_samples; ++k) {
        posterior(rng, std::span<double>(zq.data() + static_cast<size_t>(k) * d, static_cast<size_t>(d)));
    }
    for (int k = 0; k < n_samples; ++k) {
        prior(rng, std::span<double>(zp.data() + static_cast<size_t>(k) * d, static_cast<size_t>(d)));
    }
    bool saturated = false;
    std::vector<double> vq(static_cast<size_t>(n_samples));
    std::vector<double> evp(static_cast<size_t>(n_samples));
    constexpr int kBlock = 8192;
    auto run_block = [&](const std::vector<double>& zs, int lo, int hi, auto&& sink) {
        int rows = hi - lo;
        std::vector<double> joint(static_cast<size_t>(rows) * width);
        for (int r = 0; r < rows; ++r) {
            double* row = joint.data() + static_cast<size_t>(r) * width;
            std::copy(cond.begin(), cond.end(), row);
            std::copy(zs.begin() + static_cast<size_t>(lo + r) * d,
                      zs.begin() + static_cast<size_t>(lo + r + 1) * d, row + cond.size());
        }
        Tensor out = v.apply(Tensor(Shape{rows, width}, std::move(joint)));
        for (int r = 0; r < rows; ++r) {
            double val = out.value()[static_cast<size_t>(r)];
            if (val > kClamp) {
                saturated = true;
                val = kClamp;
            }
            sink(lo + r, val);
        }
    };
    for (int lo = 0; lo < n_samples; lo += kBlock) {
        int hi = std::min(n_samples, lo + kBlock);
        run_block(zq, lo, hi, [&](int k, double val) { vq[static_cast<size_t>(k)] = val; });
        run_block(zp, lo, hi, [&](int k, double val) { evp[static_cast<size_t>(k)] = std::exp(val); });
    }
    MeanVar q = mean_var(vq);
    MeanVar p = mean_var(evp);
    DualEstimate out;
    out.value = q.mean - p.mean + 1.0;
    out.std_error = std::sqrt((q.var + p.var) / static_cast<double>(n_samples));
    out.saturated = saturated;
    return out;
}

DualTrainTrace train_dual(DualFunction& v, const std::vector<std::vector<double>>& conds,
                          const std::vector<Sampler>& posteriors, const Sampler& prior, int steps,
                          int samples_per_step, double learning_rate, Rng& rng, int log_every) {
    if (conds.size() != posteriors.size()) {
        throw ContractError("train_dual: conds and posteriors must pair up");
    }
    if (conds.empty()) throw ContractError("train_dual: no datapoints");
    if (samples_per_step < 1) throw ContractError("train_dual: samples_per_step must be >= 1");
    if (log_every < 1) throw ContractError("train_dual: log_every must be >= 1");
    int n_data = static_cast<int>(conds.size());
    int width = v.cond_dim + v.latent_dim;
    int rows_per_side = n_data * samples_per_step;

    DualTrainTrace trace;
    std::vector<Tensor> params = v.parameters();
    std::vector<double> z(static_cast<size_t>(v.latent_dim));

    for (int step = 0; step < steps; ++step) {
        // Joint sample matrices: posterior rows then prior rows, each row
        // [cond_i ; z]; draws are sequential for determinism.
        std::vector<double> qrows(static_cast<size_t>(rows_per_side) * width);
        std::vector<double> prows(static_cast<size_t>(rows_per_side) * width);
        for (int i = 0; i < n_data; ++i) {
            const std::vector<double>& cond = conds[static_cast<size_t>(i)];
            for (int k = 0; k < samples_per_step; ++k) {
                size_t row = static_cast<size_t>(i * samples_per_step + k) * width;
                posteriors[static_cast<size_t>(i)](rng, z);
                std::copy(cond.begin(), cond.end(), qrows.begin() + static_cast<ptrdiff_t>(row));
                std::copy(z.begin(), z.end(), qrows.begin() + static_cast<ptrdiff_t>(row + cond.size()));
                prior(rng, z);
                std::copy(cond.begin(), cond.end(), prows.begin() + static_cast<ptrdiff_t>(row));
                std::copy(z.begin(), z.end(), prows.begin() + static_cast<ptrdiff_t>(row + cond.size()));
            }
        }
        Graph graph;
        double value = 0.0;
        bool step_saturated = false;
        {
            GraphScope scope(graph);
            Tensor vq = v.apply(Tensor(Shape{rows_per_side, width}, qrows));
            Tensor vp = v.apply(Tensor(Shape{rows_per_side, width}, prows));
            for (double x : vq.value()) step_saturated = step_saturated || x > kClamp;
            for (double x : vp.value()) step_saturated = step_saturated || x > kClamp;
            Tensor objective = add(sub(mean(clamp_max(vq, kClamp)), mean(exp(clamp_max(vp, kClamp)))),
                                   Tensor::scalar(1.0));
            value = objective.item();
            std::vector<double> vq_c(vq.value().begin(), vq.value().end());
            std::vector<double> evp_c;
            evp_c.reserve(vq_c.size());
            for (double x : vp.value()) evp_c.push_back(std::exp(std::min(x, kClamp)));
            for (auto& x : vq_c) x = std::min(x, kClamp);
            if (step % log_every == 0 || step == steps - 1) {
                MeanVar q = mean_var(vq_c);
                MeanVar p = mean_var(evp_c);
                trace.objective.push_back(value);
                trace.std_error.push_back(std::sqrt((q.var + p.var) / static_cast<double>(rows_per_side)));
            }
            trace.saturated = trace.saturated || step_saturated;
            if (!std::isfinite(value)) {
                trace.diverged = true;
                return trace;
            }
            graph.backward(negate(objective));  // ascent
        }
        sgd_step(params, learning_rate, 0.0);
    }
    return trace;
}

BoundGapReport bound_gap_report(const VaeModel& model, const std::vector<std::vector<int>>& split,
                                const DualKlOptions& options, Rng& rng) {
    if (split.empty()) throw ContractError("bound_gap_report: empty split");
    std::vector<std::vector<int>> items(split.begin(),
                                        split.begin() + static_cast<ptrdiff_t>(std::min(
                                            split.size(), static_cast<size_t>(options.max_items))));
    int d = model.cfg.latent_dim;

    // Frozen posteriors from the model.
    std::vector<std::vector<double>> conds;
    std::vector<Sampler> posteriors;
    std::vector<double> analytic;
    for (const Batch& batch : make_eval_batches(items, options.batch_size)) {
        EncodeResult enc = model.encode(batch);
        Tensor kl_rows = analytic_kl(enc.posterior);
        auto mu = enc.posterior.mu.value();
        auto lv = enc.posterior.log_var.value();
        for (int i = 0; i < batch.batch_size; ++i) {
            std::vector<double> mu_i(mu.begin() + i * d, mu.begin() + (i + 1) * d);
            std::vector<double> lv_i(lv.begin() + i * d, lv.begin() + (i + 1) * d);
            conds.push_back(mu_i);
            posteriors.push_back(gaussian_sampler(mu_i, lv_i));
            analytic.push_back(kl_rows.value()[static_cast<size_t>(i)]);
        }
    }

    Rng init_rng = rng.fork("dual-init");
    DualFunction v = DualFunction::init(d, d, options.hidden, init_rng);
    Rng train_rng = rng.fork("dual-train");
    BoundGapReport report;
    report.trace = train_dual(v, conds, posteriors, standard_normal_sampler(d), options.train_steps,
                              options.samples_per_step, options.learning_rate, train_rng,
                              options.log_every);

    Rng est_rng = rng.fork("dual-estimate");
    double gap_sq_se = 0.0;
    for (size_t i = 0; i < conds.size(); ++i) {
        DualEstimate est = dual_kl_estimate(v, conds[i], posteriors[i], standard_normal_sampler(d),
                                            options.final_samples, est_rng);
        BoundGapItem item;
        item.index = static_cast<int>(i);
        item.analytic_kl = analytic[i];
        item.dual_estimate = est.value;
        item.dual_se = est.std_error;
        item.gap = analytic[i] - est.value;
        report.items.push_back(item);
        report.mean_analytic += item.analytic_kl;
        report.mean_dual += item.dual_estimate;
        report.mean_gap += item.gap;
        gap_sq_se += est.std_error * est.std_error;
    }
    double n = static_cast<double>(report.items.size());
    report.mean_analytic /= n;
    report.mean_dual /= n;
    report.mean_gap /= n;
    report.mean_gap_se = std::sqrt(gap_sq_se) / n;

    bool trace_ok = true;
    for (size_t s = 0; s < report.trace.objective.size(); ++s) {
        if (report.trace.objective[s] > report.mean_analytic + 3.0 * report.trace.std_error[s]) {
            trace_ok = false;
            break;
        }
    }
    report.inequality_pass = trace_ok && report.mean_gap >= -3.0 * report.mean_gap_se;
    return report;
}

std::string bound_gap_csv(const BoundGapReport& report) {
    std::ostringstream os;
    os << "# format_version=1\n";
    os << "index,analytic_kl,dual_estimate,gap\n";
    for (const BoundGapItem& item : report.items) {
        os << item.index << ',' << fmt_double(item.analytic_kl) << ',' << fmt_double(item.dual_estimate)
           << ',' << fmt_double(item.gap) << '\n';
    }
    return os.str();
}

}  // namespace seqvae
