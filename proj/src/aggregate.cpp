#include "seqvae/aggregate.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "seqvae/kernels.hpp"

namespace seqvae {

AggregationMethod aggregation_from_string(std::string_view s) {
    if (s == "last") return AggregationMethod::LastHidden;
    if (s == "avg") return AggregationMethod::AvgPool;
    if (s == "max") return AggregationMethod::MaxPool;
    if (s == "abs") return AggregationMethod::AbsPool;
    throw ContractError("aggregation: unknown method '" + std::string(s) + "' (expected last|avg|max|abs)");
}

std::string_view to_string(AggregationMethod m) {
    switch (m) {
        case AggregationMethod::LastHidden: return "last";
        case AggregationMethod::AvgPool: return "avg";
        case AggregationMethod::MaxPool: return "max";
        case AggregationMethod::AbsPool: return "abs";
    }
    throw ContractError("aggregation: unknown method value");
}

Tensor aggregate(const Tensor& hidden, std::span<const int> lengths, AggregationMethod method) {
    if (hidden.rank() != 3) {
        throw ShapeError("aggregate: hidden states must be B x T x H, got " + shape_str(hidden.shape()));
    }
    int b = hidden.dim(0), t_max = hidden.dim(1), h = hidden.dim(2);
    if (static_cast<int>(lengths.size()) != b) {
        throw ShapeError("aggregate: " + std::to_string(lengths.size()) + " lengths for batch of " +
                         std::to_string(b));
    }
    for (int len : lengths) {
        if (len < 1 || len > t_max) {
            throw ContractError("aggregate: length " + std::to_string(len) + " outside [1," +
                                std::to_string(t_max) + "]");
        }
    }

    Tensor out = Tensor::zeros({b, h});
    auto lens = std::make_shared<std::vector<int>>(lengths.begin(), lengths.end());
    // Selected timestep per (b, d) for Max/Abs/Last routing; unused for Avg.
    auto picked = std::make_shared<std::vector<int>>();
    const double* x = hidden.impl->value.data();
    double* y = out.impl->value.data();

    switch (method) {
        case AggregationMethod::LastHidden:
            kernels::parallel_for(b, [&](int64_t i) {
                int t = (*lens)[static_cast<size_t>(i)] - 1;
                const double* src = x + (i * t_max + t) * h;
                std::copy(src, src + h, y + i * h);
            }, kernels::grain_for(static_cast<int64_t>(b) * h));
            break;
        case AggregationMethod::AvgPool:
            kernels::parallel_for(b, [&](int64_t i) {
                int len = (*lens)[static_cast<size_t>(i)];
                for (int d = 0; d < h; ++d) {
                    double s = 0.0;
                    for (int t = 0; t < len; ++t) s += x[(i * t_max + t) * h + d];
                    y[i * h + d] = s / len;
                }
            }, kernels::grain_for(static_cast<int64_t>(b) * t_max * h));
            break;
        case AggregationMethod::MaxPool:
            picked->assign(static_cast<size_t>(b) * static_cast<size_t>(h), 0);
            kernels::parallel_for(b, [&](int64_t i) {
                int len = (*lens)[static_cast<size_t>(i)];
                for (int d = 0; d < h; ++d) {
                    int best_t = 0;
                    double best = x[(i * t_max + 0) * h + d];
                    for (int t = 1; t < len; ++t) {
                        double v = x[(i * t_max + t) * h + d];
                        if (v > best) {
                            best = v;
                            best_t = t;
                        }
                    }
                    y[i * h + d] = best;
                    (*picked)[static_cast<size_t>(i * h + d)] = best_t;
                }
            }, kernels::grain_for(static_cast<int64_t>(b) * t_max * h));
            break;
        case AggregationMethod::AbsPool:
            picked->assign(static_cast<size_t>(b) * static_cast<size_t>(h), 0);
            kernels::parallel_for(b, [&](int64_t i) {
                int len = (*lens)[static_cast<size_t>(i)];
                for (int d = 0; d < h; ++d) {
                    int best_t = 0;
                    double best_mag = std::fabs(x[(i * t_max + 0) * h + d]);
                    for (int t = 1; t < len; ++t) {
                        double mag = std::fabs(x[(i * t_max + t) * h + d]);
                        if (mag > best_mag) {
                            best_mag = mag;
                            best_t = t;
                        }
                    }
                    y[i * h + d] = x[(i * t_max + best_t) * h + d];
                    (*picked)[static_cast<size_t>(i * h + d)] = best_t;
                }
            }, kernels::grain_for(static_cast<int64_t>(b) * t_max * h));
            break;
    }

    if (Graph::active() != nullptr && hidden.requires_grad()) {
        auto hi = hidden.impl, oi = out.impl;
        Graph::active()->record("aggregate", oi, [=]() {
            std::vector<double>& gv = hi->grad;
            if (gv.empty()) gv.assign(hi->value.size(), 0.0);
            double* g = gv.data();
            const double* og = oi->grad.data();
            switch (method) {
                case AggregationMethod::LastHidden:
                    kernels::parallel_for(b, [&](int64_t i) {
                        int t = (*lens)[static_cast<size_t>(i)] - 1;
                        for (int d = 0; d < h; ++d) g[(i * t_max + t) * h + d] += og[i * h + d];
                    }, kernels::grain_for(static_cast<int64_t>(b) * h));
                    break;
                case AggregationMethod::AvgPool:
                    kernels::parallel_for(b, [&](int64_t i) {
                        int len = (*lens)[static_cast<size_t>(i)];
                        for (int d = 0; d < h; ++d) {
                            double share = og[i * h + d] / len;
                            for (int t = 0; t < len; ++t) g[(i * t_max + t) * h + d] += share;
                        }
                    }, kernels::grain_for(static_cast<int64_t>(b) * t_max * h));
                    break;
                case AggregationMethod::MaxPool:
                case AggregationMethod::AbsPool:
                    kernels::parallel_for(b, [&](int64_t i) {
                        for (int d = 0; d < h; ++d) {
                            int t = (*picked)[static_cast<size_t>(i * h + d)];
                            g[(i * t_max + t) * h + d] += og[i * h + d];
                        }
                    }, kernels::grain_for(static_cast<int64_t>(b) * t_max * h));
                    break;
            }
        });
    }
    return out;
}

}  // namespace seqvae
