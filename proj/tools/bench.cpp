// Benchmark of the parallel kernels against the serial reference. The two
// backends share loop structure, so outputs are bitwise identical; only the
// wall time differs.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "seqvae/kernels.hpp"
#include "seqvae/metrics.hpp"
#include "seqvae/nn.hpp"
#include "seqvae/vae.hpp"

using namespace seqvae;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void report(const std::string& name, const std::function<void()>& fn, int reps) {
    kernels::set_backend(kernels::Backend::Serial);
    double serial = time_of(fn, reps);
    kernels::set_backend(kernels::Backend::Parallel);
    double parallel = time_of(fn, reps);
    std::printf("%-34s serial %9.3f ms   parallel %9.3f ms   speedup %.2fx\n", name.c_str(),
                serial * 1e3, parallel * 1e3, serial / parallel);
}

}  // namespace

int main() {
    std::printf("threads available: %d\n\n", kernels::max_threads());
    Rng rng(1);

    {
        int n = 256;
        std::vector<double> a = rng.uniform_vec(static_cast<size_t>(n) * n, -1, 1);
        std::vector<double> b = rng.uniform_vec(static_cast<size_t>(n) * n, -1, 1);
        std::vector<double> c(static_cast<size_t>(n) * n);
        report("gemm 256x256x256", [&]() { kernels::gemm_nn(a.data(), b.data(), c.data(), n, n, n); }, 5);
    }
    {
        std::vector<double> x = rng.uniform_vec(1 << 22, -1, 1);
        report("block_sum 4M", [&]() { volatile double s = kernels::block_sum(x.data(), 1 << 22); (void)s; },
               10);
    }
    {
        Tensor x(Shape{1 << 20}, rng.uniform_vec(1 << 20, -1, 1));
        report("tanh 1M", [&]() { Tensor y = tanh(x); }, 10);
    }
    {
        VaeConfig cfg;
        cfg.vocab_size = 64;
        cfg.embed_dim = 32;
        cfg.hidden_dim = 64;
        cfg.latent_dim = 8;
        cfg.aggregation = AggregationMethod::MaxPool;
        Rng mr(2);
        VaeModel model = VaeModel::init(cfg, mr);
        std::vector<std::vector<int>> rows;
        Rng dr(3);
        for (int i = 0; i < 32; ++i) {
            std::vector<int> row;
            for (int t = 0; t < 16; ++t) row.push_back(dr.uniform_int(4, 63));
            rows.push_back(row);
        }
        Batch batch = make_batch(rows);
        report("vae loss fwd+bwd B=32 T=16", [&]() {
            Graph g;
            GraphScope scope(g);
            Rng lr(7);
            LossBreakdown lb = model.loss(batch, 1.0, 0.0, 0.0, lr);
            g.backward(lb.total_node);
            for (Tensor& p : model.parameters()) p.zero_grad();
        }, 5);
        report("iwae K=64 on one batch", [&]() {
            Rng ir(9);
            volatile double v = iwae_nll(model, batch, 64, ir);
            (void)v;
        }, 3);
        std::vector<double> mu = rng.uniform_vec(800 * 8, -1, 1);
        std::vector<double> lv = rng.uniform_vec(800 * 8, -1, 0);
        report("mutual information N=800", [&]() {
            Rng mir(11);
            volatile double v = mutual_information_from_posteriors(mu, lv, 800, 8, mir);
            (void)v;
        }, 3);
    }
    return 0;
}
