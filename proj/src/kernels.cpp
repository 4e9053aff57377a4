#include "seqvae/kernels.hpp"

#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace seqvae::kernels {

namespace {

Backend g_backend =
#ifdef _OPENMP
    Backend::Parallel;
#else
    Backend::Serial;
#endif

constexpr int64_t kBlock = 4096;

}  // namespace

Backend active() { return g_backend; }

void set_backend(Backend b) { g_backend = b; }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace detail {
bool parallel_enabled() {
#ifdef _OPENMP
    return g_backend == Backend::Parallel && !omp_in_parallel();
#else
    return false;
#endif
}
}  // namespace detail

double block_sum(const double* x, int64_t n) {
    if (n <= 0) return 0.0;
    int64_t nb = (n + kBlock - 1) / kBlock;
    if (nb == 1) {
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    std::vector<double> partial(static_cast<size_t>(nb));
    parallel_for(
        nb,
        [&](int64_t b) {
            int64_t lo = b * kBlock;
            int64_t hi = lo + kBlock < n ? lo + kBlock : n;
            double s = 0.0;
            for (int64_t i = lo; i < hi; ++i) s += x[i];
            partial[static_cast<size_t>(b)] = s;
        },
        2);
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

double block_dot(const double* x, const double* y, int64_t n) {
    if (n <= 0) return 0.0;
    int64_t nb = (n + kBlock - 1) / kBlock;
    if (nb == 1) {
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i) s += x[i] * y[i];
        return s;
    }
    std::vector<double> partial(static_cast<size_t>(nb));
    parallel_for(
        nb,
        [&](int64_t b) {
            int64_t lo = b * kBlock;
            int64_t hi = lo + kBlock < n ? lo + kBlock : n;
            double s = 0.0;
            for (int64_t i = lo; i < hi; ++i) s += x[i] * y[i];
            partial[static_cast<size_t>(b)] = s;
        },
        2);
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    // Parallel only when the FLOP volume justifies a region on small cores.
    int64_t grain = static_cast<int64_t>(m) * k * n >= (1 << 19) ? 2 : (1 << 30);
    parallel_for(
        m,
        [&](int64_t i) {
            double* crow = c + i * n;
            for (int j = 0; j < n; ++j) crow[j] = 0.0;
            const double* arow = a + i * k;
            for (int t = 0; t < k; ++t) {
                double av = arow[t];
                const double* brow = b + static_cast<int64_t>(t) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        },
        grain);
}

void gemm_nt_acc(const double* x, const double* y, double* o, int m, int n, int k) {
    int64_t grain = static_cast<int64_t>(m) * n * k >= (1 << 19) ? 2 : (1 << 30);
    parallel_for(
        m,
        [&](int64_t i) {
            const double* xrow = x + i * n;
            double* orow = o + i * k;
            for (int j = 0; j < k; ++j) {
                const double* yrow = y + static_cast<int64_t>(j) * n;
                double s = 0.0;
                for (int t = 0; t < n; ++t) s += xrow[t] * yrow[t];
                orow[j] += s;
            }
        },
        grain);
}

void gemm_tn_acc(const double* x, const double* y, double* o, int m, int k, int n) {
    int64_t grain = static_cast<int64_t>(m) * k * n >= (1 << 19) ? 2 : (1 << 30);
    parallel_for(
        k,
        [&](int64_t i) {
            double* orow = o + i * n;
            for (int t = 0; t < m; ++t) {
                double xv = x[static_cast<int64_t>(t) * k + i];
                const double* yrow = y + static_cast<int64_t>(t) * n;
                for (int j = 0; j < n; ++j) orow[j] += xv * yrow[j];
            }
        },
        grain);
}

}  // namespace seqvae::kernels
