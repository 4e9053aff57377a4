#pragma once

#include <cstdint>

namespace seqvae::kernels {

// Low-level numeric loops. Every kernel is written so that the result is
// bitwise identical for the serial and parallel backends and for any thread
// count: parallel loops only ever write disjoint outputs, and scalar
// reductions use a fixed block decomposition that does not depend on the
// number of threads.
enum class Backend { Serial, Parallel };

Backend active();
void set_backend(Backend b);
int max_threads();

namespace detail {
bool parallel_enabled();
}

// Loop-count threshold that admits a parallel region only when the total
// work volume justifies waking the team.
inline int64_t grain_for(int64_t total_work, int64_t min_total = (1 << 19)) {
    return total_work >= min_total ? 1 : (int64_t{1} << 62);
}

template <class F>
void parallel_for(int64_t n, F&& f, int64_t min_items = 32768) {
#ifdef _OPENMP
    if (detail::parallel_enabled() && n >= min_items && n > 1) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) f(i);
        return;
    }
#endif
    for (int64_t i = 0; i < n; ++i) f(i);
}

// Deterministic total: partial sums over fixed 4096-element blocks, combined
// in block order.
double block_sum(const double* x, int64_t n);
double block_dot(const double* x, const double* y, int64_t n);

// C(m x n) = A(m x k) . B(k x n)
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n);

// O(m x k) += X(m x n) . Y(k x n)^T        (input-gradient shape)
void gemm_nt_acc(const double* x, const double* y, double* o, int m, int n, int k);

// O(k x n) += X(m x k)^T . Y(m x n)        (weight-gradient shape)
void gemm_tn_acc(const double* x, const double* y, double* o, int m, int k, int n);

}  // namespace seqvae::kernels
