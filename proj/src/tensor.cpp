#include "seqvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "seqvae/kernels.hpp"

namespace seqvae {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> value) {
    for (int d : shape) {
        if (d < 0) throw ShapeError("Tensor: negative extent in shape " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<int64_t>(value.size())) {
        throw ShapeError("Tensor: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(value.size()));
    }
    impl = std::make_shared<TensorData>();
    impl->shape = std::move(shape);
    impl->value = std::move(value);
}

Tensor Tensor::zeros(Shape shape) {
    size_t n = static_cast<size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<double>(n));
}

Tensor Tensor::full(Shape shape, double v) {
    size_t n = static_cast<size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
    return impl->value[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
    impl->requires_grad = v;
    return *this;
}

std::span<double> Tensor::grad() {
    if (impl->grad.empty()) impl->grad.assign(impl->value.size(), 0.0);
    return impl->grad;
}

std::span<const double> Tensor::grad() const { return impl->grad; }

void Tensor::zero_grad() {
    if (!impl->grad.empty()) std::fill(impl->grad.begin(), impl->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    Tensor t(impl->shape, impl->value);
    t.impl->requires_grad = impl->requires_grad;
    return t;
}

// ---- graph ----------------------------------------------------------------

Graph* Graph::active() { return active_; }

void Graph::record(const char* op, const std::shared_ptr<TensorData>& out, std::function<void()> pull) {
    out->producer = this;
    out->requires_grad = true;
    nodes_.push_back(Node{op, out, std::move(pull)});
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar tensor");
    }
    if (loss.impl->producer != this) {
        throw ContractError("backward: loss was not produced by operations on this graph");
    }
    // Intermediate adjoints are owned by the pass; leaf grads persist.
    for (auto& n : nodes_) {
        if (n.out->grad.empty()) {
            n.out->grad.assign(n.out->value.size(), 0.0);
        } else {
            std::fill(n.out->grad.begin(), n.out->grad.end(), 0.0);
        }
    }
    loss.impl->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->pull();
}

void Graph::clear() { nodes_.clear(); }

// ---- op helpers -------------------------------------------------------------

namespace {

using kernels::block_sum;
using kernels::parallel_for;

bool tape_on() { return Graph::active() != nullptr; }

Tensor make_out(Shape shape) { return Tensor::zeros(std::move(shape)); }

std::span<double> grad_of(const std::shared_ptr<TensorData>& d) {
    if (d->grad.empty()) d->grad.assign(d->value.size(), 0.0);
    return d->grad;
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct BinaryPlan {
    int64_t n;       // output numel (== larger operand)
    int64_t an, bn;  // operand numels; index via i % an / i % bn
    Shape out_shape;
};

BinaryPlan plan_binary(const char* op, const Tensor& a, const Tensor& b) {
    int64_t an = a.numel(), bn = b.numel();
    const Shape &as = a.shape(), &bs = b.shape();
    if (as == bs) return {an, an, bn, as};
    if (bn == 1) return {an, an, bn, as};
    if (an == 1) return {bn, an, bn, bs};
    if (as.size() >= bs.size() && is_suffix(bs, as)) return {an, an, bn, as};
    if (bs.size() >= as.size() && is_suffix(as, bs)) return {bn, an, bn, bs};
    throw ShapeError(std::string(op) + ": shapes " + shape_str(as) + " and " + shape_str(bs) +
                     " are not broadcastable");
}

// Accumulates contrib(i) over output positions into an operand's grad,
// reducing over broadcast positions deterministically.
template <class G>
void accumulate_bcast(const std::shared_ptr<TensorData>& in, int64_t in_n, int64_t n, const G& contrib) {
    auto g = grad_of(in);
    if (in_n == n) {
        parallel_for(n, [&](int64_t i) { g[i] += contrib(i); });
    } else {
        parallel_for(
            in_n,
            [&](int64_t j) {
                double acc = 0.0;
                for (int64_t i = j; i < n; i += in_n) acc += contrib(i);
                g[j] += acc;
            },
            512);
    }
}

template <class FwdFn, class DaFn, class DbFn>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, const FwdFn& fwd, const DaFn& da,
                 const DbFn& db) {
    BinaryPlan plan = plan_binary(name, a, b);
    Tensor out = make_out(plan.out_shape);
    const double* av = a.impl->value.data();
    const double* bv = b.impl->value.data();
    double* ov = out.impl->value.data();
    const int64_t an = plan.an, bn = plan.bn;
    parallel_for(plan.n, [&](int64_t i) { ov[i] = fwd(av[i % an], bv[i % bn]); });
    if (tape_on() && (a.requires_grad() || b.requires_grad())) {
        auto ai = a.impl, bi = b.impl, oi = out.impl;
        int64_t n = plan.n;
        Graph::active()->record(name, oi, [=]() {
            const double* g = oi->grad.data();
            const double* x = ai->value.data();
            const double* y = bi->value.data();
            if (ai->requires_grad) {
                accumulate_bcast(ai, an, n, [&](int64_t i) { return da(g[i], x[i % an], y[i % bn]); });
            }
            if (bi->requires_grad) {
                accumulate_bcast(bi, bn, n, [&](int64_t i) { return db(g[i], x[i % an], y[i % bn]); });
            }
        });
    }
    return out;
}

template <class FwdFn, class GradFn>
Tensor unary_op(const char* name, const Tensor& t, const FwdFn& fwd, const GradFn& dgrad) {
    Tensor out = make_out(t.shape());
    const double* x = t.impl->value.data();
    double* y = out.impl->value.data();
    int64_t n = t.numel();
    parallel_for(n, [&](int64_t i) { y[i] = fwd(x[i]); });
    if (tape_on() && t.requires_grad()) {
        auto ti = t.impl, oi = out.impl;
        Graph::active()->record(name, oi, [=]() {
            auto g = grad_of(ti);
            const double* og = oi->grad.data();
            const double* xv = ti->value.data();
            const double* yv = oi->value.data();
            parallel_for(n, [&](int64_t i) { g[i] += dgrad(og[i], xv[i], yv[i]); });
        });
    }
    return out;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

struct AxisPlan {
    int64_t outer, len, inner;
};

AxisPlan axis_plan(const char* op, const Shape& s, int axis) {
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw ContractError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                            shape_str(s));
    }
    AxisPlan p{1, s[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) p.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) p.inner *= s[i];
    if (p.len == 0) throw DomainError(std::string(op) + ": empty axis in shape " + shape_str(s));
    return p;
}

Shape drop_axis(const Shape& s, int axis) {
    Shape out;
    for (int i = 0; i < static_cast<int>(s.size()); ++i) {
        if (i != axis) out.push_back(s[static_cast<size_t>(i)]);
    }
    return out;
}

void require_rank(const char* op, const Tensor& t, int rank) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank-" + std::to_string(rank) + " tensor, got shape " +
                         shape_str(t.shape()));
    }
}

}  // namespace

// ---- matrix ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor out = make_out({m, n});
    kernels::gemm_nn(a.impl->value.data(), b.impl->value.data(), out.impl->value.data(), m, k, n);
    if (tape_on() && (a.requires_grad() || b.requires_grad())) {
        auto ai = a.impl, bi = b.impl, oi = out.impl;
        Graph::active()->record("matmul", oi, [=]() {
            const double* g = oi->grad.data();
            if (ai->requires_grad) {
                kernels::gemm_nt_acc(g, bi->value.data(), grad_of(ai).data(), m, n, k);
            }
            if (bi->requires_grad) {
                kernels::gemm_tn_acc(ai->value.data(), g, grad_of(bi).data(), m, k, n);
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank("transpose", a, 2);
    int m = a.dim(0), n = a.dim(1);
    Tensor out = make_out({n, m});
    const double* x = a.impl->value.data();
    double* y = out.impl->value.data();
    parallel_for(static_cast<int64_t>(n), [&](int64_t i) {
        for (int j = 0; j < m; ++j) y[i * m + j] = x[static_cast<int64_t>(j) * n + i];
    }, kernels::grain_for(static_cast<int64_t>(m) * n));
    if (tape_on() && a.requires_grad()) {
        auto ai = a.impl, oi = out.impl;
        Graph::active()->record("transpose", oi, [=]() {
            auto g = grad_of(ai);
            const double* og = oi->grad.data();
            parallel_for(static_cast<int64_t>(m), [&](int64_t j) {
                for (int i = 0; i < n; ++i) g[j * n + i] += og[static_cast<int64_t>(i) * m + j];
            }, kernels::grain_for(static_cast<int64_t>(m) * n));
        });
    }
    return out;
}

// ---- elementwise ops ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; }, [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double g, double, double y) { return g / y; },
        [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor tanh(const Tensor& t) {
    return unary_op(
        "tanh", t, [](double x) { return std::tanh(x); },
        [](double g, double, double y) { return g * (1.0 - y * y); });
}

Tensor sigmoid(const Tensor& t) {
    return unary_op(
        "sigmoid", t, [](double x) { return stable_sigmoid(x); },
        [](double g, double, double y) { return g * y * (1.0 - y); });
}

Tensor exp(const Tensor& t) {
    return unary_op(
        "exp", t, [](double x) { return std::exp(x); }, [](double g, double, double y) { return g * y; });
}

Tensor log(const Tensor& t) {
    for (double x : t.impl->value) {
        if (!(x > 0.0)) throw DomainError("log: input " + std::to_string(x) + " is not positive");
    }
    return unary_op(
        "log", t, [](double x) { return std::log(x); }, [](double g, double x, double) { return g / x; });
}

Tensor sqrt(const Tensor& t) {
    for (double x : t.impl->value) {
        if (x < 0.0) throw DomainError("sqrt: input " + std::to_string(x) + " is negative");
    }
    // Derivative taken as 0 at x == 0.
    return unary_op(
        "sqrt", t, [](double x) { return std::sqrt(x); },
        [](double g, double, double y) { return y > 0.0 ? g * 0.5 / y : 0.0; });
}

Tensor negate(const Tensor& t) {
    return unary_op(
        "negate", t, [](double x) { return -x; }, [](double g, double, double) { return -g; });
}

Tensor scale(const Tensor& t, double c) {
    return unary_op(
        "scale", t, [c](double x) { return c * x; }, [c](double g, double, double) { return c * g; });
}

Tensor clamp_max(const Tensor& t, double cap) {
    return unary_op(
        "clamp_max", t, [cap](double x) { return x < cap ? x : cap; },
        [cap](double g, double x, double) { return x < cap ? g : 0.0; });
}

// ---- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& t) {
    Tensor out = Tensor::scalar(block_sum(t.impl->value.data(), t.numel()));
    if (tape_on() && t.requires_grad()) {
        auto ti = t.impl, oi = out.impl;
        int64_t n = t.numel();
        Graph::active()->record("sum", oi, [=]() {
            auto g = grad_of(ti);
            double og = oi->grad[0];
            parallel_for(n, [&](int64_t i) { g[i] += og; });
        });
    }
    return out;
}

Tensor mean(const Tensor& t) {
    int64_t n = t.numel();
    if (n == 0) throw DomainError("mean: empty tensor");
    Tensor out = Tensor::scalar(block_sum(t.impl->value.data(), n) / static_cast<double>(n));
    if (tape_on() && t.requires_grad()) {
        auto ti = t.impl, oi = out.impl;
        Graph::active()->record("mean", oi, [=]() {
            auto g = grad_of(ti);
            double og = oi->grad[0] / static_cast<double>(n);
            parallel_for(n, [&](int64_t i) { g[i] += og; });
        });
    }
    return out;
}

Tensor sum(const Tensor& t, int axis) {
    AxisPlan p = axis_plan("sum", t.shape(), axis);
    Tensor out = make_out(drop_axis(t.shape(), axis));
    const double* x = t.impl->value.data();
    double* y = out.impl->value.data();
    parallel_for(p.outer * p.inner, [&](int64_t oi_) {
        int64_t o = oi_ / p.inner, i = oi_ % p.inner;
        double s = 0.0;
        for (int64_t k = 0; k < p.len; ++k) s += x[(o * p.len + k) * p.inner + i];
        y[oi_] = s;
    }, kernels::grain_for(p.outer * p.len * p.inner));
    if (tape_on() && t.requires_grad()) {
        auto ti = t.impl, oi = out.impl;
        Graph::active()->record("sum_axis", oi, [=]() {
            auto g = grad_of(ti);
            const double* og = oi->grad.data();
            parallel_for(p.outer * p.len * p.inner, [&](int64_t idx) {
                int64_t i = idx % p.inner;
                int64_t o = idx / (p.inner * p.len);
                g[idx] += og[o * p.inner + i];
            });
        });
    }
    return out;
}

Tensor mean(const Tensor& t, int axis) {
    AxisPlan p = axis_plan("mean", t.shape(), axis);
    Tensor summed = sum(t, axis);
    return scale(summed, 1.0 / static_cast<double>(p.len));
}

Tensor max_over_axis(const Tensor& t, int axis) {
    AxisPlan p = axis_plan("max_over_axis", t.shape(), axis);
    Tensor out = make_out(drop_axis(t.shape(), axis));
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(p.outer * p.inner));
    const double* x = t.impl->value.data();
    double* y = out.impl->value.data();
    parallel_for(p.outer * p.inner, [&](int64_t oi_) {
        int64_t o = oi_ / p.inner, i = oi_ % p.inner;
        int64_t best_k = 0;
        double best = x[(o * p.len + 0) * p.inner + i];
        for (int64_t k = 1; k < p.len; ++k) {
            double v = x[(o * p.len + k) * p.inner + i];
            if (v > best) {  // earliest index wins ties
                best = v;
                best_k = k;
            }
        }
        y[oi_] = best;
        (*arg)[static_cast<size_t>(oi_)] = (o * p.len + best_k) * p.inner + i;
    }, kernels::grain_for(p.outer * p.len * p.inner));
    if (tape_on() && t.requires_grad()) {
        auto ti = t.impl, oi = out.impl;
        Graph::active()->record("max_over_axis", oi, [=]() {
            auto g = grad_of(ti);
            const double* og = oi->grad.data();
            parallel_for(p.outer * p.inner, [&](int64_t j) { g[(*arg)[static_cast<size_t>(j)]] += og[j]; },
                         kernels::grain_for(p.outer * p.inner));
        });
    }
    return out;
}

namespace {

// Shared overflow-safe logsumexp over (outer, len, inner) slices.
Tensor logsumexp_impl(const Tensor& t, const AxisPlan& p, Shape out_shape) {
    Tensor out = make_out(std::move(out_shape));
    const double* x = t.impl->value.data();
    double* y = out.impl->value.data();
    parallel_for(p.outer * p.inner, [&](int64_t oi_) {
        int64_t o = oi_ / p.inner, i = oi_ % p.inner;
        double m = x[(o * p.len + 0) * p.inner + i];
        for (int64_t k = 1; k < p.len; ++k) m = std::max(m, x[(o * p.len + k) * p.inner + i]);
        double s = 0.0;
        for (int64_t k = 0; k < p.len; ++k) s += std::exp(x[(o * p.len + k) * p.inner + i] - m);
        y[oi_] = m + std::log(s);
    }, kernels::grain_for(p.outer * p.len * p.inner));
    if (tape_on() && t.requires_grad()) {
        auto ti = t.impl, oi = out.impl;
        AxisPlan pl = p;
        Graph::active()->record("logsumexp", oi, [=]() {
            auto g = grad_of(ti);
            const double* og = oi->grad.data();
            const double* xv = ti->value.data();
            const double* yv = oi->value.data();
            parallel_for(pl.outer * pl.inner, [&](int64_t oi_) {
                int64_t o = oi_ / pl.inner, i = oi_ % pl.inner;
                for (int64_t k = 0; k < pl.len; ++k) {
                    int64_t idx = (o * pl.len + k) * pl.inner + i;
                    g[idx] += og[oi_] * std::exp(xv[idx] - yv[oi_]);
                }
            }, kernels::grain_for(pl.outer * pl.len * pl.inner));
        });
    }
    return out;
}

}  // namespace

Tensor logsumexp(const Tensor& t, int axis) {
    AxisPlan p = axis_plan("logsumexp", t.shape(), axis);
    return logsumexp_impl(t, p, drop_axis(t.shape(), axis));
}

Tensor logsumexp(const Tensor& t) {
    if (t.numel() == 0) throw DomainError("logsumexp: empty tensor");
    AxisPlan p{1, t.numel(), 1};
    return logsumexp_impl(t, p, Shape{});
}

// ---- indexing / assembly ops ---------------------------------------------------

Tensor reshape(const Tensor& t, Shape shape) {
    if (shape_numel(shape) != t.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(shape));
    }
    Tensor out(std::move(shape), t.impl->value);
    if (tape_on() && t.requires_grad()) {
        auto ti = t.impl, oi = out.impl;
        int64_t n = t.numel();
        Graph::active()->record("reshape", oi, [=]() {
            auto g = grad_of(ti);
            const double* og = oi->grad.data();
            parallel_for(n, [&](int64_t i) { g[i] += og[i]; });
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
    require_rank("gather_rows", table, 2);
    int v = table.dim(0), e = table.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw ContractError("gather_rows: id " + std::to_string(id) + " outside table of " +
                                std::to_string(v) + " rows");
        }
    }
    int n = static_cast<int>(ids.size());
    Tensor out = make_out({n, e});
    auto idx = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
    const double* x = table.impl->value.data();
    double* y = out.impl->value.data();
    parallel_for(n, [&](int64_t i) {
        const double* src = x + static_cast<int64_t>((*idx)[static_cast<size_t>(i)]) * e;
        std::copy(src, src + e, y + i * e);
    }, kernels::grain_for(static_cast<int64_t>(n) * e));
    if (tape_on() && table.requires_grad()) {
        auto ti = table.impl, oi = out.impl;
        Graph::active()->record("gather_rows", oi, [=]() {
            auto g = grad_of(ti);
            const double* og = oi->grad.data();
            // Rows may repeat; parallelize over columns so each sum is serial.
            parallel_for(e, [&](int64_t c) {
                for (int i = 0; i < n; ++i) {
                    g[static_cast<int64_t>((*idx)[static_cast<size_t>(i)]) * e + c] += og[static_cast<int64_t>(i) * e + c];
                }
            }, kernels::grain_for(static_cast<int64_t>(n) * e));
        });
    }
    return out;
}

Tensor take_per_row(const Tensor& t, std::span<const int> cols) {
    require_rank("take_per_row", t, 2);
    int b = t.dim(0), v = t.dim(1);
    if (static_cast<int>(cols.size()) != b) {
        throw ShapeError("take_per_row: " + std::to_string(cols.size()) + " indices for " + std::to_string(b) +
                         " rows");
    }
    for (int c : cols) {
        if (c < 0 || c >= v) throw ContractError("take_per_row: column " + std::to_string(c) + " out of range");
    }
    Tensor out = make_out({b});
    auto idx = std::make_shared<std::vector<int>>(cols.begin(), cols.end());
    const double* x = t.impl->value.data();
    double* y = out.impl->value.data();
    for (int i = 0; i < b; ++i) y[i] = x[static_cast<int64_t>(i) * v + (*idx)[static_cast<size_t>(i)]];
    if (tape_on() && t.requires_grad()) {
        auto ti = t.impl, oi = out.impl;
        Graph::active()->record("take_per_row", oi, [=]() {
            auto g = grad_of(ti);
            const double* og = oi->grad.data();
            parallel_for(b, [&](int64_t i) { g[i * v + (*idx)[static_cast<size_t>(i)]] += og[i]; },
                         kernels::grain_for(b));
        });
    }
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_rank("concat_cols", a, 2);
    require_rank("concat_cols", b, 2);
    if (a.dim(0) != b.dim(0)) {
        throw ShapeError("concat_cols: row counts disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    Tensor out = make_out({rows, ca + cb});
    const double* xa = a.impl->value.data();
    const double* xb = b.impl->value.data();
    double* y = out.impl->value.data();
    parallel_for(rows, [&](int64_t i) {
        std::copy(xa + i * ca, xa + (i + 1) * ca, y + i * (ca + cb));
        std::copy(xb + i * cb, xb + (i + 1) * cb, y + i * (ca + cb) + ca);
    }, kernels::grain_for(static_cast<int64_t>(rows) * (ca + cb)));
    if (tape_on() && (a.requires_grad() || b.requires_grad())) {
        auto ai = a.impl, bi = b.impl, oi = out.impl;
        Graph::active()->record("concat_cols", oi, [=]() {
            const double* og = oi->grad.data();
            if (ai->requires_grad) {
                auto g = grad_of(ai);
                parallel_for(rows, [&](int64_t i) {
                    for (int j = 0; j < ca; ++j) g[i * ca + j] += og[i * (ca + cb) + j];
                }, kernels::grain_for(static_cast<int64_t>(rows) * ca));
            }
            if (bi->requires_grad) {
                auto g = grad_of(bi);
                parallel_for(rows, [&](int64_t i) {
                    for (int j = 0; j < cb; ++j) g[i * cb + j] += og[i * (ca + cb) + ca + j];
                }, kernels::grain_for(static_cast<int64_t>(rows) * cb));
            }
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& t, int begin, int end) {
    require_rank("slice_cols", t, 2);
    int rows = t.dim(0), cols = t.dim(1);
    if (begin < 0 || end > cols || begin >= end) {
        throw ContractError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                            ") invalid for " + std::to_string(cols) + " columns");
    }
    int w = end - begin;
    Tensor out = make_out({rows, w});
    const double* x = t.impl->value.data();
    double* y = out.impl->value.data();
    parallel_for(rows, [&](int64_t i) {
        std::copy(x + i * cols + begin, x + i * cols + end, y + i * w);
    }, kernels::grain_for(static_cast<int64_t>(rows) * w));
    if (tape_on() && t.requires_grad()) {
        auto ti = t.impl, oi = out.impl;
        Graph::active()->record("slice_cols", oi, [=]() {
            auto g = grad_of(ti);
            const double* og = oi->grad.data();
            parallel_for(rows, [&](int64_t i) {
                for (int j = 0; j < w; ++j) g[i * cols + begin + j] += og[i * w + j];
            }, kernels::grain_for(static_cast<int64_t>(rows) * w));
        });
    }
    return out;
}

Tensor slice_timestep(const Tensor& t, int step) {
    require_rank("slice_timestep", t, 3);
    int b = t.dim(0), tt = t.dim(1), e = t.dim(2);
    if (step < 0 || step >= tt) {
        throw ContractError("slice_timestep: step " + std::to_string(step) + " outside [0," + std::to_string(tt) +
                            ")");
    }
    Tensor out = make_out({b, e});
    const double* x = t.impl->value.data();
    double* y = out.impl->value.data();
    parallel_for(b, [&](int64_t i) {
        const double* src = x + (i * tt + step) * e;
        std::copy(src, src + e, y + i * e);
    }, kernels::grain_for(static_cast<int64_t>(b) * e));
    if (tape_on() && t.requires_grad()) {
        auto ti = t.impl, oi = out.impl;
        Graph::active()->record("slice_timestep", oi, [=]() {
            auto g = grad_of(ti);
            const double* og = oi->grad.data();
            parallel_for(b, [&](int64_t i) {
                for (int j = 0; j < e; ++j) g[(i * tt + step) * e + j] += og[i * e + j];
            }, kernels::grain_for(static_cast<int64_t>(b) * e));
        });
    }
    return out;
}

Tensor stack_timesteps(const std::vector<Tensor>& steps) {
    if (steps.empty()) throw ContractError("stack_timesteps: no tensors");
    for (const Tensor& s : steps) {
        require_rank("stack_timesteps", s, 2);
        if (s.shape() != steps[0].shape()) {
            throw ShapeError("stack_timesteps: mismatched step shapes " + shape_str(steps[0].shape()) + " vs " +
                             shape_str(s.shape()));
        }
    }
    int b = steps[0].dim(0), h = steps[0].dim(1);
    int tt = static_cast<int>(steps.size());
    Tensor out = make_out({b, tt, h});
    double* y = out.impl->value.data();
    for (int t = 0; t < tt; ++t) {
        const double* x = steps[static_cast<size_t>(t)].impl->value.data();
        parallel_for(b, [&](int64_t i) {
            std::copy(x + i * h, x + (i + 1) * h, y + (i * tt + t) * h);
        }, kernels::grain_for(static_cast<int64_t>(b) * h));
    }
    bool any_grad = false;
    for (const Tensor& s : steps) any_grad = any_grad || s.requires_grad();
    if (tape_on() && any_grad) {
        std::vector<std::shared_ptr<TensorData>> ins;
        ins.reserve(steps.size());
        for (const Tensor& s : steps) ins.push_back(s.impl);
        auto oi = out.impl;
        Graph::active()->record("stack_timesteps", oi, [=]() {
            const double* og = oi->grad.data();
            for (int t = 0; t < tt; ++t) {
                if (!ins[static_cast<size_t>(t)]->requires_grad) continue;
                auto g = grad_of(ins[static_cast<size_t>(t)]);
                parallel_for(b, [&](int64_t i) {
                    for (int j = 0; j < h; ++j) g[i * h + j] += og[(i * tt + t) * h + j];
                }, kernels::grain_for(static_cast<int64_t>(b) * h));
            }
        });
    }
    return out;
}

Tensor div_rows(const Tensor& t, const Tensor& s) {
    require_rank("div_rows", t, 2);
    require_rank("div_rows", s, 1);
    int b = t.dim(0), h = t.dim(1);
    if (s.dim(0) != b) {
        throw ShapeError("div_rows: " + shape_str(t.shape()) + " rows vs scale " + shape_str(s.shape()));
    }
    Tensor out = make_out({b, h});
    const double* x = t.impl->value.data();
    const double* sv = s.impl->value.data();
    double* y = out.impl->value.data();
    parallel_for(static_cast<int64_t>(b) * h, [&](int64_t i) { y[i] = x[i] / sv[i / h]; });
    if (tape_on() && (t.requires_grad() || s.requires_grad())) {
        auto ti = t.impl, si = s.impl, oi = out.impl;
        Graph::active()->record("div_rows", oi, [=]() {
            const double* og = oi->grad.data();
            const double* xv = ti->value.data();
            const double* ss = si->value.data();
            if (ti->requires_grad) {
                auto g = grad_of(ti);
                parallel_for(static_cast<int64_t>(b) * h, [&](int64_t i) { g[i] += og[i] / ss[i / h]; });
            }
            if (si->requires_grad) {
                auto g = grad_of(si);
                parallel_for(b, [&](int64_t i) {
                    double acc = 0.0;
                    for (int j = 0; j < h; ++j) {
                        int64_t idx = i * h + j;
                        acc += og[idx] * xv[idx];
                    }
                    g[i] -= acc / (ss[i] * ss[i]);
                }, 128);
            }
        });
    }
    return out;
}

}  // namespace seqvae
