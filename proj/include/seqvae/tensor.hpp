#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seqvae/error.hpp"

namespace seqvae {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    const void* producer = nullptr;  // graph that recorded this tensor as a node output
};

// Shared-storage handle to a dense row-major array of 64-bit reals. Copies
// share storage (parameters keep a stable identity across graph rebuilds);
// clone() makes a deep copy of the values.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> value);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);

    bool defined() const { return impl != nullptr; }
    const Shape& shape() const { return impl->shape; }
    int rank() const { return static_cast<int>(impl->shape.size()); }
    int dim(int i) const { return impl->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(impl->value.size()); }

    std::span<const double> value() const { return impl->value; }
    std::span<double> value() { return impl->value; }
    double item() const;

    bool requires_grad() const { return impl->requires_grad; }
    Tensor& set_requires_grad(bool v = true);

    // Allocates a zeroed buffer on first use.
    std::span<double> grad();
    std::span<const double> grad() const;
    bool grad_allocated() const { return !impl->grad.empty(); }
    void zero_grad();

    Tensor clone() const;

    std::shared_ptr<TensorData> impl;
};

// Tape of operation records. Append order is the topological order; backward
// visits every node exactly once, in reverse append order. A graph and its
// tensors belong to one worker at a time; rebuild a fresh graph per step.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    static Graph* active();

    // Registers a backward closure for a node whose output is `out`.
    void record(const char* op, const std::shared_ptr<TensorData>& out, std::function<void()> pull);

    // Populates d(loss)/d(leaf) for every requires_grad leaf reachable from
    // `loss`. Repeated calls without zeroing leaf grads accumulate.
    void backward(const Tensor& loss);

    size_t node_count() const { return nodes_.size(); }
    void clear();

private:
    struct Node {
        const char* op;
        std::shared_ptr<TensorData> out;
        std::function<void()> pull;
    };
    std::vector<Node> nodes_;

    friend class GraphScope;
    inline static thread_local Graph* active_ = nullptr;
};

// RAII activation of a graph: ops record onto it while the scope is alive.
class GraphScope {
public:
    explicit GraphScope(Graph& g) : prev_(Graph::active_) { Graph::active_ = &g; }
    ~GraphScope() { Graph::active_ = prev_; }
    GraphScope(const GraphScope&) = delete;
    GraphScope& operator=(const GraphScope&) = delete;

private:
    Graph* prev_;
};

// ---- differentiable operations ------------------------------------------
// Binary elementwise ops broadcast when one operand is a scalar or its shape
// equals a trailing suffix of the other's shape.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor tanh(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);
Tensor sqrt(const Tensor& t);
Tensor negate(const Tensor& t);
Tensor scale(const Tensor& t, double c);
Tensor clamp_max(const Tensor& t, double cap);

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
Tensor sum(const Tensor& t, int axis);
Tensor mean(const Tensor& t, int axis);
Tensor max_over_axis(const Tensor& t, int axis);
Tensor logsumexp(const Tensor& t, int axis);
Tensor logsumexp(const Tensor& t);

// Same data, new shape (element counts must agree).
Tensor reshape(const Tensor& t, Shape shape);
// table: V x E, ids in [0, V)  ->  n x E
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
// t: B x V, cols[i] in [0, V)  ->  {B}
Tensor take_per_row(const Tensor& t, std::span<const int> cols);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& t, int begin, int end);
// t: B x T x E  ->  B x E at a fixed timestep
Tensor slice_timestep(const Tensor& t, int step);
// T tensors of B x H  ->  B x T x H
Tensor stack_timesteps(const std::vector<Tensor>& steps);
// t: B x H divided rowwise by s: {B}
Tensor div_rows(const Tensor& t, const Tensor& s);

}  // namespace seqvae
