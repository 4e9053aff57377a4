#include "seqvae/nn.hpp"

#include <string>

namespace seqvae {

namespace {

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
    size_t n = static_cast<size_t>(shape_numel(shape));
    Tensor t(std::move(shape), rng.uniform_vec(n, lo, hi));
    t.set_requires_grad();
    return t;
}

Tensor zero_param(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad();
    return t;
}

}  // namespace

Embedding Embedding::init(int vocab, int dim, Rng& rng) {
    Embedding e;
    e.table = uniform_tensor({vocab, dim}, rng, -0.1, 0.1);
    return e;
}

Affine Affine::init(int in, int out, Rng& rng) {
    Affine a;
    a.weight = uniform_tensor({out, in}, rng, -0.1, 0.1);
    a.bias = zero_param({out});
    return a;
}

Tensor Affine::apply(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != in_dim()) {
        throw ShapeError("Affine::apply: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    }
    return add(matmul(x, transpose(weight)), bias);
}

LstmCell LstmCell::init(int input_dim, int hidden_dim, Rng& rng) {
    LstmCell c;
    c.input_dim = input_dim;
    c.hidden_dim = hidden_dim;
    c.w_input = uniform_tensor({4 * hidden_dim, input_dim}, rng, -0.1, 0.1);
    c.w_hidden = uniform_tensor({4 * hidden_dim, hidden_dim}, rng, -0.1, 0.1);
    c.bias = zero_param({4 * hidden_dim});
    // Forget-gate block starts open.
    for (int i = hidden_dim; i < 2 * hidden_dim; ++i) c.bias.value()[static_cast<size_t>(i)] = 1.0;
    return c;
}

std::pair<Tensor, Tensor> LstmCell::step(const Tensor& x, const Tensor& h, const Tensor& c) const {
    if (x.rank() != 2 || x.dim(1) != input_dim || h.rank() != 2 || h.dim(1) != hidden_dim ||
        c.rank() != 2 || c.dim(1) != hidden_dim || x.dim(0) != h.dim(0) || h.dim(0) != c.dim(0)) {
        throw ShapeError("LstmCell::step: x " + shape_str(x.shape()) + ", h " + shape_str(h.shape()) + ", c " +
                         shape_str(c.shape()) + " inconsistent with cell (" + std::to_string(input_dim) + "->" +
                         std::to_string(hidden_dim) + ")");
    }
    int hd = hidden_dim;
    Tensor pre = add(add(matmul(x, transpose(w_input)), matmul(h, transpose(w_hidden))), bias);
    Tensor gate_in = sigmoid(slice_cols(pre, 0, hd));
    Tensor gate_forget = sigmoid(slice_cols(pre, hd, 2 * hd));
    Tensor candidate = tanh(slice_cols(pre, 2 * hd, 3 * hd));
    Tensor gate_out = sigmoid(slice_cols(pre, 3 * hd, 4 * hd));
    Tensor c_t = add(mul(gate_forget, c), mul(gate_in, candidate));
    Tensor h_t = mul(gate_out, tanh(c_t));
    return {h_t, c_t};
}

SequenceResult run_sequence(const LstmCell& cell, const Tensor& embedded, std::span<const int> lengths,
                            const Tensor& h0, const Tensor& c0) {
    if (embedded.rank() != 3) {
        throw ShapeError("run_sequence: embedded input must be B x T x E, got " + shape_str(embedded.shape()));
    }
    int b = embedded.dim(0), t_max = embedded.dim(1);
    if (static_cast<int>(lengths.size()) != b) {
        throw ShapeError("run_sequence: " + std::to_string(lengths.size()) + " lengths for batch of " +
                         std::to_string(b));
    }
    for (int len : lengths) {
        if (len < 1) throw ContractError("run_sequence: empty sequences are rejected at the data layer");
        if (len > t_max) {
            throw ContractError("run_sequence: length " + std::to_string(len) + " exceeds padded width " +
                                std::to_string(t_max));
        }
    }
    Tensor h = h0, c = c0;
    std::vector<Tensor> states;
    states.reserve(static_cast<size_t>(t_max));
    for (int t = 0; t < t_max; ++t) {
        auto [h_t, c_t] = cell.step(slice_timestep(embedded, t), h, c);
        h = h_t;
        c = c_t;
        states.push_back(h_t);
    }
    SequenceResult out;
    out.hidden = stack_timesteps(states);
    out.mask.assign(static_cast<size_t>(b) * static_cast<size_t>(t_max), 0);
    for (int i = 0; i < b; ++i) {
        for (int t = 0; t < lengths[static_cast<size_t>(i)]; ++t) {
            out.mask[static_cast<size_t>(i) * static_cast<size_t>(t_max) + static_cast<size_t>(t)] = 1;
        }
    }
    return out;
}

SequenceResult run_sequence(const LstmCell& cell, const Tensor& embedded, std::span<const int> lengths) {
    int b = embedded.dim(0);
    Tensor h0 = Tensor::zeros({b, cell.hidden_dim});
    Tensor c0 = Tensor::zeros({b, cell.hidden_dim});
    return run_sequence(cell, embedded, lengths, h0, c0);
}

Mlp Mlp::init(const std::vector<int>& widths, Rng& rng) {
    if (widths.size() < 2) throw ContractError("Mlp::init: need at least input and output widths");
    Mlp m;
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
        m.layers.push_back(Affine::init(widths[i], widths[i + 1], rng));
    }
    return m;
}

Tensor Mlp::apply(Tensor x) const {
    for (size_t i = 0; i < layers.size(); ++i) {
        x = layers[i].apply(x);
        if (i + 1 < layers.size()) x = tanh(x);
    }
    return x;
}

}  // namespace seqvae
