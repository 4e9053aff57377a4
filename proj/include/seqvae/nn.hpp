#pragma once

#include <span>
#include <utility>
#include <vector>

#include "seqvae/rng.hpp"
#include "seqvae/tensor.hpp"

namespace seqvae {

// Weights initialize uniform(-0.1, 0.1), biases zero; the LSTM forget-gate
// bias starts at +1.

struct Embedding {
    Tensor table;  // V x E

    static Embedding init(int vocab, int dim, Rng& rng);
    Tensor lookup(std::span<const int> ids) const { return gather_rows(table, ids); }
    int vocab() const { return table.dim(0); }
    int dim() const { return table.dim(1); }
};

struct Affine {
    Tensor weight;  // out x in
    Tensor bias;    // out

    static Affine init(int in, int out, Rng& rng);
    // x: B x in  ->  B x out
    Tensor apply(const Tensor& x) const;
    int in_dim() const { return weight.dim(1); }
    int out_dim() const { return weight.dim(0); }
};

// Single-layer LSTM cell; gate blocks ordered (input, forget, cell, output)
// inside the fused 4H parameters.
struct LstmCell {
    int input_dim = 0;
    int hidden_dim = 0;
    Tensor w_input;   // 4H x input_dim
    Tensor w_hidden;  // 4H x H
    Tensor bias;      // 4H

    static LstmCell init(int input_dim, int hidden_dim, Rng& rng);
    // x: B x E, h/c: B x H  ->  (h_t, c_t)
    std::pair<Tensor, Tensor> step(const Tensor& x, const Tensor& h, const Tensor& c) const;
};

struct SequenceResult {
    Tensor hidden;              // B x T x H
    std::vector<uint8_t> mask;  // B x T, 1 at valid positions
};

// Runs the cell over every timestep of an embedded batch. States at padded
// positions are computed but must never be consumed downstream; the mask
// marks the valid region. Zero-length rows are rejected.
SequenceResult run_sequence(const LstmCell& cell, const Tensor& embedded /* B x T x E */,
                            std::span<const int> lengths, const Tensor& h0, const Tensor& c0);
SequenceResult run_sequence(const LstmCell& cell, const Tensor& embedded, std::span<const int> lengths);

// Affine stack with tanh between layers (none after the last).
struct Mlp {
    std::vector<Affine> layers;

    static Mlp init(const std::vector<int>& widths, Rng& rng);
    Tensor apply(Tensor x) const;
};

}  // namespace seqvae
