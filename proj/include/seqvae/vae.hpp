#pragma once

#include <string>
#include <utility>
#include <vector>

#include "seqvae/aggregate.hpp"
#include "seqvae/data.hpp"
#include "seqvae/nn.hpp"

namespace seqvae {

// Diagonal-Gaussian approximate posterior q(z|x); sigma^2 = exp(log_var).
struct GaussianPosterior {
    Tensor mu;       // B x D
    Tensor log_var;  // B x D
};

struct VaeConfig {
    int vocab_size = 0;
    int embed_dim = 32;
    int hidden_dim = 48;
    int latent_dim = 8;
    AggregationMethod aggregation = AggregationMethod::LastHidden;
    double lambda_cos = 0.0;
    double word_dropout = 0.0;
};

struct EncodeResult {
    Tensor feature;  // B x H, aggregated encoder states
    GaussianPosterior posterior;
};

struct LossBreakdown {
    double reconstruction_nll = 0.0;  // nats/sequence, batch mean
    double kl = 0.0;
    double cosine_penalty = 0.0;
    double beta = 0.0;
    double lambda_cos = 0.0;
    double total = 0.0;  // reconstruction_nll + beta*kl + lambda_cos*cosine_penalty
    Tensor total_node;   // scalar recorded on the active graph
};

// z = mu + exp(log_var / 2) * noise; noise is caller-supplied for determinism.
Tensor reparameterize(const GaussianPosterior& posterior, const Tensor& noise);

// Per-row KL(q(z|x) || N(0, I)) = 1/2 sum_d (mu^2 + sigma^2 - 1 - log sigma^2).
Tensor analytic_kl(const GaussianPosterior& posterior);

// Mean pairwise cosine similarity over all i<j feature rows; B < 2 returns 0
// with a logged warning. Row norms are guarded with epsilon 1e-8.
Tensor cosine_penalty(const Tensor& features);

// Decoder input row: BOS then tokens, each non-BOS valid input replaced by
// UNK with probability `rate` (row-major draw order). PAD positions are left
// alone.
std::vector<int> decoder_inputs_with_dropout(const Batch& batch, double rate, Rng* rng);

struct VaeModel {
    VaeConfig cfg;
    Embedding enc_embed;  // separate tables for encoder and decoder
    Embedding dec_embed;
    LstmCell encoder;  // E -> H
    LstmCell decoder;  // (E + D) -> H
    Affine mu_head;          // H -> D
    Affine logvar_head;      // H -> D
    Affine latent_to_state;  // D -> 2H, split into (h0, c0)
    Affine output_head;      // H -> V

    static VaeModel init(const VaeConfig& cfg, Rng& rng);

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    int64_t parameter_count() const;
    // 2VE + 4H(E+H+1) + 4H(E+D+H+1) + 2(HD+D) + (2HD+2H) + (HV+V)
    static int64_t expected_parameter_count(const VaeConfig& cfg);

    VaeModel clone() const;

    EncodeResult encode(const Batch& batch) const;

    // Teacher-forced reconstruction NLL per row (nats, summed over tokens
    // 1..T_i plus EOS). rng may be null when dropout_rate == 0.
    Tensor decode_nll(const Tensor& z, const Batch& batch, double dropout_rate, Rng* rng) const;

    // Single-sample training objective. Draws the latent noise first, then
    // the word-dropout decisions, from `rng`.
    LossBreakdown loss(const Batch& batch, double beta, double lambda_cos, double dropout_rate,
                       Rng& rng) const;
    LossBreakdown loss(const Batch& batch, double beta, Rng& rng) const;

    // Greedy argmax decoding from a latent (smoke tests only): starts at BOS,
    // stops at EOS or max_len, returns token ids without BOS/EOS.
    std::vector<int> greedy_decode(const Tensor& z, int max_len) const;
};

}  // namespace seqvae
