#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqvae/error.hpp"
#include "seqvae/rng.hpp"

namespace seqvae {

// Token ids 0..3 are reserved. Encoders see raw token sequences (no BOS/EOS);
// decoder inputs begin with BOS and decoder targets end with EOS.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;

    std::vector<std::string> tokens;  // id -> token, specials included
    std::unordered_map<std::string, int> ids;

    int size() const { return static_cast<int>(tokens.size()); }
    int encode(const std::string& token) const;
    const std::string& decode(int id) const;

    // Keeps the most frequent tokens up to max_size - 4, requiring at least
    // min_count occurrences; frequency ties break lexicographically.
    static Vocab build(const std::vector<std::string>& lines, int max_size, int min_count);

    void save(const std::string& path) const;  // one token per line, in id order
    static Vocab load(const std::string& path);
};

struct Corpus {
    std::vector<std::vector<int>> train, valid, test;
    std::string provenance;

    const std::vector<std::vector<int>>& split(std::string_view name) const;
};

struct SynthParams {
    int clusters = 4;
    int vocab_tokens = 40;
    int min_len = 8;
    int max_len = 20;
    int train_size = 2000;
    int valid_size = 200;
    int test_size = 200;
    // Probability of following the chain's signature transition; otherwise
    // the next token is a jump drawn from the cluster's unigram.
    double signature_prob = 0.5;
    // Fraction of tokens whose signature successor differs by cluster; the
    // rest follow a base permutation shared by every cluster.
    double divergent_fraction = 0.0;
    // Jump draws land inside the cluster's token subset with probability
    // 1 - topic_smoothing, else anywhere. Each jump is weak evidence for the
    // cluster, so identifying it requires integrating the whole sequence.
    double topic_smoothing = 0.05;
};

struct SynthCorpus {
    Corpus corpus;
    Vocab vocab;
    std::vector<int> train_labels, valid_labels, test_labels;
};

// Mixture of cluster-specific first-order Markov chains; the cluster id is
// the global feature a latent variable can capture. Deterministic per seed;
// split streams are independent.
SynthCorpus synth_corpus(uint64_t seed, const SynthParams& params);

// One example per line, whitespace tokenized, UTF-8.
std::vector<std::string> read_lines(const std::string& path);
void write_corpus_text(const SynthCorpus& sc, const std::string& dir);
Corpus load_corpus_dir(const std::string& dir, const Vocab& vocab);
std::vector<std::vector<int>> encode_lines(const std::vector<std::string>& lines, const Vocab& vocab);

struct Batch {
    int batch_size = 0;
    int max_len = 0;  // encoder width T

    std::vector<int> tokens;   // B x T, PAD beyond each row's length
    std::vector<int> lengths;  // B
    std::vector<uint8_t> mask; // B x T, mask[i*T+t] = t < lengths[i]

    // Teacher-forcing views, width T+1: BOS + tokens / tokens + EOS.
    std::vector<int> dec_inputs;
    std::vector<int> dec_targets;

    int dec_len(int i) const { return lengths[static_cast<size_t>(i)] + 1; }
};

Batch make_batch(const std::vector<std::vector<int>>& rows);

// Length-bucketed batching with seed-deterministic batch order; the final
// short batch is included and every sequence appears exactly once.
std::vector<Batch> make_batches(const std::vector<std::vector<int>>& split, int batch_size,
                                uint64_t shuffle_seed);

// Sequential batches in split order (evaluation).
std::vector<Batch> make_eval_batches(const std::vector<std::vector<int>>& split, int batch_size);

}  // namespace seqvae
