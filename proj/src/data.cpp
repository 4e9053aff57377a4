#include "seqvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace seqvae {

namespace {

const char* kSpecials[4] = {"<pad>", "<unk>", "<bos>", "<eos>"};

std::vector<std::string> tokenize(const std::string& line) {
    std::istringstream is(line);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::string synth_token(int id, int width) {
    std::string s = std::to_string(id);
    std::string out = "w";
    for (int i = static_cast<int>(s.size()); i < width; ++i) out += '0';
    return out + s;
}

}  // namespace

int Vocab::encode(const std::string& token) const {
    auto it = ids.find(token);
    return it == ids.end() ? kUnk : it->second;
}

const std::string& Vocab::decode(int id) const {
    if (id < 0 || id >= size()) throw ContractError("Vocab::decode: id " + std::to_string(id) + " out of range");
    return tokens[static_cast<size_t>(id)];
}

Vocab Vocab::build(const std::vector<std::string>& lines, int max_size, int min_count) {
    if (lines.empty()) throw ContractError("Vocab::build: empty input");
    if (max_size < 5) throw ContractError("Vocab::build: max_size must leave room for the reserved tokens");
    std::map<std::string, int64_t> counts;  // ordered map gives lexicographic ties for free
    for (const auto& line : lines) {
        for (auto& tok : tokenize(line)) counts[tok]++;
    }
    std::vector<std::pair<std::string, int64_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (const char* s : kSpecials) v.tokens.emplace_back(s);
    for (const auto& [tok, count] : items) {
        if (count < min_count) continue;
        if (v.size() >= max_size) break;
        v.tokens.push_back(tok);
    }
    for (int i = 0; i < v.size(); ++i) v.ids[v.tokens[static_cast<size_t>(i)]] = i;
    return v;
}

void Vocab::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ContractError("Vocab::save: cannot open " + path);
    for (const auto& tok : tokens) os << tok << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ContractError("Vocab::load: cannot open " + path);
    Vocab v;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        v.tokens.push_back(line);
    }
    if (v.size() < 4) throw ContractError("Vocab::load: fewer than the 4 reserved tokens in " + path);
    for (int i = 0; i < 4; ++i) {
        if (v.tokens[static_cast<size_t>(i)] != kSpecials[i]) {
            throw ContractError("Vocab::load: reserved token row " + std::to_string(i) + " is '" +
                                v.tokens[static_cast<size_t>(i)] + "', expected '" + kSpecials[i] + "'");
        }
    }
    for (int i = 0; i < v.size(); ++i) v.ids[v.tokens[static_cast<size_t>(i)]] = i;
    return v;
}

const std::vector<std::vector<int>>& Corpus::split(std::string_view name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw ContractError("Corpus::split: unknown split '" + std::string(name) + "'");
}

SynthCorpus synth_corpus(uint64_t seed, const SynthParams& p) {
    if (p.clusters < 1 || p.vocab_tokens < 2 || p.min_len < 1 || p.max_len < p.min_len ||
        p.train_size < 1 || p.valid_size < 1 || p.test_size < 1 || p.signature_prob < 0.0 ||
        p.signature_prob > 1.0 || p.divergent_fraction < 0.0 || p.divergent_fraction > 1.0 ||
        p.topic_smoothing < 0.0 || p.topic_smoothing > 1.0) {
        throw ContractError("synth_corpus: invalid parameters");
    }
    Rng root(seed);

    // Each cluster's chain: follow its signature permutation with probability
    // signature_prob, otherwise jump to a draw from the cluster's unigram
    // (mostly inside its own token subset). The signature is a shared base
    // permutation, optionally re-mapped per cluster on a divergent subset.
    // Initial tokens are drawn from the chain's stationary distribution so
    // every position is marginally stationary.
    Rng chain_rng = root.fork("chains");
    int v = p.vocab_tokens;
    std::vector<int> base(static_cast<size_t>(v));
    std::iota(base.begin(), base.end(), 0);
    chain_rng.shuffle(base);
    std::vector<int> token_order(static_cast<size_t>(v));
    std::iota(token_order.begin(), token_order.end(), 0);
    chain_rng.shuffle(token_order);
    int divergent = static_cast<int>(std::lround(p.divergent_fraction * v));
    std::vector<int> dset(token_order.begin(), token_order.begin() + divergent);

    std::vector<std::vector<int>> signature(static_cast<size_t>(p.clusters), base);
    for (int c = 0; c < p.clusters; ++c) {
        // Permute the images of the divergent tokens; the map stays a bijection.
        std::vector<int> images;
        images.reserve(dset.size());
        for (int t : dset) images.push_back(base[static_cast<size_t>(t)]);
        chain_rng.shuffle(images);
        for (size_t i = 0; i < dset.size(); ++i) {
            signature[static_cast<size_t>(c)][static_cast<size_t>(dset[i])] = images[i];
        }
    }

    // Disjoint near-equal token subsets in shuffled order define the cluster
    // unigrams.
    std::vector<std::vector<double>> unigram(static_cast<size_t>(p.clusters),
                                             std::vector<double>(static_cast<size_t>(v), 0.0));
    for (int c = 0; c < p.clusters; ++c) {
        int lo = static_cast<int>((static_cast<int64_t>(c) * v) / p.clusters);
        int hi = static_cast<int>((static_cast<int64_t>(c) + 1) * v / p.clusters);
        for (int i = 0; i < v; ++i) {
            double inside = (i >= lo && i < hi) ? (1.0 - p.topic_smoothing) / (hi - lo) : 0.0;
            unigram[static_cast<size_t>(c)][static_cast<size_t>(token_order[static_cast<size_t>(i)])] =
                inside + p.topic_smoothing / v;
        }
    }

    // Stationary distribution of T_c = p P_c + (1-p) u_c 1^T by power
    // iteration.
    std::vector<std::vector<double>> stationary(static_cast<size_t>(p.clusters));
    for (int c = 0; c < p.clusters; ++c) {
        std::vector<double> pi(static_cast<size_t>(v), 1.0 / v);
        std::vector<double> next(static_cast<size_t>(v));
        for (int iter = 0; iter < 500; ++iter) {
            std::fill(next.begin(), next.end(), 0.0);
            for (int t = 0; t < v; ++t) {
                next[static_cast<size_t>(signature[static_cast<size_t>(c)][static_cast<size_t>(t)])] +=
                    p.signature_prob * pi[static_cast<size_t>(t)];
            }
            for (int t = 0; t < v; ++t) {
                next[static_cast<size_t>(t)] +=
                    (1.0 - p.signature_prob) * unigram[static_cast<size_t>(c)][static_cast<size_t>(t)];
            }
            pi.swap(next);
        }
        stationary[static_cast<size_t>(c)] = std::move(pi);
    }

    auto draw_from = [](Rng& rng, const std::vector<double>& dist) {
        double u = rng.uniform();
        double acc = 0.0;
        for (size_t i = 0; i < dist.size(); ++i) {
            acc += dist[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(dist.size()) - 1;
    };

    int width = static_cast<int>(std::to_string(p.vocab_tokens - 1).size());
    SynthCorpus sc;
    for (const char* s : kSpecials) sc.vocab.tokens.emplace_back(s);
    for (int i = 0; i < p.vocab_tokens; ++i) sc.vocab.tokens.push_back(synth_token(i, width));
    for (int i = 0; i < sc.vocab.size(); ++i) sc.vocab.ids[sc.vocab.tokens[static_cast<size_t>(i)]] = i;

    auto gen_split = [&](const char* name, int count, std::vector<std::vector<int>>& out,
                         std::vector<int>& labels) {
        Rng rng = root.fork(name);
        out.reserve(static_cast<size_t>(count));
        labels.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            int cluster = rng.uniform_int(0, p.clusters - 1);
            int len = rng.uniform_int(p.min_len, p.max_len);
            std::vector<int> seq(static_cast<size_t>(len));
            int tok = draw_from(rng, stationary[static_cast<size_t>(cluster)]);
            seq[0] = tok + 4;
            for (int t = 1; t < len; ++t) {
                if (rng.uniform() < p.signature_prob) {
                    tok = signature[static_cast<size_t>(cluster)][static_cast<size_t>(tok)];
                } else {
                    tok = draw_from(rng, unigram[static_cast<size_t>(cluster)]);
                }
                seq[static_cast<size_t>(t)] = tok + 4;
            }
            out.push_back(std::move(seq));
            labels.push_back(cluster);
        }
    };
    gen_split("train", p.train_size, sc.corpus.train, sc.train_labels);
    gen_split("valid", p.valid_size, sc.corpus.valid, sc.valid_labels);
    gen_split("test", p.test_size, sc.corpus.test, sc.test_labels);
    sc.corpus.provenance = "synthetic seed=" + std::to_string(seed);
    return sc;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ContractError("read_lines: cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

void write_corpus_text(const SynthCorpus& sc, const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto write_split = [&](const char* name, const std::vector<std::vector<int>>& rows) {
        std::ofstream os(std::filesystem::path(dir) / (std::string(name) + ".txt"), std::ios::binary);
        if (!os) throw ContractError("write_corpus_text: cannot write to " + dir);
        for (const auto& row : rows) {
            for (size_t i = 0; i < row.size(); ++i) {
                if (i) os << ' ';
                os << sc.vocab.decode(row[i]);
            }
            os << '\n';
        }
    };
    write_split("train", sc.corpus.train);
    write_split("valid", sc.corpus.valid);
    write_split("test", sc.corpus.test);
}

std::vector<std::vector<int>> encode_lines(const std::vector<std::string>& lines, const Vocab& vocab) {
    std::vector<std::vector<int>> out;
    out.reserve(lines.size());
    for (const auto& line : lines) {
        std::vector<int> seq;
        for (auto& tok : tokenize(line)) seq.push_back(vocab.encode(tok));
        if (!seq.empty()) out.push_back(std::move(seq));
    }
    return out;
}

Corpus load_corpus_dir(const std::string& dir, const Vocab& vocab) {
    Corpus c;
    auto path = [&](const char* name) { return (std::filesystem::path(dir) / (std::string(name) + ".txt")).string(); };
    c.train = encode_lines(read_lines(path("train")), vocab);
    c.valid = encode_lines(read_lines(path("valid")), vocab);
    c.test = encode_lines(read_lines(path("test")), vocab);
    c.provenance = dir;
    return c;
}

Batch make_batch(const std::vector<std::vector<int>>& rows) {
    if (rows.empty()) throw ContractError("make_batch: empty batch");
    Batch b;
    b.batch_size = static_cast<int>(rows.size());
    for (const auto& row : rows) {
        if (row.empty()) throw ContractError("make_batch: empty sequence");
        b.max_len = std::max(b.max_len, static_cast<int>(row.size()));
    }
    int t = b.max_len;
    b.tokens.assign(static_cast<size_t>(b.batch_size) * static_cast<size_t>(t), Vocab::kPad);
    b.mask.assign(b.tokens.size(), 0);
    b.dec_inputs.assign(static_cast<size_t>(b.batch_size) * static_cast<size_t>(t + 1), Vocab::kPad);
    b.dec_targets.assign(b.dec_inputs.size(), Vocab::kPad);
    for (int i = 0; i < b.batch_size; ++i) {
        const auto& row = rows[static_cast<size_t>(i)];
        int len = static_cast<int>(row.size());
        b.lengths.push_back(len);
        for (int k = 0; k < len; ++k) {
            b.tokens[static_cast<size_t>(i * t + k)] = row[static_cast<size_t>(k)];
            b.mask[static_cast<size_t>(i * t + k)] = 1;
            b.dec_inputs[static_cast<size_t>(i * (t + 1) + k + 1)] = row[static_cast<size_t>(k)];
            b.dec_targets[static_cast<size_t>(i * (t + 1) + k)] = row[static_cast<size_t>(k)];
        }
        b.dec_inputs[static_cast<size_t>(i * (t + 1))] = Vocab::kBos;
        b.dec_targets[static_cast<size_t>(i * (t + 1) + len)] = Vocab::kEos;
    }
    return b;
}

std::vector<Batch> make_batches(const std::vector<std::vector<int>>& split, int batch_size,
                                uint64_t shuffle_seed) {
    if (batch_size < 1) throw ContractError("make_batches: batch_size must be >= 1");
    if (split.empty()) return {};
    std::vector<int> order(split.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return split[static_cast<size_t>(a)].size() < split[static_cast<size_t>(b)].size();
    });
    std::vector<std::vector<int>> groups;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
        std::vector<int> g(order.begin() + static_cast<ptrdiff_t>(i),
                           order.begin() + static_cast<ptrdiff_t>(std::min(i + static_cast<size_t>(batch_size),
                                                                           order.size())));
        groups.push_back(std::move(g));
    }
    Rng rng(shuffle_seed);
    rng.shuffle(groups);
    std::vector<Batch> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        std::vector<std::vector<int>> rows;
        rows.reserve(g.size());
        for (int idx : g) rows.push_back(split[static_cast<size_t>(idx)]);
        out.push_back(make_batch(rows));
    }
    return out;
}

std::vector<Batch> make_eval_batches(const std::vector<std::vector<int>>& split, int batch_size) {
    if (batch_size < 1) throw ContractError("make_eval_batches: batch_size must be >= 1");
    std::vector<Batch> out;
    for (size_t i = 0; i < split.size(); i += static_cast<size_t>(batch_size)) {
        std::vector<std::vector<int>> rows(split.begin() + static_cast<ptrdiff_t>(i),
                                           split.begin() + static_cast<ptrdiff_t>(std::min(
                                               i + static_cast<size_t>(batch_size), split.size())));
        out.push_back(make_batch(rows));
    }
    return out;
}

}  // namespace seqvae
