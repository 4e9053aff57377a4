// seqvae: sequence-VAE laboratory for studying encoder-feature dispersion
// and posterior collapse on synthetic corpora.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/configuration error.

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <json.hpp>

#include "seqvae/checkpoint.hpp"
#include "seqvae/dualkl.hpp"
#include "seqvae/kernels.hpp"
#include "seqvae/metrics.hpp"
#include "seqvae/recipes.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqvae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Config files hold either key=value lines or one flat JSON object. The
// file is expanded into trailing --key value arguments before parsing, so
// anything given explicitly on the command line takes precedence.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ContractError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::vector<std::pair<std::string, std::string>> items;
    size_t first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        json j = json::parse(text);
        if (!j.is_object()) throw ContractError("config: JSON config must be a flat object");
        for (auto& [key, value] : j.items()) {
            items.emplace_back(key, value.is_string() ? value.get<std::string>() : value.dump());
        }
        return items;
    }
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        size_t begin = line.find_first_not_of(" \t");
        if (begin == std::string::npos || line[begin] == '#' || line[begin] == ';') continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw ContractError("config: expected key=value, got '" + line + "'");
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t");
            size_t b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        items.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return items;
}

std::vector<std::string> expand_config_args(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<ptrdiff_t>(i), args.begin() + static_cast<ptrdiff_t>(i + 2));
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            args.erase(args.begin() + static_cast<ptrdiff_t>(i));
            break;
        }
    }
    if (config_path.empty()) return args;
    for (auto& [key, value] : read_config_file(config_path)) {
        std::string flag = "--" + key;
        bool present = false;
        for (const std::string& a : args) {
            if (a == flag || a.rfind(flag + "=", 0) == 0) {
                present = true;
                break;
            }
        }
        if (!present) {
            args.push_back(flag);
            args.push_back(value);
        }
    }
    return args;
}

void attach_config(CLI::App* cmd) {
    // Parsed out before CLI11 runs; registered here for --help only.
    static std::string ignored;
    cmd->add_option("--config", ignored, "Config file (key=value or flat JSON); flags take precedence");
}

std::string fmt_double_csv(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, static_cast<size_t>(ptr - buf));
}

struct TrainFlags {
    std::string recipe = "baseline-last";
    std::string data_dir;
    std::string out_dir;
    uint64_t seed = 1;
    int vocab_max = 10000;
    int min_count = 1;
    // Overrides; applied only when the option was provided on the CLI.
    std::string aggregation, anneal, scheme;
    int embed = 0, hidden = 0, latent = 0, epochs = 0, patience = 0, batch = 0;
    int warmup_epochs = 0, cycles = 0, eval_k = 0, final_k = 0, inner_window = 0;
    double lr = 0, lr_decay = 0, clip = 0, ramp = 0, lambda_cos = 0, word_dropout = 0, mi_plateau = 0;
};

int cmd_gen_corpus(const SynthParams& params, uint64_t seed, const std::string& out_dir) {
    SynthCorpus sc = synth_corpus(seed, params);
    write_corpus_text(sc, out_dir);
    std::cout << "wrote " << (fs::path(out_dir) / "train.txt").string() << " ("
              << sc.corpus.train.size() << " lines), valid.txt (" << sc.corpus.valid.size()
              << "), test.txt (" << sc.corpus.test.size() << ")\n";
    return kExitOk;
}

int cmd_train(const CLI::App* cmd, TrainFlags& f) {
    Recipe recipe = make_recipe(f.recipe);
    auto given = [&](const std::string& name) { return cmd->get_option(name)->count() > 0; };
    if (given("--aggregation")) recipe.model.aggregation = aggregation_from_string(f.aggregation);
    if (given("--embed-dim")) recipe.model.embed_dim = f.embed;
    if (given("--hidden-dim")) recipe.model.hidden_dim = f.hidden;
    if (given("--latent-dim")) recipe.model.latent_dim = f.latent;
    if (given("--lambda-cos")) recipe.model.lambda_cos = f.lambda_cos;
    if (given("--word-dropout")) recipe.model.word_dropout = f.word_dropout;
    if (given("--lr")) recipe.train.learning_rate = f.lr;
    if (given("--lr-decay")) recipe.train.lr_decay_factor = f.lr_decay;
    if (given("--clip")) recipe.train.grad_clip_norm = f.clip;
    if (given("--epochs")) recipe.train.max_epochs = f.epochs;
    if (given("--patience")) recipe.train.patience = f.patience;
    if (given("--batch-size")) recipe.train.batch_size = f.batch;
    if (given("--anneal")) recipe.anneal = f.anneal;
    if (given("--warmup-epochs")) recipe.warmup_epochs = f.warmup_epochs;
    if (given("--cycles")) recipe.cycles = f.cycles;
    if (given("--ramp-fraction")) recipe.ramp_fraction = f.ramp;
    if (given("--eval-K")) recipe.train.eval_K = f.eval_k;
    if (given("--final-K")) recipe.final_K = f.final_k;
    if (given("--inner-window")) recipe.train.inner_batch_window = f.inner_window;
    if (given("--mi-plateau")) recipe.train.mi_plateau_threshold = f.mi_plateau;
    if (given("--scheme")) {
        if (f.scheme == "standard") {
            recipe.train.scheme = TrainScheme::Standard;
        } else if (f.scheme == "aggressive") {
            recipe.train.scheme = TrainScheme::Aggressive;
        } else {
            throw ContractError("unknown scheme '" + f.scheme + "' (expected standard|aggressive)");
        }
    }

    Vocab vocab = Vocab::build(read_lines((fs::path(f.data_dir) / "train.txt").string()), f.vocab_max,
                               f.min_count);
    Corpus corpus = load_corpus_dir(f.data_dir, vocab);
    recipe.model.vocab_size = vocab.size();

    fs::create_directories(f.out_dir);
    vocab.save((fs::path(f.out_dir) / "vocab.txt").string());
    RunResult result = run_recipe(recipe, corpus, f.seed, f.out_dir);
    std::cout << result.summary.dump(2) << "\n";
    return kExitOk;
}

MetricsReport evaluate_checkpoint(const std::string& ckpt_path, const std::string& vocab_path,
                                  const std::string& data_dir, const std::string& split, int k,
                                  uint64_t seed, int batch_size) {
    VaeModel model = load_checkpoint(ckpt_path);
    Vocab vocab = Vocab::load(vocab_path);
    if (vocab.size() != model.cfg.vocab_size) {
        throw ContractError("vocabulary has " + std::to_string(vocab.size()) + " entries but checkpoint expects " +
                            std::to_string(model.cfg.vocab_size));
    }
    Corpus corpus = load_corpus_dir(data_dir, vocab);
    EvaluateOptions ev;
    ev.K = k;
    ev.batch_size = batch_size;
    ev.split_tag = split;
    Rng rng(seed);
    return evaluate(model, corpus.split(split), ev, rng);
}

int cmd_evaluate(const std::string& ckpt, const std::string& vocab_path, const std::string& data_dir,
                 const std::string& split, int k, uint64_t seed, int batch_size,
                 const std::string& out_dir) {
    MetricsReport report = evaluate_checkpoint(ckpt, vocab_path, data_dir, split, k, seed, batch_size);
    json j = report.to_json();
    j["checkpoint"] = ckpt;
    std::cout << j.dump(2) << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream os(fs::path(out_dir) / "report.json", std::ios::binary | std::ios::trunc);
        os << j.dump(2) << "\n";
        fs::path csv = fs::path(out_dir) / "metrics.csv";
        bool fresh = !fs::exists(csv);
        std::ofstream cs(csv, std::ios::binary | std::ios::app);
        if (fresh) {
            cs << "# format_version=1\n";
            cs << "split,K,nll_iwae,elbo_bound,kl,mi,active_units,mean_pairwise_cosine,checkpoint\n";
        }
        cs << report.split << ',' << report.num_samples_K << ',' << fmt_double_csv(report.nll_iwae) << ','
           << fmt_double_csv(report.elbo_bound) << ',' << fmt_double_csv(report.kl) << ','
           << fmt_double_csv(report.mi) << ',' << report.active_units << ','
           << fmt_double_csv(report.mean_pairwise_cosine) << ',' << ckpt << '\n';
    }
    return kExitOk;
}

int cmd_dual_kl_check(const std::string& ckpt, const std::string& vocab_path, const std::string& data_dir,
                      const std::string& split, const DualKlOptions& options, uint64_t seed,
                      const std::string& out_dir) {
    VaeModel model = load_checkpoint(ckpt);
    Vocab vocab = Vocab::load(vocab_path);
    if (vocab.size() != model.cfg.vocab_size) {
        throw ContractError("vocabulary size does not match the checkpoint");
    }
    Corpus corpus = load_corpus_dir(data_dir, vocab);
    Rng rng(seed);
    BoundGapReport report = bound_gap_report(model, corpus.split(split), options, rng);

    json j;
    j["format_version"] = 1;
    j["checkpoint"] = ckpt;
    j["split"] = split;
    j["items"] = report.items.size();
    j["mean_analytic_kl"] = report.mean_analytic;
    j["mean_dual_estimate"] = report.mean_dual;
    j["mean_gap"] = report.mean_gap;
    j["mean_gap_se"] = report.mean_gap_se;
    j["saturated"] = report.trace.saturated;
    j["diverged"] = report.trace.diverged;
    j["inequality_pass"] = report.inequality_pass;
    std::cout << j.dump(2) << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream cs(fs::path(out_dir) / "bound_gap.csv", std::ios::binary | std::ios::trunc);
        cs << bound_gap_csv(report);
        std::ofstream os(fs::path(out_dir) / "bound_gap.json", std::ios::binary | std::ios::trunc);
        os << j.dump(2) << "\n";
    }
    return report.inequality_pass ? kExitOk : kExitRuntime;
}

int cmd_compare(const std::vector<std::string>& run_dirs, const std::string& out_csv) {
    for (const std::string& dir : run_dirs) {
        if (!fs::exists(fs::path(dir) / "summary.json")) {
            std::cerr << "error: no summary.json under '" << dir << "'\n";
            return kExitUsage;
        }
    }
    std::ostringstream csv;
    csv << "# format_version=1\n";
    csv << "run,nll_iwae,kl,mi,active_units,mean_pairwise_cosine,updates\n";
    std::cout << "run                          NLL        KL        MI    AU   cosine   updates\n";
    for (const std::string& dir : run_dirs) {
        std::ifstream is(fs::path(dir) / "summary.json", std::ios::binary);
        json summary = json::parse(is);
        MetricsReport final = MetricsReport::from_json(summary.at("final_valid"));
        int64_t updates = summary.at("updates").get<int64_t>();
        std::string name = summary.value("recipe", dir) + "-seed" + std::to_string(summary.value("seed", 0));
        char line[256];
        std::snprintf(line, sizeof line, "%-26s %8.3f %9.4f %9.4f %4d %8.4f %9lld\n", name.c_str(),
                      final.nll_iwae, final.kl, final.mi, final.active_units, final.mean_pairwise_cosine,
                      static_cast<long long>(updates));
        std::cout << line;
        csv << name << ',' << fmt_double_csv(final.nll_iwae) << ',' << fmt_double_csv(final.kl) << ','
            << fmt_double_csv(final.mi) << ',' << final.active_units << ','
            << fmt_double_csv(final.mean_pairwise_cosine) << ',' << updates << '\n';
    }
    if (!out_csv.empty()) {
        std::ofstream os(out_csv, std::ios::binary | std::ios::trunc);
        os << csv.str();
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sequence-VAE laboratory: pooling-based encoder aggregation and collapse diagnostics"};
    app.require_subcommand(1);
    std::string backend = "parallel";
    app.add_option("--backend", backend, "Kernel backend: parallel|serial")
        ->check(CLI::IsMember({"parallel", "serial"}));

    // gen-corpus ------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic Markov-mixture corpus");
    attach_config(gen);
    SynthParams params;
    uint64_t gen_seed = 1;
    std::string gen_out;
    gen->add_option("--seed", gen_seed, "Generator seed");
    gen->add_option("--out", gen_out, "Output directory (train/valid/test.txt)")
        ->envname("SEQVAE_OUT_ROOT")
        ->required();
    gen->add_option("--clusters", params.clusters, "Markov-chain clusters");
    gen->add_option("--vocab-tokens", params.vocab_tokens, "Content vocabulary size");
    gen->add_option("--min-len", params.min_len, "Minimum sequence length");
    gen->add_option("--max-len", params.max_len, "Maximum sequence length");
    gen->add_option("--train-size", params.train_size, "Training sequences");
    gen->add_option("--valid-size", params.valid_size, "Validation sequences");
    gen->add_option("--test-size", params.test_size, "Test sequences");
    gen->add_option("--signature-prob", params.signature_prob,
                    "Probability of following the cluster signature transition");
    gen->add_option("--divergent-fraction", params.divergent_fraction,
                    "Fraction of tokens whose signature successor differs by cluster");
    gen->add_option("--topic-smoothing", params.topic_smoothing,
                    "Mass of cluster-unigram jumps that leaks outside the cluster subset");

    // train -----------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "Train a recipe on a corpus directory");
    attach_config(tr);
    TrainFlags tf;
    tr->add_option("--recipe", tf.recipe, "Preset name")->check(CLI::IsMember(recipe_names()));
    tr->add_option("--data", tf.data_dir, "Corpus directory")->required();
    tr->add_option("--out", tf.out_dir, "Run output directory")->envname("SEQVAE_OUT_ROOT")->required();
    tr->add_option("--seed", tf.seed, "Run seed");
    tr->add_option("--vocab-size", tf.vocab_max, "Vocabulary cap (including reserved tokens)");
    tr->add_option("--min-count", tf.min_count, "Minimum token count for the vocabulary");
    tr->add_option("--aggregation", tf.aggregation, "last|avg|max|abs");
    tr->add_option("--embed-dim", tf.embed, "Embedding width");
    tr->add_option("--hidden-dim", tf.hidden, "LSTM hidden width");
    tr->add_option("--latent-dim", tf.latent, "Latent dimensionality");
    tr->add_option("--lambda-cos", tf.lambda_cos, "Cosine regularizer weight");
    tr->add_option("--word-dropout", tf.word_dropout, "Decoder-input word dropout rate");
    tr->add_option("--lr", tf.lr, "SGD learning rate");
    tr->add_option("--lr-decay", tf.lr_decay, "Learning-rate decay on plateau");
    tr->add_option("--clip", tf.clip, "Global gradient-norm clip");
    tr->add_option("--epochs", tf.epochs, "Maximum epochs");
    tr->add_option("--patience", tf.patience, "Early-stopping patience");
    tr->add_option("--batch-size", tf.batch, "Batch size");
    tr->add_option("--scheme", tf.scheme, "standard|aggressive");
    tr->add_option("--anneal", tf.anneal, "none|linear|cyclical");
    tr->add_option("--warmup-epochs", tf.warmup_epochs, "Linear warmup, in epochs");
    tr->add_option("--cycles", tf.cycles, "Cyclical schedule cycles");
    tr->add_option("--ramp-fraction", tf.ramp, "Cyclical ramp fraction");
    tr->add_option("--eval-K", tf.eval_k, "Importance samples for per-epoch validation");
    tr->add_option("--final-K", tf.final_k, "Importance samples for the final report");
    tr->add_option("--inner-window", tf.inner_window, "Aggressive probe window");
    tr->add_option("--mi-plateau", tf.mi_plateau, "Aggressive exit threshold on MI gain");

    // evaluate ----------------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split");
    attach_config(ev);
    std::string ev_ckpt, ev_vocab, ev_data, ev_split = "test", ev_out;
    int ev_k = 500, ev_batch = 32;
    uint64_t ev_seed = 1;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
    ev->add_option("--vocab", ev_vocab, "Vocabulary path (default: vocab.txt next to the checkpoint)");
    ev->add_option("--data", ev_data, "Corpus directory")->required();
    ev->add_option("--split", ev_split, "train|valid|test");
    ev->add_option("--K", ev_k, "Importance-weighted samples");
    ev->add_option("--seed", ev_seed, "Evaluation seed");
    ev->add_option("--batch-size", ev_batch, "Batch size");
    ev->add_option("--out", ev_out, "Directory for report.json and the metrics.csv row")
        ->envname("SEQVAE_OUT_ROOT");

    // dual-kl-check -------------------------------------------------------------
    auto* dk = app.add_subcommand("dual-kl-check", "Fenchel-dual KL lower-bound harness");
    attach_config(dk);
    std::string dk_ckpt, dk_vocab, dk_data, dk_split = "valid", dk_out;
    DualKlOptions dk_opt;
    uint64_t dk_seed = 1;
    dk->add_option("--checkpoint", dk_ckpt, "Checkpoint path")->required();
    dk->add_option("--vocab", dk_vocab, "Vocabulary path (default: vocab.txt next to the checkpoint)");
    dk->add_option("--data", dk_data, "Corpus directory")->required();
    dk->add_option("--split", dk_split, "train|valid|test");
    dk->add_option("--items", dk_opt.max_items, "Datapoints for the gap report");
    dk->add_option("--steps", dk_opt.train_steps, "Dual training steps");
    dk->add_option("--samples", dk_opt.samples_per_step, "Samples per training step");
    dk->add_option("--final-samples", dk_opt.final_samples, "Samples for the final estimates");
    dk->add_option("--lr", dk_opt.learning_rate, "Dual training learning rate");
    dk->add_option("--log-every", dk_opt.log_every, "Objective trace cadence");
    dk->add_option("--seed", dk_seed, "Seed");
    dk->add_option("--out", dk_out, "Directory for bound_gap.csv/json")->envname("SEQVAE_OUT_ROOT");

    // compare -------------------------------------------------------------------
    auto* cp = app.add_subcommand("compare", "Tabulate run summaries");
    attach_config(cp);
    std::vector<std::string> cp_dirs;
    std::string cp_out;
    cp->add_option("runs", cp_dirs, "Run directories (each containing summary.json)")->required();
    cp->add_option("--out", cp_out, "CSV output path");

    std::vector<std::string> args;
    try {
        args = expand_config_args(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    try {
        // CLI11 parses the reversed vector form.
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitUsage;
    }

    kernels::set_backend(backend == "serial" ? kernels::Backend::Serial : kernels::Backend::Parallel);

    try {
        if (gen->parsed()) return cmd_gen_corpus(params, gen_seed, gen_out);
        if (tr->parsed()) return cmd_train(tr, tf);
        if (ev->parsed()) {
            if (ev_vocab.empty()) ev_vocab = (fs::path(ev_ckpt).parent_path() / "vocab.txt").string();
            return cmd_evaluate(ev_ckpt, ev_vocab, ev_data, ev_split, ev_k, ev_seed, ev_batch, ev_out);
        }
        if (dk->parsed()) {
            if (dk_vocab.empty()) dk_vocab = (fs::path(dk_ckpt).parent_path() / "vocab.txt").string();
            return cmd_dual_kl_check(dk_ckpt, dk_vocab, dk_data, dk_split, dk_opt, dk_seed, dk_out);
        }
        if (cp->parsed()) return cmd_compare(cp_dirs, cp_out);
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
