#include "seqvae/recipes.hpp"

#include <filesystem>
#include <fstream>

#include "seqvae/checkpoint.hpp"

namespace seqvae {

std::vector<std::string> recipe_names() {
    return {"baseline-last", "worddrop", "cosreg",   "avgpool", "maxpool",
            "abspool",       "aggressive", "cyclical", "no-anneal", "toy3d"};
}

Recipe make_recipe(const std::string& name) {
    Recipe r;
    r.name = name;
    r.model.embed_dim = 24;
    r.model.hidden_dim = 32;
    r.model.latent_dim = 8;
    r.model.aggregation = AggregationMethod::LastHidden;
    r.train.max_epochs = 20;
    r.warmup_epochs = 8;

    if (name == "baseline-last") {
        return r;
    }
    if (name == "worddrop") {
        r.model.word_dropout = 0.4;
        return r;
    }
    if (name == "cosreg") {
        r.model.lambda_cos = 1.0;
        return r;
    }
    if (name == "avgpool") {
        r.model.aggregation = AggregationMethod::AvgPool;
        return r;
    }
    if (name == "maxpool") {
        r.model.aggregation = AggregationMethod::MaxPool;
        return r;
    }
    if (name == "abspool") {
        r.model.aggregation = AggregationMethod::AbsPool;
        return r;
    }
    if (name == "aggressive") {
        r.train.scheme = TrainScheme::Aggressive;
        return r;
    }
    if (name == "cyclical") {
        r.anneal = "cyclical";
        return r;
    }
    if (name == "no-anneal") {
        r.model.aggregation = AggregationMethod::MaxPool;
        r.anneal = "none";
        return r;
    }
    if (name == "toy3d") {
        r.model.embed_dim = 16;
        r.model.hidden_dim = 3;
        r.model.latent_dim = 3;
        return r;
    }
    throw ContractError("unknown recipe '" + name + "'");
}

AnnealSchedule build_schedule(const Recipe& recipe, int64_t batches_per_epoch) {
    if (recipe.anneal == "none") return AnnealSchedule::constant(1.0);
    if (recipe.anneal == "linear") {
        return AnnealSchedule::linear(std::max<int64_t>(1, recipe.warmup_epochs * batches_per_epoch));
    }
    if (recipe.anneal == "cyclical") {
        int64_t total = std::max<int64_t>(1, static_cast<int64_t>(recipe.train.max_epochs) * batches_per_epoch);
        return AnnealSchedule::cyclical(recipe.cycles, total, recipe.ramp_fraction);
    }
    throw ContractError("unknown anneal kind '" + recipe.anneal + "' (expected none|linear|cyclical)");
}

RunResult run_recipe(const Recipe& recipe, const Corpus& corpus, uint64_t seed,
                     const std::string& out_dir) {
    Recipe r = recipe;
    int64_t batches_per_epoch =
        (static_cast<int64_t>(corpus.train.size()) + r.train.batch_size - 1) / r.train.batch_size;
    r.train.schedule = build_schedule(r, batches_per_epoch);
    r.train.seed = seed;
    r.train.out_dir = out_dir;

    Rng root(seed);
    Rng init_rng = root.fork("init");
    VaeModel model = VaeModel::init(r.model, init_rng);

    RunResult result;
    result.recipe = r;
    result.log = train(model, corpus, r.train);

    // Final report comes from the retained best checkpoint when one exists;
    // otherwise from the in-memory final state.
    VaeModel best = result.log.checkpoint_path.empty() ? model.clone()
                                                       : load_checkpoint(result.log.checkpoint_path);
    EvaluateOptions ev;
    ev.K = r.final_K;
    ev.batch_size = r.train.batch_size;
    ev.au_threshold = r.train.au_threshold;
    ev.dispersion_max_items = r.train.dispersion_max_items;
    ev.iwae_max_items = -1;
    ev.split_tag = "valid";
    Rng final_rng = root.fork("final-eval");
    result.final_valid = evaluate(best, corpus.valid, ev, final_rng);

    nlohmann::json summary;
    summary["format_version"] = 1;
    summary["recipe"] = r.name;
    summary["seed"] = seed;
    summary["model"] = vae_config_to_json(model.cfg);
    summary["train"] = {{"learning_rate", r.train.learning_rate},
                        {"lr_decay_factor", r.train.lr_decay_factor},
                        {"grad_clip_norm", r.train.grad_clip_norm},
                        {"max_epochs", r.train.max_epochs},
                        {"patience", r.train.patience},
                        {"batch_size", r.train.batch_size},
                        {"scheme", r.train.scheme == TrainScheme::Aggressive ? "aggressive" : "standard"},
                        {"anneal", r.anneal},
                        {"warmup_epochs", r.warmup_epochs},
                        {"cycles", r.cycles},
                        {"ramp_fraction", r.ramp_fraction},
                        {"schedule", r.train.schedule.describe()}};
    summary["data"] = {{"provenance", corpus.provenance},
                       {"train_size", corpus.train.size()},
                       {"valid_size", corpus.valid.size()},
                       {"test_size", corpus.test.size()}};
    summary["best"] = {{"epoch", result.log.best_epoch}, {"val_nll_bound", result.log.best_val_bound}};
    summary["final_valid"] = result.final_valid.to_json();
    summary["updates"] = result.log.total_updates;
    summary["skipped"] = result.log.total_skipped;
    int64_t enc_updates = 0, dec_updates = 0;
    if (!result.log.epochs.empty()) {
        enc_updates = result.log.epochs.back().enc_updates;
        dec_updates = result.log.epochs.back().dec_updates;
    }
    summary["enc_updates"] = enc_updates;
    summary["dec_updates"] = dec_updates;
    result.summary = summary;

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_train_log_csv(result.log, (std::filesystem::path(out_dir) / "train_log.csv").string());
        std::ofstream os(std::filesystem::path(out_dir) / "summary.json", std::ios::binary | std::ios::trunc);
        if (!os) throw ContractError("run_recipe: cannot write summary.json in " + out_dir);
        os << summary.dump(2) << "\n";
    }
    return result;
}

}  // namespace seqvae
