#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "seqvae/data.hpp"
#include "seqvae/train.hpp"

namespace seqvae {

// Named experiment presets. Each preset plus a seed fully determines a run;
// individual fields can still be overridden before run_recipe.
struct Recipe {
    std::string name;
    VaeConfig model;  // vocab_size is filled from the data at run time
    TrainConfig train;
    std::string anneal = "linear";  // none | linear | cyclical
    int warmup_epochs = 4;
    int cycles = 4;
    double ramp_fraction = 0.5;
    int final_K = 50;  // K for the end-of-run validation report
};

std::vector<std::string> recipe_names();
Recipe make_recipe(const std::string& name);

AnnealSchedule build_schedule(const Recipe& recipe, int64_t batches_per_epoch);

struct RunResult {
    Recipe recipe;
    TrainLog log;
    MetricsReport final_valid;  // computed from the best checkpoint
    nlohmann::json summary;
};

// Trains the recipe on the corpus and, when out_dir is nonempty, writes
// best.ckpt, train_log.csv and summary.json there.
RunResult run_recipe(const Recipe& recipe, const Corpus& corpus, uint64_t seed,
                     const std::string& out_dir);

}  // namespace seqvae
