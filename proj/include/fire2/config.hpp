#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fire2/far.hpp"
#include "fire2/featnet.hpp"
#include "fire2/objectives.hpp"
#include "fire2/schedule.hpp"
#include "fire2/synthdata.hpp"

namespace fire2 {

struct FfmSettings {
    double radius = 0.4;
    int min_samples = 1;
    double tau = 1.0 / 16.0;
    double epsilon = 0.1;
    bool use_ground_truth_clothing = false;  // "w/ Cloth." ablation
    int fixed_k = 0;                         // > 0: per-identity k-means instead of DBSCAN

    void validate() const;
};

struct EvalSettings {
    int max_rank = 10;

    void validate() const;
};

/// Union of all module configs; validated atomically and echoed verbatim into
/// every run directory.
struct RunConfig {
    std::string run_name = "run";
    uint64_t seed = 7;
    bool deterministic = true;
    int eval_every = 0;       // 0: evaluate only at the end
    bool dump_embeddings = false;
    double triplet_margin = 0.3;
    std::string dataset_dir;

    synthdata::GenerateConfig data;
    featnet::BackboneConfig backbone;
    FfmSettings ffm;
    far::FarConfig far;
    objectives::LossWeights losses;
    trainer::TrainSchedule schedule;
    EvalSettings eval;

    void validate() const;  // throws ConfigError with every failure listed
    std::vector<std::string> validation_errors() const;
};

/// Strict parse: unknown keys anywhere are errors; all problems are reported
/// in one ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Canonical JSON echo (sorted keys); the basis of config_hash.
std::string dump_run_config(const RunConfig& cfg);
uint64_t config_hash(const RunConfig& cfg);

/// Table-8 presets. Throws ConfigError on unknown names.
void apply_preset(RunConfig& cfg, const std::string& preset);
std::vector<std::string> preset_names();

}  // namespace fire2
