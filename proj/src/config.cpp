#include "fire2/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fire2/errors.hpp"
#include "fire2/rng.hpp"

namespace fire2 {

using nlohmann::json;

void FfmSettings::validate() const {
    if (radius <= 0.0) throw ConfigError("ffm.radius: must be > 0");
    if (min_samples < 1) throw ConfigError("ffm.min_samples: must be >= 1");
    if (tau <= 0.0) throw ConfigError("ffm.tau: must be > 0");
    if (epsilon < 0.0 || epsilon >= 1.0) throw ConfigError("ffm.epsilon: must be in [0,1)");
    if (fixed_k < 0) throw ConfigError("ffm.fixed_k: must be >= 0");
}

void EvalSettings::validate() const {
    if (max_rank < 1) throw ConfigError("eval.max_rank: must be >= 1");
}

namespace {

[[noreturn]] void raise_config_errors(const std::vector<std::string>& errors) {
    std::string joined =
        "invalid configuration (" + std::to_string(errors.size()) + " problems):";
    for (const auto& e : errors) joined += "\n  - " + e;
    throw ConfigError(joined);
}

}  // namespace

void RunConfig::validate() const {
    const std::vector<std::string> errors = validation_errors();
    if (!errors.empty()) raise_config_errors(errors);
}

std::vector<std::string> RunConfig::validation_errors() const {
    std::vector<std::string> errors;
    auto collect = [&](auto&& fn) {
        try {
            fn();
        } catch (const ConfigError& e) {
            errors.emplace_back(e.what());
        }
    };
    collect([&] {
        if (run_name.empty()) throw ConfigError("run_name: must not be empty");
    });
    collect([&] {
        if (eval_every < 0) throw ConfigError("eval_every: must be >= 0");
    });
    collect([&] {
        if (triplet_margin < 0.0) throw ConfigError("triplet_margin: must be >= 0");
    });
    collect([&] {
        // generator parameters are validated by generate_dataset; run the same
        // checks up front so `train` fails fast too
        synthdata::GenerateConfig probe = data;
        probe.seed = seed;
        (void)probe;
        if (data.n_identities < 2) throw ConfigError("data.n_identities: must be >= 2");
        if (!data.outfits_per_id.valid()) throw ConfigError("data.outfits_per_id: invalid range");
        if (!data.images_per_outfit.valid())
            throw ConfigError("data.images_per_outfit: invalid range");
        if (data.image_h < 8 || data.image_w < 8)
            throw ConfigError("data.image_size: each side must be >= 8");
    });
    collect([&] { backbone.validate(); });
    collect([&] { ffm.validate(); });
    collect([&] { far.validate(); });
    collect([&] { losses.validate(); });
    collect([&] { schedule.validate(); });
    collect([&] { eval.validate(); });
    collect([&] {
        auto [h, w] = backbone.output_hw(data.image_h, data.image_w);
        if (h < far.P_parts)
            throw ConfigError("far.P_parts: exceeds the backbone output height (" +
                              std::to_string(h) + ")");
        if (h < 1 || w < 1) throw ConfigError("backbone: output collapsed for this image size");
    });
    return errors;
}

namespace {

struct Reader {
    std::vector<std::string> errors;

    void unknown_keys(const json& j, const std::string& where,
                      const std::set<std::string>& known) {
        if (!j.is_object()) {
            errors.push_back(where + ": expected an object");
            return;
        }
        for (const auto& [key, _] : j.items())
            if (!known.count(key)) errors.push_back(where + "." + key + ": unknown key");
    }

    template <typename T>
    void get(const json& j, const std::string& where, const char* key, T& out) {
        if (!j.is_object() || !j.contains(key)) return;
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception&) {
            errors.push_back(where + "." + key + ": wrong type");
        }
    }

    void get_range(const json& j, const std::string& where, const char* key,
                   synthdata::IntRange& out) {
        if (!j.is_object() || !j.contains(key)) return;
        const json& v = j.at(key);
        if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() ||
            !v[1].is_number_integer()) {
            errors.push_back(where + "." + key + ": expected [lo, hi]");
            return;
        }
        out.lo = v[0];
        out.hi = v[1];
    }
};

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }

    RunConfig cfg;
    Reader r;
    r.unknown_keys(j, "config",
                   {"run_name", "seed", "deterministic", "eval_every", "dump_embeddings",
                    "triplet_margin", "dataset_dir", "data", "backbone", "ffm", "far", "losses",
                    "schedule", "eval"});
    r.get(j, "config", "run_name", cfg.run_name);
    r.get(j, "config", "seed", cfg.seed);
    r.get(j, "config", "deterministic", cfg.deterministic);
    r.get(j, "config", "eval_every", cfg.eval_every);
    r.get(j, "config", "dump_embeddings", cfg.dump_embeddings);
    r.get(j, "config", "triplet_margin", cfg.triplet_margin);
    r.get(j, "config", "dataset_dir", cfg.dataset_dir);

    if (j.contains("data")) {
        const json& d = j.at("data");
        r.unknown_keys(d, "data",
                       {"n_identities", "outfits_per_id", "images_per_outfit", "n_cameras",
                        "image_size", "train_id_fraction", "palette_pool", "noise_sigma",
                        "illum_jitter", "occluded_fraction", "occlusion_max", "storage"});
        r.get(d, "data", "n_identities", cfg.data.n_identities);
        r.get_range(d, "data", "outfits_per_id", cfg.data.outfits_per_id);
        r.get_range(d, "data", "images_per_outfit", cfg.data.images_per_outfit);
        r.get(d, "data", "n_cameras", cfg.data.n_cameras);
        if (d.contains("image_size")) {
            const json& v = d.at("image_size");
            if (!v.is_array() || v.size() != 2)
                r.errors.push_back("data.image_size: expected [H, W]");
            else {
                cfg.data.image_h = v[0];
                cfg.data.image_w = v[1];
            }
        }
        r.get(d, "data", "train_id_fraction", cfg.data.train_id_fraction);
        r.get(d, "data", "palette_pool", cfg.data.palette_pool);
        r.get(d, "data", "noise_sigma", cfg.data.noise_sigma);
        r.get(d, "data", "illum_jitter", cfg.data.illum_jitter);
        r.get(d, "data", "occluded_fraction", cfg.data.occluded_fraction);
        r.get(d, "data", "occlusion_max", cfg.data.occlusion_max);
        r.get(d, "data", "storage", cfg.data.storage);
    }

    if (j.contains("backbone")) {
        const json& b = j.at("backbone");
        r.unknown_keys(b, "backbone",
                       {"channels", "strides", "kernel", "pooling", "norm_eps",
                        "normalize_embedding"});
        r.get(b, "backbone", "channels", cfg.backbone.channels);
        r.get(b, "backbone", "strides", cfg.backbone.strides);
        r.get(b, "backbone", "kernel", cfg.backbone.kernel);
        if (b.contains("pooling")) {
            try {
                cfg.backbone.pooling = featnet::pooling_from_name(b.at("pooling").get<std::string>());
            } catch (const std::exception& e) {
                r.errors.emplace_back(e.what());
            }
        }
        r.get(b, "backbone", "norm_eps", cfg.backbone.norm_eps);
        r.get(b, "backbone", "normalize_embedding", cfg.backbone.normalize_embedding);
    }

    if (j.contains("ffm")) {
        const json& f = j.at("ffm");
        r.unknown_keys(f, "ffm",
                       {"radius", "min_samples", "tau", "epsilon", "use_ground_truth_clothing",
                        "fixed_k"});
        r.get(f, "ffm", "radius", cfg.ffm.radius);
        r.get(f, "ffm", "min_samples", cfg.ffm.min_samples);
        r.get(f, "ffm", "tau", cfg.ffm.tau);
        r.get(f, "ffm", "epsilon", cfg.ffm.epsilon);
        r.get(f, "ffm", "use_ground_truth_clothing", cfg.ffm.use_ground_truth_clothing);
        r.get(f, "ffm", "fixed_k", cfg.ffm.fixed_k);
    }

    if (j.contains("far")) {
        const json& f = j.at("far");
        r.unknown_keys(f, "far",
                       {"P_parts", "K_times", "variant", "sigma_floor", "mixup_alpha",
                        "stop_gradient_donor"});
        r.get(f, "far", "P_parts", cfg.far.P_parts);
        r.get(f, "far", "K_times", cfg.far.K_times);
        if (f.contains("variant")) {
            try {
                cfg.far.variant = far::variant_from_name(f.at("variant").get<std::string>());
            } catch (const std::exception& e) {
                r.errors.emplace_back(e.what());
            }
        }
        r.get(f, "far", "sigma_floor", cfg.far.sigma_floor);
        r.get(f, "far", "mixup_alpha", cfg.far.mixup_alpha);
        r.get(f, "far", "stop_gradient_donor", cfg.far.stop_gradient_donor);
    }

    if (j.contains("losses")) {
        const json& l = j.at("losses");
        r.unknown_keys(l, "losses", {"lambda1", "lambda2", "lambda3", "lambda4"});
        r.get(l, "losses", "lambda1", cfg.losses.lambda1);
        r.get(l, "losses", "lambda2", cfg.losses.lambda2);
        r.get(l, "losses", "lambda3", cfg.losses.lambda3);
        r.get(l, "losses", "lambda4", cfg.losses.lambda4);
    }

    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        r.unknown_keys(s, "schedule",
                       {"max_epochs", "t0", "warmup_epochs", "lr_start", "lr_peak", "decay_factor",
                        "decay_every", "ids_per_batch", "instances_per_id", "weight_decay",
                        "checkpoint_every"});
        r.get(s, "schedule", "max_epochs", cfg.schedule.max_epochs);
        r.get(s, "schedule", "t0", cfg.schedule.t0);
        r.get(s, "schedule", "warmup_epochs", cfg.schedule.warmup_epochs);
        r.get(s, "schedule", "lr_start", cfg.schedule.lr_start);
        r.get(s, "schedule", "lr_peak", cfg.schedule.lr_peak);
        r.get(s, "schedule", "decay_factor", cfg.schedule.decay_factor);
        r.get(s, "schedule", "decay_every", cfg.schedule.decay_every);
        r.get(s, "schedule", "ids_per_batch", cfg.schedule.ids_per_batch);
        r.get(s, "schedule", "instances_per_id", cfg.schedule.instances_per_id);
        r.get(s, "schedule", "weight_decay", cfg.schedule.weight_decay);
        r.get(s, "schedule", "checkpoint_every", cfg.schedule.checkpoint_every);
    }

    if (j.contains("eval")) {
        const json& e = j.at("eval");
        r.unknown_keys(e, "eval", {"max_rank"});
        r.get(e, "eval", "max_rank", cfg.eval.max_rank);
    }

    // structural parse errors and semantic violations are reported together
    std::vector<std::string> errors = std::move(r.errors);
    for (const auto& e : cfg.validation_errors()) errors.push_back(e);
    if (!errors.empty()) raise_config_errors(errors);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
    json j = {
        {"run_name", cfg.run_name},
        {"seed", cfg.seed},
        {"deterministic", cfg.deterministic},
        {"eval_every", cfg.eval_every},
        {"dump_embeddings", cfg.dump_embeddings},
        {"triplet_margin", cfg.triplet_margin},
        {"dataset_dir", cfg.dataset_dir},
        {"data",
         {{"n_identities", cfg.data.n_identities},
          {"outfits_per_id", {cfg.data.outfits_per_id.lo, cfg.data.outfits_per_id.hi}},
          {"images_per_outfit", {cfg.data.images_per_outfit.lo, cfg.data.images_per_outfit.hi}},
          {"n_cameras", cfg.data.n_cameras},
          {"image_size", {cfg.data.image_h, cfg.data.image_w}},
          {"train_id_fraction", cfg.data.train_id_fraction},
          {"palette_pool", cfg.data.palette_pool},
          {"noise_sigma", cfg.data.noise_sigma},
          {"illum_jitter", cfg.data.illum_jitter},
          {"occluded_fraction", cfg.data.occluded_fraction},
          {"occlusion_max", cfg.data.occlusion_max},
          {"storage", cfg.data.storage}}},
        {"backbone",
         {{"channels", cfg.backbone.channels},
          {"strides", cfg.backbone.strides},
          {"kernel", cfg.backbone.kernel},
          {"pooling", featnet::pooling_name(cfg.backbone.pooling)},
          {"norm_eps", cfg.backbone.norm_eps},
          {"normalize_embedding", cfg.backbone.normalize_embedding}}},
        {"ffm",
         {{"radius", cfg.ffm.radius},
          {"min_samples", cfg.ffm.min_samples},
          {"tau", cfg.ffm.tau},
          {"epsilon", cfg.ffm.epsilon},
          {"use_ground_truth_clothing", cfg.ffm.use_ground_truth_clothing},
          {"fixed_k", cfg.ffm.fixed_k}}},
        {"far",
         {{"P_parts", cfg.far.P_parts},
          {"K_times", cfg.far.K_times},
          {"variant", far::variant_name(cfg.far.variant)},
          {"sigma_floor", cfg.far.sigma_floor},
          {"mixup_alpha", cfg.far.mixup_alpha},
          {"stop_gradient_donor", cfg.far.stop_gradient_donor}}},
        {"losses",
         {{"lambda1", cfg.losses.lambda1},
          {"lambda2", cfg.losses.lambda2},
          {"lambda3", cfg.losses.lambda3},
          {"lambda4", cfg.losses.lambda4}}},
        {"schedule",
         {{"max_epochs", cfg.schedule.max_epochs},
          {"t0", cfg.schedule.t0},
          {"warmup_epochs", cfg.schedule.warmup_epochs},
          {"lr_start", cfg.schedule.lr_start},
          {"lr_peak", cfg.schedule.lr_peak},
          {"decay_factor", cfg.schedule.decay_factor},
          {"decay_every", cfg.schedule.decay_every},
          {"ids_per_batch", cfg.schedule.ids_per_batch},
          {"instances_per_id", cfg.schedule.instances_per_id},
          {"weight_decay", cfg.schedule.weight_decay},
          {"checkpoint_every", cfg.schedule.checkpoint_every}}},
        {"eval", {{"max_rank", cfg.eval.max_rank}}},
    };
    return j.dump(2);
}

uint64_t config_hash(const RunConfig& cfg) { return Rng::fnv1a(dump_run_config(cfg)); }

void apply_preset(RunConfig& cfg, const std::string& preset) {
    if (preset == "fire2") return;  // full method is the default config
    if (preset == "baseline") {     // Table-8 "Baseline w/ Tri."
        cfg.losses.lambda3 = 0.0;
        cfg.losses.lambda4 = 0.0;
        cfg.far.variant = far::Variant::none;
        return;
    }
    if (preset == "baseline-id") {  // Table-8 "Baseline": identity loss only
        cfg.losses.lambda2 = 0.0;
        cfg.losses.lambda3 = 0.0;
        cfg.losses.lambda4 = 0.0;
        cfg.far.variant = far::Variant::none;
        cfg.schedule.t0 = cfg.schedule.max_epochs;
        return;
    }
    if (preset == "ours-w-cloth") {
        cfg.ffm.use_ground_truth_clothing = true;
        return;
    }
    if (preset == "ours-wo-attr") {
        cfg.losses.lambda3 = 0.0;
        return;
    }
    if (preset == "ours-wo-far") {
        cfg.losses.lambda4 = 0.0;
        cfg.far.variant = far::Variant::none;
        return;
    }
    if (preset == "ours-w-mixup") {
        cfg.far.variant = far::Variant::mixup;
        return;
    }
    if (preset == "far-within-id") {
        cfg.far.variant = far::Variant::within_id;
        return;
    }
    if (preset == "far-between-ids") {
        cfg.far.variant = far::Variant::between_ids;
        return;
    }
    throw ConfigError("unknown preset '" + preset + "'; available: fire2, baseline, baseline-id, "
                      "ours-w-cloth, ours-wo-attr, ours-wo-far, ours-w-mixup, far-within-id, "
                      "far-between-ids");
}

std::vector<std::string> preset_names() {
    return {"fire2",        "baseline",      "baseline-id",  "ours-w-cloth", "ours-wo-attr",
            "ours-wo-far",  "ours-w-mixup",  "far-within-id", "far-between-ids"};
}

}  // namespace fire2
