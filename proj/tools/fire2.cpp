// fire2: synthetic cloth-changing re-id benchmark - generate data, train the
// fine-grained representation/recomposition model, evaluate retrieval, inspect
// clusters, and sweep hyperparameters.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fire2/checkpoint.hpp"
#include "fire2/config.hpp"
#include "fire2/errors.hpp"
#include "fire2/evalkit.hpp"
#include "fire2/ffm.hpp"
#include "fire2/svgplot.hpp"
#include "fire2/trainer.hpp"

namespace fs = std::filesystem;
using namespace fire2;

namespace {

constexpr const char* kVersion = "fire2 0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonFlags {
    std::string config_path;
    std::string preset;
    std::string out;
    std::string data_dir;
    int64_t seed = -1;  // -1: keep config value
    bool deterministic = false;
    bool force = false;
    bool dump_embeddings = false;
    int eval_every = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file");
    cmd->add_option("--preset", f.preset, "named configuration preset");
    cmd->add_option("--seed", f.seed, "override the config seed");
    cmd->add_flag("--deterministic", f.deterministic, "force single-stream deterministic mode");
    cmd->add_option("--out", f.out, "output directory")->required();
    cmd->add_flag("--force", f.force, "overwrite existing outputs");
    cmd->add_flag("--dump-embeddings", f.dump_embeddings,
                  "write per-sample embeddings for offline analysis");
    cmd->add_option("--eval-every", f.eval_every, "evaluate retrieval every N epochs");
}

RunConfig assemble_config(const CommonFlags& f) {
    RunConfig cfg = f.config_path.empty() ? RunConfig{} : load_run_config(f.config_path);
    if (!f.preset.empty()) apply_preset(cfg, f.preset);
    if (f.seed >= 0) cfg.seed = static_cast<uint64_t>(f.seed);
    if (f.deterministic) cfg.deterministic = true;
    if (f.eval_every >= 0) cfg.eval_every = f.eval_every;
    if (f.dump_embeddings) cfg.dump_embeddings = true;
    if (!f.data_dir.empty()) cfg.dataset_dir = f.data_dir;
    cfg.data.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

void write_run_json(const std::string& out_dir, const RunConfig& cfg, const std::string& command,
                    double wall_seconds) {
    nlohmann::json j = {
        {"command", command},
        {"config_hash", config_hash(cfg)},
        {"code_version", kVersion},
        {"seed", cfg.seed},
        {"wall_time_sec", wall_seconds},
    };
    std::ofstream os(fs::path(out_dir) / "run.json");
    os << j.dump(2) << "\n";
}

class Stopwatch {
  public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

RunConfig config_from_checkpoint(const checkpoint::Bundle& bundle, const CommonFlags& f) {
    RunConfig cfg = parse_run_config(bundle.config_json);
    if (!f.config_path.empty()) {
        RunConfig given = load_run_config(f.config_path);
        if (config_hash(given) != bundle.config_hash)
            throw ConfigError("config-hash mismatch: --config does not match the checkpoint");
    }
    return cfg;
}

// ---------------------------------------------------------------------------

int cmd_gen(const CommonFlags& f) {
    Stopwatch watch;
    RunConfig cfg = assemble_config(f);
    const fs::path out = f.out;
    if (fs::exists(out / "manifest.json") && !f.force)
        throw ConfigError("output dataset already exists at " + f.out +
                          " (pass --force to overwrite)");
    synthdata::DatasetBundle bundle = synthdata::generate_dataset(cfg.data);
    synthdata::save_dataset(bundle, f.out, cfg.data.storage);
    write_run_json(f.out, cfg, "gen", watch.seconds());
    std::cout << "generated " << bundle.total_images() << " images / "
              << bundle.total_identities() << " identities into " << f.out << "\n"
              << "  train: " << bundle.train.N << "  query: " << bundle.query.N
              << "  gallery: " << bundle.gallery.N << "\n";
    return kExitOk;
}

int cmd_train(const CommonFlags& f, const std::string& resume) {
    Stopwatch watch;
    RunConfig cfg = assemble_config(f);
    if (cfg.dataset_dir.empty())
        throw ConfigError("train: no dataset (pass --data DIR or set dataset_dir in the config)");
    synthdata::DatasetBundle data = synthdata::load_dataset(cfg.dataset_dir);
    if (fs::exists(fs::path(f.out) / "epochs.csv") && resume.empty() && !f.force)
        throw ConfigError("output run directory " + f.out +
                          " already contains a run (pass --force to overwrite)");

    trainer::TrainResult result = trainer::run_training(cfg, data, f.out, resume);
    write_run_json(f.out, cfg, "train", watch.seconds());
    std::cout << "trained " << result.epochs_completed << " epochs; N_s=" << result.final_N_s
              << "\n"
              << "  standard       Rank-1 " << result.standard_report.rank1() << "  mAP "
              << result.standard_report.mAP << "\n"
              << "  cloth-changing Rank-1 " << result.cc_report.rank1() << "  mAP "
              << result.cc_report.mAP << "\n"
              << "  checkpoint: " << result.checkpoint_path << "\n";
    return kExitOk;
}

int cmd_eval(const CommonFlags& f, const std::string& ckpt_path, const std::string& protocol) {
    Stopwatch watch;
    checkpoint::Bundle bundle = checkpoint::load(ckpt_path);
    RunConfig cfg = config_from_checkpoint(bundle, f);
    if (f.data_dir.empty()) throw ConfigError("eval: --data DIR is required");
    synthdata::DatasetBundle data = synthdata::load_dataset(f.data_dir);
    if (data.image_h != cfg.data.image_h || data.image_w != cfg.data.image_w)
        throw ConfigError("eval: dataset image size does not match the checkpoint config");
    featnet::Backbone net = trainer::backbone_from_checkpoint(bundle, cfg);

    auto [std_rep, cc_rep] = trainer::evaluate_bundle(net, data, cfg.eval.max_rank);
    fs::create_directories(f.out);

    auto print_row = [](const evalkit::EvalReport& r) {
        std::cout << "  " << evalkit::protocol_name(r.protocol) << ": Rank-1 " << r.rank1()
                  << "  Rank-5 " << r.rank_at(std::min<int>(5, static_cast<int>(r.cmc.size())))
                  << "  mAP " << r.mAP << "  (queries " << r.num_queries << ", skipped "
                  << r.num_skipped << ")\n";
    };
    std::cout << "evaluated checkpoint from epoch " << bundle.epoch << "\n";
    if (protocol == "standard" || protocol == "both") {
        std::ofstream os(fs::path(f.out) / "eval_standard.json");
        os << std_rep.to_json() << "\n";
        print_row(std_rep);
    }
    if (protocol == "cloth_changing" || protocol == "both") {
        std::ofstream os(fs::path(f.out) / "eval_cloth_changing.json");
        os << cc_rep.to_json() << "\n";
        print_row(cc_rep);
    }
    write_run_json(f.out, cfg, "eval", watch.seconds());
    return kExitOk;
}

int cmd_cluster_inspect(const CommonFlags& f, const std::string& ckpt_path) {
    Stopwatch watch;
    checkpoint::Bundle bundle = checkpoint::load(ckpt_path);
    RunConfig cfg = config_from_checkpoint(bundle, f);
    if (f.data_dir.empty()) throw ConfigError("cluster-inspect: --data DIR is required");
    synthdata::DatasetBundle data = synthdata::load_dataset(f.data_dir);
    featnet::Backbone net = trainer::backbone_from_checkpoint(bundle, cfg);

    auto raw = trainer::extract_embeddings(net, data.train.records);
    std::map<int64_t, featnet::Embedding> embs;
    for (auto& [sid, e] : raw) embs[sid] = e.normalized_copy();
    std::map<int64_t, int> labels;
    for (const auto& r : data.train.records) labels[r.sample_id] = r.identity_id;
    ffm::ClusterTable table =
        ffm::cluster_identities(embs, labels, cfg.ffm.radius, cfg.ffm.min_samples);

    fs::create_directories(f.out);
    std::ofstream os(fs::path(f.out) / "clusters.json");
    os << ffm::cluster_inspect_json(table, data.train) << "\n";
    write_run_json(f.out, cfg, "cluster-inspect", watch.seconds());
    std::cout << "N_s = " << table.N_s << " fine-grained clusters over " << table.n_s.size()
              << " identities -> " << (fs::path(f.out) / "clusters.json").string() << "\n";
    return kExitOk;
}

void apply_axis(RunConfig& cfg, const std::string& axis, double v) {
    if (axis == "epsilon")
        cfg.ffm.epsilon = v;
    else if (axis == "inv_tau")
        cfg.ffm.tau = 1.0 / v;
    else if (axis == "lambda4")
        cfg.losses.lambda4 = v;
    else if (axis == "P_parts")
        cfg.far.P_parts = static_cast<int>(v);
    else if (axis == "K_times")
        cfg.far.K_times = static_cast<int>(v);
    else if (axis == "radius")
        cfg.ffm.radius = v;
    else if (axis == "fixed_k")
        cfg.ffm.fixed_k = static_cast<int>(v);
    else
        throw ConfigError("sweep: unknown axis '" + axis +
                          "' (epsilon, inv_tau, lambda4, P_parts, K_times, radius, fixed_k)");
}

int cmd_sweep(const CommonFlags& f, const std::string& axis, const std::string& values_csv) {
    Stopwatch watch;
    RunConfig base = assemble_config(f);

    std::vector<double> values;
    std::stringstream ss(values_csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) values.push_back(std::stod(tok));
    if (values.empty()) throw ConfigError("sweep: --values must list at least one value");

    fs::create_directories(f.out);
    synthdata::DatasetBundle data = base.dataset_dir.empty()
                                        ? synthdata::generate_dataset(base.data)
                                        : synthdata::load_dataset(base.dataset_dir);

    std::ofstream csv(fs::path(f.out) / "sweep.csv");
    csv << "value,std_rank1,std_mAP,cc_rank1,cc_mAP,status\n";
    std::vector<double> xs;
    plot::Series s_std_r1{"standard Rank-1", {}}, s_std_map{"standard mAP", {}},
        s_cc_r1{"cloth-ch. Rank-1", {}}, s_cc_map{"cloth-ch. mAP", {}};
    int failures = 0;

    for (double v : values) {
        RunConfig cfg = base;
        apply_axis(cfg, axis, v);
        std::ostringstream dir;
        dir << axis << "_" << v;
        const std::string run_dir = (fs::path(f.out) / dir.str()).string();
        try {
            cfg.validate();
            trainer::TrainResult r = trainer::run_training(cfg, data, run_dir);
            csv << v << "," << r.standard_report.rank1() << "," << r.standard_report.mAP << ","
                << r.cc_report.rank1() << "," << r.cc_report.mAP << ",ok\n";
            xs.push_back(v);
            s_std_r1.ys.push_back(r.standard_report.rank1());
            s_std_map.ys.push_back(r.standard_report.mAP);
            s_cc_r1.ys.push_back(r.cc_report.rank1());
            s_cc_map.ys.push_back(r.cc_report.mAP);
            std::cout << axis << "=" << v << ": cloth-changing mAP " << r.cc_report.mAP << "\n";
        } catch (const std::exception& e) {
            ++failures;
            csv << v << ",,,,,failed: " << e.what() << "\n";
            std::cerr << "sweep value " << v << " failed: " << e.what() << "\n";
        }
        csv.flush();
    }

    if (!xs.empty())
        plot::write_line_plot((fs::path(f.out) / "sweep.svg").string(), "sweep over " + axis, axis,
                              "metric", xs, {s_std_r1, s_std_map, s_cc_r1, s_cc_map});
    write_run_json(f.out, base, "sweep", watch.seconds());
    std::cout << "sweep finished: " << xs.size() << " ok, " << failures << " failed -> "
              << (fs::path(f.out) / "sweep.csv").string() << "\n";
    return failures == 0 ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fine-grained representation and recomposition on a synthetic cloth-changing "
                 "re-id benchmark"};
    app.require_subcommand(1);

    CommonFlags gen_f, train_f, eval_f, inspect_f, sweep_f;
    std::string resume, ckpt, protocol = "both", axis, values;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset directory");
    add_common(gen, gen_f);

    CLI::App* train = app.add_subcommand("train", "train a model on a generated dataset");
    add_common(train, train_f);
    train->add_option("--data", train_f.data_dir, "dataset directory (from `fire2 gen`)");
    train->add_option("--resume", resume, "checkpoint to resume from");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on query/gallery splits");
    add_common(eval, eval_f);
    eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval->add_option("--data", eval_f.data_dir, "dataset directory")->required();
    eval->add_option("--protocol", protocol, "standard | cloth_changing | both")
        ->check(CLI::IsMember({"standard", "cloth_changing", "both"}));

    CLI::App* inspect =
        app.add_subcommand("cluster-inspect", "dump per-identity fine-grained clusters as JSON");
    add_common(inspect, inspect_f);
    inspect->add_option("--ckpt", ckpt, "checkpoint file")->required();
    inspect->add_option("--data", inspect_f.data_dir, "dataset directory")->required();

    CLI::App* sweep = app.add_subcommand("sweep", "train/evaluate across one hyperparameter axis");
    add_common(sweep, sweep_f);
    sweep->add_option("--data", sweep_f.data_dir, "dataset directory (generated if omitted)");
    sweep
        ->add_option("--axis", axis,
                     "epsilon | inv_tau | lambda4 | P_parts | K_times | radius | fixed_k")
        ->required();
    sweep->add_option("--values", values, "comma-separated axis values")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_f);
        if (train->parsed()) return cmd_train(train_f, resume);
        if (eval->parsed()) return cmd_eval(eval_f, ckpt, protocol);
        if (inspect->parsed()) return cmd_cluster_inspect(inspect_f, ckpt);
        if (sweep->parsed()) return cmd_sweep(sweep_f, axis, values);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
