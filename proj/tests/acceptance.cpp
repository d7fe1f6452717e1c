// Acceptance suite: every release criterion as an executable check, one
// PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "fire2/checkpoint.hpp"
#include "fire2/config.hpp"
#include "fire2/errors.hpp"
#include "fire2/evalkit.hpp"
#include "fire2/far.hpp"
#include "fire2/ffm.hpp"
#include "fire2/objectives.hpp"
#include "fire2/trainer.hpp"
#include "oracles.hpp"

using namespace fire2;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// The end-to-end benchmark (criterion 7). The reference run of this exact
// configuration measured 3-seed mean cloth-changing mAP of
//   full 0.4028 | w/o L_attr 0.3704 | baseline w/ tri 0.3456 | w/o FAR 0.3253
// i.e. gaps of +3.2, +5.7 and +7.7 points. The thresholds below keep a
// cushion under those measurements; the orderings themselves are the
// contract and the baseline gap may never drop below 3 points.
constexpr int kE2eSeeds[3] = {7, 8, 9};
constexpr double kPinnedFullVsBaselineGap = 3.0;  // mAP points (measured +5.7)
constexpr double kPinnedFullVsWoFarGap = 3.0;     // mAP points (measured +7.7)
constexpr double kPinnedFullVsWoAttrGap = 1.0;    // mAP points (measured +3.2)

synthdata::GenerateConfig e2e_data_config() {
    synthdata::GenerateConfig d;
    d.seed = 7;
    d.n_identities = 20;           // 12 train + 8 evaluation identities
    d.train_id_fraction = 0.6;
    d.outfits_per_id = {3, 3};
    d.images_per_outfit = {6, 6};
    d.n_cameras = 4;
    return d;
}

RunConfig e2e_run_config() {
    RunConfig cfg;
    cfg.seed = 7;
    cfg.data = e2e_data_config();
    cfg.dataset_dir = "<in-memory>";
    cfg.ffm.radius = 0.05;
    cfg.ffm.epsilon = 0.3;
    cfg.ffm.tau = 0.25;
    cfg.far.K_times = 2;
    cfg.losses.lambda3 = 0.5;
    cfg.losses.lambda4 = 1.0;
    cfg.schedule.max_epochs = 40;
    cfg.schedule.t0 = 3;
    cfg.schedule.warmup_epochs = 3;
    cfg.schedule.decay_every = 25;
    cfg.schedule.lr_start = 5e-5;
    cfg.schedule.lr_peak = 7e-3;
    return cfg;
}

// ---------------------------------------------------------------------------

struct Check {
    int id;
    std::string name;
    std::function<void(std::ostringstream&)> run;  // throws on failure
};

void require(bool ok, const std::string& what) {
    if (!ok) throw std::runtime_error(what);
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, scale);
    return t;
}

featnet::Embedding unit_embedding(std::vector<double> v) {
    featnet::Embedding e;
    e.vector = std::move(v);
    l2_normalize(e.vector);
    e.normalized = true;
    return e;
}

std::map<int64_t, featnet::Embedding> random_unit_embeddings(int n, int dim, Rng& rng) {
    std::map<int64_t, featnet::Embedding> out;
    for (int i = 0; i < n; ++i) {
        std::vector<double> v(static_cast<size_t>(dim));
        for (double& x : v) x = rng.normal();
        out[i] = unit_embedding(std::move(v));
    }
    return out;
}

RunConfig micro_run_config() {
    RunConfig cfg;
    cfg.seed = 11;
    cfg.data.n_identities = 5;
    cfg.data.outfits_per_id = {2, 2};
    cfg.data.images_per_outfit = {3, 3};
    cfg.data.n_cameras = 3;
    cfg.data.train_id_fraction = 0.8;
    cfg.schedule.max_epochs = 5;
    cfg.schedule.t0 = 2;
    cfg.schedule.warmup_epochs = 2;
    cfg.schedule.ids_per_batch = 4;
    cfg.schedule.instances_per_id = 2;
    cfg.schedule.lr_peak = 2e-3;
    cfg.schedule.lr_start = 2e-5;
    cfg.schedule.checkpoint_every = 1;
    return cfg;
}

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("fire2_acceptance_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// criteria

void criterion1_moments(std::ostringstream& note) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(999);
    for (int trial = 0; trial < 100; ++trial) {
        const int C = 1 + static_cast<int>(rng.uniform_int(0, 7));
        const int H = 1 + static_cast<int>(rng.uniform_int(0, 15));
        const int W = 1 + static_cast<int>(rng.uniform_int(0, 15));
        featnet::FeatureMap m{random_tensor({C, H, W}, rng, 2.5)};
        ffm::FineGrainedAttribute got = ffm::extract_attribute(m);
        for (int c = 0; c < C; ++c) {
            std::vector<double> plane(m.data.data.begin() + c * H * W,
                                      m.data.data.begin() + (c + 1) * H * W);
            const auto want = oracle::naive_mean_std(plane);
            require(std::abs(got.mu[static_cast<size_t>(c)] - want.mu) < 1e-6, "mu mismatch");
            require(std::abs(got.sigma[static_cast<size_t>(c)] - want.sigma) < 1e-6,
                    "sigma mismatch");
        }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    require(secs < 1.0, "runtime exceeded 1 s");
    note << "100 maps vs double-loop oracle, " << secs << " s";
}

void criterion2_smoothing(std::ostringstream& note) {
    for (int pe = 0; pe <= 9; ++pe) {
        const double eps = pe * 0.1;
        for (int P = 1; P <= 8; ++P) {
            std::vector<int> set;
            for (int j = 0; j < P; ++j) set.push_back(j);
            auto w = ffm::smoothing_weights(0, set, eps);
            double sum = 0.0;
            for (auto& [l, v] : w) sum += v;
            require(std::abs(sum - 1.0) <= 1e-12, "weights do not sum to 1");
            for (auto& [l, v] : w)
                if (l != 0) require(w.at(0) > v, "target weight not strictly maximal");
        }
    }

    // eps = 0 and |P| = 1 reduce attr_loss to plain cross-entropy
    Rng rng(41);
    const int C = 8;
    auto features = random_unit_embeddings(6, C, rng);
    std::map<int64_t, int> labels;
    for (int i = 0; i < 6; ++i) labels[i] = i / 2;
    ffm::ClusterTable table = ffm::cluster_identities(features, labels, 1e-9, 1);  // N_s = 6
    Tensor emb = random_tensor({4, C}, rng);
    std::vector<int> pl = {0, 2, 4, 5};

    auto ce_oracle = [&](const ffm::AttrClassifierState& st) {
        std::vector<std::vector<double>> logits(4, std::vector<double>(6));
        for (int b = 0; b < 4; ++b) {
            std::vector<double> f(static_cast<size_t>(C));
            for (int c = 0; c < C; ++c) f[static_cast<size_t>(c)] = emb.at2(b, c);
            l2_normalize(f);
            for (int k = 0; k < 6; ++k) {
                double d = 0.0;
                for (int c = 0; c < C; ++c) d += f[static_cast<size_t>(c)] * st.weights.value.at2(k, c);
                logits[static_cast<size_t>(b)][static_cast<size_t>(k)] = d / st.tau;
            }
        }
        return oracle::naive_cross_entropy(logits, pl);
    };
    ffm::AttrClassifierState st0 = ffm::init_attr_classifier(table, features, 1.0 / 16.0, 0.0);
    require(std::abs(ffm::attr_loss(emb, pl, table, st0, true) - ce_oracle(st0)) < 1e-8,
            "eps=0 does not equal CE");

    // |P| = 1: one cluster per identity, eps large
    std::map<int64_t, int> solo;
    for (int i = 0; i < 6; ++i) solo[i] = i;
    ffm::ClusterTable t1 = ffm::cluster_identities(features, solo, 2.0, 1);
    ffm::AttrClassifierState st1 = ffm::init_attr_classifier(t1, features, 1.0 / 16.0, 0.7);
    ffm::AttrClassifierState st1_ce = ffm::init_attr_classifier(t1, features, 1.0 / 16.0, 0.0);
    require(std::abs(ffm::attr_loss(emb, pl, t1, st1, true) -
                     ffm::attr_loss(emb, pl, t1, st1_ce, true)) < 1e-8,
            "|P|=1 does not equal CE");
    note << "eps grid x |P| grid, CE reductions verified";
}

void criterion3_recompose(std::ostringstream& note) {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        featnet::FeatureMap x{random_tensor({3, 5, 4}, rng)};
        ffm::FineGrainedAttribute ax = ffm::extract_attribute(x);
        featnet::FeatureMap self = far::recompose(x, ax, ax, 1e-5);
        for (size_t i = 0; i < x.data.data.size(); ++i)
            require(std::abs(self.data.data[i] - x.data.data[i]) < 1e-6,
                    "self-recomposition is not the identity");

        featnet::FeatureMap d{random_tensor({3, 5, 4}, rng, 2.0)};
        ffm::FineGrainedAttribute ad = ffm::extract_attribute(d);
        featnet::FeatureMap out = far::recompose(x, ax, ad, 1e-5);
        ffm::FineGrainedAttribute got = ffm::extract_attribute(out);
        for (int c = 0; c < 3; ++c) {
            require(std::abs(got.mu[static_cast<size_t>(c)] - ad.mu[static_cast<size_t>(c)]) < 1e-5,
                    "transplanted mu mismatch");
            require(std::abs(got.sigma[static_cast<size_t>(c)] -
                             ad.sigma[static_cast<size_t>(c)]) < 1e-5,
                    "transplanted sigma mismatch");
        }
    }
    featnet::FeatureMap flat{Tensor({2, 3, 3})};
    flat.data.fill(1.5);
    ffm::FineGrainedAttribute af = ffm::extract_attribute(flat);
    ffm::FineGrainedAttribute ad;
    ad.mu = {4.0, -2.0};
    ad.sigma = {3.0, 0.0};
    featnet::FeatureMap out = far::recompose(flat, af, ad, 1e-5);
    require(out.data.all_finite(), "sigma=0 recomposition is not finite");
    note << "identity/transplant on 25 random maps, sigma=0 finite";
}

void criterion4_gradients(std::ostringstream& note) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(2025);
    const double tol = 1e-4;

    for (int trial = 0; trial < 20; ++trial) {
        // shared cast: small embedding batch with identities
        const int B = 6, C = 5, Np = 3;
        Tensor emb = random_tensor({B, C}, rng);
        std::vector<int> ids = {0, 0, 1, 1, 2, 2};
        objectives::IdentityClassifier clf(Np, C, rng.next_u64());

        {  // L_id
            Tape t;
            Var e = t.leaf(emb);
            t.backward(objectives::id_loss_node(t, e, ids, clf));
            auto f = [&](const Tensor& x) {
                objectives::IdentityClassifier c2 = clf;
                return objectives::id_loss(x, ids, c2);
            };
            require(oracle::grad_rel_err(f, emb, t.grad(e)) < tol, "L_id gradient");
        }
        {  // L_tri
            Tape t;
            Var e = t.leaf(emb);
            t.backward(t.triplet_batch_hard(e, ids, 0.3));
            auto f = [&](const Tensor& x) {
                Tape t2;
                return t2.value(t2.triplet_batch_hard(t2.leaf(x), ids, 0.3)).data[0];
            };
            require(oracle::grad_rel_err(f, emb, t.grad(e)) < tol, "L_tri gradient");
        }
        {  // L_attr over a random cluster table
            auto features = random_unit_embeddings(8, C, rng);
            std::map<int64_t, int> labels;
            for (int i = 0; i < 8; ++i) labels[i] = i / 3;
            ffm::ClusterTable table = ffm::cluster_identities(features, labels, 0.6, 1);
            ffm::AttrClassifierState st =
                ffm::init_attr_classifier(table, features, 1.0 / 16.0, 0.1);
            std::vector<int> pl;
            for (int b = 0; b < B; ++b) pl.push_back(b % table.N_s);
            Tape t;
            Var e = t.leaf(emb);
            t.backward(ffm::attr_loss_node(t, e, pl, table, st, true));
            auto f = [&](const Tensor& x) {
                ffm::AttrClassifierState s2 = st;
                return ffm::attr_loss(x, pl, table, s2, true);
            };
            require(oracle::grad_rel_err(f, emb, t.grad(e)) < tol, "L_attr gradient");
        }
        {  // L_r through the full recomposition pipeline
            Tensor fmap = random_tensor({4, 3, 4, 3}, rng);
            std::vector<int> rids = {0, 1, 2, 0};
            far::FarConfig fcfg;
            fcfg.P_parts = 2;
            Rng drng(trial + 1);
            far::RecompositionPlan plan = far::sample_donors({0, 1, 2, 3}, rids, fcfg, drng);
            objectives::IdentityClassifier rclf(3, 3, rng.next_u64());
            Tape t;
            Var fm = t.leaf(fmap);
            Var rec = far::recompose_batch_node(t, fm, plan, fcfg);
            t.backward(
                far::recomposed_id_loss_node(t, {rec}, rids, rclf, featnet::Pooling::max));
            auto f = [&](const Tensor& x) {
                Tape t2;
                objectives::IdentityClassifier c2 = rclf;
                Var rec2 = far::recompose_batch_node(t2, t2.constant(x), plan, fcfg);
                return t2
                    .value(far::recomposed_id_loss_node(t2, {rec2}, rids, c2,
                                                        featnet::Pooling::max))
                    .data[0];
            };
            require(oracle::grad_rel_err(f, fmap, t.grad(fm)) < tol, "L_r gradient");
        }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    require(secs < 30.0, "runtime exceeded 30 s");
    note << "20 instances per loss, " << secs << " s";
}

void criterion5_clustering(std::ostringstream& note) {
    Rng rng(57);

    // limiting radii
    auto features = random_unit_embeddings(40, 8, rng);
    std::map<int64_t, int> labels;
    for (int i = 0; i < 40; ++i) labels[i] = i % 5;
    ffm::ClusterTable wide = ffm::cluster_identities(features, labels, 2.0, 1);
    require(wide.N_s == 5, "radius 2 should give one cluster per identity");
    ffm::ClusterTable tight = ffm::cluster_identities(features, labels, 1e-9, 1);
    require(tight.N_s == 40, "radius 1e-9 should give one cluster per sample");

    // brute-force DBSCAN agreement on 50-point instances
    for (int trial = 0; trial < 10; ++trial) {
        auto f2 = random_unit_embeddings(50, 6, rng);
        std::map<int64_t, int> l2;
        for (int i = 0; i < 50; ++i) l2[i] = 0;
        const double radius = rng.uniform(0.05, 1.0);
        const int min_samples = 1 + static_cast<int>(rng.uniform_int(0, 2));
        std::vector<std::vector<double>> dist(50, std::vector<double>(50, 0.0));
        for (int i = 0; i < 50; ++i)
            for (int j = 0; j < 50; ++j)
                dist[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                    1.0 - dot(f2.at(i).vector, f2.at(j).vector);
        std::vector<int> want = oracle::naive_dbscan(dist, radius, min_samples);
        int next = 0;
        for (int v : want) next = std::max(next, v + 1);
        for (int& v : want)
            if (v == -1) v = next++;
        ffm::ClusterTable got = ffm::cluster_identities(f2, l2, radius, min_samples);
        std::vector<int> gv;
        for (int i = 0; i < 50; ++i) gv.push_back(got.assignment.at(i));
        require(oracle::same_partition(gv, want), "DBSCAN disagrees with the oracle");
    }

    // pseudo-label disjointness across identities on every epoch of a 5-epoch run
    RunConfig cfg = micro_run_config();
    synthdata::DatasetBundle data = synthdata::generate_dataset(cfg.data);
    auto dir = fresh_dir("c5");
    trainer::run_training(cfg, data, dir.string());
    std::map<int64_t, int> train_labels;
    for (const auto& r : data.train.records) train_labels[r.sample_id] = r.identity_id;
    for (int epoch = 1; epoch <= cfg.schedule.max_epochs; ++epoch) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
        checkpoint::Bundle b = checkpoint::load((dir / name).string());
        featnet::Backbone net = trainer::backbone_from_checkpoint(b, cfg);
        auto raw = trainer::extract_embeddings(net, data.train.records);
        std::map<int64_t, featnet::Embedding> embs;
        for (auto& [sid, e] : raw) embs[sid] = e.normalized_copy();
        ffm::ClusterTable t =
            ffm::cluster_identities(embs, train_labels, cfg.ffm.radius, cfg.ffm.min_samples);
        for (const auto& [sid, pl] : t.assignment)
            require(t.label_identity(pl) == train_labels.at(sid),
                    "pseudo label crosses identities at epoch " + std::to_string(epoch));
    }
    fs::remove_all(dir);
    note << "limits, 10 oracle instances, 5-epoch disjointness";
}

void criterion6_ranking(std::ostringstream& note) {
    Rng rng(606);
    int compared = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int Q = 2 + static_cast<int>(rng.uniform_int(0, 28));
        const int G = 10 + static_cast<int>(rng.uniform_int(0, 50));
        const int n_ids = 2 + static_cast<int>(rng.uniform_int(0, 5));
        std::vector<evalkit::EvalItem> queries, gallery;
        std::vector<oracle::NaiveEvalItem> oq, og;
        auto make = [&](int i, bool is_q) {
            std::vector<double> v(6);
            for (double& x : v) x = rng.normal();
            l2_normalize(v);
            const int id = static_cast<int>(rng.uniform_int(0, n_ids - 1));
            const int cl = static_cast<int>(rng.uniform_int(0, 2));
            const int cm = static_cast<int>(rng.uniform_int(0, 2));
            if (is_q) {
                queries.push_back(evalkit::EvalItem{i, id, cl, cm, v});
                oq.push_back({id, cl, cm, v});
            } else {
                gallery.push_back(evalkit::EvalItem{1000 + i, id, cl, cm, v});
                og.push_back({id, cl, cm, v});
            }
        };
        for (int i = 0; i < Q; ++i) make(i, true);
        for (int i = 0; i < G; ++i) make(i, false);

        for (auto proto : {evalkit::Protocol::standard, evalkit::Protocol::cloth_changing}) {
            const bool cc = proto == evalkit::Protocol::cloth_changing;
            auto want = oracle::naive_cmc_map(oq, og, cc, 10);
            if (want.used_queries == 0) continue;
            evalkit::EvalReport got = evalkit::cmc_map(queries, gallery, proto, 10);
            require(got.mAP == want.mAP, "mAP differs from the naive oracle");
            for (int k = 0; k < 10; ++k)
                require(got.cmc[static_cast<size_t>(k)] == want.cmc[static_cast<size_t>(k)],
                        "CMC differs from the naive oracle");
            ++compared;
        }
    }
    require(compared >= 50, "too few comparable instances");
    note << compared << " protocol evaluations, exact equality";
}

struct E2eMeans {
    double full = 0, baseline = 0, wo_far = 0, wo_attr = 0;
};

E2eMeans run_e2e() {
    synthdata::DatasetBundle data = synthdata::generate_dataset(e2e_data_config());
    auto one = [&](const char* preset, int seed) {
        RunConfig cfg = e2e_run_config();
        apply_preset(cfg, preset);
        cfg.seed = static_cast<uint64_t>(seed);
        auto dir = fresh_dir(std::string("c7_") + preset + "_" + std::to_string(seed));
        trainer::TrainResult r = trainer::run_training(cfg, data, dir.string());
        fs::remove_all(dir);
        std::cout << "    [e2e] " << preset << " seed " << seed << ": cloth-changing mAP "
                  << r.cc_report.mAP << "\n";
        return r.cc_report.mAP;
    };
    E2eMeans m;
    for (int seed : kE2eSeeds) {
        m.full += one("fire2", seed) / 3.0;
        m.baseline += one("baseline", seed) / 3.0;
        m.wo_far += one("ours-wo-far", seed) / 3.0;
        m.wo_attr += one("ours-wo-attr", seed) / 3.0;
    }
    return m;
}

void criterion7_direction(std::ostringstream& note) {
    E2eMeans m = run_e2e();
    note << "3-seed means, cloth-changing mAP: full " << m.full << ", baseline " << m.baseline
         << ", wo-FAR " << m.wo_far << ", wo-Lattr " << m.wo_attr;
    auto points = [](double delta) { return delta * 100.0; };
    require(m.full > m.wo_far, "full does not beat w/o FAR");
    require(m.full > m.wo_attr, "full does not beat w/o L_attr");
    require(m.full > m.baseline, "full does not beat the triplet baseline");
    require(points(m.full - m.wo_far) >= kPinnedFullVsWoFarGap,
            "full-vs-wo-FAR gap below the pinned margin");
    require(points(m.full - m.wo_attr) >= kPinnedFullVsWoAttrGap,
            "full-vs-wo-L_attr gap below the pinned margin");
    require(points(m.full - m.baseline) >= kPinnedFullVsBaselineGap,
            "full-vs-baseline gap below the pinned margin");
}

void criterion8_staging(std::ostringstream& note) {
    RunConfig cfg = micro_run_config();
    synthdata::DatasetBundle data = synthdata::generate_dataset(cfg.data);

    // warm-only run: attribute classifier receives zero optimizer steps and
    // zero gradient moments
    RunConfig warm = cfg;
    warm.schedule.t0 = warm.schedule.max_epochs;
    auto d_warm = fresh_dir("c8_warm");
    trainer::run_training(warm, data, d_warm.string());
    checkpoint::Bundle wb = checkpoint::load((d_warm / "last.ckpt").string());
    require(!wb.attr_params.empty(), "warm checkpoint lacks the attr classifier");
    require(wb.attr_params[0].adam_step == 0, "attr classifier was stepped in the warm stage");
    for (double v : wb.attr_params[0].adam_m.data)
        require(v == 0.0, "attr classifier has nonzero gradient moments");

    // T == t0 is bit-identical to the identity-only baseline preset
    RunConfig base_id = cfg;
    apply_preset(base_id, "baseline-id");
    auto d_base = fresh_dir("c8_base");
    trainer::run_training(base_id, data, d_base.string());
    checkpoint::Bundle bb = checkpoint::load((d_base / "last.ckpt").string());
    require(wb.params.size() == bb.params.size(), "parameter sets differ");
    for (size_t i = 0; i < wb.params.size(); ++i) {
        require(wb.params[i].name == bb.params[i].name, "parameter order differs");
        require(wb.params[i].value.data == bb.params[i].value.data,
                "parameter " + wb.params[i].name + " differs bitwise");
    }
    require(slurp(d_warm / "steps.csv") == slurp(d_base / "steps.csv"),
            "per-step losses differ between T==t0 and baseline-id");
    fs::remove_all(d_warm);
    fs::remove_all(d_base);
    note << "zero attr steps/moments in warm stage; T==t0 bitwise equals baseline-id";
}

void criterion9_determinism(std::ostringstream& note) {
    RunConfig cfg = micro_run_config();
    synthdata::DatasetBundle data = synthdata::generate_dataset(cfg.data);

    auto d1 = fresh_dir("c9_a");
    auto d2 = fresh_dir("c9_b");
    trainer::TrainResult r1 = trainer::run_training(cfg, data, d1.string());
    trainer::TrainResult r2 = trainer::run_training(cfg, data, d2.string());
    require(slurp(d1 / "epochs.csv") == slurp(d2 / "epochs.csv"), "epoch CSVs differ");
    require(slurp(d1 / "steps.csv") == slurp(d2 / "steps.csv"), "step CSVs differ");
    require(r1.cc_report.mAP == r2.cc_report.mAP, "final metrics differ");

    // save/reload mid-training reproduces the uninterrupted loss curve
    auto d3 = fresh_dir("c9_resume");
    trainer::TrainResult tail = trainer::run_training(cfg, data, d3.string(),
                                                      (d1 / "epoch_003.ckpt").string());
    require(tail.epoch_mean_total.size() == 2, "resume ran the wrong number of epochs");
    require(std::abs(tail.epoch_mean_total[0] - r1.epoch_mean_total[3]) < 1e-6,
            "resumed epoch 4 loss deviates");
    require(std::abs(tail.epoch_mean_total[1] - r1.epoch_mean_total[4]) < 1e-6,
            "resumed epoch 5 loss deviates");
    fs::remove_all(d1);
    fs::remove_all(d2);
    fs::remove_all(d3);
    note << "identical CSVs across runs; resume matches to 1e-6";
}

}  // namespace

int main(int argc, char** argv) {
    const bool skip_e2e = argc > 1 && std::string(argv[1]) == "--skip-e2e";
    std::vector<Check> checks = {
        {1, "Eq. 1-2 moments vs naive oracle", criterion1_moments},
        {2, "Eq. 4 smoothing invariants and CE reduction", criterion2_smoothing},
        {3, "Eq. 5 identity / transplant / sigma floor", criterion3_recompose},
        {4, "analytic gradients vs central differences", criterion4_gradients},
        {5, "per-identity DBSCAN properties and oracle", criterion5_clustering},
        {6, "CMC/mAP vs naive ranking oracle", criterion6_ranking},
        {7, "end-to-end direction of effect (3 seeds)", criterion7_direction},
        {8, "warm-stage isolation (Alg. 1 staging)", criterion8_staging},
        {9, "determinism and checkpoint resume", criterion9_determinism},
    };

    int failures = 0;
    for (const auto& c : checks) {
        if (skip_e2e && c.id == 7) {
            std::cout << "[skip] criterion 7: " << c.name << "\n";
            continue;
        }
        std::ostringstream detail;
        try {
            c.run(detail);
            std::cout << "[PASS] criterion " << c.id << ": " << c.name;
            if (!detail.str().empty()) std::cout << " -- " << detail.str();
            std::cout << "\n";
        } catch (const std::exception& e) {
            ++failures;
            std::cout << "[FAIL] criterion " << c.id << ": " << c.name << " -- " << e.what()
                      << "\n";
        }
        std::cout.flush();
    }
    if (failures > 0) std::cout << failures << " criterion(s) failed\n";
    return failures == 0 ? 0 : 1;
}
