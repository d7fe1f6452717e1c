#include "fire2/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "fire2/checkpoint.hpp"
#include "fire2/errors.hpp"
#include "fire2/far.hpp"
#include "fire2/objectives.hpp"

namespace fire2::trainer {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PK sampler

PkSampler::PkSampler(const synthdata::SplitManifest& train, int ids_per_batch,
                     int instances_per_id)
    : ids_per_batch_(ids_per_batch),
      instances_per_id_(instances_per_id),
      n_train_(train.N) {
    for (const auto& r : train.records) images_by_id_[r.identity_id].push_back(r.sample_id);
    for (const auto& [id, imgs] : images_by_id_) identities_.push_back(id);
    if (ids_per_batch_ > static_cast<int>(identities_.size()))
        throw ConfigError("schedule.ids_per_batch: exceeds the dataset's " +
                          std::to_string(identities_.size()) + " training identities");
    if (n_train_ == 0) throw ConfigError("dataset: empty train split");
}

void PkSampler::start_epoch() {
    id_queue_.clear();
    image_queues_.clear();
}

int PkSampler::batches_per_epoch() const {
    const int by_count = static_cast<int>((n_train_ + batch_size() - 1) / batch_size());
    // Identity queues hand each identity one slot per refill cycle, and image
    // queues draw without replacement, so an identity whose pool needs c =
    // ceil(images / instances_per_id) slots is fully covered once the epoch
    // provides c cycles. Size the epoch for the worst identity.
    int max_cycles = 1;
    for (const auto& [id, imgs] : images_by_id_)
        max_cycles = std::max(
            max_cycles, static_cast<int>((imgs.size() + static_cast<size_t>(instances_per_id_) - 1) /
                                         static_cast<size_t>(instances_per_id_)));
    const int by_slots = static_cast<int>(
        (static_cast<int64_t>(max_cycles) * static_cast<int64_t>(identities_.size()) +
         ids_per_batch_ - 1) /
        ids_per_batch_);
    return std::max(by_count, by_slots);
}

int PkSampler::pop_identity(Rng& rng, const std::vector<int>& chosen) {
    for (int pass = 0; pass < 2; ++pass) {
        for (int i = static_cast<int>(id_queue_.size()) - 1; i >= 0; --i) {
            const int id = id_queue_[static_cast<size_t>(i)];
            if (std::find(chosen.begin(), chosen.end(), id) == chosen.end()) {
                id_queue_.erase(id_queue_.begin() + i);
                return id;
            }
        }
        std::vector<int> fresh = identities_;
        rng.shuffle(fresh);
        id_queue_.insert(id_queue_.begin(), fresh.begin(), fresh.end());
    }
    throw std::logic_error("PkSampler: no admissible identity");  // unreachable
}

int64_t PkSampler::pop_image(int identity, Rng& rng) {
    auto& queue = image_queues_[identity];
    if (queue.empty()) {
        queue = images_by_id_.at(identity);
        rng.shuffle(queue);
    }
    const int64_t sid = queue.back();
    queue.pop_back();
    return sid;
}

std::vector<int64_t> PkSampler::next_batch(Rng& rng) {
    std::vector<int64_t> batch;
    std::vector<int> chosen;
    for (int i = 0; i < ids_per_batch_; ++i) {
        const int id = pop_identity(rng, chosen);
        chosen.push_back(id);
        for (int k = 0; k < instances_per_id_; ++k) batch.push_back(pop_image(id, rng));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// feature extraction / evaluation

std::map<int64_t, featnet::Embedding> extract_embeddings(
    const featnet::Backbone& net, const std::vector<synthdata::SampleRecord>& records,
    int batch_size) {
    std::map<int64_t, featnet::Embedding> out;
    for (size_t off = 0; off < records.size(); off += static_cast<size_t>(batch_size)) {
        std::vector<Tensor> images;
        const size_t end = std::min(records.size(), off + static_cast<size_t>(batch_size));
        for (size_t i = off; i < end; ++i) images.push_back(records[i].image);
        auto [maps, embs] = net.forward(images);
        for (size_t i = off; i < end; ++i) out[records[i].sample_id] = std::move(embs[i - off]);
    }
    return out;
}

std::pair<evalkit::EvalReport, evalkit::EvalReport> evaluate_bundle(
    const featnet::Backbone& net, const synthdata::DatasetBundle& data, int max_rank) {
    auto to_items = [&](const synthdata::SplitManifest& split) {
        auto embs = extract_embeddings(net, split.records);
        std::vector<evalkit::EvalItem> items;
        for (const auto& r : split.records) {
            featnet::Embedding e = embs.at(r.sample_id).normalized_copy();
            items.push_back(evalkit::EvalItem::from(r, std::move(e.vector)));
        }
        return items;
    };
    const auto queries = to_items(data.query);
    const auto gallery = to_items(data.gallery);
    return {evalkit::cmc_map(queries, gallery, evalkit::Protocol::standard, max_rank),
            evalkit::cmc_map(queries, gallery, evalkit::Protocol::cloth_changing, max_rank)};
}

// ---------------------------------------------------------------------------
// training

namespace {

struct CsvWriter {
    std::ofstream os;

    void open(const fs::path& path, const std::string& header, bool append) {
        const bool exists = fs::exists(path);
        os.open(path, append ? std::ios::app : std::ios::out);
        if (!os) throw RuntimeAbort("cannot write " + path.string());
        if (!append || !exists) os << header << "\n";
    }
    void row(const std::string& line) {
        os << line << "\n";
        os.flush();
    }
};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class Trainer {
  public:
    Trainer(const RunConfig& cfg, const synthdata::DatasetBundle& data, std::string out_dir)
        : cfg_(cfg),
          data_(data),
          out_(std::move(out_dir)),
          backbone_(cfg.backbone, cfg.seed),
          sampler_(data.train, cfg.schedule.ids_per_batch, cfg.schedule.instances_per_id),
          aug_rng_(Rng::split(cfg.seed, "augment")),
          sampler_rng_(Rng::split(cfg.seed, "sampler")),
          far_rng_(Rng::split(cfg.seed, "far")) {
        cfg_.validate();
        if (data.image_h != cfg.data.image_h || data.image_w != cfg.data.image_w)
            throw ConfigError("dataset image size does not match config.data.image_size");
        std::set<int> ids;
        for (const auto& r : data.train.records) ids.insert(r.identity_id);
        int next = 0;
        for (int id : ids) class_of_[id] = next++;
        idclf_ = objectives::IdentityClassifier(next, cfg.backbone.embedding_dim(), cfg.seed);
        fs::create_directories(out_);
    }

    void resume(const std::string& ckpt_path) {
        checkpoint::Bundle b = checkpoint::load(ckpt_path);
        if (b.config_hash != config_hash(cfg_))
            throw ConfigError("checkpoint config hash mismatch: refusing to resume '" + ckpt_path +
                              "' with a different configuration");
        std::map<std::string, Parameter*> by_name;
        for (Parameter* p : parameters()) by_name[p->name] = p;
        for (const auto& ps : b.params) {
            auto it = by_name.find(ps.name);
            if (it == by_name.end())
                throw RuntimeAbort("checkpoint: unknown parameter '" + ps.name + "'");
            ps.restore(*it->second);
        }
        aug_rng_.deserialize(b.rng_states.at("augment"));
        sampler_rng_.deserialize(b.rng_states.at("sampler"));
        far_rng_.deserialize(b.rng_states.at("far"));
        start_epoch_ = b.epoch;
        resumed_ = true;
    }

    TrainResult run() {
        {
            std::ofstream cfg_echo(fs::path(out_) / "config.json");
            cfg_echo << dump_run_config(cfg_) << "\n";
        }
        steps_.open(fs::path(out_) / "steps.csv", "step,epoch,L_id,L_tri,L_attr,L_r,total",
                    resumed_);
        epochs_.open(fs::path(out_) / "epochs.csv",
                     "epoch,lr,N_s,L_id,L_tri,L_attr,L_r,total,std_rank1,std_mAP,cc_rank1,cc_mAP",
                     resumed_);
        if (!resumed_) save_ckpt(0);  // last-good checkpoint exists from the start

        TrainResult result;
        global_step_ = static_cast<int64_t>(start_epoch_) * sampler_.batches_per_epoch();
        for (int t = start_epoch_ + 1; t <= cfg_.schedule.max_epochs; ++t) {
            epoch(t, result);
            result.epochs_completed = t;
        }

        auto [std_rep, cc_rep] = evaluate_bundle(backbone_, data_, cfg_.eval.max_rank);
        result.standard_report = std_rep;
        result.cc_report = cc_rep;
        result.final_N_s = last_N_s_;
        result.checkpoint_path = (fs::path(out_) / "last.ckpt").string();
        {
            std::ofstream rep(fs::path(out_) / "eval_standard.json");
            rep << std_rep.to_json() << "\n";
            std::ofstream rep2(fs::path(out_) / "eval_cloth_changing.json");
            rep2 << cc_rep.to_json() << "\n";
        }
        if (cfg_.dump_embeddings) dump_embeddings();
        return result;
    }

  private:
    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps = backbone_.parameters();
        ps.push_back(&idclf_.w);
        ps.push_back(&idclf_.b);
        return ps;
    }

    ffm::ClusterTable make_table(int t, const std::map<int64_t, featnet::Embedding>& embs) {
        if (cfg_.ffm.use_ground_truth_clothing) return ffm::cluster_from_clothing(data_.train);
        std::map<int64_t, int> labels;
        for (const auto& r : data_.train.records) labels[r.sample_id] = r.identity_id;
        if (cfg_.ffm.fixed_k > 0) {
            const uint64_t seed = Rng::split(cfg_.seed, "fixedk/" + std::to_string(t)).next_u64();
            return ffm::cluster_identities_fixed_k(embs, labels, cfg_.ffm.fixed_k, seed);
        }
        return ffm::cluster_identities(embs, labels, cfg_.ffm.radius, cfg_.ffm.min_samples);
    }

    void epoch(int t, TrainResult& result) {
        // Clustering pass over frozen weights (no augmentation)
        std::map<int64_t, featnet::Embedding> cluster_embs;
        {
            auto raw = extract_embeddings(backbone_, data_.train.records);
            for (auto& [sid, e] : raw) cluster_embs[sid] = e.normalized_copy();
        }
        table_ = make_table(t, cluster_embs);
        attr_state_ = ffm::init_attr_classifier(table_, cluster_embs, cfg_.ffm.tau,
                                                cfg_.ffm.epsilon);
        last_N_s_ = table_.N_s;

        const double lr = lr_at(t, cfg_.schedule);
        const auto stage =
            t <= cfg_.schedule.t0 ? objectives::Stage::warm : objectives::Stage::full;

        AdamConfig adam;
        adam.weight_decay = cfg_.schedule.weight_decay;

        std::map<int64_t, const synthdata::SampleRecord*> record_of;
        for (const auto& r : data_.train.records) record_of[r.sample_id] = &r;

        sampler_.start_epoch();
        const int nb = sampler_.batches_per_epoch();
        objectives::LossComponents epoch_sums;
        double epoch_total = 0.0;

        for (int bi = 0; bi < nb; ++bi) {
            const std::vector<int64_t> sample_ids = sampler_.next_batch(sampler_rng_);
            const int B = static_cast<int>(sample_ids.size());

            std::vector<Tensor> images;
            std::vector<int> labels, pseudo;
            for (int64_t sid : sample_ids) {
                const auto* rec = record_of.at(sid);
                images.push_back(synthdata::augment(rec->image, aug_rng_));
                labels.push_back(class_of_.at(rec->identity_id));
                pseudo.push_back(table_.assignment.at(sid));
            }

            Tape tape;
            Var input = tape.constant(featnet::images_to_batch(images));
            auto nodes = backbone_.forward_t(tape, input);

            Var l_id = objectives::id_loss_node(tape, nodes.emb, labels, idclf_);
            Var l_tri{}, l_attr{}, l_r{};
            if (stage == objectives::Stage::full) {
                if (cfg_.losses.lambda2 > 0.0)
                    l_tri = objectives::triplet_loss_node(tape, nodes.emb, labels,
                                                          cfg_.triplet_margin);
                if (cfg_.losses.lambda3 > 0.0)
                    l_attr = ffm::attr_loss_node(tape, nodes.emb, pseudo, table_, attr_state_,
                                                 cfg_.backbone.normalize_embedding);
                if (cfg_.losses.lambda4 > 0.0 && cfg_.far.variant != far::Variant::none) {
                    if (cfg_.far.variant == far::Variant::mixup) {
                        const far::MixupDraw draw =
                            far::sample_mixup(B, cfg_.far.mixup_alpha, far_rng_);
                        l_r = far::mixup_loss_node(tape, nodes.emb, labels, draw, idclf_);
                    } else {
                        std::vector<int> batch_identities;
                        for (int64_t sid : sample_ids)
                            batch_identities.push_back(record_of.at(sid)->identity_id);
                        std::vector<Var> recomposed;
                        for (int k = 0; k < cfg_.far.K_times; ++k) {
                            const far::RecompositionPlan plan =
                                far::sample_donors(pseudo, batch_identities, cfg_.far, far_rng_);
                            recomposed.push_back(
                                far::recompose_batch_node(tape, nodes.fmap, plan, cfg_.far));
                        }
                        l_r = far::recomposed_id_loss_node(tape, recomposed, labels, idclf_,
                                                           cfg_.backbone.pooling);
                    }
                }
            }
            Var total = objectives::total_loss_node(tape, l_id, l_tri, l_attr, l_r, cfg_.losses,
                                                    stage);

            const double total_v = tape.value(total).data[0];
            if (!std::isfinite(total_v)) {
                std::ofstream marker(fs::path(out_) / "ABORTED");
                marker << "non-finite loss at epoch " << t << " step " << global_step_ << "\n";
                throw RuntimeAbort("non-finite loss at epoch " + std::to_string(t) +
                                  "; last-good checkpoint retained at last.ckpt");
            }
            tape.backward(total);

            for (Parameter* p : parameters()) {
                adam_step(*p, adam, lr);
                p->zero_grad();
            }
            if (l_attr.valid()) {
                adam_step(attr_state_.weights, adam, lr);
                attr_state_.weights.zero_grad();
                ffm::renormalize_rows(attr_state_);
            }

            auto value_or_zero = [&](Var v) { return v.valid() ? tape.value(v).data[0] : 0.0; };
            const objectives::LossComponents comps{value_or_zero(l_id), value_or_zero(l_tri),
                                                   value_or_zero(l_attr), value_or_zero(l_r)};
            epoch_sums.id += comps.id;
            epoch_sums.triplet += comps.triplet;
            epoch_sums.attr += comps.attr;
            epoch_sums.recomposed += comps.recomposed;
            epoch_total += total_v;
            ++global_step_;
            steps_.row(std::to_string(global_step_) + "," + std::to_string(t) + "," +
                       num(comps.id) + "," + num(comps.triplet) + "," + num(comps.attr) + "," +
                       num(comps.recomposed) + "," + num(total_v));
        }

        std::string eval_cols = ",,,";
        const bool eval_now = cfg_.eval_every > 0 && t % cfg_.eval_every == 0;
        if (eval_now) {
            auto [std_rep, cc_rep] = evaluate_bundle(backbone_, data_, cfg_.eval.max_rank);
            eval_cols = num(std_rep.rank1()) + "," + num(std_rep.mAP) + "," + num(cc_rep.rank1()) +
                        "," + num(cc_rep.mAP);
        } else {
            eval_cols = ",,,";
        }
        const double inv = 1.0 / sampler_.batches_per_epoch();
        epochs_.row(std::to_string(t) + "," + num(lr) + "," + std::to_string(table_.N_s) + "," +
                    num(epoch_sums.id * inv) + "," + num(epoch_sums.triplet * inv) + "," +
                    num(epoch_sums.attr * inv) + "," + num(epoch_sums.recomposed * inv) + "," +
                    num(epoch_total * inv) + "," + eval_cols);
        result.epoch_mean_total.push_back(epoch_total * inv);

        save_ckpt(t);
        if (cfg_.schedule.checkpoint_every > 0 && t % cfg_.schedule.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", t);
            fs::copy_file(fs::path(out_) / "last.ckpt", fs::path(out_) / name,
                          fs::copy_options::overwrite_existing);
        }
    }

    void save_ckpt(int epochs_done) {
        checkpoint::Bundle b;
        b.config_hash = config_hash(cfg_);
        b.config_json = dump_run_config(cfg_);
        b.epoch = epochs_done;
        for (Parameter* p : parameters()) b.params.push_back(checkpoint::Bundle::ParamState::from(*p));
        if (attr_state_.rows() > 0) {
            b.attr_params.push_back(checkpoint::Bundle::ParamState::from(attr_state_.weights));
            b.attr_tau = attr_state_.tau;
            b.attr_epsilon = attr_state_.epsilon;
        }
        b.rng_states["augment"] = aug_rng_.serialize();
        b.rng_states["sampler"] = sampler_rng_.serialize();
        b.rng_states["far"] = far_rng_.serialize();
        const fs::path tmp = fs::path(out_) / "last.ckpt.tmp";
        checkpoint::save(tmp.string(), b);
        fs::rename(tmp, fs::path(out_) / "last.ckpt");
    }

    void dump_embeddings() {
        std::ofstream os(fs::path(out_) / "embeddings.csv");
        os << "sample_id,identity_id,clothing_id,pseudo_label";
        for (int c = 0; c < cfg_.backbone.embedding_dim(); ++c) os << ",e" << c;
        os << "\n";
        auto write_split = [&](const synthdata::SplitManifest& split, bool with_pseudo) {
            auto embs = extract_embeddings(backbone_, split.records);
            for (const auto& r : split.records) {
                const int pl = with_pseudo && table_.assignment.count(r.sample_id)
                                   ? table_.assignment.at(r.sample_id)
                                   : -1;
                os << r.sample_id << "," << r.identity_id << "," << r.clothing_id << "," << pl;
                for (double v : embs.at(r.sample_id).vector) os << "," << num(v);
                os << "\n";
            }
        };
        write_split(data_.train, true);
        write_split(data_.query, false);
        write_split(data_.gallery, false);
    }

    RunConfig cfg_;
    const synthdata::DatasetBundle& data_;
    std::string out_;
    featnet::Backbone backbone_;
    objectives::IdentityClassifier idclf_;
    std::map<int, int> class_of_;
    PkSampler sampler_;
    Rng aug_rng_, sampler_rng_, far_rng_;
    ffm::ClusterTable table_;
    ffm::AttrClassifierState attr_state_;
    CsvWriter steps_, epochs_;
    int start_epoch_ = 0;
    bool resumed_ = false;
    int64_t global_step_ = 0;
    int last_N_s_ = 0;
};

}  // namespace

TrainResult run_training(const RunConfig& cfg, const synthdata::DatasetBundle& data,
                         const std::string& out_dir, const std::string& resume_from) {
    Trainer trainer(cfg, data, out_dir);
    if (!resume_from.empty()) trainer.resume(resume_from);
    return trainer.run();
}

featnet::Backbone backbone_from_checkpoint(const checkpoint::Bundle& bundle,
                                           const RunConfig& cfg) {
    featnet::Backbone net(cfg.backbone, cfg.seed);
    std::map<std::string, Parameter*> by_name;
    for (Parameter* p : net.parameters()) by_name[p->name] = p;
    for (const auto& ps : bundle.params) {
        auto it = by_name.find(ps.name);
        if (it != by_name.end()) ps.restore(*it->second);
    }
    return net;
}

}  // namespace fire2::trainer
