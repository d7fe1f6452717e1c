#pragma once

#include <map>
#include <string>
#include <vector>

#include "fire2/checkpoint.hpp"
#include "fire2/config.hpp"
#include "fire2/evalkit.hpp"
#include "fire2/ffm.hpp"
#include "fire2/schedule.hpp"

namespace fire2::trainer {

/// Identity-balanced batches: ids_per_batch distinct identities with
/// instances_per_id samples each. Per-epoch queues draw without replacement
/// until a pool is exhausted, then reshuffle, so an epoch of
/// ceil(N / batch_size) batches touches every sample.
class PkSampler {
  public:
    PkSampler(const synthdata::SplitManifest& train, int ids_per_batch, int instances_per_id);

    void start_epoch();
    std::vector<int64_t> next_batch(Rng& rng);
    int batches_per_epoch() const;
    int batch_size() const { return ids_per_batch_ * instances_per_id_; }

  private:
    int pop_identity(Rng& rng, const std::vector<int>& chosen);
    int64_t pop_image(int identity, Rng& rng);

    int ids_per_batch_;
    int instances_per_id_;
    int64_t n_train_;
    std::vector<int> identities_;
    std::map<int, std::vector<int64_t>> images_by_id_;
    std::vector<int> id_queue_;
    std::map<int, std::vector<int64_t>> image_queues_;
};

struct TrainResult {
    int epochs_completed = 0;
    std::string checkpoint_path;
    std::vector<double> epoch_mean_total;  // mean total loss per epoch this call ran
    evalkit::EvalReport standard_report;
    evalkit::EvalReport cc_report;
    int final_N_s = 0;
};

/// Frozen-weights, no-augmentation feature extraction (the clustering and
/// retrieval path). Returned embeddings are unnormalized.
std::map<int64_t, featnet::Embedding> extract_embeddings(
    const featnet::Backbone& net, const std::vector<synthdata::SampleRecord>& records,
    int batch_size = 64);

/// Query/gallery retrieval under both protocols.
std::pair<evalkit::EvalReport, evalkit::EvalReport> evaluate_bundle(
    const featnet::Backbone& net, const synthdata::DatasetBundle& data, int max_rank);

/// Rebuild the backbone a checkpoint was trained with (enough for retrieval
/// and cluster inspection).
featnet::Backbone backbone_from_checkpoint(const checkpoint::Bundle& bundle,
                                           const RunConfig& cfg);

/// The full training procedure. Writes config.json, steps.csv, epochs.csv,
/// checkpoints, and optional embedding dumps into out_dir. Set resume_from to
/// a checkpoint path to continue an interrupted run (config must hash-match).
TrainResult run_training(const RunConfig& cfg, const synthdata::DatasetBundle& data,
                         const std::string& out_dir, const std::string& resume_from = "");

}  // namespace fire2::trainer
