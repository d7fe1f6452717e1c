#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fire2/autograd.hpp"
#include "fire2/featnet.hpp"
#include "fire2/tensor.hpp"

namespace fire2::synthdata {
struct SplitManifest;
}

namespace fire2::ffm {

/// The 3-tuple describing one fine-grained attribute: channel-wise spatial
/// mean and population standard deviation, plus the pseudo label.
struct FineGrainedAttribute {
    std::vector<double> mu;
    std::vector<double> sigma;
    int pseudo_label = -1;
    int part_index = 0;  // 0 for whole-map attributes
};

/// Per-identity fine-grained partition. Global pseudo labels are assigned in
/// (identity_id, min sample_id in cluster) order, so re-runs over the same
/// embeddings produce identical tables.
struct ClusterTable {
    struct Cluster {
        int identity_id = 0;
        std::vector<int64_t> samples;  // ascending sample ids
    };
    std::vector<Cluster> clusters;                  // index == global pseudo label
    std::map<int, int> n_s;                         // identity -> cluster count
    int N_s = 0;                                    // total clusters
    std::map<int64_t, int> assignment;              // sample_id -> global pseudo label
    std::map<int, std::vector<int>> identity_sets;  // identity -> its label set (the set P)

    int label_identity(int pseudo_label) const;
    const std::vector<int>& same_identity_set(int pseudo_label) const;
};

/// Per-identity DBSCAN on cosine distance (1 - dot) over L2-normalized
/// embeddings. Neighborhoods are inclusive (d <= radius) and count the point
/// itself toward min_samples. With min_samples > 1, DBSCAN noise points are
/// kept as singleton clusters so the assignment stays total.
ClusterTable cluster_identities(const std::map<int64_t, featnet::Embedding>& features,
                                const std::map<int64_t, int>& labels, double radius,
                                int min_samples);

/// Ablation clustering: per-identity k-means with a fixed k (clamped to the
/// identity's sample count). Deterministic for a fixed seed.
ClusterTable cluster_identities_fixed_k(const std::map<int64_t, featnet::Embedding>& features,
                                        const std::map<int64_t, int>& labels, int k,
                                        uint64_t seed);

/// Pseudo labels straight from ground-truth clothing ids (the "w/ Cloth."
/// ablation); one cluster per (identity, clothing) pair that occurs.
ClusterTable cluster_from_clothing(const synthdata::SplitManifest& train);

/// Channel-wise spatial mean and population std (divide by H*W) of a map or
/// map part. pseudo_label is left at -1; callers stamp it from the table.
FineGrainedAttribute extract_attribute(const featnet::FeatureMap& map, int part_index = 0);

/// Eq.-4-style smoothed target: weight 1 - (|P|-1)/|P| * eps at the target
/// label, eps/|P| at every other same-identity label, 0 elsewhere.
std::map<int, double> smoothing_weights(int target_label,
                                        const std::vector<int>& same_identity_set,
                                        double epsilon);

/// Attribute classifier over all N_s fine-grained clusters. Rows live on the
/// unit sphere; re-initialized from cluster centers after each re-clustering.
struct AttrClassifierState {
    Parameter weights;  // N_s x C
    double tau = 1.0 / 16.0;
    double epsilon = 0.1;

    int rows() const { return weights.value.shape.empty() ? 0 : weights.value.dim(0); }
};

AttrClassifierState init_attr_classifier(const ClusterTable& table,
                                         const std::map<int64_t, featnet::Embedding>& features,
                                         double tau, double epsilon);

/// Project rows back onto the unit sphere (after each optimizer step).
void renormalize_rows(AttrClassifierState& state);

/// Tape path for training. embeddings is [B,C] (pre-normalization).
Var attr_loss_node(Tape& tape, Var embeddings, const std::vector<int>& pseudo_labels,
                   const ClusterTable& table, AttrClassifierState& state,
                   bool normalize_embeddings);

/// Value-level convenience over the same graph.
double attr_loss(const Tensor& embeddings, const std::vector<int>& pseudo_labels,
                 const ClusterTable& table, AttrClassifierState& state,
                 bool normalize_embeddings = true);

/// JSON dump for the cluster-inspect command: identity -> clusters ->
/// (sample_id, clothing_id, viewpoint).
std::string cluster_inspect_json(const ClusterTable& table,
                                 const synthdata::SplitManifest& train);

}  // namespace fire2::ffm
