#pragma once

#include <string>
#include <vector>

#include "fire2/autograd.hpp"
#include "fire2/featnet.hpp"
#include "fire2/ffm.hpp"
#include "fire2/rng.hpp"

namespace fire2::objectives {
struct IdentityClassifier;
}

namespace fire2::far {

enum class Variant { full, within_id, between_ids, none, mixup };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& s);

struct FarConfig {
    int P_parts = 2;
    int K_times = 1;
    Variant variant = Variant::full;
    double sigma_floor = 1e-5;
    double mixup_alpha = 1.0;  // Beta(alpha, alpha); only used by variant=mixup
    /// Block gradients into the donor's (mu, sigma); exposed for ablation.
    bool stop_gradient_donor = false;

    void validate() const;
};

/// Who donates statistics to whom, per sample and per part. Passthrough rows
/// keep their own feature untouched (empty admissible donor set).
struct RecompositionPlan {
    int parts = 0;
    std::vector<std::vector<int>> donor;         // [B][P] index into the batch
    std::vector<std::vector<char>> passthrough;  // [B][P]
};

/// Donors are drawn uniformly among batch members with a different pseudo
/// label (full), additionally restricted to the same identity (within_id) or
/// a different identity (between_ids). Each part draws independently.
RecompositionPlan sample_donors(const std::vector<int>& pseudo_labels,
                                const std::vector<int>& identity_labels, const FarConfig& cfg,
                                Rng& rng);

/// Eq.-5 style statistic transplant on one part:
/// out = donor_sigma * (x - mu) / max(sigma, floor) + donor_mu, per channel.
featnet::FeatureMap recompose(const featnet::FeatureMap& recipient_part,
                              const ffm::FineGrainedAttribute& recipient_attr,
                              const ffm::FineGrainedAttribute& donor_attr, double sigma_floor);

/// Training path: split fmap [B,C,H,W] into parts, transplant per-part donor
/// statistics per the plan, concatenate back. Donor stats come from the same
/// part index of the donor sample.
Var recompose_batch_node(Tape& tape, Var fmap, const RecompositionPlan& plan,
                         const FarConfig& cfg);

/// Identity cross-entropy on pooled recomposed maps (Eq.-6 style), averaged
/// over the K recomposition draws.
Var recomposed_id_loss_node(Tape& tape, const std::vector<Var>& recomposed_maps,
                            const std::vector<int>& identity_labels,
                            objectives::IdentityClassifier& classifier, featnet::Pooling pooling);

double recomposed_id_loss(const std::vector<Tensor>& recomposed_maps,
                          const std::vector<int>& identity_labels,
                          objectives::IdentityClassifier& classifier, featnet::Pooling pooling);

/// One mixup draw: a shared Beta(alpha, alpha) coefficient and a batch
/// pairing permutation.
struct MixupDraw {
    double lambda = 1.0;
    std::vector<int> perm;
};

MixupDraw sample_mixup(int batch_size, double alpha, Rng& rng);

/// Convenience bundle: mixed pooled embeddings plus the (label_a, label_b)
/// pairs and the shared coefficient.
struct MixupResult {
    Tensor mixed;  // [B, C]
    std::vector<std::pair<int, int>> label_pairs;
    double coefficient = 1.0;
};

MixupResult mixup_substitute(const Tensor& embeddings, const std::vector<int>& identity_labels,
                             double alpha, Rng& rng);

/// mixup substitute for FAR (ablation row): convex-combined embeddings with
/// coefficient-weighted CE over both label sets.
Var mixup_loss_node(Tape& tape, Var embeddings, const std::vector<int>& identity_labels,
                    const MixupDraw& draw, objectives::IdentityClassifier& classifier);

}  // namespace fire2::far
