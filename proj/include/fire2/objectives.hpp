#pragma once

#include <cstdint>
#include <vector>

#include "fire2/autograd.hpp"
#include "fire2/tensor.hpp"

namespace fire2::objectives {

/// Eq.-7 coefficients. Defaults: lambda1 = lambda2 = lambda3 = 1, lambda4 = 0.3.
struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda3 = 1.0;
    double lambda4 = 0.3;

    void validate() const;
};

/// Linear classifier over identity classes; shared between the plain
/// identity loss and the recomposed-feature loss.
struct IdentityClassifier {
    Parameter w;  // [classes, dim]
    Parameter b;  // [classes]

    IdentityClassifier() = default;
    IdentityClassifier(int n_classes, int dim, uint64_t init_seed);
    int classes() const { return w.value.dim(0); }
    int dim() const { return w.value.dim(1); }
};

Var id_logits_node(Tape& tape, Var embeddings, IdentityClassifier& clf);

/// Mean one-hot cross-entropy over identity classes on raw embeddings.
Var id_loss_node(Tape& tape, Var embeddings, const std::vector<int>& identity_labels,
                 IdentityClassifier& clf);

double id_loss(const Tensor& embeddings, const std::vector<int>& identity_labels,
               IdentityClassifier& clf);

/// Batch-hard triplet on unnormalized embeddings, Euclidean distance.
Var triplet_loss_node(Tape& tape, Var embeddings, const std::vector<int>& identity_labels,
                      double margin);

double triplet_loss(const Tensor& embeddings, const std::vector<int>& identity_labels,
                    double margin);

enum class Stage { warm, full };

struct LossComponents {
    double id = 0.0;
    double triplet = 0.0;
    double attr = 0.0;
    double recomposed = 0.0;
};

/// Warm stage: lambda1 * L_id only. Full stage: the four-term sum.
double total_loss(const LossComponents& c, const LossWeights& w, Stage stage);

/// Same staging over tape nodes; absent terms may be passed as invalid Vars
/// and count as zero.
Var total_loss_node(Tape& tape, Var id, Var triplet, Var attr, Var recomposed,
                    const LossWeights& w, Stage stage);

}  // namespace fire2::objectives
