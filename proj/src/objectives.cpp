#include "fire2/objectives.hpp"

#include <stdexcept>

#include "fire2/errors.hpp"
#include "fire2/rng.hpp"

namespace fire2::objectives {

void LossWeights::validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
        throw ConfigError("losses: lambda weights must be nonnegative");
}

IdentityClassifier::IdentityClassifier(int n_classes, int dim, uint64_t init_seed)
    : w("id_classifier.w", Tensor({n_classes, dim})), b("id_classifier.b", Tensor({n_classes})) {
    Rng rng = Rng::split(init_seed, "id_classifier");
    const double std = std::sqrt(1.0 / dim);
    for (double& v : w.value.data) v = rng.normal(0.0, std);
}

Var id_logits_node(Tape& tape, Var embeddings, IdentityClassifier& clf) {
    return tape.linear(embeddings, tape.param(clf.w), tape.param(clf.b));
}

namespace {

Tensor one_hot(const std::vector<int>& labels, int classes, const char* who) {
    Tensor t({static_cast<int>(labels.size()), classes});
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes)
            throw std::out_of_range(std::string(who) + ": label " + std::to_string(labels[i]) +
                                    " out of range [0," + std::to_string(classes) + ")");
        t.at2(static_cast<int>(i), labels[i]) = 1.0;
    }
    return t;
}

}  // namespace

Var id_loss_node(Tape& tape, Var embeddings, const std::vector<int>& identity_labels,
                 IdentityClassifier& clf) {
    Var logits = id_logits_node(tape, embeddings, clf);
    return tape.softmax_cross_entropy(logits, one_hot(identity_labels, clf.classes(), "id_loss"));
}

double id_loss(const Tensor& embeddings, const std::vector<int>& identity_labels,
               IdentityClassifier& clf) {
    Tape tape;
    Var loss = id_loss_node(tape, tape.constant(embeddings), identity_labels, clf);
    return tape.value(loss).data[0];
}

Var triplet_loss_node(Tape& tape, Var embeddings, const std::vector<int>& identity_labels,
                      double margin) {
    return tape.triplet_batch_hard(embeddings, identity_labels, margin);
}

double triplet_loss(const Tensor& embeddings, const std::vector<int>& identity_labels,
                    double margin) {
    Tape tape;
    Var loss = triplet_loss_node(tape, tape.constant(embeddings), identity_labels, margin);
    return tape.value(loss).data[0];
}

double total_loss(const LossComponents& c, const LossWeights& w, Stage stage) {
    w.validate();
    if (stage == Stage::warm) return w.lambda1 * c.id;
    return w.lambda1 * c.id + w.lambda2 * c.triplet + w.lambda3 * c.attr +
           w.lambda4 * c.recomposed;
}

Var total_loss_node(Tape& tape, Var id, Var triplet, Var attr, Var recomposed,
                    const LossWeights& w, Stage stage) {
    w.validate();
    if (!id.valid()) throw std::invalid_argument("total_loss: L_id is required");
    Var total = tape.scale(id, w.lambda1);
    if (stage == Stage::warm) return total;
    if (triplet.valid()) total = tape.add(total, tape.scale(triplet, w.lambda2));
    if (attr.valid()) total = tape.add(total, tape.scale(attr, w.lambda3));
    if (recomposed.valid()) total = tape.add(total, tape.scale(recomposed, w.lambda4));
    return total;
}

}  // namespace fire2::objectives
