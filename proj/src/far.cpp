#include "fire2/far.hpp"

#include <algorithm>
#include <stdexcept>

#include "fire2/errors.hpp"
#include "fire2/objectives.hpp"

namespace fire2::far {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::within_id: return "within_id";
        case Variant::between_ids: return "between_ids";
        case Variant::none: return "none";
        case Variant::mixup: return "mixup";
    }
    return "full";
}

Variant variant_from_name(const std::string& s) {
    if (s == "full") return Variant::full;
    if (s == "within_id") return Variant::within_id;
    if (s == "between_ids") return Variant::between_ids;
    if (s == "none") return Variant::none;
    if (s == "mixup") return Variant::mixup;
    throw ConfigError("far.variant: unknown value '" + s + "'");
}

void FarConfig::validate() const {
    if (P_parts < 1) throw ConfigError("far.P_parts: must be >= 1");
    if (K_times < 1) throw ConfigError("far.K_times: must be >= 1");
    if (sigma_floor <= 0.0) throw ConfigError("far.sigma_floor: must be > 0");
    if (variant == Variant::mixup && mixup_alpha <= 0.0)
        throw ConfigError("far.mixup_alpha: must be > 0 for variant=mixup");
}

RecompositionPlan sample_donors(const std::vector<int>& pseudo_labels,
                                const std::vector<int>& identity_labels, const FarConfig& cfg,
                                Rng& rng) {
    cfg.validate();
    if (pseudo_labels.size() != identity_labels.size())
        throw std::invalid_argument("sample_donors: label vectors disagree");
    const int B = static_cast<int>(pseudo_labels.size());

    RecompositionPlan plan;
    plan.parts = cfg.P_parts;
    plan.donor.assign(static_cast<size_t>(B), std::vector<int>(static_cast<size_t>(cfg.P_parts)));
    plan.passthrough.assign(static_cast<size_t>(B),
                            std::vector<char>(static_cast<size_t>(cfg.P_parts), 0));

    for (int b = 0; b < B; ++b) {
        std::vector<int> admissible;
        for (int j = 0; j < B; ++j) {
            if (pseudo_labels[static_cast<size_t>(j)] == pseudo_labels[static_cast<size_t>(b)])
                continue;
            if (cfg.variant == Variant::within_id &&
                identity_labels[static_cast<size_t>(j)] != identity_labels[static_cast<size_t>(b)])
                continue;
            if (cfg.variant == Variant::between_ids &&
                identity_labels[static_cast<size_t>(j)] == identity_labels[static_cast<size_t>(b)])
                continue;
            admissible.push_back(j);
        }
        for (int p = 0; p < cfg.P_parts; ++p) {
            if (admissible.empty() || cfg.variant == Variant::none) {
                plan.donor[static_cast<size_t>(b)][static_cast<size_t>(p)] = b;
                plan.passthrough[static_cast<size_t>(b)][static_cast<size_t>(p)] = 1;
            } else {
                const int pick = static_cast<int>(
                    rng.uniform_int(0, static_cast<int64_t>(admissible.size()) - 1));
                plan.donor[static_cast<size_t>(b)][static_cast<size_t>(p)] =
                    admissible[static_cast<size_t>(pick)];
            }
        }
    }
    return plan;
}

featnet::FeatureMap recompose(const featnet::FeatureMap& recipient_part,
                              const ffm::FineGrainedAttribute& recipient_attr,
                              const ffm::FineGrainedAttribute& donor_attr, double sigma_floor) {
    const int C = recipient_part.channels();
    if (static_cast<int>(recipient_attr.mu.size()) != C ||
        static_cast<int>(donor_attr.mu.size()) != C)
        throw std::invalid_argument("recompose: attribute dimensionality does not match the part");
    if (sigma_floor <= 0.0) throw std::invalid_argument("recompose: sigma_floor must be > 0");

    const int64_t S = static_cast<int64_t>(recipient_part.height()) * recipient_part.width();
    featnet::FeatureMap out{Tensor(recipient_part.data.shape)};
    for (int c = 0; c < C; ++c) {
        const double mu_r = recipient_attr.mu[static_cast<size_t>(c)];
        const double sd_r = std::max(recipient_attr.sigma[static_cast<size_t>(c)], sigma_floor);
        const double mu_d = donor_attr.mu[static_cast<size_t>(c)];
        const double sd_d = donor_attr.sigma[static_cast<size_t>(c)];
        const double* src = &recipient_part.data.data[static_cast<size_t>(c) * S];
        double* dst = &out.data.data[static_cast<size_t>(c) * S];
        for (int64_t i = 0; i < S; ++i) dst[i] = sd_d * (src[i] - mu_r) / sd_r + mu_d;
    }
    return out;
}

Var recompose_batch_node(Tape& tape, Var fmap, const RecompositionPlan& plan,
                         const FarConfig& cfg) {
    const Tensor& fm = tape.value(fmap);
    if (fm.rank() != 4) throw std::invalid_argument("recompose_batch_node: expected [B,C,H,W]");
    const int B = fm.dim(0), H = fm.dim(2);
    if (static_cast<int>(plan.donor.size()) != B || plan.parts != cfg.P_parts)
        throw std::invalid_argument("recompose_batch_node: plan does not match batch/config");

    const auto bounds = featnet::part_bounds(H, cfg.P_parts);
    std::vector<Var> parts_out;
    for (int p = 0; p < cfg.P_parts; ++p) {
        Var part = tape.slice_rows(fmap, bounds[static_cast<size_t>(p)].first,
                                   bounds[static_cast<size_t>(p)].second);
        Var mu = tape.spatial_mean(part);
        Var sd = tape.spatial_std(part, mu);

        std::vector<int> donors(static_cast<size_t>(B));
        std::vector<char> keep(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b) {
            donors[static_cast<size_t>(b)] = plan.donor[static_cast<size_t>(b)][static_cast<size_t>(p)];
            keep[static_cast<size_t>(b)] =
                plan.passthrough[static_cast<size_t>(b)][static_cast<size_t>(p)];
        }
        Var mu_d = tape.gather_batch(mu, donors);
        Var sd_d = tape.gather_batch(sd, donors);
        if (cfg.stop_gradient_donor) {
            mu_d = tape.detach(mu_d);
            sd_d = tape.detach(sd_d);
        }
        Var xhat = tape.div_channels(tape.sub_channels(part, mu), tape.clamp_min(sd, cfg.sigma_floor));
        Var recomposed = tape.add_channels(tape.mul_channels(xhat, sd_d), mu_d);
        parts_out.push_back(tape.mix_batch(keep, part, recomposed));
    }
    return tape.concat_rows(parts_out);
}

Var recomposed_id_loss_node(Tape& tape, const std::vector<Var>& recomposed_maps,
                            const std::vector<int>& identity_labels,
                            objectives::IdentityClassifier& classifier,
                            featnet::Pooling pooling) {
    if (recomposed_maps.empty())
        throw std::invalid_argument("recomposed_id_loss: no recomposed maps");
    Var total{};
    for (Var m : recomposed_maps) {
        Var emb = pooling == featnet::Pooling::avg ? tape.spatial_mean(m)
                                                   : tape.global_max_pool(m);
        Var loss = objectives::id_loss_node(tape, emb, identity_labels, classifier);
        total = total.valid() ? tape.add(total, loss) : loss;
    }
    return tape.scale(total, 1.0 / static_cast<double>(recomposed_maps.size()));
}

double recomposed_id_loss(const std::vector<Tensor>& recomposed_maps,
                          const std::vector<int>& identity_labels,
                          objectives::IdentityClassifier& classifier,
                          featnet::Pooling pooling) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& m : recomposed_maps) vars.push_back(tape.constant(m));
    Var loss = recomposed_id_loss_node(tape, vars, identity_labels, classifier, pooling);
    return tape.value(loss).data[0];
}

MixupDraw sample_mixup(int batch_size, double alpha, Rng& rng) {
    if (alpha <= 0.0) throw ConfigError("far.mixup_alpha: must be > 0");
    MixupDraw draw;
    draw.lambda = rng.beta(alpha, alpha);
    draw.perm.resize(static_cast<size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) draw.perm[static_cast<size_t>(i)] = i;
    rng.shuffle(draw.perm);
    return draw;
}

MixupResult mixup_substitute(const Tensor& embeddings, const std::vector<int>& identity_labels,
                             double alpha, Rng& rng) {
    if (embeddings.rank() != 2 ||
        static_cast<int>(identity_labels.size()) != embeddings.dim(0))
        throw std::invalid_argument("mixup_substitute: embeddings/labels shape mismatch");
    const int B = embeddings.dim(0), C = embeddings.dim(1);
    const MixupDraw draw = sample_mixup(B, alpha, rng);

    MixupResult out;
    out.coefficient = draw.lambda;
    out.mixed = Tensor({B, C});
    for (int b = 0; b < B; ++b) {
        const int partner = draw.perm[static_cast<size_t>(b)];
        for (int c = 0; c < C; ++c)
            out.mixed.at2(b, c) = draw.lambda * embeddings.at2(b, c) +
                                  (1.0 - draw.lambda) * embeddings.at2(partner, c);
        out.label_pairs.emplace_back(identity_labels[static_cast<size_t>(b)],
                                     identity_labels[static_cast<size_t>(partner)]);
    }
    return out;
}

Var mixup_loss_node(Tape& tape, Var embeddings, const std::vector<int>& identity_labels,
                    const MixupDraw& draw, objectives::IdentityClassifier& classifier) {
    const int B = tape.value(embeddings).dim(0);
    if (static_cast<int>(draw.perm.size()) != B)
        throw std::invalid_argument("mixup_loss: permutation does not match batch");
    Var partner = tape.gather_batch(embeddings, draw.perm);
    Var mixed = tape.add(tape.scale(embeddings, draw.lambda),
                         tape.scale(partner, 1.0 - draw.lambda));
    Var logits = objectives::id_logits_node(tape, mixed, classifier);

    // coefficient-weighted CE over both label sets
    Tensor targets({B, classifier.classes()});
    for (int b = 0; b < B; ++b) {
        const int ya = identity_labels[static_cast<size_t>(b)];
        const int yb = identity_labels[static_cast<size_t>(draw.perm[static_cast<size_t>(b)])];
        targets.at2(b, ya) += draw.lambda;
        targets.at2(b, yb) += 1.0 - draw.lambda;
    }
    return tape.softmax_cross_entropy(logits, std::move(targets));
}

}  // namespace fire2::far
