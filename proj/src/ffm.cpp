#include "fire2/ffm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "fire2/errors.hpp"
#include "fire2/rng.hpp"
#include "fire2/synthdata.hpp"

namespace fire2::ffm {

int ClusterTable::label_identity(int pseudo_label) const {
    if (pseudo_label < 0 || pseudo_label >= N_s)
        throw std::out_of_range("pseudo label out of range: " + std::to_string(pseudo_label));
    return clusters[static_cast<size_t>(pseudo_label)].identity_id;
}

const std::vector<int>& ClusterTable::same_identity_set(int pseudo_label) const {
    return identity_sets.at(label_identity(pseudo_label));
}

namespace {

/// Connected-component style DBSCAN over one identity's points, returning a
/// per-point cluster index. `dist` is a dense symmetric matrix.
std::vector<int> dbscan_group(const std::vector<std::vector<double>>& dist, double eps,
                              int min_samples) {
    const int n = static_cast<int>(dist.size());
    std::vector<std::vector<int>> nbr(static_cast<size_t>(n));
    std::vector<bool> core(static_cast<size_t>(n), false);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
            if (dist[static_cast<size_t>(i)][static_cast<size_t>(j)] <= eps)
                nbr[static_cast<size_t>(i)].push_back(j);
        core[static_cast<size_t>(i)] = static_cast<int>(nbr[static_cast<size_t>(i)].size()) >=
                                       min_samples;  // neighborhood includes the point
    }
    std::vector<int> label(static_cast<size_t>(n), -1);
    int next = 0;
    for (int i = 0; i < n; ++i) {
        if (label[static_cast<size_t>(i)] != -1 || !core[static_cast<size_t>(i)]) continue;
        const int cid = next++;
        std::vector<int> stack = {i};
        label[static_cast<size_t>(i)] = cid;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            if (!core[static_cast<size_t>(p)]) continue;  // border point: claimed, not expanded
            for (int q : nbr[static_cast<size_t>(p)]) {
                if (label[static_cast<size_t>(q)] != -1) continue;
                label[static_cast<size_t>(q)] = cid;
                stack.push_back(q);
            }
        }
    }
    for (int i = 0; i < n; ++i)
        if (label[static_cast<size_t>(i)] == -1) label[static_cast<size_t>(i)] = next++;  // noise -> singleton
    return label;
}

struct Grouped {
    // identity -> (sample ids ascending, embedding rows)
    std::map<int, std::vector<int64_t>> ids;
    std::map<int, std::vector<const std::vector<double>*>> vecs;
};

Grouped group_by_identity(const std::map<int64_t, featnet::Embedding>& features,
                          const std::map<int64_t, int>& labels) {
    Grouped g;
    for (const auto& [sid, emb] : features) {
        auto it = labels.find(sid);
        if (it == labels.end())
            throw std::invalid_argument("cluster_identities: sample " + std::to_string(sid) +
                                        " has no identity label");
        const double n = l2_norm(emb.vector);
        if (std::abs(n - 1.0) > 1e-5)
            throw std::invalid_argument(
                "cluster_identities: embeddings must be L2-normalized (sample " +
                std::to_string(sid) + " has norm " + std::to_string(n) + ")");
        g.ids[it->second].push_back(sid);
        g.vecs[it->second].push_back(&emb.vector);
    }
    if (g.ids.empty()) throw std::invalid_argument("cluster_identities: empty input");
    return g;
}

/// Assemble a canonical ClusterTable from per-identity local labels.
ClusterTable assemble(const Grouped& g, const std::map<int, std::vector<int>>& local_labels) {
    ClusterTable table;
    for (const auto& [identity, sids] : g.ids) {
        const std::vector<int>& local = local_labels.at(identity);
        std::map<int, ClusterTable::Cluster> by_local;
        for (size_t i = 0; i < sids.size(); ++i) {
            auto& cl = by_local[local[i]];
            cl.identity_id = identity;
            cl.samples.push_back(sids[i]);
        }
        std::vector<ClusterTable::Cluster> ordered;
        for (auto& [lid, cl] : by_local) ordered.push_back(std::move(cl));
        std::sort(ordered.begin(), ordered.end(),
                  [](const auto& a, const auto& b) { return a.samples.front() < b.samples.front(); });
        for (auto& cl : ordered) {
            const int global = static_cast<int>(table.clusters.size());
            for (int64_t sid : cl.samples) table.assignment[sid] = global;
            table.identity_sets[identity].push_back(global);
            table.clusters.push_back(std::move(cl));
        }
        table.n_s[identity] = static_cast<int>(ordered.size());
    }
    table.N_s = static_cast<int>(table.clusters.size());
    return table;
}

}  // namespace

ClusterTable cluster_identities(const std::map<int64_t, featnet::Embedding>& features,
                                const std::map<int64_t, int>& labels, double radius,
                                int min_samples) {
    if (radius <= 0.0) throw std::invalid_argument("cluster_identities: radius must be > 0");
    if (min_samples < 1) throw std::invalid_argument("cluster_identities: min_samples must be >= 1");
    Grouped g = group_by_identity(features, labels);

    std::map<int, std::vector<int>> local;
    for (const auto& [identity, vecs] : g.vecs) {
        const int n = static_cast<int>(vecs.size());
        std::vector<std::vector<double>> dist(static_cast<size_t>(n),
                                              std::vector<double>(static_cast<size_t>(n), 0.0));
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double d = 1.0 - dot(*vecs[static_cast<size_t>(i)],
                                           *vecs[static_cast<size_t>(j)]);
                dist[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                    dist[static_cast<size_t>(j)][static_cast<size_t>(i)] = d;
            }
        local[identity] = dbscan_group(dist, radius, min_samples);
    }
    return assemble(g, local);
}

ClusterTable cluster_identities_fixed_k(const std::map<int64_t, featnet::Embedding>& features,
                                        const std::map<int64_t, int>& labels, int k,
                                        uint64_t seed) {
    if (k < 1) throw std::invalid_argument("cluster_identities_fixed_k: k must be >= 1");
    Grouped g = group_by_identity(features, labels);

    std::map<int, std::vector<int>> local;
    for (const auto& [identity, vecs] : g.vecs) {
        const int n = static_cast<int>(vecs.size());
        const int kk = std::min(k, n);
        const size_t dim = vecs[0]->size();
        Rng rng = Rng::split(seed, "kmeans/" + std::to_string(identity));

        // k-means++ seeding
        std::vector<std::vector<double>> centers;
        centers.push_back(*vecs[static_cast<size_t>(rng.uniform_int(0, n - 1))]);
        auto sqdist = [&](const std::vector<double>& a, const std::vector<double>& b) {
            double s = 0.0;
            for (size_t c = 0; c < a.size(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
            return s;
        };
        while (static_cast<int>(centers.size()) < kk) {
            std::vector<double> d2(static_cast<size_t>(n));
            double total = 0.0;
            for (int i = 0; i < n; ++i) {
                double best = 1e300;
                for (const auto& c : centers) best = std::min(best, sqdist(*vecs[static_cast<size_t>(i)], c));
                d2[static_cast<size_t>(i)] = best;
                total += best;
            }
            double r = rng.uniform() * total;
            int pick = n - 1;
            for (int i = 0; i < n; ++i) {
                r -= d2[static_cast<size_t>(i)];
                if (r <= 0.0) {
                    pick = i;
                    break;
                }
            }
            centers.push_back(*vecs[static_cast<size_t>(pick)]);
        }

        std::vector<int> assign(static_cast<size_t>(n), 0);
        for (int iter = 0; iter < 100; ++iter) {
            bool changed = false;
            for (int i = 0; i < n; ++i) {
                int best = 0;
                double bd = 1e300;
                for (size_t c = 0; c < centers.size(); ++c) {
                    const double d = sqdist(*vecs[static_cast<size_t>(i)], centers[c]);
                    if (d < bd) {
                        bd = d;
                        best = static_cast<int>(c);
                    }
                }
                if (assign[static_cast<size_t>(i)] != best) {
                    assign[static_cast<size_t>(i)] = best;
                    changed = true;
                }
            }
            for (size_t c = 0; c < centers.size(); ++c) {
                std::vector<double> mean(dim, 0.0);
                int cnt = 0;
                for (int i = 0; i < n; ++i)
                    if (assign[static_cast<size_t>(i)] == static_cast<int>(c)) {
                        for (size_t d = 0; d < dim; ++d) mean[d] += (*vecs[static_cast<size_t>(i)])[d];
                        ++cnt;
                    }
                if (cnt > 0) {
                    for (double& v : mean) v /= cnt;
                    centers[c] = mean;
                }
            }
            if (!changed) break;
        }
        local[identity] = assign;
    }
    return assemble(g, local);
}

ClusterTable cluster_from_clothing(const synthdata::SplitManifest& train) {
    Grouped g;
    std::map<int64_t, int> clothing;
    for (const auto& r : train.records) {
        g.ids[r.identity_id].push_back(r.sample_id);
        clothing[r.sample_id] = r.clothing_id;
    }
    std::map<int, std::vector<int>> local;
    for (const auto& [identity, sids] : g.ids) {
        std::vector<int>& lab = local[identity];
        for (int64_t sid : sids) lab.push_back(clothing.at(sid));
    }
    // sort sample ids (already ascending by construction of records)
    for (auto& [identity, sids] : g.ids) {
        std::vector<size_t> order(sids.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](size_t a, size_t b) { return sids[a] < sids[b]; });
        std::vector<int64_t> s2;
        std::vector<int> l2;
        for (size_t i : order) {
            s2.push_back(sids[i]);
            l2.push_back(local[identity][i]);
        }
        sids = std::move(s2);
        local[identity] = std::move(l2);
    }
    return assemble(g, local);
}

FineGrainedAttribute extract_attribute(const featnet::FeatureMap& map, int part_index) {
    if (!map.data.all_finite())
        throw std::invalid_argument("extract_attribute: non-finite feature map");
    const int C = map.channels();
    const int64_t S = static_cast<int64_t>(map.height()) * map.width();
    FineGrainedAttribute attr;
    attr.part_index = part_index;
    attr.mu.resize(static_cast<size_t>(C));
    attr.sigma.resize(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
        const double* p = &map.data.data[static_cast<size_t>(c) * S];
        double mu = 0.0;
        for (int64_t i = 0; i < S; ++i) mu += p[i];
        mu /= static_cast<double>(S);
        double var = 0.0;
        for (int64_t i = 0; i < S; ++i) var += (p[i] - mu) * (p[i] - mu);
        attr.mu[static_cast<size_t>(c)] = mu;
        attr.sigma[static_cast<size_t>(c)] = std::sqrt(var / static_cast<double>(S));
    }
    return attr;
}

std::map<int, double> smoothing_weights(int target_label,
                                        const std::vector<int>& same_identity_set,
                                        double epsilon) {
    if (epsilon < 0.0 || epsilon >= 1.0)
        throw std::invalid_argument("smoothing_weights: epsilon must be in [0,1)");
    const auto it = std::find(same_identity_set.begin(), same_identity_set.end(), target_label);
    if (it == same_identity_set.end())
        throw std::invalid_argument("smoothing_weights: target label not in its identity set");
    const double P = static_cast<double>(same_identity_set.size());
    std::map<int, double> w;
    for (int label : same_identity_set)
        w[label] = (label == target_label) ? 1.0 - (P - 1.0) / P * epsilon : epsilon / P;
    return w;
}

AttrClassifierState init_attr_classifier(const ClusterTable& table,
                                         const std::map<int64_t, featnet::Embedding>& features,
                                         double tau, double epsilon) {
    if (table.N_s == 0) throw std::invalid_argument("init_attr_classifier: empty table");
    const int C = static_cast<int>(features.begin()->second.vector.size());
    AttrClassifierState state;
    state.tau = tau;
    state.epsilon = epsilon;
    state.weights = Parameter("attr_classifier", Tensor({table.N_s, C}));
    for (int k = 0; k < table.N_s; ++k) {
        std::vector<double> mean(static_cast<size_t>(C), 0.0);
        const auto& cl = table.clusters[static_cast<size_t>(k)];
        for (int64_t sid : cl.samples) {
            const auto& v = features.at(sid).vector;
            for (int c = 0; c < C; ++c) mean[static_cast<size_t>(c)] += v[static_cast<size_t>(c)];
        }
        for (double& v : mean) v /= static_cast<double>(cl.samples.size());
        l2_normalize(mean);
        for (int c = 0; c < C; ++c) state.weights.value.at2(k, c) = mean[static_cast<size_t>(c)];
    }
    return state;
}

void renormalize_rows(AttrClassifierState& state) {
    const int rows = state.rows(), C = state.weights.value.dim(1);
    for (int k = 0; k < rows; ++k) {
        double n = 0.0;
        for (int c = 0; c < C; ++c) n += state.weights.value.at2(k, c) * state.weights.value.at2(k, c);
        n = std::max(std::sqrt(n), 1e-12);
        for (int c = 0; c < C; ++c) state.weights.value.at2(k, c) /= n;
    }
}

Var attr_loss_node(Tape& tape, Var embeddings, const std::vector<int>& pseudo_labels,
                   const ClusterTable& table, AttrClassifierState& state,
                   bool normalize_embeddings) {
    const Tensor& emb = tape.value(embeddings);
    if (emb.rank() != 2 || static_cast<int>(pseudo_labels.size()) != emb.dim(0))
        throw std::invalid_argument("attr_loss: embeddings/labels shape mismatch");
    if (state.rows() != table.N_s)
        throw std::invalid_argument("attr_loss: classifier rows do not match table.N_s");

    const int B = emb.dim(0);
    Tensor targets({B, table.N_s});
    for (int b = 0; b < B; ++b) {
        const int y = pseudo_labels[static_cast<size_t>(b)];
        if (y < 0 || y >= table.N_s)
            throw std::out_of_range("attr_loss: pseudo label out of range: " + std::to_string(y));
        for (const auto& [label, weight] :
             smoothing_weights(y, table.same_identity_set(y), state.epsilon))
            targets.at2(b, label) = weight;
    }

    Var f = normalize_embeddings ? tape.l2_normalize_rows(embeddings) : embeddings;
    Var logits = tape.scale(tape.matmul_nt(f, tape.param(state.weights)), 1.0 / state.tau);
    return tape.softmax_cross_entropy(logits, std::move(targets));
}

double attr_loss(const Tensor& embeddings, const std::vector<int>& pseudo_labels,
                 const ClusterTable& table, AttrClassifierState& state,
                 bool normalize_embeddings) {
    Tape tape;
    Var emb = tape.constant(embeddings);
    Var loss = attr_loss_node(tape, emb, pseudo_labels, table, state, normalize_embeddings);
    return tape.value(loss).data[0];
}

std::string cluster_inspect_json(const ClusterTable& table,
                                 const synthdata::SplitManifest& train) {
    std::map<int64_t, const synthdata::SampleRecord*> by_id;
    for (const auto& r : train.records) by_id[r.sample_id] = &r;

    nlohmann::json root;
    root["N_s"] = table.N_s;
    nlohmann::json identities = nlohmann::json::object();
    for (const auto& [identity, labels] : table.identity_sets) {
        nlohmann::json clusters = nlohmann::json::array();
        for (int label : labels) {
            nlohmann::json members = nlohmann::json::array();
            for (int64_t sid : table.clusters[static_cast<size_t>(label)].samples) {
                const auto* rec = by_id.count(sid) ? by_id.at(sid) : nullptr;
                members.push_back(
                    {{"sample_id", sid},
                     {"clothing_id", rec ? rec->clothing_id : -1},
                     {"viewpoint", rec ? synthdata::viewpoint_name(rec->viewpoint) : "?"}});
            }
            clusters.push_back({{"pseudo_label", label}, {"members", members}});
        }
        identities[std::to_string(identity)] = clusters;
    }
    root["identities"] = identities;
    return root.dump(2);
}

}  // namespace fire2::ffm
