#include "fire2/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "fire2/errors.hpp"
#include "fire2/tensor.hpp"

namespace fire2::evalkit {

const char* protocol_name(Protocol p) {
    return p == Protocol::standard ? "standard" : "cloth_changing";
}

Protocol protocol_from_name(const std::string& s) {
    if (s == "standard") return Protocol::standard;
    if (s == "cloth_changing") return Protocol::cloth_changing;
    throw ConfigError("protocol: must be 'standard' or 'cloth_changing'");
}

EvalItem EvalItem::from(const synthdata::SampleRecord& r, std::vector<double> embedding) {
    return EvalItem{r.sample_id, r.identity_id, r.clothing_id, r.camera_id, std::move(embedding)};
}

std::vector<bool> valid_mask(const EvalItem& query, const std::vector<EvalItem>& gallery,
                             Protocol protocol) {
    if (gallery.empty()) throw std::invalid_argument("valid_mask: empty gallery");
    std::vector<bool> mask(gallery.size(), true);
    for (size_t g = 0; g < gallery.size(); ++g) {
        const EvalItem& it = gallery[g];
        if (it.identity == query.identity && it.camera == query.camera) mask[g] = false;
        if (protocol == Protocol::cloth_changing && it.identity == query.identity &&
            it.clothing == query.clothing)
            mask[g] = false;
    }
    return mask;
}

namespace {

void check_normalized(const std::vector<EvalItem>& items, const char* who) {
    for (const auto& it : items) {
        const double n = l2_norm(it.emb);
        if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-5)
            throw std::invalid_argument(std::string(who) +
                                        ": embeddings must be finite and L2-normalized (sample " +
                                        std::to_string(it.sample_id) + ")");
    }
}

}  // namespace

std::vector<QueryRanking> rank_queries(const std::vector<EvalItem>& queries,
                                       const std::vector<EvalItem>& gallery, Protocol protocol) {
    check_normalized(queries, "cmc_map");
    check_normalized(gallery, "cmc_map");

    std::vector<QueryRanking> out;
    for (const auto& q : queries) {
        const std::vector<bool> mask = valid_mask(q, gallery, protocol);
        QueryRanking r;
        int positives = 0;
        std::vector<std::pair<double, int>> ranked;
        for (size_t g = 0; g < gallery.size(); ++g) {
            if (!mask[g]) continue;
            if (gallery[g].identity == q.identity) ++positives;
            ranked.emplace_back(1.0 - dot(q.emb, gallery[g].emb), static_cast<int>(g));
        }
        if (positives == 0) {
            r.skipped = true;
            out.push_back(std::move(r));
            continue;
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return a.second < b.second;  // tie: gallery index ascending
        });
        int hits = 0;
        for (size_t rank = 0; rank < ranked.size(); ++rank) {
            r.order.push_back(ranked[rank].second);
            if (gallery[static_cast<size_t>(ranked[rank].second)].identity == q.identity) {
                ++hits;
                r.ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
                if (r.first_hit_rank < 0) r.first_hit_rank = static_cast<int>(rank);
            }
        }
        r.ap /= static_cast<double>(positives);
        out.push_back(std::move(r));
    }
    return out;
}

EvalReport cmc_map(const std::vector<EvalItem>& queries, const std::vector<EvalItem>& gallery,
                   Protocol protocol, int max_rank) {
    const auto rankings = rank_queries(queries, gallery, protocol);
    EvalReport rep;
    rep.protocol = protocol;
    rep.cmc.assign(static_cast<size_t>(max_rank), 0.0);
    for (const auto& r : rankings) {
        if (r.skipped) {
            ++rep.num_skipped;
            continue;
        }
        rep.mAP += r.ap;
        for (int k = r.first_hit_rank; k < max_rank; ++k) rep.cmc[static_cast<size_t>(k)] += 1.0;
        ++rep.num_queries;
    }
    if (rep.num_queries == 0)
        throw std::invalid_argument("cmc_map: no query has a valid positive under this protocol");
    rep.mAP /= rep.num_queries;
    for (double& v : rep.cmc) v /= rep.num_queries;
    return rep;
}

double EvalReport::rank_at(int k) const {
    if (k < 1 || k > static_cast<int>(cmc.size()))
        throw std::out_of_range("rank_at: k outside the computed CMC range");
    return cmc[static_cast<size_t>(k - 1)];
}

std::string EvalReport::to_json() const {
    nlohmann::json j = {
        {"protocol", protocol_name(protocol)},
        {"Rank-1", cmc.empty() ? 0.0 : cmc[0]},
        {"Rank-5", cmc.size() >= 5 ? cmc[4] : cmc.back()},
        {"Rank-10", cmc.size() >= 10 ? cmc[9] : cmc.back()},
        {"mAP", mAP},
        {"num_queries", num_queries},
        {"num_skipped", num_skipped},
        {"cmc", cmc},
        {"note", "synthetic-benchmark protocol: generic same-camera rule"},
    };
    return j.dump(2);
}

}  // namespace fire2::evalkit
