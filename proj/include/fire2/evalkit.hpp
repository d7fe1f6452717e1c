#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fire2/synthdata.hpp"

namespace fire2::evalkit {

enum class Protocol { standard, cloth_changing };

const char* protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& s);

/// What the ranking needs to know about a sample.
struct EvalItem {
    int64_t sample_id = 0;
    int identity = 0;
    int clothing = 0;
    int camera = 0;
    std::vector<double> emb;  // must be L2-normalized

    static EvalItem from(const synthdata::SampleRecord& r, std::vector<double> embedding);
};

/// Gallery validity under a protocol. standard: drop same-identity+same-camera
/// entries; cloth_changing: additionally drop same-identity+same-clothing.
std::vector<bool> valid_mask(const EvalItem& query, const std::vector<EvalItem>& gallery,
                             Protocol protocol);

struct QueryRanking {
    std::vector<int> order;  // valid gallery indices by ascending cosine distance
    double ap = 0.0;
    int first_hit_rank = -1;  // 0-based; -1 when skipped
    bool skipped = false;
};

struct EvalReport {
    Protocol protocol = Protocol::standard;
    std::vector<double> cmc;  // cmc[k] = P(first hit within rank k+1)
    double mAP = 0.0;
    int num_queries = 0;  // queries that entered the averages
    int num_skipped = 0;

    double rank1() const { return cmc.empty() ? 0.0 : cmc[0]; }
    double rank_at(int k) const;  // 1-based rank
    std::string to_json() const;
};

/// CMC and mAP over the masked cosine-distance ranking. Ties break by gallery
/// index. Queries with zero valid positives are skipped (and counted).
/// Throws if no query survives.
EvalReport cmc_map(const std::vector<EvalItem>& queries, const std::vector<EvalItem>& gallery,
                   Protocol protocol, int max_rank = 10);

/// Per-query details, for the optional CSV dump.
std::vector<QueryRanking> rank_queries(const std::vector<EvalItem>& queries,
                                       const std::vector<EvalItem>& gallery, Protocol protocol);

}  // namespace fire2::evalkit
