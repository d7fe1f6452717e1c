#pragma once

// Test-side oracles, independent of the library implementations they check.
// Everything here is deliberately naive: double loops, textbook pseudocode,
// O(n^3) enumerations.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "fire2/tensor.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// finite differences

/// Central difference df/dx_i with step scaled to the entry magnitude.
inline double central_diff(const std::function<double(const fire2::Tensor&)>& f, fire2::Tensor x,
                           int64_t i, double h = 1e-5) {
    const double orig = x[i];
    const double step = h * std::max(1.0, std::abs(orig));
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    x[i] = orig;
    return (fp - fm) / (2.0 * step);
}

/// Max |analytic - numeric| scaled by the largest gradient magnitude.
inline double grad_rel_err(const std::function<double(const fire2::Tensor&)>& f,
                           const fire2::Tensor& x, const fire2::Tensor& analytic,
                           double h = 1e-5) {
    double scale = 1e-10;
    std::vector<double> numeric(analytic.data.size());
    for (int64_t i = 0; i < x.numel(); ++i) {
        numeric[static_cast<size_t>(i)] = central_diff(f, x, i, h);
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[static_cast<size_t>(i)])});
    }
    double worst = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i)
        worst = std::max(worst, std::abs(analytic[i] - numeric[static_cast<size_t>(i)]) / scale);
    return worst;
}

// ---------------------------------------------------------------------------
// moments (Eq. 1-2 style, double loop)

struct MeanStd {
    double mu;
    double sigma;
};

/// Population mean/std over one channel plane, written the naive way.
inline MeanStd naive_mean_std(const std::vector<double>& plane) {
    double mu = 0.0;
    for (double v : plane) mu += v;
    mu /= static_cast<double>(plane.size());
    double acc = 0.0;
    for (double v : plane) acc += (v - mu) * (v - mu);
    return {mu, std::sqrt(acc / static_cast<double>(plane.size()))};
}

// ---------------------------------------------------------------------------
// DBSCAN (textbook label-spreading formulation)

/// Classic DBSCAN over a precomputed distance matrix; returns labels with
/// noise points marked -1. Neighborhoods are inclusive (d <= eps) and contain
/// the point itself.
inline std::vector<int> naive_dbscan(const std::vector<std::vector<double>>& dist, double eps,
                                     int min_samples) {
    const int n = static_cast<int>(dist.size());
    const int UNDEF = -2, NOISE = -1;
    std::vector<int> label(static_cast<size_t>(n), UNDEF);
    auto neighbors = [&](int p) {
        std::vector<int> out;
        for (int q = 0; q < n; ++q)
            if (dist[static_cast<size_t>(p)][static_cast<size_t>(q)] <= eps) out.push_back(q);
        return out;
    };
    int c = 0;
    for (int p = 0; p < n; ++p) {
        if (label[static_cast<size_t>(p)] != UNDEF) continue;
        auto nb = neighbors(p);
        if (static_cast<int>(nb.size()) < min_samples) {
            label[static_cast<size_t>(p)] = NOISE;
            continue;
        }
        const int cid = c++;
        label[static_cast<size_t>(p)] = cid;
        std::vector<int> seeds = nb;
        for (size_t k = 0; k < seeds.size(); ++k) {
            const int q = seeds[k];
            if (label[static_cast<size_t>(q)] == NOISE) label[static_cast<size_t>(q)] = cid;
            if (label[static_cast<size_t>(q)] != UNDEF) continue;
            label[static_cast<size_t>(q)] = cid;
            auto nq = neighbors(q);
            if (static_cast<int>(nq.size()) >= min_samples)
                seeds.insert(seeds.end(), nq.begin(), nq.end());
        }
    }
    return label;
}

/// Partition equality ignoring label numbering.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    std::map<int, int> fwd, bwd;
    for (size_t i = 0; i < a.size(); ++i) {
        auto f = fwd.find(a[i]);
        auto g = bwd.find(b[i]);
        if (f == fwd.end() && g == bwd.end()) {
            fwd[a[i]] = b[i];
            bwd[b[i]] = a[i];
        } else if (f == fwd.end() || g == bwd.end() || f->second != b[i] || g->second != a[i]) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// retrieval metrics (per-query quadratic scan)

struct NaiveEvalItem {
    int identity;
    int clothing;
    int camera;
    std::vector<double> emb;  // already L2-normalized
};

struct NaiveEvalResult {
    std::vector<double> cmc;  // cmc[k] = hit within rank k+1
    double mAP;
    int used_queries;
    int skipped_queries;
};

/// CMC/mAP the slow way: for every query, scan the whole gallery per rank
/// position instead of sorting. cloth_changing additionally discards
/// same-identity same-clothing gallery items.
inline NaiveEvalResult naive_cmc_map(const std::vector<NaiveEvalItem>& queries,
                                     const std::vector<NaiveEvalItem>& gallery,
                                     bool cloth_changing, int max_rank) {
    NaiveEvalResult res;
    res.cmc.assign(static_cast<size_t>(max_rank), 0.0);
    res.mAP = 0.0;
    res.used_queries = 0;
    res.skipped_queries = 0;
    for (const auto& q : queries) {
        std::vector<int> valid;
        for (size_t g = 0; g < gallery.size(); ++g) {
            const auto& it = gallery[g];
            bool discard = it.identity == q.identity && it.camera == q.camera;
            if (cloth_changing && it.identity == q.identity && it.clothing == q.clothing)
                discard = true;
            if (!discard) valid.push_back(static_cast<int>(g));
        }
        int positives = 0;
        for (int g : valid)
            if (gallery[static_cast<size_t>(g)].identity == q.identity) ++positives;
        if (positives == 0) {
            ++res.skipped_queries;
            continue;
        }
        // rank by distance, ties by gallery index
        std::vector<std::pair<double, int>> order;
        for (int g : valid) {
            double d = 1.0;
            const auto& e = gallery[static_cast<size_t>(g)].emb;
            double dotv = 0.0;
            for (size_t c = 0; c < e.size(); ++c) dotv += e[c] * q.emb[c];
            d = 1.0 - dotv;
            order.emplace_back(d, g);
        }
        std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return a.second < b.second;
        });
        int first_hit = -1;
        int hits = 0;
        double ap = 0.0;
        for (size_t r = 0; r < order.size(); ++r) {
            if (gallery[static_cast<size_t>(order[r].second)].identity == q.identity) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(r + 1);
                if (first_hit < 0) first_hit = static_cast<int>(r);
            }
        }
        ap /= static_cast<double>(positives);
        res.mAP += ap;
        for (int k = first_hit; k < max_rank; ++k) res.cmc[static_cast<size_t>(k)] += 1.0;
        ++res.used_queries;
    }
    if (res.used_queries > 0) {
        res.mAP /= res.used_queries;
        for (double& v : res.cmc) v /= res.used_queries;
    }
    return res;
}

// ---------------------------------------------------------------------------
// batch-hard triplet by full enumeration

inline double naive_batch_hard_triplet(const std::vector<std::vector<double>>& emb,
                                       const std::vector<int>& ids, double margin) {
    const int B = static_cast<int>(emb.size());
    auto d = [&](int i, int j) {
        double s = 0.0;
        for (size_t c = 0; c < emb[static_cast<size_t>(i)].size(); ++c) {
            double t = emb[static_cast<size_t>(i)][c] - emb[static_cast<size_t>(j)][c];
            s += t * t;
        }
        return std::sqrt(s);
    };
    double total = 0.0;
    for (int a = 0; a < B; ++a) {
        double hp = -1.0, hn = -1.0;
        for (int p = 0; p < B; ++p) {
            if (p == a || ids[static_cast<size_t>(p)] != ids[static_cast<size_t>(a)]) continue;
            hp = std::max(hp, d(a, p));
        }
        for (int ng = 0; ng < B; ++ng) {
            if (ids[static_cast<size_t>(ng)] == ids[static_cast<size_t>(a)]) continue;
            double dd = d(a, ng);
            if (hn < 0.0 || dd < hn) hn = dd;
        }
        total += std::max(0.0, hp - hn + margin);
    }
    return total / B;
}

/// Plain mean one-hot cross-entropy on given logits.
inline double naive_cross_entropy(const std::vector<std::vector<double>>& logits,
                                  const std::vector<int>& labels) {
    double loss = 0.0;
    for (size_t n = 0; n < logits.size(); ++n) {
        double mx = logits[n][0];
        for (double v : logits[n]) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : logits[n]) z += std::exp(v - mx);
        loss -= logits[n][static_cast<size_t>(labels[n])] - mx - std::log(z);
    }
    return loss / static_cast<double>(logits.size());
}

}  // namespace oracle
