#pragma once

// Contrastive Active Sampling: contrastive log-prob decoding against the
// previous round's hypotheses, best-versus-second-best margins, rank
// statistics, class transferability, and the hybrid query score. Also the
// classic active-learning baselines used for comparison. Everything here is
// a pure function of its inputs.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "lftl/tensor.hpp"

namespace lftl {

struct HypothesisLog {
    int round = 0;
    std::map<int, std::vector<double>> probs_current;  // id -> p^(r)
    std::map<int, std::vector<double>> probs_prev;     // id -> p^(r-1), empty iff round 0
};

struct SampleScore {
    int id = -1;
    double u_cm = 0.0;      // contrastive BvSB margin
    int y_a = -1;           // best class
    int y_b = -1;           // second-best class
    double u_ct_of_ya = 0.0;
    double u = 0.0;         // u_cm + lambda * u_ct(y_a)
};

struct CasConfig {
    double alpha = 0.03;   // contrastive weight
    double lambda = 1.0;   // class-transferability weight
    int kappa = 100;       // top-margin statistic window
    int b = 1;             // per-round query count

    void validate() const {
        if (alpha < 0.0 || lambda < 0.0)
            throw std::invalid_argument("CasConfig: weights must be >= 0");
        if (kappa < 1) throw std::invalid_argument("CasConfig: kappa must be >= 1");
        if (b < 1) throw std::invalid_argument("CasConfig: b must be >= 1");
    }
};

// round 0:  log p_r
// round>0:  log p_r + alpha*(log p_r - log p_prev), logs clamped at 1e-12
inline std::vector<double> contrastive_log_probs(
    const std::vector<double>& p_r,
    const std::optional<std::vector<double>>& p_prev, double alpha, int round) {
    if (round > 0 && !p_prev)
        throw std::invalid_argument("contrastive_log_probs: p_prev required for round > 0");
    if (p_prev && p_prev->size() != p_r.size())
        throw std::invalid_argument("contrastive_log_probs: length mismatch");
    std::vector<double> out(p_r.size());
    for (size_t c = 0; c < p_r.size(); ++c) {
        if (p_r[c] < 0.0) throw std::domain_error("contrastive_log_probs: negative prob");
        double lp = std::log(std::max(p_r[c], kLogEps));
        if (round > 0) {
            double lq = std::log(std::max((*p_prev)[c], kLogEps));
            lp += alpha * (lp - lq);
        }
        out[c] = lp;
    }
    return out;
}

// (u_cm, y_a, y_b); ties broken toward the lowest class index
inline std::tuple<double, int, int> bvsb_margin(const std::vector<double>& ptilde) {
    if (ptilde.size() < 2)
        throw std::invalid_argument("bvsb_margin: need at least 2 classes");
    int y_a = 0;
    for (size_t c = 1; c < ptilde.size(); ++c)
        if (ptilde[c] > ptilde[y_a]) y_a = static_cast<int>(c);
    int y_b = y_a == 0 ? 1 : 0;
    for (size_t c = 0; c < ptilde.size(); ++c) {
        if (static_cast<int>(c) == y_a) continue;
        if (ptilde[c] > ptilde[y_b]) y_b = static_cast<int>(c);
    }
    return {ptilde[y_a] - ptilde[y_b], y_a, y_b};
}

// rank(i) = #{k : u_cm(k) < u_cm(i)}; equal scores share a rank
inline std::vector<int> rank_scores(const std::vector<double>& u_cm) {
    size_t n = u_cm.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return u_cm[a] < u_cm[b]; });
    std::vector<int> ranks(n, 0);
    int below = 0;
    for (size_t k = 0; k < n; ++k) {
        if (k > 0 && u_cm[order[k]] > u_cm[order[k - 1]]) below = static_cast<int>(k);
        ranks[order[k]] = below;
    }
    return ranks;
}

// u_ct(c): frequency of class c among the kappa largest margins, normalized
// by the most frequent class there. All-zero counts give an all-zero vector.
inline std::vector<double> class_transferability(const std::vector<int>& y_a,
                                                 const std::vector<int>& ranks,
                                                 int kappa, int classes) {
    if (y_a.size() != ranks.size())
        throw std::invalid_argument("class_transferability: length mismatch");
    int n = static_cast<int>(y_a.size());
    // kappa clamped to the pool size: the window then covers every sample
    int threshold = kappa >= n ? -1 : n - kappa;
    std::vector<int> counts(classes, 0);
    for (int i = 0; i < n; ++i)
        if (ranks[i] > threshold) ++counts[y_a[i]];
    int max_count = *std::max_element(counts.begin(), counts.end());
    std::vector<double> u_ct(classes, 0.0);
    if (max_count > 0)
        for (int c = 0; c < classes; ++c)
            u_ct[c] = static_cast<double>(counts[c]) / max_count;
    return u_ct;
}

// full pipeline: contrastive decode -> BvSB -> ranks -> u_ct -> hybrid score
inline std::vector<SampleScore> cas_scores(const HypothesisLog& log,
                                           const CasConfig& config, int classes) {
    config.validate();
    std::vector<SampleScore> scores;
    std::vector<double> margins;
    for (const auto& [id, p_r] : log.probs_current) {
        std::optional<std::vector<double>> p_prev;
        if (log.round > 0) {
            auto it = log.probs_prev.find(id);
            if (it == log.probs_prev.end())
                throw std::invalid_argument("cas_scores: id " + std::to_string(id) +
                                            " missing from previous hypotheses");
            p_prev = it->second;
        }
        auto ptilde = contrastive_log_probs(p_r, p_prev, config.alpha, log.round);
        auto [u_cm, y_a, y_b] = bvsb_margin(ptilde);
        SampleScore s;
        s.id = id;
        s.u_cm = u_cm;
        s.y_a = y_a;
        s.y_b = y_b;
        scores.push_back(s);
        margins.push_back(u_cm);
    }
    auto ranks = rank_scores(margins);
    std::vector<int> best(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) best[i] = scores[i].y_a;
    auto u_ct = class_transferability(best, ranks, config.kappa, classes);
    for (auto& s : scores) {
        s.u_ct_of_ya = u_ct[s.y_a];
        s.u = s.u_cm + config.lambda * s.u_ct_of_ya;
    }
    return scores;
}

// the b ids with smallest u; ties broken by ascending id
inline std::vector<int> select_queries(const std::vector<SampleScore>& scores, int b,
                                       const std::set<int>& already_labeled = {}) {
    std::vector<const SampleScore*> pool;
    for (const auto& s : scores)
        if (!already_labeled.count(s.id)) pool.push_back(&s);
    if (b > static_cast<int>(pool.size()))
        throw std::invalid_argument("select_queries: b exceeds pool size");
    std::sort(pool.begin(), pool.end(), [](const SampleScore* a, const SampleScore* b2) {
        if (a->u != b2->u) return a->u < b2->u;
        return a->id < b2->id;
    });
    std::vector<int> out;
    out.reserve(b);
    for (int i = 0; i < b; ++i) out.push_back(pool[i]->id);
    return out;
}

// ---- Table-style baselines ----

struct BaselinePool {
    std::vector<int> ids;      // unlabeled ids, row-aligned with the matrices
    Tensor probs;              // n x C
    Tensor features;           // n x d
    Tensor labeled_features;   // n_l x d (kcenter seeds)
};

inline const std::vector<std::string>& baseline_strategy_names() {
    static const std::vector<std::string> names = {
        "random",       "entropy_max",    "entropy_min", "least_confidence",
        "bvsb",         "kcenter_greedy", "kmeans"};
    return names;
}

namespace detail {

inline double row_entropy(const Tensor& p, int i) {
    double h = 0.0;
    for (int c = 0; c < p.cols(); ++c) {
        double v = p.at(i, c);
        if (v > 0.0) h -= v * std::log(std::max(v, kLogEps));
    }
    return h;
}

inline double sq_dist(const Tensor& a, int i, const Tensor& b, int j) {
    double s = 0.0;
    for (int k = 0; k < a.cols(); ++k) {
        double d = a.at(i, k) - b.at(j, k);
        s += d * d;
    }
    return s;
}

// smallest key wins; ties broken by ascending id
inline std::vector<int> take_smallest(const std::vector<int>& ids,
                                      const std::vector<double>& key, int b) {
    std::vector<size_t> order(ids.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) {
        if (key[x] != key[y]) return key[x] < key[y];
        return ids[x] < ids[y];
    });
    std::vector<int> out;
    for (int i = 0; i < b; ++i) out.push_back(ids[order[i]]);
    return out;
}

inline std::vector<int> kcenter_greedy(const BaselinePool& pool, int b) {
    int n = static_cast<int>(pool.ids.size());
    std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < pool.labeled_features.rows(); ++j)
            min_d[i] = std::min(min_d[i], sq_dist(pool.features, i,
                                                  pool.labeled_features, j));
    if (pool.labeled_features.rows() == 0)
        std::fill(min_d.begin(), min_d.end(), std::numeric_limits<double>::max());
    std::vector<bool> picked(n, false);
    std::vector<int> out;
    for (int step = 0; step < b; ++step) {
        int best = -1;
        for (int i = 0; i < n; ++i) {
            if (picked[i]) continue;
            if (best == -1 || min_d[i] > min_d[best] ||
                (min_d[i] == min_d[best] && pool.ids[i] < pool.ids[best]))
                best = i;
        }
        picked[best] = true;
        out.push_back(pool.ids[best]);
        for (int i = 0; i < n; ++i)
            if (!picked[i])
                min_d[i] = std::min(min_d[i], sq_dist(pool.features, i,
                                                      pool.features, best));
    }
    return out;
}

inline std::vector<int> kmeans_select(const BaselinePool& pool, int b,
                                      std::mt19937_64& rng) {
    int n = static_cast<int>(pool.ids.size());
    int d = pool.features.cols();
    // init centroids from b distinct random points
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor centroids(b, d);
    for (int k = 0; k < b; ++k)
        for (int j = 0; j < d; ++j) centroids.at(k, j) = pool.features.at(perm[k], j);

    std::vector<int> assign(n, 0);
    for (int iter = 0; iter < 50; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = sq_dist(pool.features, i, centroids, 0);
            for (int k = 1; k < b; ++k) {
                double dk = sq_dist(pool.features, i, centroids, k);
                if (dk < bd) {
                    bd = dk;
                    best = k;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        Tensor sums(b, d);
        std::vector<int> counts(b, 0);
        for (int i = 0; i < n; ++i) {
            ++counts[assign[i]];
            for (int j = 0; j < d; ++j) sums.at(assign[i], j) += pool.features.at(i, j);
        }
        for (int k = 0; k < b; ++k)
            if (counts[k] > 0)
                for (int j = 0; j < d; ++j) centroids.at(k, j) = sums.at(k, j) / counts[k];
        if (!changed) break;
    }

    // nearest-to-centroid point per cluster, without repeats
    std::vector<bool> taken(n, false);
    std::vector<int> out;
    for (int k = 0; k < b; ++k) {
        int best = -1;
        double bd = 0.0;
        for (int i = 0; i < n; ++i) {
            if (taken[i]) continue;
            double dk = sq_dist(pool.features, i, centroids, k);
            if (best == -1 || dk < bd || (dk == bd && pool.ids[i] < pool.ids[best])) {
                best = i;
                bd = dk;
            }
        }
        taken[best] = true;
        out.push_back(pool.ids[best]);
    }
    return out;
}

}  // namespace detail

inline std::vector<int> baseline_select(const std::string& strategy,
                                        const BaselinePool& pool, int b,
                                        uint64_t seed) {
    int n = static_cast<int>(pool.ids.size());
    if (b > n) throw std::invalid_argument("baseline_select: b exceeds pool size");
    if (strategy == "random") {
        std::mt19937_64 rng(seed);
        std::vector<int> ids = pool.ids;
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(b);
        return ids;
    }
    if (strategy == "entropy_max" || strategy == "entropy_min") {
        std::vector<double> key(n);
        double sign = strategy == "entropy_max" ? -1.0 : 1.0;
        for (int i = 0; i < n; ++i) key[i] = sign * detail::row_entropy(pool.probs, i);
        return detail::take_smallest(pool.ids, key, b);
    }
    if (strategy == "least_confidence") {
        std::vector<double> key(n);
        for (int i = 0; i < n; ++i) {
            double m = pool.probs.at(i, 0);
            for (int c = 1; c < pool.probs.cols(); ++c)
                m = std::max(m, pool.probs.at(i, c));
            key[i] = m;  // smallest max-prob first
        }
        return detail::take_smallest(pool.ids, key, b);
    }
    if (strategy == "bvsb") {
        // non-contrastive margin on the same log-prob decoding CAS uses
        std::vector<double> key(n);
        for (int i = 0; i < n; ++i) {
            auto lp = contrastive_log_probs(pool.probs.row(i), std::nullopt, 0.0, 0);
            auto [m, ya, yb] = bvsb_margin(lp);
            key[i] = m;
        }
        return detail::take_smallest(pool.ids, key, b);
    }
    if (strategy == "kcenter_greedy") return detail::kcenter_greedy(pool, b);
    if (strategy == "kmeans") {
        std::mt19937_64 rng(seed);
        return detail::kmeans_select(pool, b, rng);
    }
    throw std::invalid_argument("baseline_select: unknown strategy '" + strategy + "'");
}

}  // namespace lftl
