#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "datqa/array.hpp"
#include "datqa/errors.hpp"
#include "datqa/rng.hpp"

namespace datqa {

enum class StrategyKind { Source, Kmeans, Random };

inline const char* strategy_name(StrategyKind k) {
    switch (k) {
        case StrategyKind::Source: return "source";
        case StrategyKind::Kmeans: return "kmeans";
        case StrategyKind::Random: return "random";
    }
    return "?";
}

inline StrategyKind parse_strategy(const std::string& s) {
    if (s == "source") return StrategyKind::Source;
    if (s == "kmeans") return StrategyKind::Kmeans;
    if (s == "random") return StrategyKind::Random;
    throw Error("unknown strategy '" + s + "' (expected source|kmeans|random)");
}

struct DomainStrategy {
    StrategyKind kind = StrategyKind::Source;
    size_t k = 8;       // Kmeans cluster count
    size_t d = 2;       // Random label count
    uint64_t seed = 0;
    bool standardize = true;
    size_t restarts = 1;

    void validate() const {
        if (kind == StrategyKind::Kmeans && k < 2) throw Error("kmeans strategy requires K >= 2");
        if (kind == StrategyKind::Random && d < 2) throw Error("random strategy requires D >= 2");
        if (kind == StrategyKind::Kmeans && restarts < 1) throw Error("kmeans restarts must be >= 1");
    }
};

// Temporal mean pooling: T x F -> F. Rank-1 inputs pass through unchanged.
inline Array mean_pool(const Array& features) {
    if (features.rank() == 1) return features;
    if (features.rank() != 2) throw ShapeError("mean_pool: expected rank 1 or 2, got " + shape_str(features.shape));
    const size_t t = features.shape[0], f = features.shape[1];
    if (t == 0) throw ShapeError("mean_pool: zero frames");
    Array out({f});
    for (size_t i = 0; i < t; ++i)
        for (size_t j = 0; j < f; ++j) out[j] += features.at(i, j);
    for (size_t j = 0; j < f; ++j) out[j] /= static_cast<double>(t);
    return out;
}

struct DomainAssignment {
    std::map<std::string, size_t> labels;  // record id -> label in [0, D)
    size_t D = 0;
    std::vector<std::string> label_names;  // Source: index -> source tag
    Array centroids;                       // Kmeans: K x F (in standardized space)
    Array feat_mean;                       // Kmeans standardization, empty otherwise
    Array feat_std;

    size_t label_of(const std::string& id) const {
        auto it = labels.find(id);
        if (it == labels.end()) throw Error("no domain label for record '" + id + "'");
        return it->second;
    }
};

// Distinct source tags sorted lexicographically define the label space.
// ids/sources are parallel; every record must carry a non-empty tag.
inline DomainAssignment assign_source(const std::vector<std::string>& ids,
                                      const std::vector<std::string>& sources) {
    if (ids.size() != sources.size()) throw Error("assign_source: ids/sources length mismatch");
    DomainAssignment out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (sources[i].empty()) throw DataError("assign_source: record '" + ids[i] + "' has an empty source tag");
    }
    std::vector<std::string> uniq = sources;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    if (uniq.size() < 2) throw DataError("assign_source: need at least 2 distinct sources, found " +
                                         std::to_string(uniq.size()));
    out.label_names = uniq;
    out.D = uniq.size();
    for (size_t i = 0; i < ids.size(); ++i) {
        size_t idx = static_cast<size_t>(std::lower_bound(uniq.begin(), uniq.end(), sources[i]) - uniq.begin());
        out.labels[ids[i]] = idx;
    }
    return out;
}

// Labels keyed by (seed, record id) so assignment survives corpus reordering.
inline DomainAssignment assign_random(const std::vector<std::string>& ids, size_t d, uint64_t seed) {
    if (d < 2) throw Error("assign_random: D must be >= 2");
    DomainAssignment out;
    out.D = d;
    for (const auto& id : ids) {
        Rng r(derive(seed, "domain/" + id));
        out.labels[id] = static_cast<size_t>(r.below(static_cast<uint64_t>(d)));
    }
    return out;
}

struct KmeansResult {
    Array centroids;  // K x F
    std::vector<size_t> labels;
    double inertia = 0.0;
};

namespace detail {

inline double sqdist(const double* a, const double* b, size_t f) {
    double acc = 0.0;
    for (size_t j = 0; j < f; ++j) {
        double d = a[j] - b[j];
        acc += d * d;
    }
    return acc;
}

inline KmeansResult kmeans_single(const Array& x, size_t k, Rng& rng) {
    const size_t n = x.shape[0], f = x.shape[1];

    // k-means++: D^2-weighted seeding. Zero total weight (duplicates already
    // covered) falls back to the first unchosen point.
    std::vector<size_t> seeds;
    std::vector<double> mind(n, std::numeric_limits<double>::infinity());
    std::vector<char> chosen(n, 0);
    size_t first = static_cast<size_t>(rng.below(n));
    seeds.push_back(first);
    chosen[first] = 1;
    while (seeds.size() < k) {
        const double* c = &x.data[seeds.back() * f];
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            mind[i] = std::min(mind[i], sqdist(&x.data[i * f], c, f));
            total += chosen[i] ? 0.0 : mind[i];
        }
        size_t pick = n;
        if (total > 0.0) {
            double target = rng.uniform01() * total;
            double acc = 0.0;
            for (size_t i = 0; i < n; ++i) {
                if (chosen[i]) continue;
                acc += mind[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        }
        if (pick == n)
            for (size_t i = 0; i < n; ++i)
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
        seeds.push_back(pick);
        chosen[pick] = 1;
    }

    Array centroids({k, f});
    for (size_t c = 0; c < k; ++c)
        std::copy(&x.data[seeds[c] * f], &x.data[seeds[c] * f] + f, &centroids.data[c * f]);

    std::vector<size_t> labels(n, 0), prev(n, k);
    std::vector<size_t> counts(k, 0);
    double prev_inertia = std::numeric_limits<double>::infinity();
    double inertia = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
        // Assignment, ties to the lowest centroid index.
        for (size_t i = 0; i < n; ++i) {
            size_t best = 0;
            double bd = sqdist(&x.data[i * f], &centroids.data[0], f);
            for (size_t c = 1; c < k; ++c) {
                double d = sqdist(&x.data[i * f], &centroids.data[c * f], f);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            labels[i] = best;
        }
        std::fill(counts.begin(), counts.end(), 0);
        for (size_t l : labels) ++counts[l];

        // Reseed each empty cluster to the point farthest from its centroid,
        // drawing only from clusters that can spare a member.
        for (size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            double worst = -1.0;
            size_t victim = n;
            for (size_t i = 0; i < n; ++i) {
                if (counts[labels[i]] < 2) continue;
                double d = sqdist(&x.data[i * f], &centroids.data[labels[i] * f], f);
                if (d > worst) {
                    worst = d;
                    victim = i;
                }
            }
            if (victim == n) throw NumericError("kmeans: cannot repopulate empty cluster");
            --counts[labels[victim]];
            labels[victim] = c;
            counts[c] = 1;
        }

        // Centroid update and objective; Lloyd is monotone, so enforce it.
        centroids = Array::zeros({k, f});
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < f; ++j) centroids.data[labels[i] * f + j] += x.data[i * f + j];
        for (size_t c = 0; c < k; ++c)
            for (size_t j = 0; j < f; ++j) centroids.data[c * f + j] /= static_cast<double>(counts[c]);
        inertia = 0.0;
        for (size_t i = 0; i < n; ++i) inertia += sqdist(&x.data[i * f], &centroids.data[labels[i] * f], f);
        if (inertia > prev_inertia * (1.0 + 1e-12) + 1e-12)
            throw NumericError("kmeans: inertia increased across an iteration");
        if (labels == prev) break;
        prev = labels;
        prev_inertia = inertia;
    }
    return {std::move(centroids), std::move(labels), inertia};
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding; best of `restarts` runs by
// inertia (first winner kept on ties).
inline KmeansResult kmeans_fit(const Array& embeddings, size_t k, uint64_t seed, size_t restarts = 1) {
    if (embeddings.rank() != 2) throw ShapeError("kmeans_fit: embeddings must be N x F");
    const size_t n = embeddings.shape[0];
    if (k < 2) throw Error("kmeans_fit: K must be >= 2");
    if (n < k) throw Error("kmeans_fit: need at least K points, got " + std::to_string(n));
    if (!embeddings.all_finite()) throw NumericError("kmeans_fit: non-finite embedding");
    KmeansResult best;
    bool have = false;
    for (size_t r = 0; r < restarts; ++r) {
        Rng rng(derive(seed, "kmeans", r, 0));
        KmeansResult cur = detail::kmeans_single(embeddings, k, rng);
        if (!have || cur.inertia < best.inertia) {
            best = std::move(cur);
            have = true;
        }
    }
    return best;
}

// Nearest centroid by Euclidean distance; ties to the lowest index.
inline size_t kmeans_assign(const Array& x, const Array& centroids) {
    if (x.rank() != 1 || centroids.rank() != 2 || x.numel() != centroids.shape[1])
        throw ShapeError("kmeans_assign: dimension mismatch");
    const size_t k = centroids.shape[0], f = centroids.shape[1];
    size_t best = 0;
    double bd = detail::sqdist(x.data.data(), &centroids.data[0], f);
    for (size_t c = 1; c < k; ++c) {
        double d = detail::sqdist(x.data.data(), &centroids.data[c * f], f);
        if (d < bd) {
            bd = d;
            best = c;
        }
    }
    return best;
}

// Per-dimension z-score statistics over a set of pooled embeddings.
inline void feature_stats(const Array& x, Array& mean, Array& sd) {
    const size_t n = x.shape[0], f = x.shape[1];
    mean = Array::zeros({f});
    sd = Array::zeros({f});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < f; ++j) mean[j] += x.at(i, j);
    for (size_t j = 0; j < f; ++j) mean[j] /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < f; ++j) {
            double d = x.at(i, j) - mean[j];
            sd[j] += d * d;
        }
    for (size_t j = 0; j < f; ++j) {
        sd[j] = std::sqrt(sd[j] / static_cast<double>(n));
        if (sd[j] < 1e-12) sd[j] = 1.0;  // constant dimension: leave centered at zero
    }
}

inline Array standardize_with(const Array& x, const Array& mean, const Array& sd) {
    Array out = x;
    const size_t f = mean.numel();
    if (out.rank() == 1) {
        for (size_t j = 0; j < f; ++j) out[j] = (out[j] - mean[j]) / sd[j];
    } else {
        for (size_t i = 0; i < out.shape[0]; ++i)
            for (size_t j = 0; j < f; ++j) out.at(i, j) = (out.at(i, j) - mean[j]) / sd[j];
    }
    return out;
}

}  // namespace datqa
