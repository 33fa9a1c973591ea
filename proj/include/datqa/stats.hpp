#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "datqa/array.hpp"
#include "datqa/errors.hpp"
#include "datqa/rng.hpp"

namespace datqa {

// Average (fractional) ranks, 1-based; ties share the mean of their positions.
inline std::vector<double> fractional_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("pearson: length mismatch");
    if (a.size() < 2) throw Error("pearson: need at least 2 points");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) throw NumericError("pearson: constant input");
    return sab / std::sqrt(saa * sbb);
}

// Spearman rank correlation with tie-averaged ranks.
inline double srcc(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("srcc: length mismatch");
    if (a.size() < 2) throw Error("srcc: need at least 2 points");
    return pearson(fractional_ranks(a), fractional_ranks(b));
}

inline double mse(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("mse: length mismatch");
    if (a.empty()) throw Error("mse: empty input");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw NumericError("betacf: continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double betai(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) throw Error("betai: x outside [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                               b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * detail::betacf(a, b, x) / a;
    return 1.0 - bt * detail::betacf(b, a, 1.0 - x) / b;
}

// One-sided Student-t CDF.
inline double t_cdf(double t, double df) {
    if (df <= 0.0) throw Error("t_cdf: df must be > 0");
    const double p = 0.5 * betai(0.5 * df, 0.5, df / (df + t * t));
    return t >= 0.0 ? 1.0 - p : p;
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
};

// Two-sided paired t-test on matched error vectors (d = a - b, n-1 variance).
inline TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("paired_ttest: length mismatch");
    const size_t n = a.size();
    if (n < 2) throw Error("paired_ttest: need at least 2 pairs");
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    TTestResult r;
    r.df = static_cast<double>(n - 1);
    if (sd == 0.0) {
        if (mean == 0.0) return r;  // identical errors: t=0, p=1
        throw NumericError("paired_ttest: zero variance with nonzero mean difference");
    }
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p = betai(0.5 * r.df, 0.5, r.df / (r.df + r.t * r.t));
    return r;
}

struct SystemMeans {
    std::vector<std::string> systems;  // lexicographic
    std::vector<double> pred;
    std::vector<double> truth;
};

// First-average protocol: one (mean pred, mean truth) pair per system.
inline SystemMeans system_aggregate(const std::vector<double>& preds, const std::vector<double>& truths,
                                    const std::vector<std::string>& systems) {
    if (preds.size() != truths.size() || preds.size() != systems.size())
        throw Error("system_aggregate: misaligned inputs");
    if (preds.empty()) throw Error("system_aggregate: empty input");
    std::map<std::string, std::array<double, 3>> acc;  // sum pred, sum truth, count
    for (size_t i = 0; i < preds.size(); ++i) {
        if (systems[i].empty()) throw DataError("system_aggregate: record without system id");
        auto& a = acc[systems[i]];
        a[0] += preds[i];
        a[1] += truths[i];
        a[2] += 1.0;
    }
    SystemMeans out;
    for (const auto& [sys, a] : acc) {
        out.systems.push_back(sys);
        out.pred.push_back(a[0] / a[2]);
        out.truth.push_back(a[1] / a[2]);
    }
    return out;
}

// ---- principal components via power iteration -----------------------------

struct PcaResult {
    Array components;                 // n_components x F
    std::vector<double> eigenvalues;  // scatter-matrix eigenvalues, descending
    Array coords;                     // n x n_components
    Array mean;                       // F
    bool rank_deficient = false;
};

// Top-k directions of the centered scatter matrix X^T X. Power iteration with
// deflation, 200 iterations or convergence below 1e-10; component signs fixed
// so the largest-magnitude entry is positive. Directions whose eigenvalue
// collapses relative to the first are dropped and the result flagged.
inline PcaResult pca_project(const Array& rows, size_t dims = 2) {
    if (rows.rank() != 2) throw ShapeError("pca_project: expected n x F input");
    const size_t n = rows.shape[0], f = rows.shape[1];
    if (n < dims + 1) throw Error("pca_project: need at least dims+1 points");

    PcaResult out;
    out.mean = Array::zeros({f});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < f; ++j) out.mean[j] += rows.at(i, j);
    for (size_t j = 0; j < f; ++j) out.mean[j] /= static_cast<double>(n);
    Array x = rows;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < f; ++j) x.at(i, j) -= out.mean[j];

    auto scatter_vec = [&](const std::vector<double>& v, const std::vector<Array>& comps,
                           const std::vector<double>& lams) {
        std::vector<double> xv(n, 0.0);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < f; ++j) xv[i] += x.at(i, j) * v[j];
        std::vector<double> w(f, 0.0);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < f; ++j) w[j] += x.at(i, j) * xv[i];
        for (size_t c = 0; c < comps.size(); ++c) {
            double dot = 0.0;
            for (size_t j = 0; j < f; ++j) dot += comps[c][j] * v[j];
            for (size_t j = 0; j < f; ++j) w[j] -= lams[c] * comps[c][j] * dot;
        }
        return w;
    };

    std::vector<Array> comps;
    std::vector<double> lams;
    Rng rng(derive(0x9e3779b97f4a7c15ull, "pca/start"));
    for (size_t c = 0; c < dims; ++c) {
        std::vector<double> v(f);
        for (double& e : v) e = rng.normal();
        double norm = 0.0;
        for (double e : v) norm += e * e;
        norm = std::sqrt(norm);
        for (double& e : v) e /= norm;

        double lam = 0.0;
        for (int iter = 0; iter < 200; ++iter) {
            std::vector<double> w = scatter_vec(v, comps, lams);
            double wn = 0.0;
            for (double e : w) wn += e * e;
            wn = std::sqrt(wn);
            if (wn == 0.0) {
                lam = 0.0;
                break;
            }
            double diff = 0.0, diff_neg = 0.0;
            for (size_t j = 0; j < f; ++j) {
                diff = std::max(diff, std::fabs(w[j] / wn - v[j]));
                diff_neg = std::max(diff_neg, std::fabs(w[j] / wn + v[j]));
            }
            for (size_t j = 0; j < f; ++j) v[j] = w[j] / wn;
            lam = wn;  // ||S v|| with unit v approaches the eigenvalue
            if (std::min(diff, diff_neg) < 1e-10) break;
        }

        const double lead = lams.empty() ? lam : lams[0];
        if (lam <= 1e-10 * std::max(lead, 1e-300) || lam == 0.0) {
            out.rank_deficient = true;
            break;
        }
        size_t big = 0;
        for (size_t j = 1; j < f; ++j)
            if (std::fabs(v[j]) > std::fabs(v[big])) big = j;
        if (v[big] < 0.0)
            for (double& e : v) e = -e;
        Array cv({f});
        std::copy(v.begin(), v.end(), cv.data.begin());
        comps.push_back(std::move(cv));
        lams.push_back(lam);
    }

    out.components = Array({comps.size(), f});
    for (size_t c = 0; c < comps.size(); ++c)
        std::copy(comps[c].data.begin(), comps[c].data.end(), &out.components.data[c * f]);
    out.eigenvalues = lams;
    out.coords = Array({n, comps.size()});
    for (size_t i = 0; i < n; ++i)
        for (size_t c = 0; c < comps.size(); ++c) {
            double acc = 0.0;
            for (size_t j = 0; j < f; ++j) acc += x.at(i, j) * comps[c][j];
            out.coords.at(i, c) = acc;
        }
    return out;
}

// ---- linear probes ---------------------------------------------------------

namespace detail {

// Solve A w = b for symmetric positive definite A (in-place Cholesky).
inline std::vector<double> spd_solve(Array a, std::vector<double> b) {
    const size_t n = a.shape[0];
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double s = a.at(i, j);
            for (size_t k = 0; k < j; ++k) s -= a.at(i, k) * a.at(j, k);
            if (i == j) {
                if (s <= 0.0) throw NumericError("spd_solve: matrix not positive definite");
                a.at(i, j) = std::sqrt(s);
            } else {
                a.at(i, j) = s / a.at(j, j);
            }
        }
    }
    for (size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (size_t k = 0; k < i; ++k) s -= a.at(i, k) * b[k];
        b[i] = s / a.at(i, i);
    }
    for (size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (size_t k = ii + 1; k < n; ++k) s -= a.at(k, ii) * b[k];
        b[ii] = s / a.at(ii, ii);
    }
    return b;
}

// Column z-scoring over the full set; constant columns become all-zero.
inline Array zscore_columns(const Array& m) {
    const size_t n = m.shape[0], f = m.shape[1];
    Array out = m;
    for (size_t j = 0; j < f; ++j) {
        double mean = 0.0;
        for (size_t i = 0; i < n; ++i) mean += m.at(i, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double d = m.at(i, j) - mean;
            var += d * d;
        }
        double sd = std::sqrt(var / static_cast<double>(n));
        if (sd < 1e-12) sd = 1.0;
        for (size_t i = 0; i < n; ++i) out.at(i, j) = (m.at(i, j) - mean) / sd;
    }
    return out;
}

constexpr double kHeldOutFraction = 0.2;

inline bool held_out(uint64_t key) {
    return static_cast<double>(key) * 0x1p-64 < kHeldOutFraction;
}

}  // namespace detail

// Held-out domain accuracy of a multinomial logistic probe on frozen latents.
// The 80/20 split is keyed on (latent bytes, label, seed), so duplicated
// points land on the same side and accuracy is duplication-invariant.
inline double linear_probe_domain(const Array& latents, const std::vector<size_t>& labels,
                                  size_t num_classes, uint64_t seed) {
    if (latents.rank() != 2 || latents.shape[0] != labels.size())
        throw ShapeError("linear_probe_domain: latents must be n x H aligned with labels");
    const size_t n = latents.shape[0], h = latents.shape[1];
    std::vector<char> present(num_classes, 0);
    for (size_t l : labels) {
        if (l >= num_classes) throw Error("linear_probe_domain: label out of range");
        present[l] = 1;
    }
    if (std::count(present.begin(), present.end(), char(1)) < 2)
        throw Error("linear_probe_domain: need at least 2 classes present");

    Array z = detail::zscore_columns(latents);
    std::vector<size_t> train_idx, test_idx;
    for (size_t i = 0; i < n; ++i) {
        uint64_t key = fnv1a64_bytes(&latents.data[i * h], h * sizeof(double));
        key = fnv1a64_mix(key, static_cast<uint64_t>(labels[i]));
        key = fnv1a64_mix(key, seed);
        (detail::held_out(key) ? test_idx : train_idx).push_back(i);
    }
    if (train_idx.empty() || test_idx.empty())
        throw Error("linear_probe_domain: degenerate probe split");

    // Full-batch gradient descent on softmax cross-entropy, zero init,
    // intercept as an extra always-1 feature.
    const size_t d = h + 1;
    Array w = Array::zeros({num_classes, d});
    std::vector<double> logits(num_classes), probs(num_classes);
    Array grad({num_classes, d});
    constexpr int kIters = 500;
    constexpr double kLr = 0.1;
    for (int it = 0; it < kIters; ++it) {
        grad = Array::zeros({num_classes, d});
        for (size_t i : train_idx) {
            const double* xi = &z.data[i * h];
            for (size_t c = 0; c < num_classes; ++c) {
                double acc = w.at(c, h);
                for (size_t j = 0; j < h; ++j) acc += w.at(c, j) * xi[j];
                logits[c] = acc;
            }
            double mx = *std::max_element(logits.begin(), logits.end());
            double sum = 0.0;
            for (size_t c = 0; c < num_classes; ++c) {
                probs[c] = std::exp(logits[c] - mx);
                sum += probs[c];
            }
            for (size_t c = 0; c < num_classes; ++c) {
                double delta = probs[c] / sum - (c == labels[i] ? 1.0 : 0.0);
                for (size_t j = 0; j < h; ++j) grad.at(c, j) += delta * xi[j];
                grad.at(c, h) += delta;
            }
        }
        const double scale = kLr / static_cast<double>(train_idx.size());
        for (size_t k = 0; k < w.numel(); ++k) w.data[k] -= scale * grad.data[k];
    }

    size_t correct = 0;
    for (size_t i : test_idx) {
        const double* xi = &z.data[i * h];
        size_t best = 0;
        double bv = -std::numeric_limits<double>::infinity();
        for (size_t c = 0; c < num_classes; ++c) {
            double acc = w.at(c, h);
            for (size_t j = 0; j < h; ++j) acc += w.at(c, j) * xi[j];
            if (acc > bv) {
                bv = acc;
                best = c;
            }
        }
        if (best == labels[i]) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(test_idx.size());
}

// Held-out SRCC of a ridge (1e-6) least-squares probe. The split is keyed on
// the target bits alone, so adding or removing latent dimensions cannot move
// points across the split.
inline double linear_probe_score(const Array& latents, const std::vector<double>& y, uint64_t seed) {
    if (latents.rank() != 2 || latents.shape[0] != y.size())
        throw ShapeError("linear_probe_score: latents must be n x H aligned with targets");
    const size_t n = latents.shape[0], h = latents.shape[1];
    if (n < 3) throw Error("linear_probe_score: need at least 3 points");

    Array z = detail::zscore_columns(latents);
    bool any_live = false;
    for (size_t j = 0; j < h && !any_live; ++j)
        for (size_t i = 0; i < n; ++i)
            if (z.at(i, j) != 0.0) {
                any_live = true;
                break;
            }
    if (!any_live) throw NumericError("linear_probe_score: constant latents");

    std::vector<size_t> train_idx, test_idx;
    for (size_t i = 0; i < n; ++i) {
        uint64_t bits;
        static_assert(sizeof bits == sizeof(double));
        std::memcpy(&bits, &y[i], sizeof bits);
        uint64_t key = fnv1a64_mix(fnv1a64_mix(0xcbf29ce484222325ull, bits), seed);
        (detail::held_out(key) ? test_idx : train_idx).push_back(i);
    }
    if (train_idx.size() < 2 || test_idx.size() < 2)
        throw Error("linear_probe_score: degenerate probe split");

    // Normal equations with ridge on the latent weights; intercept (last
    // column) unpenalized.
    const size_t d = h + 1;
    Array ata = Array::zeros({d, d});
    std::vector<double> atb(d, 0.0);
    for (size_t i : train_idx) {
        const double* xi = &z.data[i * h];
        auto feat = [&](size_t j) { return j < h ? xi[j] : 1.0; };
        for (size_t a = 0; a < d; ++a) {
            for (size_t b = 0; b <= a; ++b) ata.at(a, b) += feat(a) * feat(b);
            atb[a] += feat(a) * y[i];
        }
    }
    for (size_t a = 0; a < d; ++a)
        for (size_t b = a + 1; b < d; ++b) ata.at(a, b) = ata.at(b, a);
    for (size_t j = 0; j < h; ++j) ata.at(j, j) += 1e-6;
    std::vector<double> w = detail::spd_solve(std::move(ata), std::move(atb));

    std::vector<double> pred, truth;
    for (size_t i : test_idx) {
        const double* xi = &z.data[i * h];
        double acc = w[h];
        for (size_t j = 0; j < h; ++j) acc += w[j] * xi[j];
        pred.push_back(acc);
        truth.push_back(y[i]);
    }
    return srcc(pred, truth);
}

}  // namespace datqa
