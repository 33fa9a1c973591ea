#pragma once

// Independent reference implementations used to check the library from the
// outside. Everything here is written against the textbook definitions, not
// against the code under test: naive O(n^2) ranking, exhaustive k-means
// enumeration, Simpson integration of the t density, cyclic Jacobi for
// symmetric eigenproblems, long-double arithmetic for sums and losses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "datqa/array.hpp"

namespace oracle {

// ---- finite differences -----------------------------------------------------

// Central-difference gradient of f with respect to xs[which], element e.
inline double fd(const std::function<double(const std::vector<datqa::Array>&)>& f,
                 std::vector<datqa::Array> xs, size_t which, size_t e, double h = 1e-5) {
    const double orig = xs[which].data[e];
    xs[which].data[e] = orig + h;
    const double fp = f(xs);
    xs[which].data[e] = orig - h;
    const double fm = f(xs);
    return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

// ---- ranking / correlation --------------------------------------------------

// Fractional ranks by counting: rank_i = #smaller + 1 + (#equal - 1)/2.
inline std::vector<double> naive_ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        size_t less = 0, equal = 0;
        for (size_t j = 0; j < v.size(); ++j) {
            if (v[j] < v[i]) ++less;
            if (v[j] == v[i]) ++equal;
        }
        r[i] = static_cast<double>(less) + 1.0 + (static_cast<double>(equal) - 1.0) / 2.0;
    }
    return r;
}

inline long double pearson_ld(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    long double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    long double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

inline double srcc_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    return static_cast<double>(pearson_ld(naive_ranks(a), naive_ranks(b)));
}

inline long double mse_ld(const std::vector<double>& a, const std::vector<double>& b) {
    long double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (long double)(a[i] - b[i]);
    return s / a.size();
}

// ---- k-means ----------------------------------------------------------------

// Global optimum by enumerating every assignment of n points to k clusters
// (centroid = cluster mean). Feasible for n <= 8.
inline double kmeans_exhaustive_inertia(const datqa::Array& pts, size_t k) {
    const size_t n = pts.shape[0], f = pts.shape[1];
    size_t total = 1;
    for (size_t i = 0; i < n; ++i) total *= k;
    double best = std::numeric_limits<double>::infinity();
    std::vector<size_t> lab(n);
    for (size_t code = 0; code < total; ++code) {
        size_t c = code;
        for (size_t i = 0; i < n; ++i) {
            lab[i] = c % k;
            c /= k;
        }
        std::vector<std::vector<long double>> mean(k, std::vector<long double>(f, 0.0L));
        std::vector<size_t> cnt(k, 0);
        for (size_t i = 0; i < n; ++i) {
            ++cnt[lab[i]];
            for (size_t j = 0; j < f; ++j) mean[lab[i]][j] += pts.at(i, j);
        }
        for (size_t cidx = 0; cidx < k; ++cidx)
            if (cnt[cidx] > 0)
                for (size_t j = 0; j < f; ++j) mean[cidx][j] /= cnt[cidx];
        long double inertia = 0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < f; ++j) {
                long double d = pts.at(i, j) - mean[lab[i]][j];
                inertia += d * d;
            }
        best = std::min(best, static_cast<double>(inertia));
    }
    return best;
}

// ---- Student t --------------------------------------------------------------

// Two-sided p for |t| with df degrees of freedom, by Simpson integration of
// the density over [0, |t|]: p = 1 - 2 * integral.
inline double t_two_sided_by_integration(double t, double df, size_t steps = 40000) {
    const long double x1 = std::fabs((long double)t);
    const long double nu = df;
    const long double logc = std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2) -
                             0.5L * std::log(nu * 3.14159265358979323846264338327950288L);
    auto dens = [&](long double x) {
        return std::exp(logc - (nu + 1) / 2 * std::log1p(x * x / nu));
    };
    if (steps % 2 == 1) ++steps;
    const long double h = x1 / steps;
    long double s = dens(0.0L) + dens(x1);
    for (size_t i = 1; i < steps; ++i) s += dens(h * i) * (i % 2 == 1 ? 4.0L : 2.0L);
    const long double integral = s * h / 3.0L;
    return static_cast<double>(1.0L - 2.0L * integral);
}

// ---- symmetric eigenproblem -------------------------------------------------

struct EigenResult {
    std::vector<double> values;               // descending
    std::vector<std::vector<double>> vectors; // vectors[i] pairs with values[i]
};

// Cyclic Jacobi rotations on a dense symmetric matrix.
inline EigenResult jacobi_eigen(std::vector<std::vector<double>> a) {
    const size_t n = a.size();
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i) v[i][i] = 1.0;
    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-26) break;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) {
                if (std::fabs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double sign = theta >= 0 ? 1.0 : -1.0;
                const double tt = sign / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(tt * tt + 1.0);
                const double s = tt * c;
                for (size_t i = 0; i < n; ++i) {
                    const double aip = a[i][p], aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for (size_t i = 0; i < n; ++i) {
                    const double api = a[p][i], aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for (size_t i = 0; i < n; ++i) {
                    const double vip = v[i][p], viq = v[i][q];
                    v[i][p] = c * vip - s * viq;
                    v[i][q] = s * vip + c * viq;
                }
            }
    }
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return a[x][x] > a[y][y]; });
    EigenResult r;
    for (size_t oi : order) {
        r.values.push_back(a[oi][oi]);
        std::vector<double> col(n);
        for (size_t i = 0; i < n; ++i) col[i] = v[i][oi];
        r.vectors.push_back(col);
    }
    return r;
}

// ---- losses in extended precision --------------------------------------------

// GNLL for A=2 via the explicit 2x2 inverse of Lambda = L L^T.
inline double gnll_2x2_oracle(const datqa::Array& m, const datqa::Array& packedL,
                              const datqa::Array& y) {
    const long double l00 = packedL[0], l10 = packedL[1], l11 = packedL[2];
    const long double s00 = l00 * l00;
    const long double s01 = l00 * l10;
    const long double s11 = l10 * l10 + l11 * l11;
    const long double det = s00 * s11 - s01 * s01;
    const long double i00 = s11 / det, i01 = -s01 / det, i11 = s00 / det;
    const long double r0 = y[0] - m[0], r1 = y[1] - m[1];
    const long double quad = r0 * (i00 * r0 + i01 * r1) + r1 * (i01 * r0 + i11 * r1);
    const long double ln2pi = 1.83787706640934548356065947281123527L;
    return static_cast<double>(0.5L * (quad + std::log(det) + 2.0L * ln2pi));
}

inline double softmax_ce_ld(const std::vector<double>& logits, size_t label) {
    long double mx = logits[0];
    for (double v : logits) mx = std::max(mx, (long double)v);
    long double sum = 0;
    for (double v : logits) sum += std::exp((long double)v - mx);
    return static_cast<double>(std::log(sum) + mx - (long double)logits[label]);
}

inline std::vector<double> mean_pool_ld(const datqa::Array& m) {
    std::vector<double> out(m.shape[1]);
    for (size_t j = 0; j < m.shape[1]; ++j) {
        long double s = 0;
        for (size_t i = 0; i < m.shape[0]; ++i) s += m.at(i, j);
        out[j] = static_cast<double>(s / m.shape[0]);
    }
    return out;
}

// Adam recurrence on f(theta) = theta^2 in extended precision, wd folded in
// the decoupled way.
inline double adam_theta2_reference(double theta0, size_t steps, long double lr, long double b1,
                                    long double b2, long double eps, long double wd) {
    long double th = theta0, m = 0, v = 0;
    for (size_t t = 1; t <= steps; ++t) {
        const long double g = 2.0L * th;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const long double mhat = m / (1 - std::pow(b1, (long double)t));
        const long double vhat = v / (1 - std::pow(b2, (long double)t));
        th -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * th);
    }
    return static_cast<double>(th);
}

}  // namespace oracle
