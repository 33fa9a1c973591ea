#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "datqa/rng.hpp"
#include "datqa/stats.hpp"
#include "oracle_helpers.hpp"

using namespace datqa;

TEST_CASE("fractional ranks average over ties", "[stats]") {
    std::vector<double> r = fractional_ranks({1.0, 2.0, 2.0, 3.0});
    REQUIRE(r == std::vector<double>{1.0, 2.5, 2.5, 4.0});

    Rng rng(derive(40, "test/ranks"));
    for (int t = 0; t < 30; ++t) {
        std::vector<double> v(25);
        // Quantized values force plenty of ties.
        for (auto& x : v) x = std::floor(rng.normal() * 3.0);
        std::vector<double> got = fractional_ranks(v);
        std::vector<double> want = oracle::naive_ranks(v);
        for (size_t i = 0; i < v.size(); ++i) REQUIRE(std::abs(got[i] - want[i]) < 1e-12);
    }
}

TEST_CASE("srcc hits the rank-correlation extremes", "[stats]") {
    std::vector<double> x = {0.1, 0.7, 1.9, 3.2, 8.0};
    std::vector<double> up, down;
    for (double v : x) {
        up.push_back(std::exp(v));  // monotone but nonlinear
        down.push_back(-v * v);
    }
    REQUIRE(srcc(x, up) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(srcc(x, down) == Catch::Approx(-1.0).margin(1e-12));

    Rng rng(derive(41, "test/srcc"));
    std::vector<double> a(40), b(40);
    for (size_t i = 0; i < 40; ++i) {
        a[i] = rng.normal();
        b[i] = rng.normal();
    }
    double base = srcc(a, b);
    std::vector<double> a2;
    for (double v : a) a2.push_back(3.0 * v - 7.0);  // affine keeps ranks
    REQUIRE(srcc(a2, b) == Catch::Approx(base).margin(1e-12));
    REQUIRE(srcc(a, b) == Catch::Approx(oracle::srcc_oracle(a, b)).margin(1e-12));

    REQUIRE_THROWS_AS(srcc({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}), NumericError);
    REQUIRE_THROWS_AS(srcc({1.0}, {1.0}), Error);
    REQUIRE_THROWS_AS(srcc({1.0, 2.0}, {1.0, 2.0, 3.0}), Error);
}

TEST_CASE("mse basics and extended-precision oracle", "[stats]") {
    std::vector<double> a = {1.0, 2.0, 3.0};
    REQUIRE(mse(a, a) == 0.0);
    std::vector<double> shifted;
    for (double v : a) shifted.push_back(v + 0.5);
    REQUIRE(mse(a, shifted) == Catch::Approx(0.25).margin(1e-15));

    Rng rng(derive(42, "test/mse"));
    std::vector<double> p(200), q(200);
    for (size_t i = 0; i < 200; ++i) {
        p[i] = rng.normal() * 10.0;
        q[i] = rng.normal() * 10.0;
    }
    REQUIRE(std::abs(mse(p, q) - static_cast<double>(oracle::mse_ld(p, q))) < 1e-12);
    REQUIRE_THROWS_AS(mse({}, {}), Error);
}

TEST_CASE("t distribution tail matches closed forms and integration", "[stats]") {
    SECTION("df=1 is Cauchy") {
        for (double t : {-3.0, -1.0, -0.4, 0.0, 0.4, 1.0, 3.0}) {
            double want = 0.5 + std::atan(t) / 3.14159265358979323846;
            REQUIRE(t_cdf(t, 1.0) == Catch::Approx(want).margin(1e-12));
        }
    }
    SECTION("df=200 approaches the normal quantile") {
        double two_sided = 2.0 * (1.0 - t_cdf(1.96, 200.0));
        REQUIRE(two_sided == Catch::Approx(0.0512).margin(1e-3));
        REQUIRE(two_sided == Catch::Approx(oracle::t_two_sided_by_integration(1.96, 200.0)).margin(1e-8));
    }
    SECTION("df=5 against Simpson integration") {
        for (double t : {0.3, 1.1, 2.7}) {
            double two_sided = 2.0 * (1.0 - t_cdf(t, 5.0));
            REQUIRE(two_sided == Catch::Approx(oracle::t_two_sided_by_integration(t, 5.0)).margin(1e-8));
        }
    }
    SECTION("symmetry and midpoint") {
        REQUIRE(t_cdf(0.0, 7.0) == Catch::Approx(0.5).margin(1e-14));
        REQUIRE(t_cdf(-1.3, 7.0) == Catch::Approx(1.0 - t_cdf(1.3, 7.0)).margin(1e-14));
    }
    SECTION("domain errors") {
        REQUIRE_THROWS_AS(t_cdf(1.0, 0.0), Error);
        REQUIRE_THROWS_AS(betai(0.5, 0.5, -0.1), Error);
        REQUIRE(betai(0.5, 0.5, 0.5) == Catch::Approx(0.5).margin(1e-10));
    }
}

TEST_CASE("paired t-test on matched error vectors", "[stats]") {
    SECTION("identical inputs give the null result") {
        std::vector<double> a = {0.3, 1.2, -0.5, 2.0};
        TTestResult r = paired_ttest(a, a);
        REQUIRE(r.t == 0.0);
        REQUIRE(r.p == 1.0);
        REQUIRE(r.df == 3.0);
    }
    SECTION("two pairs with d = {0, 2}") {
        TTestResult r = paired_ttest({1.0, 3.0}, {1.0, 1.0});
        REQUIRE(r.df == 1.0);
        REQUIRE(r.t == Catch::Approx(1.0).margin(1e-14));
        REQUIRE(r.p == Catch::Approx(0.5).margin(1e-10));  // Cauchy: P(|T| > 1) = 1/2
    }
    SECTION("antisymmetry") {
        std::vector<double> a = {0.1, 0.9, 0.4, 0.8, 0.2};
        std::vector<double> b = {0.5, 0.3, 0.6, 0.1, 0.4};
        TTestResult ab = paired_ttest(a, b);
        TTestResult ba = paired_ttest(b, a);
        REQUIRE(ab.t == Catch::Approx(-ba.t).margin(1e-14));
        REQUIRE(ab.p == Catch::Approx(ba.p).margin(1e-12));
    }
    SECTION("contract errors") {
        REQUIRE_THROWS_AS(paired_ttest({1.0, 2.0}, {1.0}), Error);
        REQUIRE_THROWS_AS(paired_ttest({1.0}, {1.0}), Error);
        REQUIRE_THROWS_AS(paired_ttest({1.0, 2.0}, {0.0, 1.0}), NumericError);
    }
}

TEST_CASE("system_aggregate averages per system", "[stats]") {
    SystemMeans m = system_aggregate({1.0, 3.0, 5.0}, {2.0, 4.0, 9.0}, {"a", "a", "b"});
    REQUIRE(m.systems == std::vector<std::string>{"a", "b"});
    REQUIRE(m.pred == std::vector<double>{2.0, 5.0});
    REQUIRE(m.truth == std::vector<double>{3.0, 9.0});

    SystemMeans one = system_aggregate({1.0, 2.0}, {3.0, 5.0}, {"only", "only"});
    REQUIRE(one.systems.size() == 1);
    REQUIRE(one.pred[0] == 1.5);
    REQUIRE(one.truth[0] == 4.0);

    SystemMeans pm = system_aggregate({5.0, 3.0, 1.0}, {9.0, 4.0, 2.0}, {"b", "a", "a"});
    REQUIRE(pm.systems == m.systems);
    REQUIRE(pm.pred == m.pred);
    REQUIRE(pm.truth == m.truth);

    REQUIRE_THROWS_AS(system_aggregate({1.0}, {1.0}, {""}), DataError);
    REQUIRE_THROWS_AS(system_aggregate({1.0}, {1.0, 2.0}, {"a"}), Error);
    REQUIRE_THROWS_AS(system_aggregate({}, {}, {}), Error);
}

static Array random_rows(size_t n, size_t f, uint64_t seed, double scale = 1.0) {
    Rng rng(derive(seed, "test/stats-rows"));
    Array x({n, f});
    for (auto& v : x.data) v = rng.normal() * scale;
    return x;
}

TEST_CASE("pca matches a Jacobi eigensolver", "[stats]") {
    Array x = random_rows(40, 5, 50);
    // Stretch two directions so the spectrum has a clear order.
    for (size_t i = 0; i < 40; ++i) {
        x.at(i, 0) *= 4.0;
        x.at(i, 1) *= 2.0;
    }
    PcaResult r = pca_project(x, 2);
    REQUIRE(r.components.shape == Shape{2, 5});
    REQUIRE(!r.rank_deficient);
    REQUIRE(r.eigenvalues.size() == 2);
    REQUIRE(r.eigenvalues[0] > r.eigenvalues[1]);

    // Centered scatter matrix, full spectrum from cyclic Jacobi.
    std::vector<double> mean(5, 0.0);
    for (size_t i = 0; i < 40; ++i)
        for (size_t j = 0; j < 5; ++j) mean[j] += x.at(i, j);
    for (auto& v : mean) v /= 40.0;
    std::vector<std::vector<double>> s(5, std::vector<double>(5, 0.0));
    for (size_t i = 0; i < 40; ++i)
        for (size_t a = 0; a < 5; ++a)
            for (size_t b = 0; b < 5; ++b)
                s[a][b] += (x.at(i, a) - mean[a]) * (x.at(i, b) - mean[b]);
    oracle::EigenResult eig = oracle::jacobi_eigen(s);

    for (size_t c = 0; c < 2; ++c) {
        REQUIRE(r.eigenvalues[c] ==
                Catch::Approx(eig.values[c]).epsilon(1e-8));
        std::vector<double> want = eig.vectors[c];
        size_t big = 0;
        for (size_t j = 1; j < 5; ++j)
            if (std::fabs(want[j]) > std::fabs(want[big])) big = j;
        if (want[big] < 0.0)
            for (auto& v : want) v = -v;
        for (size_t j = 0; j < 5; ++j)
            REQUIRE(r.components.at(c, j) == Catch::Approx(want[j]).margin(1e-7));
    }

    // Coordinates are centered data projected on the components.
    for (size_t i = 0; i < 40; ++i)
        for (size_t c = 0; c < 2; ++c) {
            double acc = 0.0;
            for (size_t j = 0; j < 5; ++j) acc += (x.at(i, j) - mean[j]) * r.components.at(c, j);
            REQUIRE(r.coords.at(i, c) == Catch::Approx(acc).margin(1e-10));
        }
}

TEST_CASE("pca flags rank-deficient inputs", "[stats]") {
    Array line({5, 2});
    for (size_t i = 0; i < 5; ++i) {
        line.at(i, 0) = static_cast<double>(i);
        line.at(i, 1) = 2.0 * static_cast<double>(i);
    }
    PcaResult r = pca_project(line, 2);
    REQUIRE(r.rank_deficient);
    REQUIRE(r.components.shape == Shape{1, 2});
    REQUIRE(r.coords.shape == Shape{5, 1});
    REQUIRE(r.eigenvalues.size() == 1);

    REQUIRE_THROWS_AS(pca_project(Array({6}), 2), ShapeError);
    REQUIRE_THROWS_AS(pca_project(Array({2, 3}), 2), Error);
}

TEST_CASE("pca is deterministic", "[stats]") {
    Array x = random_rows(30, 4, 51);
    PcaResult a = pca_project(x, 2);
    PcaResult b = pca_project(x, 2);
    REQUIRE(a.components.data == b.components.data);
    REQUIRE(a.coords.data == b.coords.data);
    REQUIRE(a.eigenvalues == b.eigenvalues);
}

TEST_CASE("domain probe separates far blobs and stays at chance on noise", "[stats]") {
    SECTION("three separable blobs read out at ~100%") {
        Rng rng(derive(60, "test/probe-blobs"));
        const size_t per = 50, h = 3;
        Array z({3 * per, h});
        std::vector<size_t> labels(3 * per);
        for (size_t c = 0; c < 3; ++c)
            for (size_t i = 0; i < per; ++i) {
                size_t row = c * per + i;
                labels[row] = c;
                for (size_t j = 0; j < h; ++j)
                    z.at(row, j) = 8.0 * static_cast<double>(c) + 0.5 * rng.normal();
            }
        double acc = linear_probe_domain(z, labels, 3, 1);
        REQUIRE(acc >= 99.0);
    }
    SECTION("random labels on random latents sit near chance") {
        Rng rng(derive(61, "test/probe-null"));
        const size_t n = 600, h = 8, d = 6;
        Array z({n, h});
        for (auto& v : z.data) v = rng.normal();
        std::vector<size_t> labels(n);
        for (auto& l : labels) l = static_cast<size_t>(rng.below(d));
        double acc = linear_probe_domain(z, labels, d, 2);
        // Held-out share is ~20% of n; 5 sigma of a binomial at p = 1/6
        // around that test size is ~17 points of accuracy.
        REQUIRE(std::abs(acc - 100.0 / 6.0) < 17.0);
    }
    SECTION("duplication invariance and determinism") {
        Rng rng(derive(62, "test/probe-dup"));
        const size_t n = 40, h = 4;
        Array z({n, h});
        for (auto& v : z.data) v = rng.normal();
        std::vector<size_t> labels(n);
        for (size_t i = 0; i < n; ++i) labels[i] = i % 3;
        double once = linear_probe_domain(z, labels, 3, 5);
        REQUIRE(once == linear_probe_domain(z, labels, 3, 5));

        Array zz({2 * n, h});
        std::copy(z.data.begin(), z.data.end(), zz.data.begin());
        std::copy(z.data.begin(), z.data.end(), zz.data.begin() + static_cast<long>(n * h));
        std::vector<size_t> ll = labels;
        ll.insert(ll.end(), labels.begin(), labels.end());
        REQUIRE(linear_probe_domain(zz, ll, 3, 5) == once);
    }
    SECTION("contract errors") {
        Array z({4, 2});
        for (size_t i = 0; i < 8; ++i) z.data[i] = static_cast<double>(i);
        REQUIRE_THROWS_AS(linear_probe_domain(z, {0, 1, 2}, 3, 0), ShapeError);
        REQUIRE_THROWS_AS(linear_probe_domain(z, {0, 1, 3, 1}, 3, 0), Error);
        REQUIRE_THROWS_AS(linear_probe_domain(z, {1, 1, 1, 1}, 3, 0), Error);
    }
}

TEST_CASE("score probe recovers linear targets and rejects noise", "[stats]") {
    Rng rng(derive(63, "test/probe-score"));
    const size_t n = 300, h = 5;
    Array z({n, h});
    for (auto& v : z.data) v = rng.normal();

    SECTION("linear target reads out perfectly") {
        std::vector<double> y(n);
        for (size_t i = 0; i < n; ++i) y[i] = 2.0 * z.at(i, 0) - z.at(i, 1) + 0.3;
        double rho = linear_probe_score(z, y, 9);
        REQUIRE(rho >= 0.999);
    }
    SECTION("independent noise target stays low") {
        std::vector<double> y(n);
        for (auto& v : y) v = rng.normal();
        double rho = linear_probe_score(z, y, 9);
        REQUIRE(std::abs(rho) < 0.3);
    }
    SECTION("appending a constant latent dimension changes nothing") {
        std::vector<double> y(n);
        for (size_t i = 0; i < n; ++i) y[i] = z.at(i, 2) + 0.1 * rng.normal();
        double base = linear_probe_score(z, y, 9);
        Array wide({n, h + 1});
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = 0; j < h; ++j) wide.at(i, j) = z.at(i, j);
            wide.at(i, h) = 4.25;
        }
        REQUIRE(linear_probe_score(wide, y, 9) == Catch::Approx(base).margin(1e-12));
    }
    SECTION("contract errors") {
        Array flat({4, 2});
        REQUIRE_THROWS_AS(linear_probe_score(flat, {1.0, 2.0, 3.0}, 0), ShapeError);
        std::vector<double> y4 = {1.0, 2.0, 3.0, 4.0};
        REQUIRE_THROWS_AS(linear_probe_score(flat, y4, 0), NumericError);
        Array two({2, 2});
        REQUIRE_THROWS_AS(linear_probe_score(two, {1.0, 2.0}, 0), Error);
    }
}
