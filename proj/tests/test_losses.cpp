#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "datqa/losses.hpp"
#include "datqa/rng.hpp"

using namespace datqa;

namespace {

struct Fixture {
    ModelConfig c;
    ModelParams p;
    std::vector<Array> xs, ys;
    std::vector<size_t> labels;

    explicit Fixture(size_t n = 6) {
        c.input_dim = 4;
        c.encoder_hidden = {6};
        c.latent_dim = 3;
        c.aspects = 2;
        c.aspect_names = default_aspect_names(2);
        c.domain_hidden = {4};
        c.num_domains = 3;
        c.seed = 19;
        p = init_params(c);
        Rng r(derive(19, "test/loss-data"));
        for (size_t i = 0; i < n; ++i) {
            Array x({4}), y({2});
            for (double& v : x.data) v = r.uniform(-1, 1);
            for (double& v : y.data) v = r.uniform(2, 8);
            xs.push_back(x);
            ys.push_back(y);
            labels.push_back(static_cast<size_t>(r.below(3)));
        }
    }

    LossBreakdown run(double lambda, std::vector<Array>* grads = nullptr) const {
        Tape t;
        Binding b = bind_params(t, p);
        LossBreakdown lb;
        int total = batch_objective(t, b, c, xs, ys, labels, lambda, false, nullptr, &lb);
        if (grads) {
            t.backward(total);
            grads->clear();
            for (const auto& [name, id] : b.ids) grads->push_back(t.grad(id));
        }
        return lb;
    }
};

}  // namespace

TEST_CASE("breakdown identity: total == task + lambda * adv") {
    Fixture f;
    for (double lambda : {0.0, 0.1, 0.5, 1.0}) {
        LossBreakdown lb = f.run(lambda);
        REQUIRE(lb.lambda == lambda);
        REQUIRE(std::fabs(lb.total - (lb.task + lambda * lb.adv)) <= 1e-12);
        REQUIRE(std::isfinite(lb.total));
    }
    // spot arithmetic from the contract
    REQUIRE(3.0 + 0.5 * 1.0 == 3.5);
}

TEST_CASE("total is affine in lambda with slope equal to adv") {
    Fixture f;
    LossBreakdown l0 = f.run(0.0);
    LossBreakdown l01 = f.run(0.1);
    LossBreakdown l05 = f.run(0.5);
    LossBreakdown l1 = f.run(1.0);

    REQUIRE(l0.total == l0.task);
    REQUIRE(l0.adv == 0.0);
    for (const LossBreakdown* lb : {&l01, &l05, &l1}) {
        REQUIRE(lb->task == Catch::Approx(l0.task).epsilon(0).margin(1e-12));
        REQUIRE(lb->adv == Catch::Approx(l01.adv).epsilon(0).margin(1e-12));
        REQUIRE(std::fabs((lb->total - l0.task) - lb->lambda * lb->adv) <= 1e-12);
    }
}

TEST_CASE("lambda 0 gradients equal a task-only tape bit for bit") {
    Fixture f;
    std::vector<Array> g0;
    f.run(0.0, &g0);

    Tape t;
    Binding b = bind_params(t, f.p);
    int sum = -1;
    for (size_t i = 0; i < f.xs.size(); ++i) {
        int h = encode_on_tape(t, b, f.c, t.leaf(f.xs[i]), false, nullptr);
        QualityNodes q = quality_head_on_tape(t, b, f.c, h);
        int li = t.gnll(q.m, q.chol, f.ys[i]);
        sum = sum < 0 ? li : t.add(sum, li);
    }
    t.backward(t.scale(sum, 1.0 / static_cast<double>(f.xs.size())));
    for (size_t i = 0; i < b.ids.size(); ++i) REQUIRE(t.grad(b.ids[i].second) == g0[i]);
}

TEST_CASE("lambda 0 leaves domain parameters without gradient") {
    Fixture f;
    std::vector<Array> g0;
    f.run(0.0, &g0);
    Tape probe;
    Binding b = bind_params(probe, f.p);
    for (size_t i = 0; i < b.ids.size(); ++i)
        if (b.ids[i].first.starts_with("domain."))
            for (double v : g0[i].data) REQUIRE(v == 0.0);
}

TEST_CASE("adversarial gradients scale linearly with lambda") {
    Fixture f;
    std::vector<Array> g0, g01, g05;
    f.run(0.0, &g0);
    f.run(0.1, &g01);
    f.run(0.5, &g05);
    for (size_t p = 0; p < g0.size(); ++p)
        for (size_t e = 0; e < g0[p].numel(); ++e) {
            const double lhs = g05[p][e] - g0[p][e];
            const double rhs = 5.0 * (g01[p][e] - g0[p][e]);
            REQUIRE(std::fabs(lhs - rhs) <= 1e-10 * std::max(1.0, std::fabs(rhs)));
        }
}

TEST_CASE("batch of one equals the sample loss") {
    Fixture f(1);
    LossBreakdown lb = f.run(0.5);

    Tape t;
    Binding b = bind_params(t, f.p);
    int h = encode_on_tape(t, b, f.c, t.leaf(f.xs[0]), false, nullptr);
    QualityNodes q = quality_head_on_tape(t, b, f.c, h);
    const double task = t.value(t.gnll(q.m, q.chol, f.ys[0])).data[0];
    const double adv = t.value(t.softmax_ce(domain_head_on_tape(t, b, f.c, h), f.labels[0])).data[0];
    REQUIRE(lb.task == task);
    REQUIRE(lb.adv == adv);
}

TEST_CASE("mean reduction is batch-size invariant for identical samples") {
    Fixture base(1);
    LossBreakdown one = base.run(0.5);

    Fixture rep(1);
    for (int i = 0; i < 4; ++i) {
        rep.xs.push_back(rep.xs[0]);
        rep.ys.push_back(rep.ys[0]);
        rep.labels.push_back(rep.labels[0]);
    }
    LossBreakdown five = rep.run(0.5);
    REQUIRE(five.task == Catch::Approx(one.task).epsilon(1e-15));
    REQUIRE(five.adv == Catch::Approx(one.adv).epsilon(1e-15));
}

TEST_CASE("validation contract errors") {
    Fixture f;
    Tape t;
    Binding b = bind_params(t, f.p);
    LossBreakdown lb;

    std::vector<Array> empty;
    REQUIRE_THROWS_AS(
        batch_objective(t, b, f.c, empty, empty, {}, 0.5, false, nullptr, &lb), Error);

    std::vector<size_t> short_labels(f.xs.size() - 1, 0);
    REQUIRE_THROWS_AS(
        batch_objective(t, b, f.c, f.xs, f.ys, short_labels, 0.5, false, nullptr, &lb), Error);
    // with lambda = 0 the labels are unused and may be empty
    Tape t2;
    Binding b2 = bind_params(t2, f.p);
    REQUIRE_NOTHROW(batch_objective(t2, b2, f.c, f.xs, f.ys, {}, 0.0, false, nullptr, &lb));

    std::vector<Array> short_ys(f.ys.begin(), f.ys.end() - 1);
    Tape t3;
    Binding b3 = bind_params(t3, f.p);
    REQUIRE_THROWS_AS(
        batch_objective(t3, b3, f.c, f.xs, short_ys, f.labels, 0.5, false, nullptr, &lb), Error);

    Tape t4;
    Binding b4 = bind_params(t4, f.p);
    REQUIRE_THROWS_AS(
        batch_objective(t4, b4, f.c, f.xs, f.ys, f.labels, -0.1, false, nullptr, &lb), Error);
}
