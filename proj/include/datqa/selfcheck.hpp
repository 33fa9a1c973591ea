#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "datqa/domains.hpp"
#include "datqa/losses.hpp"
#include "datqa/model.hpp"
#include "datqa/rng.hpp"
#include "datqa/stats.hpp"
#include "datqa/tape.hpp"
#include "datqa/train.hpp"

namespace datqa::selfcheck {

// Runtime verification harness behind `selfcheck`. Each group returns the
// failures it found; an empty vector means the group passed. The heavyweight
// independent oracles (exhaustive k-means, t-density integration, dense
// eigensolver) live in the test suite; this harness covers gradient
// correctness, the reversal law, closed forms, and algebraic spot checks.

struct Failure {
    std::string check;
    std::string detail;
};

struct Options {
    uint64_t seed = 0;
    size_t trials = 8;           // per problem kind; 13 kinds => >= 100 instances
    bool break_gnll_grad = false;  // test seam: bias the GNLL analytic gradient
};

namespace detail {

struct FdProblem {
    std::string name;
    std::vector<Array> inputs;
    std::function<int(Tape&, const std::vector<int>&)> build;
    double tol = 1e-6;
    size_t bias_input = SIZE_MAX;  // inject 1e-3 into this input's analytic grads
};

inline double eval_scalar(const FdProblem& p, const std::vector<Array>& xs) {
    Tape t;
    std::vector<int> ids;
    ids.reserve(xs.size());
    for (const auto& a : xs) ids.push_back(t.leaf(a));
    return t.value(p.build(t, ids)).data[0];
}

inline std::optional<Failure> fd_check(const FdProblem& p, double h = 1e-5) {
    Tape t;
    std::vector<int> ids;
    for (const auto& a : p.inputs) ids.push_back(t.leaf(a));
    t.backward(p.build(t, ids));

    std::vector<Array> xs = p.inputs;
    for (size_t i = 0; i < xs.size(); ++i) {
        for (size_t e = 0; e < xs[i].numel(); ++e) {
            const double orig = xs[i].data[e];
            xs[i].data[e] = orig + h;
            const double fp = eval_scalar(p, xs);
            xs[i].data[e] = orig - h;
            const double fm = eval_scalar(p, xs);
            xs[i].data[e] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            double analytic = t.grad(ids[i]).data[e];
            if (i == p.bias_input) analytic += 1e-3;
            const double rel =
                std::fabs(analytic - numeric) / std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
            if (!(rel <= p.tol))
                return Failure{p.name, "input " + std::to_string(i) + " element " + std::to_string(e) +
                                           ": analytic " + std::to_string(analytic) + " vs numeric " +
                                           std::to_string(numeric) + " (rel err " + std::to_string(rel) +
                                           ")"};
        }
    }
    return std::nullopt;
}

inline Array rand_array(Rng& r, Shape shape, double lo, double hi) {
    Array a(std::move(shape));
    for (double& v : a.data) v = r.uniform(lo, hi);
    return a;
}

// Uniform values with magnitude bounded away from zero, for ReLU kinks.
inline Array rand_array_nonzero(Rng& r, Shape shape, double span, double floor_abs) {
    Array a(std::move(shape));
    for (double& v : a.data) {
        do {
            v = r.uniform(-span, span);
        } while (std::fabs(v) < floor_abs);
    }
    return a;
}

inline Array rand_packed_chol(Rng& r, size_t n) {
    Array p({tri_numel(n)});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j <= i; ++j)
            p[tri_index(i, j)] = (i == j) ? r.uniform(0.5, 1.5) : r.uniform(-1.0, 1.0);
    return p;
}

// Tiny two-head network used by the composition checks. Parameter order:
// W0 b0 W1 b1 Wq bq Wd0 bd0 Wd1 bd1, then x as the last input.
struct MiniNet {
    static constexpr size_t F = 4, Hid = 5, H = 3, A = 2, Dh = 4, D = 3;

    std::vector<Array> params_and_input;
    Array y{Shape{A}};
    size_t label = 1;

    static MiniNet random(Rng& r) {
        MiniNet n;
        auto push = [&](Shape s) { n.params_and_input.push_back(rand_array(r, std::move(s), -0.7, 0.7)); };
        push({Hid, F});
        push({Hid});
        push({H, Hid});
        push({H});
        push({A + tri_numel(A), H});
        push({A + tri_numel(A)});
        push({Dh, H});
        push({Dh});
        push({D, Dh});
        push({D});
        for (;;) {
            Array x = rand_array(r, {F}, -1.0, 1.0);
            // keep both ReLU layers away from their kinks so central
            // differences stay trustworthy
            Array pre0 = kernels::add(kernels::matmul(n.params_and_input[0], x), n.params_and_input[1]);
            bool ok = true;
            for (double v : pre0.data) ok = ok && std::fabs(v) > 0.05;
            if (ok) {
                Array h = kernels::add(kernels::matmul(n.params_and_input[2], kernels::relu(pre0)),
                                       n.params_and_input[3]);
                Array pre1 = kernels::add(kernels::matmul(n.params_and_input[6], h), n.params_and_input[7]);
                for (double v : pre1.data) ok = ok && std::fabs(v) > 0.05;
            }
            if (ok) {
                n.params_and_input.push_back(std::move(x));
                break;
            }
        }
        n.y = rand_array(r, {A}, -1.5, 1.5);
        n.label = static_cast<size_t>(r.below(D));
        return n;
    }

    static int latent_node(Tape& t, const std::vector<int>& v) {
        int h0 = t.relu(t.add(t.matmul(v[0], v[10]), v[1]));
        return t.add(t.matmul(v[2], h0), v[3]);
    }
    int task_node(Tape& t, const std::vector<int>& v, int h) const {
        int raw = t.add(t.matmul(v[4], h), v[5]);
        int m = t.slice(raw, 0, A);
        int chol = t.exp_diag(t.slice(raw, A, tri_numel(A)), A);
        return t.gnll(m, chol, y);
    }
    int adv_node(Tape& t, const std::vector<int>& v, int h) const {
        int d0 = t.relu(t.add(t.matmul(v[6], h), v[7]));
        return t.softmax_ce(t.add(t.matmul(v[8], d0), v[9]), label);
    }
};

}  // namespace detail

// Central finite differences against the tape's analytic gradients for every
// op kind plus both fused losses and the full two-head composition. The
// composed objective routes the adversarial term through the reversal layer,
// so its expected gradient is FD(task) - lambda FD(adv) for inputs upstream
// of the GRL and FD(task) + lambda FD(adv) downstream.
inline std::vector<Failure> gradient_suite(const Options& opt) {
    std::vector<Failure> fails;
    Rng rng(derive(opt.seed, "selfcheck/grad"));
    auto run = [&](const detail::FdProblem& p) {
        if (auto f = detail::fd_check(p)) fails.push_back(*f);
    };

    for (size_t trial = 0; trial < opt.trials; ++trial) {
        {
            size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
            detail::FdProblem p;
            p.name = "grad/matmul-mm";
            p.inputs = {detail::rand_array(rng, {m, k}, -2, 2), detail::rand_array(rng, {k, n}, -2, 2)};
            p.build = [](Tape& t, const std::vector<int>& v) { return t.sum(t.matmul(v[0], v[1])); };
            run(p);
        }
        {
            size_t m = 1 + rng.below(4), k = 1 + rng.below(4);
            detail::FdProblem p;
            p.name = "grad/matmul-mv";
            p.inputs = {detail::rand_array(rng, {m, k}, -2, 2), detail::rand_array(rng, {k}, -2, 2)};
            p.build = [](Tape& t, const std::vector<int>& v) { return t.sum(t.matmul(v[0], v[1])); };
            run(p);
        }
        {
            size_t n = 1 + rng.below(5);
            detail::FdProblem p;
            p.name = "grad/add";
            p.inputs = {detail::rand_array(rng, {n}, -2, 2), detail::rand_array(rng, {n}, -2, 2)};
            // weight the two operands differently so symmetric slips surface
            p.build = [](Tape& t, const std::vector<int>& v) {
                return t.sum(t.mask(t.add(v[0], v[1]), Array({t.value(v[0]).numel()},
                                                             std::vector<double>(t.value(v[0]).numel(), 1.5))));
            };
            run(p);
        }
        {
            size_t n = 2 + rng.below(4);
            detail::FdProblem p;
            p.name = "grad/relu";
            p.inputs = {detail::rand_array_nonzero(rng, {n}, 2.0, 0.1)};
            p.build = [](Tape& t, const std::vector<int>& v) { return t.sum(t.relu(v[0])); };
            run(p);
        }
        {
            size_t n1 = 1 + rng.below(3), n2 = 1 + rng.below(3);
            Array w = detail::rand_array(rng, {n1 + n2}, -2, 2);
            detail::FdProblem p;
            p.name = "grad/concat";
            p.inputs = {detail::rand_array(rng, {n1}, -2, 2), detail::rand_array(rng, {n2}, -2, 2)};
            p.build = [w](Tape& t, const std::vector<int>& v) {
                return t.sum(t.mask(t.concat(v[0], v[1]), w));
            };
            run(p);
        }
        {
            size_t n = 3 + rng.below(3);
            size_t off = rng.below(n - 1), len = 1 + rng.below(n - off);
            detail::FdProblem p;
            p.name = "grad/slice";
            p.inputs = {detail::rand_array(rng, {n}, -2, 2)};
            p.build = [off, len](Tape& t, const std::vector<int>& v) {
                return t.sum(t.slice(v[0], off, len));
            };
            run(p);
        }
        {
            size_t n = 1 + rng.below(5);
            double c = rng.uniform(-3, 3);
            detail::FdProblem p;
            p.name = "grad/scale";
            p.inputs = {detail::rand_array(rng, {n}, -2, 2)};
            p.build = [c](Tape& t, const std::vector<int>& v) { return t.sum(t.scale(v[0], c)); };
            run(p);
        }
        {
            size_t n = 1 + rng.below(5);
            Array m = detail::rand_array(rng, {n}, -2, 2);
            detail::FdProblem p;
            p.name = "grad/mask";
            p.inputs = {detail::rand_array(rng, {n}, -2, 2)};
            p.build = [m](Tape& t, const std::vector<int>& v) { return t.sum(t.mask(v[0], m)); };
            run(p);
        }
        {
            size_t n = 2 + rng.below(3);
            detail::FdProblem p;
            p.name = "grad/exp-diagonal";
            Array packed({tri_numel(n)});
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j <= i; ++j)
                    packed[tri_index(i, j)] = (i == j) ? rng.uniform(-1.5, 1.5) : rng.uniform(-2, 2);
            Array w = detail::rand_array(rng, {tri_numel(n)}, -2, 2);
            p.inputs = {packed};
            p.build = [n, w](Tape& t, const std::vector<int>& v) {
                return t.sum(t.mask(t.exp_diag(v[0], n), w));
            };
            run(p);
        }
        {
            size_t a = 1 + rng.below(4);
            Array y = detail::rand_array(rng, {a}, -1.5, 1.5);
            detail::FdProblem p;
            p.name = "grad/gnll";
            p.inputs = {detail::rand_array(rng, {a}, -1.5, 1.5), detail::rand_packed_chol(rng, a)};
            p.build = [y](Tape& t, const std::vector<int>& v) { return t.gnll(v[0], v[1], y); };
            if (opt.break_gnll_grad) p.bias_input = 0;
            run(p);
        }
        {
            size_t a = 2 + rng.below(3);
            Array y = detail::rand_array(rng, {a}, -1.5, 1.5);
            detail::FdProblem p;
            p.name = "grad/expdiag-gnll";
            Array raw({a + tri_numel(a)});
            for (size_t i = 0; i < a; ++i) raw[i] = rng.uniform(-1.5, 1.5);
            for (size_t i = 0; i < tri_numel(a); ++i) raw[a + i] = rng.uniform(-1.0, 1.0);
            p.inputs = {raw};
            p.build = [a, y](Tape& t, const std::vector<int>& v) {
                int m = t.slice(v[0], 0, a);
                int chol = t.exp_diag(t.slice(v[0], a, tri_numel(a)), a);
                return t.gnll(m, chol, y);
            };
            run(p);
        }
        {
            size_t d = 2 + rng.below(4);
            size_t label = static_cast<size_t>(rng.below(d));
            detail::FdProblem p;
            p.name = "grad/softmax-ce";
            p.inputs = {detail::rand_array(rng, {d}, -2, 2)};
            p.build = [label](Tape& t, const std::vector<int>& v) { return t.softmax_ce(v[0], label); };
            run(p);
        }
        {
            detail::MiniNet net = detail::MiniNet::random(rng);
            detail::FdProblem p;
            p.name = "grad/model-task";
            p.inputs = net.params_and_input;
            p.build = [net](Tape& t, const std::vector<int>& v) {
                return net.task_node(t, v, detail::MiniNet::latent_node(t, v));
            };
            run(p);
        }
        {
            // Composition through the GRL: compare analytic gradients against
            // FD(task) -/+ lambda FD(adv) depending on which side of the
            // reversal the input sits.
            detail::MiniNet net = detail::MiniNet::random(rng);
            const double lambda = trial % 2 == 0 ? 0.5 : 0.1;
            Tape t;
            std::vector<int> ids;
            for (const auto& a : net.params_and_input) ids.push_back(t.leaf(a));
            int h = detail::MiniNet::latent_node(t, ids);
            int total = t.add(net.task_node(t, ids, h), t.scale(net.adv_node(t, ids, t.grl(h)), lambda));
            t.backward(total);

            auto eval_part = [&](const std::vector<Array>& xs, bool adv) {
                Tape tt;
                std::vector<int> v;
                for (const auto& a : xs) v.push_back(tt.leaf(a));
                int hh = detail::MiniNet::latent_node(tt, v);
                return tt.value(adv ? net.adv_node(tt, v, hh) : net.task_node(tt, v, hh)).data[0];
            };
            std::vector<Array> xs = net.params_and_input;
            const double fd_h = 1e-5;
            bool bad = false;
            for (size_t i = 0; i < xs.size() && !bad; ++i) {
                // upstream of the GRL: encoder weights/biases (0..3) and x (10)
                const double sign = (i <= 3 || i == 10) ? -1.0 : 1.0;
                for (size_t e = 0; e < xs[i].numel() && !bad; ++e) {
                    const double orig = xs[i].data[e];
                    xs[i].data[e] = orig + fd_h;
                    double tp = eval_part(xs, false), ap = eval_part(xs, true);
                    xs[i].data[e] = orig - fd_h;
                    double tm = eval_part(xs, false), am = eval_part(xs, true);
                    xs[i].data[e] = orig;
                    const double numeric =
                        (tp - tm) / (2 * fd_h) + sign * lambda * (ap - am) / (2 * fd_h);
                    const double analytic = t.grad(ids[i]).data[e];
                    const double rel = std::fabs(analytic - numeric) /
                                       std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
                    if (!(rel <= 1e-4)) {
                        fails.push_back({"grad/model-grl",
                                         "input " + std::to_string(i) + " element " + std::to_string(e) +
                                             ": analytic " + std::to_string(analytic) + " vs numeric " +
                                             std::to_string(numeric)});
                        bad = true;
                    }
                }
            }
        }
    }
    return fails;
}

// Encoder gradients of lambda * CE(grl(h)) must equal -lambda times the
// encoder gradients of CE(h), elementwise.
inline std::vector<Failure> grl_law(uint64_t seed) {
    std::vector<Failure> fails;
    Rng rng(derive(seed, "selfcheck/grl"));
    for (double lambda : {0.1, 0.5}) {
        detail::MiniNet net = detail::MiniNet::random(rng);

        Tape t1;
        std::vector<int> v1;
        for (const auto& a : net.params_and_input) v1.push_back(t1.leaf(a));
        t1.backward(t1.scale(net.adv_node(t1, v1, t1.grl(detail::MiniNet::latent_node(t1, v1))), lambda));

        Tape t2;
        std::vector<int> v2;
        for (const auto& a : net.params_and_input) v2.push_back(t2.leaf(a));
        t2.backward(net.adv_node(t2, v2, detail::MiniNet::latent_node(t2, v2)));

        for (size_t i : {size_t{0}, size_t{1}, size_t{2}, size_t{3}, size_t{10}}) {
            const Array& g1 = t1.grad(v1[i]);
            const Array& g2 = t2.grad(v2[i]);
            for (size_t e = 0; e < g1.numel(); ++e) {
                const double want = -lambda * g2.data[e];
                if (std::fabs(g1.data[e] - want) > 1e-12 * std::max(1.0, std::fabs(want))) {
                    fails.push_back({"grl/sign-law", "lambda " + std::to_string(lambda) + ", input " +
                                                         std::to_string(i) + " element " + std::to_string(e) +
                                                         ": " + std::to_string(g1.data[e]) + " vs " +
                                                         std::to_string(want)});
                    break;
                }
            }
        }

        // Forward through the GRL is the identity, bit-exactly.
        Tape t3;
        int x = t3.leaf(net.params_and_input.back());
        int g = t3.grl(x);
        if (!(t3.value(g) == t3.value(x))) fails.push_back({"grl/identity", "forward altered its input"});
    }
    return fails;
}

inline std::vector<Failure> closed_forms() {
    std::vector<Failure> fails;
    auto expect = [&](const std::string& name, double got, double want, double tol) {
        if (!(std::fabs(got - want) <= tol))
            fails.push_back({name, "got " + std::to_string(got) + ", expected " + std::to_string(want)});
    };

    {
        // A=4, y=m, L=I: quadratic and log-det vanish, 0.5 * 4 * ln 2pi remains.
        Tape t;
        Array m({4}, {0.3, -0.2, 1.1, 0.0});
        Array packed = Array::zeros({tri_numel(4)});
        for (size_t i = 0; i < 4; ++i) packed[tri_index(i, i)] = 1.0;
        int l = t.gnll(t.leaf(m), t.leaf(packed), m);
        expect("closed-form/gnll-identity", t.value(l).data[0], 2.0 * kLn2Pi, 1e-9);
    }
    {
        // A=1, m=0, L=[1], y=1: 0.5 (1 + ln 2pi).
        Tape t;
        int l = t.gnll(t.leaf(Array({1}, {0.0})), t.leaf(Array({1}, {1.0})), Array({1}, {1.0}));
        expect("closed-form/gnll-scalar", t.value(l).data[0], 0.5 * (1.0 + kLn2Pi), 1e-9);
    }
    {
        Tape t;
        int l = t.softmax_ce(t.leaf(Array({6}, std::vector<double>(6, 0.7))), 3);
        expect("closed-form/ce-uniform", t.value(l).data[0], std::log(6.0), 1e-12);
    }
    {
        // saturated logits stay finite and essentially zero
        Tape t;
        int l = t.softmax_ce(t.leaf(Array({2}, {100.0, 0.0})), 0);
        double v = t.value(l).data[0];
        if (!std::isfinite(v) || v < 0.0 || v > 1e-40)
            fails.push_back({"closed-form/ce-saturated", "value " + std::to_string(v)});
        Tape t2;
        int l2 = t2.softmax_ce(t2.leaf(Array({2}, {1e4, -1e4})), 1);
        if (!std::isfinite(t2.value(l2).data[0]))
            fails.push_back({"closed-form/ce-huge-logits", "non-finite loss"});
    }
    {
        // convexity in m around the optimum m = y
        Tape t;
        Array y({3}, {0.5, -0.3, 0.9});
        Rng convex_rng(derive(7, "selfcheck/convex"));
        Array packed = detail::rand_packed_chol(convex_rng, 3);
        int base = t.gnll(t.leaf(y), t.leaf(packed), y);
        double best = t.value(base).data[0];
        for (int k = 0; k < 5; ++k) {
            Array m = y;
            m[static_cast<size_t>(k) % 3] += 0.1 * (k + 1);
            Tape t2;
            int node = t2.gnll(t2.leaf(m), t2.leaf(packed), y);
            if (!(t2.value(node).data[0] > best)) {
                fails.push_back({"closed-form/gnll-minimum", "perturbed mean did not increase the loss"});
                break;
            }
        }
    }
    return fails;
}

// Loss assembly laws: affinity in lambda, gradient scaling, batch-of-one.
inline std::vector<Failure> loss_laws(uint64_t seed) {
    std::vector<Failure> fails;
    Rng rng(derive(seed, "selfcheck/loss"));

    ModelConfig mc;
    mc.input_dim = 4;
    mc.encoder_hidden = {5};
    mc.latent_dim = 3;
    mc.aspects = 2;
    mc.aspect_names = default_aspect_names(2);
    mc.domain_hidden = {4};
    mc.num_domains = 3;
    mc.seed = derive(seed, "selfcheck/loss-params");
    ModelParams params = init_params(mc);

    std::vector<Array> xs, ys;
    std::vector<size_t> labels;
    for (int i = 0; i < 6; ++i) {
        xs.push_back(detail::rand_array(rng, {4}, -1, 1));
        ys.push_back(detail::rand_array(rng, {2}, 2.0, 8.0));
        labels.push_back(static_cast<size_t>(rng.below(3)));
    }

    auto run = [&](double lambda, LossBreakdown* lb) {
        Tape t;
        Binding b = bind_params(t, params);
        int total = batch_objective(t, b, mc, xs, ys, labels, lambda, false, nullptr, lb);
        t.backward(total);
        std::vector<Array> grads;
        for (const auto& [n, id] : b.ids) grads.push_back(t.grad(id));
        return grads;
    };

    LossBreakdown lb0, lb01, lb05, lb1;
    auto g0 = run(0.0, &lb0);
    auto g01 = run(0.1, &lb01);
    auto g05 = run(0.5, &lb05);
    run(1.0, &lb1);

    if (lb0.total != lb0.task) fails.push_back({"loss/lambda0", "total != task at lambda 0"});
    for (const auto* lb : {&lb01, &lb05, &lb1}) {
        if (std::fabs(lb->total - (lb->task + lb->lambda * lb->adv)) > 1e-12)
            fails.push_back({"loss/affine", "total != task + lambda adv at lambda " +
                                                std::to_string(lb->lambda)});
        if (std::fabs(lb->task - lb0.task) > 1e-12)
            fails.push_back({"loss/affine", "task term moved with lambda"});
        if (std::fabs(lb->adv - lb01.adv) > 1e-12)
            fails.push_back({"loss/affine", "adv term moved with lambda"});
    }

    // grad(0.5) - grad(0) == 5 (grad(0.1) - grad(0)), elementwise
    for (size_t p = 0; p < g0.size(); ++p)
        for (size_t e = 0; e < g0[p].numel(); ++e) {
            double lhs = g05[p].data[e] - g0[p].data[e];
            double rhs = 5.0 * (g01[p].data[e] - g0[p].data[e]);
            if (std::fabs(lhs - rhs) > 1e-10 * std::max(1.0, std::fabs(rhs))) {
                fails.push_back({"loss/grad-scaling", "param " + std::to_string(p) + " element " +
                                                          std::to_string(e)});
                p = g0.size() - 1;
                break;
            }
        }

    // batch of one equals the per-sample loss exactly
    {
        Tape t;
        Binding b = bind_params(t, params);
        LossBreakdown one;
        batch_objective(t, b, mc, {xs[0]}, {ys[0]}, {labels[0]}, 0.5, false, nullptr, &one);
        Tape t2;
        Binding b2 = bind_params(t2, params);
        int x = t2.leaf(xs[0]);
        int h = encode_on_tape(t2, b2, mc, x, false, nullptr);
        QualityNodes q = quality_head_on_tape(t2, b2, mc, h);
        double task_direct = t2.value(t2.gnll(q.m, q.chol, ys[0])).data[0];
        if (one.task != task_direct) fails.push_back({"loss/batch-of-one", "mean of one != sample loss"});
    }

    // lambda = 0 gradients match a task-only tape bit for bit
    {
        Tape t;
        Binding b = bind_params(t, params);
        int sum = -1;
        for (size_t i = 0; i < xs.size(); ++i) {
            int x = t.leaf(xs[i]);
            QualityNodes q = quality_head_on_tape(t, b, mc, encode_on_tape(t, b, mc, x, false, nullptr));
            int li = t.gnll(q.m, q.chol, ys[i]);
            sum = sum < 0 ? li : t.add(sum, li);
        }
        t.backward(t.scale(sum, 1.0 / static_cast<double>(xs.size())));
        for (size_t p = 0; p < b.ids.size(); ++p)
            if (!(t.grad(b.ids[p].second) == g0[p])) {
                fails.push_back({"loss/lambda0-ablation", "gradient differs from task-only tape"});
                break;
            }
    }
    return fails;
}

// Algebraic spot checks on the numeric helpers.
inline std::vector<Failure> numeric_spots(uint64_t seed) {
    std::vector<Failure> fails;
    auto expect = [&](const std::string& name, bool ok, const std::string& detail) {
        if (!ok) fails.push_back({name, detail});
    };

    {
        ModelParams p;
        p.entries.emplace_back("w", Array({1}, {0.0}));
        AdamWState st;
        adamw_step(p, {Array({1}, {0.5})}, st, 1e-4, 0.9, 0.999, 1e-8, 0.0);
        double want = -1e-4 * (0.5 / (0.5 + 1e-8));
        expect("adamw/first-step", std::fabs(p.at("w")[0] - want) <= 1e-15,
               "got " + std::to_string(p.at("w")[0]));
        adamw_step(p, {Array({1}, {0.0})}, st, 1e-4, 0.9, 0.999, 1e-8, 0.0);
    }
    {
        ModelParams p;
        p.entries.emplace_back("w", Array({2}, {1.0, -2.0}));
        AdamWState st;
        adamw_step(p, {Array::zeros({2})}, st, 1e-3, 0.9, 0.999, 1e-8, 0.0);
        expect("adamw/zero-grad", p.at("w")[0] == 1.0 && p.at("w")[1] == -2.0, "parameters moved");
    }
    {
        Array pts({2, 1}, {0.0, 10.0});
        KmeansResult km = kmeans_fit(pts, 2, seed);
        expect("kmeans/separable", km.inertia == 0.0, "inertia " + std::to_string(km.inertia));
        KmeansResult km2 = kmeans_fit(pts, 2, seed);
        expect("kmeans/deterministic", km.labels == km2.labels && km.centroids == km2.centroids,
               "same seed produced different clusterings");
        expect("kmeans/assign-tie", kmeans_assign(Array({1}, {0.0}), Array({2, 1}, {-1.0, 1.0})) == 0,
               "equidistant point not assigned to the lowest index");
    }
    {
        expect("srcc/monotone", srcc({1, 2, 3}, {10, 20, 30}) == 1.0, "not +1");
        expect("srcc/antitone", srcc({1, 2, 3}, {30, 20, 10}) == -1.0, "not -1");
    }
    {
        TTestResult r = paired_ttest({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0});
        expect("ttest/identical", r.t == 0.0 && r.p == 1.0, "t/p not degenerate");
        // df = 1 is a Cauchy: one-sided CDF at t=1 is 3/4, two-sided p = 0.5
        double p1 = betai(0.5, 0.5, 1.0 / (1.0 + 1.0));
        expect("ttest/cauchy", std::fabs(p1 - 0.5) <= 1e-10, "got " + std::to_string(p1));
        double p200 = betai(100.0, 0.5, 200.0 / (200.0 + 1.96 * 1.96));
        expect("ttest/normal-limit", std::fabs(p200 - 0.0512) <= 1e-3, "got " + std::to_string(p200));
    }
    {
        Rng r(derive(seed, "selfcheck/pca"));
        Array m({6, 3});
        for (double& v : m.data) v = r.normal();
        PcaResult pr = pca_project(m, 2);
        expect("pca/ordering",
               pr.eigenvalues.size() == 2 && pr.eigenvalues[0] >= pr.eigenvalues[1] && !pr.rank_deficient,
               "eigenvalue order violated");
        Array line({5, 2});
        for (size_t i = 0; i < 5; ++i) {
            line.at(i, 0) = static_cast<double>(i);
            line.at(i, 1) = 2.0 * static_cast<double>(i);
        }
        PcaResult collinear = pca_project(line, 2);
        expect("pca/collinear", collinear.rank_deficient && collinear.components.shape[0] == 1,
               "rank deficiency not flagged");
    }
    {
        // init determinism and roughly centered weights
        ModelConfig mc;
        mc.input_dim = 50;
        mc.encoder_hidden = {100};
        mc.latent_dim = 50;
        mc.aspects = 4;
        mc.aspect_names = default_aspect_names(4);
        mc.num_domains = 2;
        mc.seed = seed;
        ModelParams a = init_params(mc), b = init_params(mc);
        bool same = true;
        for (size_t i = 0; i < a.entries.size(); ++i)
            same = same && a.entries[i].second == b.entries[i].second;
        expect("init/deterministic", same, "same seed produced different parameters");
        const Array& w = a.at("encoder.0.weight");
        double mean = 0.0;
        for (double v : w.data) mean += v;
        mean /= static_cast<double>(w.numel());
        const double lim = std::sqrt(6.0 / 150.0);
        const double sigma = lim / std::sqrt(3.0) / std::sqrt(static_cast<double>(w.numel()));
        expect("init/centered", std::fabs(mean) <= 3.0 * sigma, "weight mean " + std::to_string(mean));
    }
    return fails;
}

inline std::vector<Failure> run_all(const Options& opt) {
    std::vector<Failure> fails;
    auto take = [&](std::vector<Failure> v) {
        fails.insert(fails.end(), v.begin(), v.end());
    };
    take(gradient_suite(opt));
    take(grl_law(opt.seed));
    take(closed_forms());
    take(loss_laws(opt.seed));
    take(numeric_spots(opt.seed));
    return fails;
}

}  // namespace datqa::selfcheck
