#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "datqa/array.hpp"
#include "datqa/errors.hpp"
#include "datqa/rng.hpp"
#include "datqa/tape.hpp"

namespace datqa {

// Encoder -> latent h; quality head -> (m, Cholesky factor of the predictive
// covariance); domain branch -> logits through the gradient reversal layer.

struct ModelConfig {
    size_t input_dim = 0;
    std::vector<size_t> encoder_hidden{256, 128};
    size_t latent_dim = 64;
    size_t aspects = 4;
    std::vector<std::string> aspect_names{"PQ", "PC", "CE", "CU"};
    std::vector<size_t> domain_hidden{32};
    size_t num_domains = 2;
    double dropout_rate = 0.0;
    uint64_t seed = 0;

    size_t head_width() const { return aspects + tri_numel(aspects); }

    void validate() const {
        if (input_dim < 1 || latent_dim < 1 || aspects < 1 || num_domains < 1)
            throw Error("model config: input_dim, latent_dim, aspects, num_domains must be >= 1");
        if (encoder_hidden.empty() || domain_hidden.empty())
            throw Error("model config: hidden layer lists must be non-empty");
        for (size_t w : encoder_hidden)
            if (w < 1) throw Error("model config: encoder hidden width must be >= 1");
        for (size_t w : domain_hidden)
            if (w < 1) throw Error("model config: domain hidden width must be >= 1");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw Error("model config: dropout_rate must lie in [0, 1)");
        if (aspect_names.size() != aspects)
            throw Error("model config: aspect_names length must equal aspects");
    }
};

inline std::vector<std::string> default_aspect_names(size_t a) {
    if (a == 4) return {"PQ", "PC", "CE", "CU"};
    std::vector<std::string> names(a);
    for (size_t i = 0; i < a; ++i) names[i] = "a" + std::to_string(i);
    return names;
}

// Named parameter arrays in a fixed order; the order is the serialization
// order and the optimizer's slot order.
struct ModelParams {
    std::vector<std::pair<std::string, Array>> entries;

    size_t size() const { return entries.size(); }

    Array& at(const std::string& name) {
        for (auto& [n, a] : entries)
            if (n == name) return a;
        throw Error("unknown parameter '" + name + "'");
    }
    const Array& at(const std::string& name) const {
        for (const auto& [n, a] : entries)
            if (n == name) return a;
        throw Error("unknown parameter '" + name + "'");
    }
    bool has(const std::string& name) const {
        for (const auto& [n, a] : entries)
            if (n == name) return true;
        return false;
    }
};

namespace detail {

inline void add_glorot_layer(ModelParams& p, const std::string& name, size_t out_dim, size_t in_dim,
                             uint64_t seed) {
    Array w({out_dim, in_dim});
    Rng rng(derive(seed, "init/" + name + ".weight"));
    const double lim = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    for (double& v : w.data) v = rng.uniform(-lim, lim);
    p.entries.emplace_back(name + ".weight", std::move(w));
    p.entries.emplace_back(name + ".bias", Array::zeros({out_dim}));
}

// Layer dim chains derived from the config; index i maps dims[i] -> dims[i+1].
inline std::vector<size_t> encoder_dims(const ModelConfig& c) {
    std::vector<size_t> d{c.input_dim};
    d.insert(d.end(), c.encoder_hidden.begin(), c.encoder_hidden.end());
    d.push_back(c.latent_dim);
    return d;
}
inline std::vector<size_t> domain_dims(const ModelConfig& c) {
    std::vector<size_t> d{c.latent_dim};
    d.insert(d.end(), c.domain_hidden.begin(), c.domain_hidden.end());
    d.push_back(c.num_domains);
    return d;
}

}  // namespace detail

// Glorot-uniform weights, zero biases. Each tensor draws from its own derived
// PRNG stream so the quality path is unaffected by the presence or shape of
// the domain branch.
inline ModelParams init_params(const ModelConfig& c) {
    c.validate();
    ModelParams p;
    auto enc = detail::encoder_dims(c);
    for (size_t i = 0; i + 1 < enc.size(); ++i)
        detail::add_glorot_layer(p, "encoder." + std::to_string(i), enc[i + 1], enc[i], c.seed);
    detail::add_glorot_layer(p, "quality", c.head_width(), c.latent_dim, c.seed);
    auto dom = detail::domain_dims(c);
    for (size_t i = 0; i + 1 < dom.size(); ++i)
        detail::add_glorot_layer(p, "domain." + std::to_string(i), dom[i + 1], dom[i], c.seed);
    return p;
}

// Parameter leaves pushed onto a tape, one leaf per named array, in the
// canonical parameter order.
struct Binding {
    std::vector<std::pair<std::string, int>> ids;

    int id(const std::string& name) const {
        for (const auto& [n, i] : ids)
            if (n == name) return i;
        throw Error("unbound parameter '" + name + "'");
    }
};

inline Binding bind_params(Tape& t, const ModelParams& p) {
    Binding b;
    b.ids.reserve(p.entries.size());
    for (const auto& [name, arr] : p.entries) b.ids.emplace_back(name, t.leaf(arr));
    return b;
}

// h node for one rank-1 input. In train mode each hidden activation gets an
// inverted-dropout mask drawn sequentially from drop_rng; the latent layer is
// linear and never dropped.
inline int encode_on_tape(Tape& t, const Binding& b, const ModelConfig& c, int x_id, bool train,
                          Rng* drop_rng) {
    auto enc = detail::encoder_dims(c);
    int cur = x_id;
    const size_t layers = enc.size() - 1;
    for (size_t i = 0; i < layers; ++i) {
        const std::string base = "encoder." + std::to_string(i);
        cur = t.add(t.matmul(b.id(base + ".weight"), cur), b.id(base + ".bias"));
        if (i + 1 < layers) {
            cur = t.relu(cur);
            if (train && c.dropout_rate > 0.0) {
                if (!drop_rng) throw Error("encode: train-mode dropout requires an rng");
                const double p = c.dropout_rate;
                Array m({enc[i + 1]});
                for (double& v : m.data) v = drop_rng->uniform01() < p ? 0.0 : 1.0 / (1.0 - p);
                cur = t.mask(cur, std::move(m));
            }
        }
    }
    return cur;
}

struct QualityNodes {
    int m = -1;     // rank-1 [A]
    int chol = -1;  // packed lower triangle, rank-1 [A(A+1)/2]
};

// Single linear map to A + A(A+1)/2 raw values; first A are the mean, the
// rest fill the lower triangle row-major with exp applied on the diagonal.
inline QualityNodes quality_head_on_tape(Tape& t, const Binding& b, const ModelConfig& c, int h_id) {
    int raw = t.add(t.matmul(b.id("quality.weight"), h_id), b.id("quality.bias"));
    QualityNodes q;
    q.m = t.slice(raw, 0, c.aspects);
    q.chol = t.exp_diag(t.slice(raw, c.aspects, tri_numel(c.aspects)), c.aspects);
    return q;
}

inline int domain_head_on_tape(Tape& t, const Binding& b, const ModelConfig& c, int h_id,
                               bool use_grl = true, double grl_scale = 1.0) {
    auto dom = detail::domain_dims(c);
    int cur = use_grl ? t.grl(h_id, grl_scale) : h_id;
    const size_t layers = dom.size() - 1;
    for (size_t i = 0; i < layers; ++i) {
        const std::string base = "domain." + std::to_string(i);
        cur = t.add(t.matmul(b.id(base + ".weight"), cur), b.id(base + ".bias"));
        if (i + 1 < layers) cur = t.relu(cur);
    }
    return cur;
}

// Tape-free inference path. Uses the same kernels as the tape forwards, in
// the same order, so values are bit-identical to a dropout-free tape run.
inline Array latent(const ModelParams& p, const ModelConfig& c, const Array& x) {
    if (x.rank() != 1 || x.numel() != c.input_dim)
        throw ShapeError("latent: expected input of shape [" + std::to_string(c.input_dim) + "], got " +
                         shape_str(x.shape));
    auto enc = detail::encoder_dims(c);
    Array cur = x;
    const size_t layers = enc.size() - 1;
    for (size_t i = 0; i < layers; ++i) {
        const std::string base = "encoder." + std::to_string(i);
        cur = kernels::add(kernels::matmul(p.at(base + ".weight"), cur), p.at(base + ".bias"));
        if (i + 1 < layers) cur = kernels::relu(cur);
    }
    if (!cur.all_finite()) throw NumericError("latent: non-finite activation");
    return cur;
}

struct QualityPrediction {
    Array m;     // [A]
    Array chol;  // [A x A] dense lower triangle, positive diagonal
};

inline QualityPrediction predict(const ModelParams& p, const ModelConfig& c, const Array& x) {
    Array h = latent(p, c, x);
    Array raw = kernels::add(kernels::matmul(p.at("quality.weight"), h), p.at("quality.bias"));
    QualityPrediction out;
    out.m = Array({c.aspects});
    std::copy(raw.data.begin(), raw.data.begin() + static_cast<long>(c.aspects), out.m.data.begin());
    Array packed({tri_numel(c.aspects)});
    std::copy(raw.data.begin() + static_cast<long>(c.aspects), raw.data.end(), packed.data.begin());
    packed = kernels::exp_diag(packed, c.aspects);
    out.chol = tri_unpack(packed, c.aspects);
    return out;
}

}  // namespace datqa
