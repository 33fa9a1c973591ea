#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "datqa/data.hpp"
#include "datqa/domains.hpp"
#include "datqa/errors.hpp"
#include "datqa/losses.hpp"
#include "datqa/model.hpp"

namespace datqa {

struct TrainConfig {
    size_t epochs = 30;
    size_t batch_size = 64;
    double lr = 1e-4;
    double weight_decay = 0.0;
    double lambda = 0.5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    DomainStrategy strategy;
    uint64_t seed = 0;
    bool val_loss_total = false;  // validation selection on task loss alone by default
    // Off by default: lambda is fixed for the whole run. When enabled, the
    // training objective ramps lambda linearly from 0 (first epoch) to the
    // configured value (last epoch); validation losses always use the full
    // lambda so epochs stay comparable.
    bool lambda_warmup = false;

    double effective_lambda(size_t epoch) const {
        if (!lambda_warmup || epochs <= 1) return lambda;
        return lambda * static_cast<double>(epoch) / static_cast<double>(epochs - 1);
    }

    void validate() const {
        if (epochs < 1) throw Error("train config: epochs must be >= 1");
        if (batch_size < 1) throw Error("train config: batch size must be >= 1");
        if (!(lr > 0.0)) throw Error("train config: lr must be > 0");
        if (lambda < 0.0) throw Error("train config: lambda must be >= 0");
        if (weight_decay < 0.0) throw Error("train config: weight decay must be >= 0");
    }
};

struct EpochStats {
    size_t epoch = 0;
    double train_task = 0.0, train_adv = 0.0, train_total = 0.0;
    double val_task = 0.0, val_adv = 0.0, val_total = 0.0;
};

struct AdamWState {
    std::vector<Array> m, v;
    size_t t = 0;
};

// Decoupled weight decay; wd = 0 reduces exactly to Adam.
inline void adamw_step(ModelParams& params, const std::vector<Array>& grads, AdamWState& st, double lr,
                       double beta1, double beta2, double eps, double wd) {
    if (grads.size() != params.entries.size()) throw Error("adamw_step: gradient count mismatch");
    if (st.m.empty()) {
        for (const auto& [name, arr] : params.entries) {
            st.m.push_back(Array::zeros(arr.shape));
            st.v.push_back(Array::zeros(arr.shape));
        }
    }
    ++st.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
    for (size_t p = 0; p < params.entries.size(); ++p) {
        Array& theta = params.entries[p].second;
        const Array& g = grads[p];
        if (!theta.same_shape(g)) throw ShapeError("adamw_step: gradient shape mismatch for '" +
                                                   params.entries[p].first + "'");
        if (!g.all_finite()) throw NumericError("adamw_step: non-finite gradient in '" +
                                                params.entries[p].first + "'");
        Array& m = st.m[p];
        Array& v = st.v[p];
        for (size_t i = 0; i < theta.numel(); ++i) {
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            theta.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * theta.data[i]);
        }
    }
}

struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    ModelParams params;
    size_t best_epoch = 0;
    std::vector<EpochStats> history;

    // Domain assignment metadata; strat_D == 0 means no adversary was trained.
    StrategyKind strat_kind = StrategyKind::Random;
    size_t strat_D = 0;
    std::vector<std::string> label_names;
    Array centroids, feat_mean, feat_std;
    uint64_t centroid_hash = 0;
};

namespace detail {

// Mean task/adv loss over a fixed split, inference mode (no dropout).
inline void split_loss(const ModelParams& params, const ModelConfig& mc, const std::vector<Array>& xs,
                       const std::vector<Array>& ys, const std::vector<size_t>& labels, double lambda,
                       const std::vector<size_t>& idx, double* task, double* adv) {
    double tsum = 0.0, asum = 0.0;
    const size_t chunk = 64;
    for (size_t start = 0; start < idx.size(); start += chunk) {
        size_t end = std::min(idx.size(), start + chunk);
        Tape tape;
        Binding b = bind_params(tape, params);
        std::vector<Array> bx, by;
        std::vector<size_t> bl;
        for (size_t i = start; i < end; ++i) {
            bx.push_back(xs[idx[i]]);
            by.push_back(ys[idx[i]]);
            if (lambda > 0.0) bl.push_back(labels[idx[i]]);
        }
        LossBreakdown lb;
        batch_objective(tape, b, mc, bx, by, bl, lambda, /*train_mode=*/false, nullptr, &lb);
        tsum += lb.task * static_cast<double>(end - start);
        asum += lb.adv * static_cast<double>(end - start);
    }
    *task = tsum / static_cast<double>(idx.size());
    *adv = asum / static_cast<double>(idx.size());
}

}  // namespace detail

// Build the per-record domain labels for train+val under a strategy.
// K-means is fit on the train split only; val records take nearest-centroid
// labels in the (optionally standardized) train feature space.
inline DomainAssignment assign_domains(const Corpus& corpus, const DomainStrategy& strategy,
                                       const std::vector<Array>& pooled) {
    strategy.validate();
    std::vector<size_t> train_idx = corpus.split_indices(Split::Train);
    std::vector<size_t> val_idx = corpus.split_indices(Split::Val);
    std::vector<size_t> both = train_idx;
    both.insert(both.end(), val_idx.begin(), val_idx.end());

    switch (strategy.kind) {
        case StrategyKind::Source: {
            std::vector<std::string> ids, sources;
            for (size_t i : both) {
                ids.push_back(corpus.records[i].id);
                sources.push_back(corpus.records[i].source);
            }
            return assign_source(ids, sources);
        }
        case StrategyKind::Random: {
            std::vector<std::string> ids;
            for (size_t i : both) ids.push_back(corpus.records[i].id);
            return assign_random(ids, strategy.d, strategy.seed);
        }
        case StrategyKind::Kmeans: {
            Array emb({train_idx.size(), corpus.feature_dim});
            for (size_t r = 0; r < train_idx.size(); ++r)
                std::copy(pooled[train_idx[r]].data.begin(), pooled[train_idx[r]].data.end(),
                          &emb.data[r * corpus.feature_dim]);
            DomainAssignment out;
            if (strategy.standardize) {
                feature_stats(emb, out.feat_mean, out.feat_std);
                emb = standardize_with(emb, out.feat_mean, out.feat_std);
            }
            KmeansResult km = kmeans_fit(emb, strategy.k, strategy.seed, strategy.restarts);
            out.D = strategy.k;
            out.centroids = std::move(km.centroids);
            for (size_t r = 0; r < train_idx.size(); ++r)
                out.labels[corpus.records[train_idx[r]].id] = km.labels[r];
            for (size_t i : val_idx) {
                Array x = pooled[i];
                if (strategy.standardize) x = standardize_with(x, out.feat_mean, out.feat_std);
                out.labels[corpus.records[i].id] = kmeans_assign(x, out.centroids);
            }
            return out;
        }
    }
    throw Error("assign_domains: unreachable");
}

// Full optimization loop. Epoch order, batch composition, dropout masks, and
// parameter init all come from derived PRNG streams of the two seeds, so a
// (corpus, config) pair maps to exactly one checkpoint.
inline Checkpoint train(const Corpus& corpus, ModelConfig model_cfg, const TrainConfig& cfg) {
    cfg.validate();
    std::vector<size_t> train_idx = corpus.split_indices(Split::Train);
    std::vector<size_t> val_idx = corpus.split_indices(Split::Val);
    if (train_idx.empty() || val_idx.empty()) throw DataError("train: corpus needs train and val splits");

    std::vector<Array> pooled(corpus.records.size());
    std::vector<Array> targets(corpus.records.size());
    for (size_t i = 0; i < corpus.records.size(); ++i) {
        pooled[i] = mean_pool(corpus.records[i].features);
        targets[i] = corpus.records[i].scores;
    }

    const bool adversarial = cfg.lambda > 0.0;
    DomainAssignment assign;
    std::vector<size_t> labels(corpus.records.size(), 0);
    if (adversarial) {
        assign = assign_domains(corpus, cfg.strategy, pooled);
        for (size_t i : train_idx) labels[i] = assign.label_of(corpus.records[i].id);
        for (size_t i : val_idx) labels[i] = assign.label_of(corpus.records[i].id);
        model_cfg.num_domains = assign.D;
    }
    model_cfg.input_dim = corpus.feature_dim;
    model_cfg.aspects = corpus.schema.aspects.size();
    model_cfg.aspect_names = corpus.schema.aspects;
    model_cfg.validate();

    ModelParams params = init_params(model_cfg);
    AdamWState opt;

    Checkpoint best;
    best.model = model_cfg;
    best.train = cfg;
    best.strat_kind = cfg.strategy.kind;
    if (adversarial) {
        best.strat_D = assign.D;
        best.label_names = assign.label_names;
        best.centroids = assign.centroids;
        best.feat_mean = assign.feat_mean;
        best.feat_std = assign.feat_std;
        if (assign.centroids.numel() > 0)
            best.centroid_hash = fnv1a64_bytes(assign.centroids.data.data(),
                                               assign.centroids.data.size() * sizeof(double));
    }

    double best_val = std::numeric_limits<double>::infinity();
    ModelParams best_params = params;
    size_t best_epoch = 0;

    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = batch_iter(corpus, Split::Train, cfg.batch_size, cfg.seed, epoch);
        double tsum = 0.0, asum = 0.0;
        size_t nseen = 0;
        for (size_t step = 0; step < batches.size(); ++step) {
            std::vector<Array> bx, by;
            std::vector<size_t> bl;
            for (size_t i : batches[step]) {
                bx.push_back(pooled[i]);
                by.push_back(targets[i]);
                if (adversarial) bl.push_back(labels[i]);
            }
            Tape tape;
            Binding bind = bind_params(tape, params);
            Rng drop(derive(cfg.seed, "dropout", epoch, step));
            const double lam = adversarial ? cfg.effective_lambda(epoch) : 0.0;
            LossBreakdown lb;
            int total;
            try {
                total = batch_objective(tape, bind, model_cfg, bx, by, bl, lam,
                                        /*train_mode=*/true, &drop, &lb);
                tape.backward(total);
                std::vector<Array> grads;
                grads.reserve(bind.ids.size());
                for (const auto& [name, id] : bind.ids) grads.push_back(tape.grad(id));
                adamw_step(params, grads, opt, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
            } catch (const NumericError& e) {
                throw DivergenceError(e.what(), epoch, step);
            }
            tsum += lb.task * static_cast<double>(bx.size());
            asum += lb.adv * static_cast<double>(bx.size());
            nseen += bx.size();
        }

        EpochStats es;
        es.epoch = epoch;
        es.train_task = tsum / static_cast<double>(nseen);
        es.train_adv = asum / static_cast<double>(nseen);
        es.train_total = es.train_task + (adversarial ? cfg.effective_lambda(epoch) : 0.0) * es.train_adv;
        detail::split_loss(params, model_cfg, pooled, targets, labels, cfg.lambda, val_idx, &es.val_task,
                           &es.val_adv);
        es.val_total = es.val_task + cfg.lambda * es.val_adv;
        best.history.push_back(es);

        const double selection = cfg.val_loss_total ? es.val_total : es.val_task;
        if (selection < best_val) {
            best_val = selection;
            best_params = params;
            best_epoch = epoch;
        }
    }

    best.params = std::move(best_params);
    best.best_epoch = best_epoch;
    return best;
}

// ---- checkpoint serialization ----------------------------------------------
//
// Little-endian binary: magic "DATQA1\0\0", u32 version, u64 JSON length,
// UTF-8 JSON (configs, strategy metadata, history, array name list), then per
// array: u16 name length, name, u8 rank, rank x u64 dims, f64 data.

inline constexpr char kCheckpointMagic[8] = {'D', 'A', 'T', 'Q', 'A', '1', '\0', '\0'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw DataError("checkpoint truncated");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

inline void write_array(std::ostream& out, const std::string& name, const Array& a) {
    write_le<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), static_cast<long>(name.size()));
    write_le<uint8_t>(out, static_cast<uint8_t>(a.rank()));
    for (size_t d : a.shape) write_le<uint64_t>(out, static_cast<uint64_t>(d));
    for (double v : a.data) write_le<double>(out, v);
}

inline std::pair<std::string, Array> read_array(std::istream& in) {
    uint16_t len = read_le<uint16_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw DataError("checkpoint truncated");
    uint8_t rank = read_le<uint8_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<size_t>(read_le<uint64_t>(in));
    Array a(shape);
    for (double& v : a.data) v = read_le<double>(in);
    return {std::move(name), std::move(a)};
}

inline nlohmann::ordered_json history_json(const std::vector<EpochStats>& h) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& e : h) {
        nlohmann::ordered_json j;
        j["epoch"] = e.epoch;
        j["train_task"] = e.train_task;
        j["train_adv"] = e.train_adv;
        j["train_total"] = e.train_total;
        j["val_task"] = e.val_task;
        j["val_adv"] = e.val_adv;
        j["val_total"] = e.val_total;
        arr.push_back(j);
    }
    return arr;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    nlohmann::ordered_json j;
    j["model"] = {{"input_dim", c.model.input_dim},
                  {"encoder_hidden", c.model.encoder_hidden},
                  {"latent_dim", c.model.latent_dim},
                  {"aspects", c.model.aspects},
                  {"aspect_names", c.model.aspect_names},
                  {"domain_hidden", c.model.domain_hidden},
                  {"num_domains", c.model.num_domains},
                  {"dropout_rate", c.model.dropout_rate},
                  {"seed", c.model.seed}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"lr", c.train.lr},
                  {"weight_decay", c.train.weight_decay},
                  {"lambda", c.train.lambda},
                  {"beta1", c.train.beta1},
                  {"beta2", c.train.beta2},
                  {"eps", c.train.eps},
                  {"seed", c.train.seed},
                  {"val_loss", c.train.val_loss_total ? "total" : "task"},
                  {"lambda_warmup", c.train.lambda_warmup}};
    char hashbuf[19];
    std::snprintf(hashbuf, sizeof hashbuf, "0x%016llx", static_cast<unsigned long long>(c.centroid_hash));
    j["strategy"] = {{"kind", strategy_name(c.strat_kind)},
                     {"D", c.strat_D},
                     {"k", c.train.strategy.k},
                     {"d", c.train.strategy.d},
                     {"seed", c.train.strategy.seed},
                     {"standardize", c.train.strategy.standardize},
                     {"restarts", c.train.strategy.restarts},
                     {"label_names", c.label_names},
                     {"centroid_hash", hashbuf}};
    j["best_epoch"] = c.best_epoch;
    j["history"] = detail::history_json(c.history);
    std::vector<std::string> names;
    for (const auto& [n, a] : c.params.entries) names.push_back(n);
    if (c.centroids.numel() > 0) names.push_back("domains.centroids");
    if (c.feat_mean.numel() > 0) names.push_back("domains.feature_mean");
    if (c.feat_std.numel() > 0) names.push_back("domains.feature_std");
    j["arrays"] = names;
    const std::string header = j.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out.write(kCheckpointMagic, 8);
    detail::write_le<uint32_t>(out, kCheckpointVersion);
    detail::write_le<uint64_t>(out, header.size());
    out.write(header.data(), static_cast<long>(header.size()));
    for (const auto& [n, a] : c.params.entries) detail::write_array(out, n, a);
    if (c.centroids.numel() > 0) detail::write_array(out, "domains.centroids", c.centroids);
    if (c.feat_mean.numel() > 0) detail::write_array(out, "domains.feature_mean", c.feat_mean);
    if (c.feat_std.numel() > 0) detail::write_array(out, "domains.feature_std", c.feat_std);
    if (!out) throw DataError("write failure on checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError("checkpoint '" + path + "': bad magic");
    uint32_t version = detail::read_le<uint32_t>(in);
    if (version != kCheckpointVersion)
        throw DataError("checkpoint '" + path + "': unsupported version " + std::to_string(version));
    uint64_t jlen = detail::read_le<uint64_t>(in);
    std::string header(jlen, '\0');
    in.read(header.data(), static_cast<long>(jlen));
    if (!in) throw DataError("checkpoint truncated");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }

    Checkpoint c;
    try {
        const auto& m = j.at("model");
        c.model.input_dim = m.at("input_dim").get<size_t>();
        c.model.encoder_hidden = m.at("encoder_hidden").get<std::vector<size_t>>();
        c.model.latent_dim = m.at("latent_dim").get<size_t>();
        c.model.aspects = m.at("aspects").get<size_t>();
        c.model.aspect_names = m.at("aspect_names").get<std::vector<std::string>>();
        c.model.domain_hidden = m.at("domain_hidden").get<std::vector<size_t>>();
        c.model.num_domains = m.at("num_domains").get<size_t>();
        c.model.dropout_rate = m.at("dropout_rate").get<double>();
        c.model.seed = m.at("seed").get<uint64_t>();
        const auto& t = j.at("train");
        c.train.epochs = t.at("epochs").get<size_t>();
        c.train.batch_size = t.at("batch_size").get<size_t>();
        c.train.lr = t.at("lr").get<double>();
        c.train.weight_decay = t.at("weight_decay").get<double>();
        c.train.lambda = t.at("lambda").get<double>();
        c.train.beta1 = t.at("beta1").get<double>();
        c.train.beta2 = t.at("beta2").get<double>();
        c.train.eps = t.at("eps").get<double>();
        c.train.seed = t.at("seed").get<uint64_t>();
        c.train.val_loss_total = t.at("val_loss").get<std::string>() == "total";
        c.train.lambda_warmup = t.at("lambda_warmup").get<bool>();
        const auto& s = j.at("strategy");
        c.strat_kind = parse_strategy(s.at("kind").get<std::string>());
        c.train.strategy.kind = c.strat_kind;
        c.strat_D = s.at("D").get<size_t>();
        c.train.strategy.k = s.at("k").get<size_t>();
        c.train.strategy.d = s.at("d").get<size_t>();
        c.train.strategy.seed = s.at("seed").get<uint64_t>();
        c.train.strategy.standardize = s.at("standardize").get<bool>();
        c.train.strategy.restarts = s.at("restarts").get<size_t>();
        c.label_names = s.at("label_names").get<std::vector<std::string>>();
        c.centroid_hash = std::stoull(s.at("centroid_hash").get<std::string>(), nullptr, 16);
        c.best_epoch = j.at("best_epoch").get<size_t>();
        for (const auto& e : j.at("history")) {
            EpochStats es;
            es.epoch = e.at("epoch").get<size_t>();
            es.train_task = e.at("train_task").get<double>();
            es.train_adv = e.at("train_adv").get<double>();
            es.train_total = e.at("train_total").get<double>();
            es.val_task = e.at("val_task").get<double>();
            es.val_adv = e.at("val_adv").get<double>();
            es.val_total = e.at("val_total").get<double>();
            c.history.push_back(es);
        }
        const auto names = j.at("arrays").get<std::vector<std::string>>();
        for (const auto& expect : names) {
            auto [name, arr] = detail::read_array(in);
            if (name != expect)
                throw DataError("checkpoint array order mismatch: expected '" + expect + "', found '" +
                                name + "'");
            if (name == "domains.centroids")
                c.centroids = std::move(arr);
            else if (name == "domains.feature_mean")
                c.feat_mean = std::move(arr);
            else if (name == "domains.feature_std")
                c.feat_std = std::move(arr);
            else
                c.params.entries.emplace_back(name, std::move(arr));
        }
        char extra;
        if (in.read(&extra, 1)) throw DataError("checkpoint has trailing bytes");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }
    return c;
}

// Rebuild per-record train/val domain labels from checkpoint metadata.
inline DomainAssignment assignment_from_checkpoint(const Checkpoint& c, const Corpus& corpus) {
    std::vector<size_t> train_idx = corpus.split_indices(Split::Train);
    std::vector<size_t> val_idx = corpus.split_indices(Split::Val);
    std::vector<size_t> both = train_idx;
    both.insert(both.end(), val_idx.begin(), val_idx.end());

    if (c.strat_D == 0 || c.strat_kind == StrategyKind::Source) {
        std::vector<std::string> ids, sources;
        for (size_t i : both) {
            ids.push_back(corpus.records[i].id);
            sources.push_back(corpus.records[i].source);
        }
        return assign_source(ids, sources);
    }
    if (c.strat_kind == StrategyKind::Random) {
        std::vector<std::string> ids;
        for (size_t i : both) ids.push_back(corpus.records[i].id);
        return assign_random(ids, c.train.strategy.d, c.train.strategy.seed);
    }
    DomainAssignment out;
    out.D = c.strat_D;
    out.centroids = c.centroids;
    out.feat_mean = c.feat_mean;
    out.feat_std = c.feat_std;
    for (size_t i : both) {
        Array x = mean_pool(corpus.records[i].features);
        if (c.train.strategy.standardize) x = standardize_with(x, c.feat_mean, c.feat_std);
        out.labels[corpus.records[i].id] = kmeans_assign(x, c.centroids);
    }
    return out;
}

}  // namespace datqa
