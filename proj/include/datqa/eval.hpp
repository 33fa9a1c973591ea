#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "datqa/data.hpp"
#include "datqa/errors.hpp"
#include "datqa/model.hpp"
#include "datqa/stats.hpp"
#include "datqa/train.hpp"

namespace datqa {

struct AspectEval {
    std::string aspect;
    double mse = 0.0;
    double srcc = 0.0;
    std::vector<double> sys_abs_err;  // |mean pred - mean truth| per system, system order
};

struct EvalReport {
    std::string split;
    std::vector<std::string> systems;  // lexicographic
    std::vector<AspectEval> aspects;
};

// System-level protocol: predict every clip, average predictions and truths
// per system, then score each aspect at the system level.
inline EvalReport evaluate(const Checkpoint& ckpt, const Corpus& corpus, Split split = Split::Eval) {
    std::vector<size_t> idx = corpus.split_indices(split);
    if (idx.empty()) throw DataError(std::string("evaluate: split '") + split_name(split) + "' is empty");
    for (size_t i : idx)
        if (corpus.records[i].system.empty())
            throw DataError("evaluate: record '" + corpus.records[i].id + "' has no system id");

    const size_t a_count = ckpt.model.aspects;
    std::vector<std::vector<double>> preds(a_count), truths(a_count);
    std::vector<std::string> systems;
    for (size_t i : idx) {
        Array x = mean_pool(corpus.records[i].features);
        QualityPrediction qp = predict(ckpt.params, ckpt.model, x);
        for (size_t a = 0; a < a_count; ++a) {
            preds[a].push_back(qp.m[a]);
            truths[a].push_back(corpus.records[i].scores[a]);
        }
        systems.push_back(corpus.records[i].system);
    }

    EvalReport report;
    report.split = split_name(split);
    for (size_t a = 0; a < a_count; ++a) {
        SystemMeans sm = system_aggregate(preds[a], truths[a], systems);
        if (a == 0) report.systems = sm.systems;
        AspectEval ae;
        ae.aspect = ckpt.model.aspect_names[a];
        ae.mse = mse(sm.pred, sm.truth);
        ae.srcc = srcc(sm.pred, sm.truth);
        for (size_t s = 0; s < sm.systems.size(); ++s)
            ae.sys_abs_err.push_back(std::fabs(sm.pred[s] - sm.truth[s]));
        report.aspects.push_back(std::move(ae));
    }
    return report;
}

struct TTestRow {
    std::string aspect;
    double t = 0.0;
    double p = 1.0;
    bool significant = false;  // p <= 0.05, two-sided
};

// Paired significance test between two reports over identical system sets.
// Operates on per-system absolute errors; `squared` switches to squared errors.
inline std::vector<TTestRow> compare_reports(const EvalReport& a, const EvalReport& b, bool squared = false) {
    if (a.systems != b.systems)
        throw Error("compare_reports: reports cover different system sets");
    if (a.aspects.size() != b.aspects.size()) throw Error("compare_reports: aspect mismatch");
    std::vector<TTestRow> rows;
    for (size_t i = 0; i < a.aspects.size(); ++i) {
        if (a.aspects[i].aspect != b.aspects[i].aspect)
            throw Error("compare_reports: aspect mismatch at position " + std::to_string(i));
        std::vector<double> ea = a.aspects[i].sys_abs_err, eb = b.aspects[i].sys_abs_err;
        if (squared) {
            for (double& v : ea) v *= v;
            for (double& v : eb) v *= v;
        }
        TTestRow row;
        row.aspect = a.aspects[i].aspect;
        TTestResult tt = paired_ttest(ea, eb);
        row.t = tt.t;
        row.p = tt.p;
        row.significant = tt.p <= 0.05;
        rows.push_back(row);
    }
    return rows;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["split"] = r.split;
    j["n_systems"] = r.systems.size();
    j["systems"] = r.systems;
    nlohmann::ordered_json aspects = nlohmann::ordered_json::array();
    for (const auto& a : r.aspects) {
        nlohmann::ordered_json ja;
        ja["aspect"] = a.aspect;
        ja["mse"] = a.mse;
        ja["srcc"] = a.srcc;
        ja["system_abs_err"] = a.sys_abs_err;
        aspects.push_back(ja);
    }
    j["aspects"] = aspects;
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        r.split = j.at("split").get<std::string>();
        r.systems = j.at("systems").get<std::vector<std::string>>();
        for (const auto& ja : j.at("aspects")) {
            AspectEval a;
            a.aspect = ja.at("aspect").get<std::string>();
            a.mse = ja.at("mse").get<double>();
            a.srcc = ja.at("srcc").get<double>();
            a.sys_abs_err = ja.at("system_abs_err").get<std::vector<double>>();
            r.aspects.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed eval report: ") + e.what());
    }
    return r;
}

struct ProbeReport {
    double domain_acc = 0.0;  // held-out accuracy, percent
    size_t num_domains = 0;
    std::vector<std::string> aspects;
    std::vector<double> aspect_srcc;  // held-out linear-regression SRCC per aspect
};

// Linear probing on frozen latents of one split: a logistic probe for
// dataset identity and a ridge regression probe per score aspect. Domain
// labels are always source tags, independent of the training strategy, so
// baseline and DAT checkpoints are probed against the same target.
inline ProbeReport probe_report(const Checkpoint& ckpt, const Corpus& corpus, Split split = Split::Train,
                                uint64_t seed = 0) {
    std::vector<size_t> idx = corpus.split_indices(split);
    if (idx.empty()) throw DataError(std::string("probe: split '") + split_name(split) + "' is empty");

    std::vector<std::string> ids, sources;
    for (size_t i : idx) {
        ids.push_back(corpus.records[i].id);
        sources.push_back(corpus.records[i].source);
    }
    DomainAssignment assign = assign_source(ids, sources);

    Array latents({idx.size(), ckpt.model.latent_dim});
    std::vector<size_t> labels(idx.size());
    for (size_t r = 0; r < idx.size(); ++r) {
        Array h = latent(ckpt.params, ckpt.model, mean_pool(corpus.records[idx[r]].features));
        std::copy(h.data.begin(), h.data.end(), &latents.data[r * ckpt.model.latent_dim]);
        labels[r] = assign.label_of(corpus.records[idx[r]].id);
    }

    ProbeReport report;
    report.num_domains = assign.D;
    report.domain_acc = linear_probe_domain(latents, labels, assign.D, derive(seed, "probe/domain"));
    for (size_t a = 0; a < ckpt.model.aspects; ++a) {
        std::vector<double> y;
        for (size_t i : idx) y.push_back(corpus.records[i].scores[a]);
        report.aspects.push_back(ckpt.model.aspect_names[a]);
        report.aspect_srcc.push_back(linear_probe_score(latents, y, derive(seed, "probe/score", a)));
    }
    return report;
}

struct AblateRow {
    std::string strategy;  // "kmeans" | "random"
    size_t k = 0;
    std::string aspect;
    double delta_srcc = 0.0;  // model - baseline (positive: model ranks better)
    double delta_mse = 0.0;   // baseline - model (positive: model is closer)
};

struct AblateResult {
    double baseline_srcc = 0.0;
    double baseline_mse = 0.0;
    std::string aspect;
    std::vector<AblateRow> rows;  // sorted by (strategy, K)
};

// Granularity sweep: one lambda = 0 baseline, then one adversarial run per
// (strategy, K) at lambda = 0.1, reporting per-K deltas of the designated
// aspect on the eval split. Every run derives its own seed from the base
// seed, the strategy, and K.
inline AblateResult ablate_k(const Corpus& corpus, const ModelConfig& model_base, const TrainConfig& base,
                             const std::vector<size_t>& k_list, const std::string& aspect) {
    const size_t aspect_idx = corpus.aspect_index(aspect);

    TrainConfig base_cfg = base;
    base_cfg.lambda = 0.0;
    base_cfg.strategy.kind = StrategyKind::Random;
    base_cfg.strategy.d = 2;
    ModelConfig base_model = model_base;
    base_model.seed = base_cfg.seed;
    Checkpoint baseline = train(corpus, base_model, base_cfg);
    EvalReport base_report = evaluate(baseline, corpus, Split::Eval);

    AblateResult out;
    out.aspect = aspect;
    out.baseline_srcc = base_report.aspects[aspect_idx].srcc;
    out.baseline_mse = base_report.aspects[aspect_idx].mse;

    const char* strategies[2] = {"kmeans", "random"};
    for (const char* strat : strategies) {
        for (size_t k : k_list) {
            TrainConfig cfg = base;
            cfg.lambda = 0.1;
            cfg.strategy.kind = parse_strategy(strat);
            if (cfg.strategy.kind == StrategyKind::Kmeans)
                cfg.strategy.k = k;
            else
                cfg.strategy.d = k;
            cfg.seed = derive(base.seed, std::string("ablate/") + strat, k);
            cfg.strategy.seed = cfg.seed;
            ModelConfig mc = model_base;
            mc.seed = cfg.seed;
            Checkpoint ck = train(corpus, mc, cfg);
            EvalReport rep = evaluate(ck, corpus, Split::Eval);
            AblateRow row;
            row.strategy = strat;
            row.k = k;
            row.aspect = aspect;
            row.delta_srcc = rep.aspects[aspect_idx].srcc - out.baseline_srcc;
            row.delta_mse = out.baseline_mse - rep.aspects[aspect_idx].mse;
            out.rows.push_back(row);
        }
    }
    return out;
}

struct ProjectRow {
    std::string id;
    double x = 0.0, y = 0.0;
    double predicted_mos = 0.0;
    size_t domain_label = 0;
    double truth_score = 0.0;
};

struct ProjectResult {
    std::vector<ProjectRow> rows;
    size_t n_components = 0;
    bool rank_deficient = false;
};

// 2-D principal-component view of the latent space with the designated
// aspect's prediction attached. Train/val rows carry the checkpoint's domain
// label (source labels when no adversary was trained); eval rows carry the
// system's lexicographic index.
inline ProjectResult project_latents(const Checkpoint& ckpt, const Corpus& corpus, Split split,
                                     const std::string& aspect) {
    const size_t aspect_idx = corpus.aspect_index(aspect);
    std::vector<size_t> idx = corpus.split_indices(split);
    if (idx.empty()) throw DataError(std::string("project: split '") + split_name(split) + "' is empty");

    std::vector<size_t> labels(idx.size(), 0);
    if (split == Split::Eval) {
        std::vector<std::string> sys;
        for (size_t i : idx) sys.push_back(corpus.records[i].system);
        std::sort(sys.begin(), sys.end());
        sys.erase(std::unique(sys.begin(), sys.end()), sys.end());
        for (size_t r = 0; r < idx.size(); ++r)
            labels[r] = static_cast<size_t>(
                std::lower_bound(sys.begin(), sys.end(), corpus.records[idx[r]].system) - sys.begin());
    } else {
        DomainAssignment assign = assignment_from_checkpoint(ckpt, corpus);
        for (size_t r = 0; r < idx.size(); ++r)
            labels[r] = assign.label_of(corpus.records[idx[r]].id);
    }

    Array latents({idx.size(), ckpt.model.latent_dim});
    std::vector<double> preds(idx.size());
    for (size_t r = 0; r < idx.size(); ++r) {
        Array x = mean_pool(corpus.records[idx[r]].features);
        Array h = latent(ckpt.params, ckpt.model, x);
        std::copy(h.data.begin(), h.data.end(), &latents.data[r * ckpt.model.latent_dim]);
        preds[r] = predict(ckpt.params, ckpt.model, x).m[aspect_idx];
    }
    PcaResult pca = pca_project(latents, 2);

    ProjectResult out;
    out.n_components = pca.components.numel() ? pca.components.shape[0] : 0;
    out.rank_deficient = pca.rank_deficient;
    for (size_t r = 0; r < idx.size(); ++r) {
        ProjectRow row;
        row.id = corpus.records[idx[r]].id;
        row.x = out.n_components > 0 ? pca.coords.at(r, 0) : 0.0;
        row.y = out.n_components > 1 ? pca.coords.at(r, 1) : 0.0;
        row.predicted_mos = preds[r];
        row.domain_label = labels[r];
        row.truth_score = corpus.records[idx[r]].scores[aspect_idx];
        out.rows.push_back(std::move(row));
    }
    return out;
}

}  // namespace datqa
