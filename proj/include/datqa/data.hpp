#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "datqa/array.hpp"
#include "datqa/errors.hpp"
#include "datqa/rng.hpp"

namespace datqa {

enum class Split { Train, Val, Eval };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Eval: return "eval";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "eval") return Split::Eval;
    throw DataError("unknown split '" + s + "'");
}

struct QualityRecord {
    std::string id;
    Split split = Split::Train;
    std::string source;  // dataset tag, required for train/val
    std::string system;  // generative-system tag, required for eval
    Array features;      // rank-1 [F] or rank-2 [T x F]
    Array scores;        // rank-1 [A]
};

struct CorpusSchema {
    std::vector<std::string> aspects{"PQ", "PC", "CE", "CU"};
    double lo = 1.0;
    double hi = 10.0;
};

struct Corpus {
    std::vector<QualityRecord> records;
    size_t feature_dim = 0;
    CorpusSchema schema;

    std::vector<size_t> split_indices(Split s) const {
        std::vector<size_t> idx;
        for (size_t i = 0; i < records.size(); ++i)
            if (records[i].split == s) idx.push_back(i);
        return idx;
    }
    size_t aspect_index(const std::string& name) const {
        for (size_t a = 0; a < schema.aspects.size(); ++a)
            if (schema.aspects[a] == name) return a;
        throw Error("unknown aspect '" + name + "'");
    }
};

namespace detail {

inline void validate_record(const QualityRecord& r, const CorpusSchema& schema) {
    if (r.id.empty()) throw DataError("record with empty id");
    if (r.split == Split::Eval) {
        if (r.system.empty()) throw DataError("eval record '" + r.id + "' has no system tag");
    } else {
        if (r.source.empty()) throw DataError(std::string(split_name(r.split)) + " record '" + r.id +
                                              "' has no source tag");
    }
    for (size_t a = 0; a < r.scores.numel(); ++a) {
        double v = r.scores[a];
        if (!std::isfinite(v) || v < schema.lo || v > schema.hi)
            throw DataError("record '" + r.id + "': score " + schema.aspects[a] + "=" + std::to_string(v) +
                            " outside [" + std::to_string(schema.lo) + ", " + std::to_string(schema.hi) + "]");
    }
    if (!r.features.all_finite()) throw DataError("record '" + r.id + "': non-finite feature");
}

inline size_t record_feature_dim(const QualityRecord& r) {
    return r.features.rank() == 1 ? r.features.shape[0] : r.features.shape[1];
}

}  // namespace detail

// One JSON object per line:
// {"id":"...","split":"train","source":"EARS","system":"","features":[...],
//  "scores":{"PQ":x,"PC":x,"CE":x,"CU":x}}
// features is a flat array (utterance level) or an array of equal-length
// frame rows. Rejects on the first malformed line, naming it.
inline Corpus load_jsonl(const std::string& path, const CorpusSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file '" + path + "'");
    Corpus corpus;
    corpus.schema = schema;
    std::map<std::string, size_t> seen;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": invalid JSON: " + e.what());
        }
        QualityRecord r;
        try {
            r.id = j.at("id").get<std::string>();
            r.split = parse_split(j.at("split").get<std::string>());
            r.source = j.at("source").get<std::string>();
            r.system = j.at("system").get<std::string>();
            const auto& feats = j.at("features");
            if (!feats.is_array() || feats.empty()) throw DataError("features must be a non-empty array");
            if (feats[0].is_array()) {
                size_t t = feats.size(), f = feats[0].size();
                if (f == 0) throw DataError("features rows must be non-empty");
                r.features = Array({t, f});
                for (size_t i = 0; i < t; ++i) {
                    if (!feats[i].is_array() || feats[i].size() != f)
                        throw DataError("ragged feature rows");
                    for (size_t k = 0; k < f; ++k) r.features.at(i, k) = feats[i][k].get<double>();
                }
            } else {
                r.features = Array({feats.size()});
                for (size_t k = 0; k < feats.size(); ++k) r.features[k] = feats[k].get<double>();
            }
            const auto& sc = j.at("scores");
            r.scores = Array({schema.aspects.size()});
            for (size_t a = 0; a < schema.aspects.size(); ++a) {
                if (!sc.contains(schema.aspects[a]))
                    throw DataError("missing score '" + schema.aspects[a] + "'");
                r.scores[a] = sc.at(schema.aspects[a]).get<double>();
            }
        } catch (const DataError&) {
            throw;
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": " + e.what());
        }
        try {
            detail::validate_record(r, schema);
        } catch (const DataError& e) {
            throw DataError(where + ": " + e.what());
        }
        if (seen.count(r.id))
            throw DataError(where + ": duplicate id '" + r.id + "' (first at line " +
                            std::to_string(seen[r.id]) + ")");
        seen[r.id] = lineno;
        size_t f = detail::record_feature_dim(r);
        if (corpus.records.empty()) {
            corpus.feature_dim = f;
        } else if (f != corpus.feature_dim) {
            throw DataError(where + ": record '" + r.id + "' has feature dim " + std::to_string(f) +
                            ", corpus uses " + std::to_string(corpus.feature_dim));
        }
        corpus.records.push_back(std::move(r));
    }
    if (corpus.records.empty()) throw DataError("corpus file '" + path + "' holds no records");
    return corpus;
}

inline void export_jsonl(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write corpus file '" + path + "'");
    for (const auto& r : corpus.records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["split"] = split_name(r.split);
        j["source"] = r.source;
        j["system"] = r.system;
        if (r.features.rank() == 1) {
            j["features"] = r.features.data;
        } else {
            nlohmann::ordered_json rows = nlohmann::ordered_json::array();
            for (size_t i = 0; i < r.features.shape[0]; ++i) {
                std::vector<double> row(r.features.data.begin() + static_cast<long>(i * r.features.shape[1]),
                                        r.features.data.begin() +
                                            static_cast<long>((i + 1) * r.features.shape[1]));
                rows.push_back(row);
            }
            j["features"] = rows;
        }
        nlohmann::ordered_json sc;
        for (size_t a = 0; a < corpus.schema.aspects.size(); ++a)
            sc[corpus.schema.aspects[a]] = r.scores[a];
        j["scores"] = sc;
        out << j.dump() << "\n";
    }
}

// Confounded synthetic benchmark. Every feature vector is a mix of a true
// quality signal, a per-group acoustic signature, and noise:
//   x = W q~ + g + eps.
// In train/val the confounded aspect's latent quality is drawn with
// source-dependent means (strength rho), so source identity predicts that
// aspect. Eval clips are grouped into systems whose signatures are fresh
// draws never seen in training, which severs the shortcut while leaving the
// true signal intact.
struct SyntheticConfig {
    size_t feature_dim = 32;
    size_t aspects = 4;
    size_t num_sources = 6;
    size_t clips_per_source = 400;
    size_t eval_systems = 12;
    size_t clips_per_system = 50;
    double rho = 0.8;
    size_t confound_aspect = 1;  // PC
    double signature_scale = 2.0;
    // High enough that a clip's quality is hard to read off the features while
    // the source signature stays obvious; that imbalance is what makes the
    // shortcut tempting and the benchmark interesting.
    double noise_scale = 2.0;
    double annot_noise = 0.1;
    double lo = 1.0;
    double hi = 10.0;
    double val_fraction = 0.08;
    uint64_t seed = 0;

    void validate() const {
        if (!(rho >= 0.0 && rho <= 1.0)) throw Error("synthetic config: rho must lie in [0, 1]");
        if (feature_dim < 1 || aspects < 1 || num_sources < 1 || clips_per_source < 1 ||
            eval_systems < 1 || clips_per_system < 1)
            throw Error("synthetic config: counts must be >= 1");
        if (confound_aspect >= aspects) throw Error("synthetic config: confound aspect out of range");
        if (!(lo < hi)) throw Error("synthetic config: score range is empty");
        if (!(val_fraction >= 0.0 && val_fraction < 1.0))
            throw Error("synthetic config: val_fraction must lie in [0, 1)");
    }
};

struct SyntheticDebug {
    Array train_signatures;  // S x F
    Array eval_signatures;   // num systems x F
    Array mixing;            // F x A
};

inline Corpus generate_synthetic(const SyntheticConfig& cfg, SyntheticDebug* dbg = nullptr) {
    cfg.validate();
    const size_t F = cfg.feature_dim, A = cfg.aspects, S = cfg.num_sources;
    const double mid = 0.5 * (cfg.lo + cfg.hi);
    const double half = 0.5 * (cfg.hi - cfg.lo);
    const double sigma_q = (cfg.hi - cfg.lo) / 6.0;
    auto clamp = [&](double v) { return std::min(cfg.hi, std::max(cfg.lo, v)); };

    Rng sig_rng(derive(cfg.seed, "gen/signatures"));
    Rng mix_rng(derive(cfg.seed, "gen/mixing"));
    Rng qual_rng(derive(cfg.seed, "gen/quality"));
    Rng noise_rng(derive(cfg.seed, "gen/noise-train"));
    Rng annot_rng(derive(cfg.seed, "gen/annot-train"));
    Rng esig_rng(derive(cfg.seed, "gen/signatures-eval"));
    Rng equal_rng(derive(cfg.seed, "gen/quality-eval"));
    Rng enoise_rng(derive(cfg.seed, "gen/noise-eval"));
    Rng eannot_rng(derive(cfg.seed, "gen/annot-eval"));
    Rng split_rng(derive(cfg.seed, "gen/split"));

    Array signatures({S, F});
    for (double& v : signatures.data) v = cfg.signature_scale * sig_rng.normal();
    Array mixing({F, A});
    for (double& v : mixing.data) v = mix_rng.normal();

    // Standardized source index; corr(z_s, confounded q) == rho before clamping.
    const double src_sd = S > 1 ? std::sqrt((static_cast<double>(S) * S - 1.0) / 12.0) : 1.0;
    auto z_of_source = [&](size_t s) {
        return (static_cast<double>(s) - 0.5 * static_cast<double>(S - 1)) / src_sd;
    };

    auto make_features = [&](const std::vector<double>& q, const double* g, Rng& noise) {
        Array x({F});
        for (size_t j = 0; j < F; ++j) {
            double acc = 0.0;
            for (size_t a = 0; a < A; ++a) acc += mixing.at(j, a) * (q[a] - mid) / half;
            x[j] = acc + g[j] + cfg.noise_scale * noise.normal();
        }
        return x;
    };

    Corpus corpus;
    corpus.feature_dim = F;
    if (A == 4) {
        corpus.schema.aspects = {"PQ", "PC", "CE", "CU"};
    } else {
        corpus.schema.aspects.resize(A);
        for (size_t a = 0; a < A; ++a) corpus.schema.aspects[a] = "a" + std::to_string(a);
    }
    corpus.schema.lo = cfg.lo;
    corpus.schema.hi = cfg.hi;

    char idbuf[32];
    size_t counter = 0;
    for (size_t s = 0; s < S; ++s) {
        const double zs = z_of_source(s);
        for (size_t cclip = 0; cclip < cfg.clips_per_source; ++cclip) {
            std::vector<double> q(A);
            for (size_t a = 0; a < A; ++a) {
                double eta = qual_rng.normal();
                double raw = (a == cfg.confound_aspect)
                                 ? mid + sigma_q * (cfg.rho * zs + std::sqrt(1.0 - cfg.rho * cfg.rho) * eta)
                                 : mid + sigma_q * eta;
                q[a] = clamp(raw);
            }
            QualityRecord r;
            std::snprintf(idbuf, sizeof idbuf, "clip%05zu", counter++);
            r.id = idbuf;
            r.split = Split::Train;
            std::snprintf(idbuf, sizeof idbuf, "src%02zu", s);
            r.source = idbuf;
            r.features = make_features(q, &signatures.data[s * F], noise_rng);
            r.scores = Array({A});
            for (size_t a = 0; a < A; ++a) r.scores[a] = clamp(q[a] + cfg.annot_noise * annot_rng.normal());
            corpus.records.push_back(std::move(r));
        }
    }

    // Validation is a seeded sample of the train pool; ids keep their place.
    std::vector<size_t> pool(corpus.records.size());
    std::iota(pool.begin(), pool.end(), size_t{0});
    split_rng.shuffle(pool);
    size_t n_val = static_cast<size_t>(cfg.val_fraction * static_cast<double>(pool.size()));
    for (size_t i = 0; i < n_val; ++i) corpus.records[pool[i]].split = Split::Val;

    Array eval_sigs({cfg.eval_systems, F});
    const double sigma_within = 0.75;
    const double margin = 0.15 * (cfg.hi - cfg.lo);  // keep system means away from the clamp walls
    size_t ecounter = 0;
    for (size_t sys = 0; sys < cfg.eval_systems; ++sys) {
        for (size_t j = 0; j < F; ++j) eval_sigs.at(sys, j) = cfg.signature_scale * esig_rng.normal();
        std::vector<double> mu(A);
        for (size_t a = 0; a < A; ++a) mu[a] = equal_rng.uniform(cfg.lo + margin, cfg.hi - margin);
        for (size_t cclip = 0; cclip < cfg.clips_per_system; ++cclip) {
            std::vector<double> q(A);
            for (size_t a = 0; a < A; ++a) q[a] = clamp(mu[a] + sigma_within * equal_rng.normal());
            QualityRecord r;
            std::snprintf(idbuf, sizeof idbuf, "eclip%05zu", ecounter++);
            r.id = idbuf;
            r.split = Split::Eval;
            std::snprintf(idbuf, sizeof idbuf, "sys%02zu", sys);
            r.system = idbuf;
            r.features = make_features(q, &eval_sigs.data[sys * F], enoise_rng);
            r.scores = Array({A});
            for (size_t a = 0; a < A; ++a) r.scores[a] = clamp(q[a] + cfg.annot_noise * eannot_rng.normal());
            corpus.records.push_back(std::move(r));
        }
    }

    if (dbg) {
        dbg->train_signatures = signatures;
        dbg->eval_signatures = eval_sigs;
        dbg->mixing = mixing;
    }
    return corpus;
}

// Seeded epoch shuffle; the final partial batch is kept.
inline std::vector<std::vector<size_t>> batch_iter(const Corpus& corpus, Split split, size_t batch_size,
                                                   uint64_t seed, uint64_t epoch) {
    if (batch_size < 1) throw Error("batch_iter: batch size must be >= 1");
    std::vector<size_t> idx = corpus.split_indices(split);
    if (idx.empty()) throw DataError(std::string("batch_iter: split '") + split_name(split) + "' is empty");
    Rng rng(derive(seed, "shuffle", epoch, 0));
    rng.shuffle(idx);
    std::vector<std::vector<size_t>> batches;
    for (size_t i = 0; i < idx.size(); i += batch_size) {
        size_t end = std::min(idx.size(), i + batch_size);
        batches.emplace_back(idx.begin() + static_cast<long>(i), idx.begin() + static_cast<long>(end));
    }
    return batches;
}

// Pearson correlation between the rank of a record's source (sources ranked
// by their mean score of `aspect` over the split) and the record's own score.
// This is the dial the generator's rho turns.
inline double measure_confound(const Corpus& corpus, size_t aspect, Split split = Split::Train) {
    std::map<std::string, std::pair<double, size_t>> by_source;
    std::vector<std::pair<const std::string*, double>> pts;
    for (const auto& r : corpus.records) {
        if (r.split != split) continue;
        auto& acc = by_source[r.source];
        acc.first += r.scores[aspect];
        acc.second += 1;
        pts.emplace_back(&r.source, r.scores[aspect]);
    }
    if (by_source.size() < 2) throw DataError("measure_confound: need at least 2 sources in split");
    std::vector<std::pair<double, std::string>> means;
    for (const auto& [src, acc] : by_source)
        means.emplace_back(acc.first / static_cast<double>(acc.second), src);
    std::sort(means.begin(), means.end());
    std::map<std::string, double> rank;
    for (size_t i = 0; i < means.size(); ++i) rank[means[i].second] = static_cast<double>(i);

    const double n = static_cast<double>(pts.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [src, y] : pts) {
        mx += rank[*src];
        my += y;
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (const auto& [src, y] : pts) {
        double dx = rank[*src] - mx, dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw DataError("measure_confound: degenerate variance");
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace datqa
