// datqa command line: synthetic benchmark generation, adversarial training,
// evaluation, probing, granularity ablation, latent projection, selfcheck.
// Every artifact-producing command writes a run.json manifest next to its
// outputs. Exit codes: 0 ok, 1 failed invariant, 2 usage, 3 divergence.

#include <chrono>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "datqa/data.hpp"
#include "datqa/domains.hpp"
#include "datqa/errors.hpp"
#include "datqa/eval.hpp"
#include "datqa/model.hpp"
#include "datqa/rng.hpp"
#include "datqa/selfcheck.hpp"
#include "datqa/stats.hpp"
#include "datqa/train.hpp"

namespace {

using nlohmann::ordered_json;

std::string hex64(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016" PRIx64, v);
    return buf;
}

uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw datqa::DataError("cannot open " + path + " for hashing");
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return datqa::fnv1a64_bytes(bytes.data(), bytes.size());
}

class Stopwatch {
  public:
    long long ms() const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - start_)
            .count();
    }

  private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct Manifest {
    std::string command;
    ordered_json config = ordered_json::object();
    uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;   // label -> path
    std::vector<std::pair<std::string, std::string>> outputs;  // label -> path
};

void write_manifest(const std::string& out_dir, const Manifest& m, long long wall_ms) {
    ordered_json j;
    j["command"] = m.command;
    j["config"] = m.config;
    j["seed"] = m.seed;
    auto files = [](const std::vector<std::pair<std::string, std::string>>& v) {
        ordered_json o = ordered_json::object();
        for (const auto& [label, path] : v)
            o[label] = ordered_json{{"path", path}, {"fnv64", hex64(hash_file(path))}};
        return o;
    };
    j["inputs"] = files(m.inputs);
    j["outputs"] = files(m.outputs);
    j["wall_ms"] = wall_ms;
    std::ofstream out(std::filesystem::path(out_dir) / "run.json");
    if (!out) throw datqa::DataError("cannot write manifest in " + out_dir);
    out << j.dump(2) << "\n";
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw datqa::DataError("cannot create directory " + dir + ": " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw datqa::DataError("cannot write " + path);
    return out;
}

// `--config file.json`: any key matching a flag name supplies that flag's
// value unless the flag was given explicitly on the command line.
class ConfigFile {
  public:
    void load(const std::string& path) {
        if (path.empty()) return;
        std::ifstream in(path);
        if (!in) throw datqa::DataError("cannot open config " + path);
        try {
            in >> j_;
        } catch (const nlohmann::json::exception& e) {
            throw datqa::DataError("config " + path + ": " + e.what());
        }
        if (!j_.is_object()) throw datqa::DataError("config " + path + ": expected a JSON object");
    }

    template <typename T>
    void apply(const CLI::Option* opt, const char* key, T& target) const {
        if (opt != nullptr && opt->count() > 0) return;
        if (!j_.contains(key)) return;
        try {
            target = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw datqa::DataError(std::string("config key '") + key + "': " + e.what());
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

  private:
    nlohmann::json j_ = nlohmann::json::object();
};

std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Shared train/model flag block for `train` and `ablate-k`.
struct TrainFlags {
    datqa::TrainConfig cfg;
    double dropout = 0.0;
    size_t latent = 64;
    std::string strategy = "source";
    std::string val_loss = "task";
    bool no_standardize = false;
    std::string config_path;

    CLI::Option* lambda_opt = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
        cmd->add_option("--batch-size", cfg.batch_size, "minibatch size")->capture_default_str();
        cmd->add_option("--lr", cfg.lr, "AdamW learning rate")->capture_default_str();
        cmd->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay")
            ->capture_default_str();
        lambda_opt = cmd->add_option("--lambda", cfg.lambda,
                                     "adversarial weight (default 0.5 for source, 0.1 otherwise)");
        cmd->add_option("--strategy", strategy, "domain strategy: source|kmeans|random")
            ->capture_default_str();
        cmd->add_option("--k", cfg.strategy.k, "k-means cluster count")->capture_default_str();
        cmd->add_option("--d", cfg.strategy.d, "random-strategy label count")->capture_default_str();
        cmd->add_option("--restarts", cfg.strategy.restarts, "k-means restarts")->capture_default_str();
        cmd->add_flag("--no-standardize", no_standardize, "skip z-scoring before k-means");
        cmd->add_option("--seed", cfg.seed, "master seed")->capture_default_str();
        cmd->add_flag("--lambda-warmup", cfg.lambda_warmup,
                      "ramp lambda linearly from 0 to its value across epochs");
        cmd->add_option("--dropout", dropout, "encoder dropout probability")->capture_default_str();
        cmd->add_option("--latent", latent, "latent width")->capture_default_str();
        cmd->add_option("--val-loss", val_loss, "model selection loss: task|total")
            ->capture_default_str();
        cmd->add_option("--config", config_path, "JSON file supplying unset flags");
    }

    void resolve(const CLI::App* cmd) {
        ConfigFile file;
        file.load(config_path);
        file.apply(cmd->get_option("--epochs"), "epochs", cfg.epochs);
        file.apply(cmd->get_option("--batch-size"), "batch_size", cfg.batch_size);
        file.apply(cmd->get_option("--lr"), "lr", cfg.lr);
        file.apply(cmd->get_option("--weight-decay"), "weight_decay", cfg.weight_decay);
        file.apply(cmd->get_option("--strategy"), "strategy", strategy);
        file.apply(cmd->get_option("--k"), "k", cfg.strategy.k);
        file.apply(cmd->get_option("--d"), "d", cfg.strategy.d);
        file.apply(cmd->get_option("--restarts"), "restarts", cfg.strategy.restarts);
        file.apply(cmd->get_option("--seed"), "seed", cfg.seed);
        file.apply(cmd->get_option("--lambda-warmup"), "lambda_warmup", cfg.lambda_warmup);
        file.apply(cmd->get_option("--dropout"), "dropout", dropout);
        file.apply(cmd->get_option("--latent"), "latent", latent);
        file.apply(cmd->get_option("--val-loss"), "val_loss", val_loss);
        if (!no_standardize) {
            bool standardize = true;
            file.apply(nullptr, "standardize", standardize);
            cfg.strategy.standardize = standardize;
        } else {
            cfg.strategy.standardize = false;
        }

        cfg.strategy.kind = datqa::parse_strategy(strategy);
        cfg.strategy.seed = cfg.seed;
        if (lambda_opt->count() == 0) {
            double lam = cfg.strategy.kind == datqa::StrategyKind::Source ? 0.5 : 0.1;
            ConfigFile f2;
            f2.load(config_path);
            f2.apply(lambda_opt, "lambda", lam);
            cfg.lambda = lam;
        }
        if (val_loss != "task" && val_loss != "total")
            throw datqa::DataError("--val-loss must be 'task' or 'total'");
        cfg.val_loss_total = val_loss == "total";
    }

    datqa::ModelConfig model() const {
        datqa::ModelConfig mc;
        mc.latent_dim = latent;
        mc.dropout_rate = dropout;
        mc.seed = cfg.seed;
        return mc;
    }

    ordered_json config_json() const {
        return ordered_json{{"epochs", cfg.epochs},
                            {"batch_size", cfg.batch_size},
                            {"lr", cfg.lr},
                            {"weight_decay", cfg.weight_decay},
                            {"lambda", cfg.lambda},
                            {"strategy", strategy},
                            {"k", cfg.strategy.k},
                            {"d", cfg.strategy.d},
                            {"restarts", cfg.strategy.restarts},
                            {"standardize", cfg.strategy.standardize},
                            {"seed", cfg.seed},
                            {"lambda_warmup", cfg.lambda_warmup},
                            {"dropout", dropout},
                            {"latent", latent},
                            {"val_loss", val_loss}};
    }
};

datqa::Split parse_split_flag(const std::string& s) { return datqa::parse_split(s); }

void write_loss_csv(const std::string& path, const std::vector<datqa::EpochStats>& hist) {
    std::ofstream out = open_out(path);
    out << "epoch,split,task,adv,total\n";
    for (const auto& e : hist) {
        out << e.epoch << ",train," << csv_num(e.train_task) << "," << csv_num(e.train_adv) << ","
            << csv_num(e.train_total) << "\n";
        out << e.epoch << ",val," << csv_num(e.val_task) << "," << csv_num(e.val_adv) << ","
            << csv_num(e.val_total) << "\n";
    }
}

void write_eval_csv(const std::string& path, const datqa::EvalReport& r) {
    std::ofstream out = open_out(path);
    out << "split,aspect,mse,srcc\n";
    for (const auto& a : r.aspects)
        out << r.split << "," << a.aspect << "," << csv_num(a.mse) << "," << csv_num(a.srcc) << "\n";
}

int run_gen_data(const std::string& out_path, const std::string& out_dir,
                 const datqa::SyntheticConfig& cfg) {
    Stopwatch sw;
    datqa::Corpus corpus = datqa::generate_synthetic(cfg);
    ensure_dir(out_dir.empty() ? std::filesystem::path(out_path).parent_path().string() : out_dir);
    datqa::export_jsonl(corpus, out_path);

    Manifest m;
    m.command = "gen-data";
    m.config = ordered_json{{"feature_dim", cfg.feature_dim},
                            {"aspects", cfg.aspects},
                            {"sources", cfg.num_sources},
                            {"clips_per_source", cfg.clips_per_source},
                            {"eval_systems", cfg.eval_systems},
                            {"clips_per_system", cfg.clips_per_system},
                            {"rho", cfg.rho},
                            {"confound_aspect", cfg.confound_aspect},
                            {"val_fraction", cfg.val_fraction},
                            {"seed", cfg.seed}};
    m.seed = cfg.seed;
    m.outputs = {{"corpus", out_path}};
    if (!out_dir.empty()) write_manifest(out_dir, m, sw.ms());
    std::cout << "wrote " << corpus.records.size() << " records to " << out_path << "\n";
    return 0;
}

int run_train(const std::string& in_path, const std::string& out_dir, const TrainFlags& tf) {
    Stopwatch sw;
    datqa::Corpus corpus = datqa::load_jsonl(in_path);
    datqa::Checkpoint ckpt = datqa::train(corpus, tf.model(), tf.cfg);

    ensure_dir(out_dir);
    const std::string ckpt_path = join_path(out_dir, "checkpoint.bin");
    const std::string loss_path = join_path(out_dir, "loss_curve.csv");
    datqa::save_checkpoint(ckpt, ckpt_path);
    write_loss_csv(loss_path, ckpt.history);

    Manifest m;
    m.command = "train";
    m.config = tf.config_json();
    m.seed = tf.cfg.seed;
    m.inputs = {{"corpus", in_path}};
    m.outputs = {{"checkpoint", ckpt_path}, {"loss_curve", loss_path}};
    write_manifest(out_dir, m, sw.ms());
    std::cout << "best epoch " << ckpt.best_epoch << ", val task loss "
              << ckpt.history[ckpt.best_epoch].val_task << "\n";
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& in_path, const std::string& split,
             const std::string& ref_path, bool ttest_squared, const std::string& out_dir) {
    Stopwatch sw;
    datqa::Checkpoint ckpt = datqa::load_checkpoint(ckpt_path);
    datqa::Corpus corpus = datqa::load_jsonl(in_path);
    datqa::EvalReport report = datqa::evaluate(ckpt, corpus, parse_split_flag(split));

    ensure_dir(out_dir);
    const std::string json_path = join_path(out_dir, "eval_report.json");
    const std::string csv_path = join_path(out_dir, "eval_report.csv");
    open_out(json_path) << datqa::report_to_json(report).dump(2) << "\n";
    write_eval_csv(csv_path, report);

    Manifest m;
    m.command = "eval";
    m.config = ordered_json{{"split", split}, {"ttest_squared", ttest_squared}};
    m.inputs = {{"checkpoint", ckpt_path}, {"corpus", in_path}};
    m.outputs = {{"report_json", json_path}, {"report_csv", csv_path}};

    if (!ref_path.empty()) {
        std::ifstream rin(ref_path);
        if (!rin) throw datqa::DataError("cannot open reference report " + ref_path);
        nlohmann::json rj;
        try {
            rin >> rj;
        } catch (const nlohmann::json::exception& e) {
            throw datqa::DataError("reference report " + ref_path + ": " + e.what());
        }
        datqa::EvalReport ref = datqa::report_from_json(rj);
        std::vector<datqa::TTestRow> rows = datqa::compare_reports(ref, report, ttest_squared);
        const std::string tt_path = join_path(out_dir, "ttest.csv");
        std::ofstream out = open_out(tt_path);
        out << "aspect,t,p,significant\n";
        for (const auto& r : rows)
            out << r.aspect << "," << csv_num(r.t) << "," << csv_num(r.p) << ","
                << (r.significant ? 1 : 0) << "\n";
        m.inputs.emplace_back("reference_report", ref_path);
        m.outputs.emplace_back("ttest_csv", tt_path);
    }
    write_manifest(out_dir, m, sw.ms());
    for (const auto& a : report.aspects)
        std::cout << a.aspect << ": mse " << a.mse << ", srcc " << a.srcc << "\n";
    return 0;
}

int run_probe(const std::vector<std::string>& ckpt_paths, const std::string& in_path,
              const std::string& split, uint64_t seed, const std::string& out_dir) {
    Stopwatch sw;
    datqa::Corpus corpus = datqa::load_jsonl(in_path);

    ensure_dir(out_dir);
    const std::string csv_path = join_path(out_dir, "probe.csv");
    std::ofstream out = open_out(csv_path);

    Manifest m;
    m.command = "probe";
    m.config = ordered_json{{"split", split}, {"seed", seed}};
    m.seed = seed;
    m.outputs = {{"probe_csv", csv_path}};
    m.inputs = {{"corpus", in_path}};

    bool header = false;
    for (const auto& path : ckpt_paths) {
        datqa::Checkpoint ckpt = datqa::load_checkpoint(path);
        datqa::ProbeReport pr =
            datqa::probe_report(ckpt, corpus, parse_split_flag(split), seed);
        if (!header) {
            out << "strategy,domain_acc";
            for (const auto& a : pr.aspects) out << ",srcc_" << a;
            out << "\n";
            header = true;
        }
        const std::string row_name =
            ckpt.strat_D == 0 ? "baseline" : datqa::strategy_name(ckpt.strat_kind);
        out << row_name << "," << csv_num(pr.domain_acc);
        for (double v : pr.aspect_srcc) out << "," << csv_num(v);
        out << "\n";
        m.inputs.emplace_back("checkpoint_" + row_name, path);
        std::cout << row_name << ": domain acc " << pr.domain_acc << "%\n";
    }
    out.close();
    write_manifest(out_dir, m, sw.ms());
    return 0;
}

int run_ablate(const std::string& in_path, const std::string& out_dir, const TrainFlags& tf,
               std::vector<size_t> k_list, const std::string& aspect) {
    Stopwatch sw;
    datqa::Corpus corpus = datqa::load_jsonl(in_path);
    datqa::AblateResult res = datqa::ablate_k(corpus, tf.model(), tf.cfg, k_list, aspect);

    ensure_dir(out_dir);
    const std::string csv_path = join_path(out_dir, "ablate_k.csv");
    {
        std::ofstream out = open_out(csv_path);
        out << "strategy,K,aspect,delta_srcc,delta_mse\n";
        for (const auto& r : res.rows)
            out << r.strategy << "," << r.k << "," << r.aspect << "," << csv_num(r.delta_srcc)
                << "," << csv_num(r.delta_mse) << "\n";
    }
    const std::string base_path = join_path(out_dir, "ablate_baseline.csv");
    {
        std::ofstream out = open_out(base_path);
        out << "aspect,srcc,mse\n";
        out << res.aspect << "," << csv_num(res.baseline_srcc) << "," << csv_num(res.baseline_mse)
            << "\n";
    }

    Manifest m;
    m.command = "ablate-k";
    m.config = tf.config_json();
    m.config["k_list"] = k_list;
    m.config["aspect"] = aspect;
    m.seed = tf.cfg.seed;
    m.inputs = {{"corpus", in_path}};
    m.outputs = {{"ablate_csv", csv_path}, {"baseline_csv", base_path}};
    write_manifest(out_dir, m, sw.ms());
    std::cout << res.rows.size() << " ablation rows written (baseline srcc " << res.baseline_srcc
              << ")\n";
    return 0;
}

int run_project(const std::string& ckpt_path, const std::string& in_path, const std::string& split,
                const std::string& aspect, const std::string& out_dir) {
    Stopwatch sw;
    datqa::Checkpoint ckpt = datqa::load_checkpoint(ckpt_path);
    datqa::Corpus corpus = datqa::load_jsonl(in_path);
    datqa::ProjectResult res =
        datqa::project_latents(ckpt, corpus, parse_split_flag(split), aspect);

    ensure_dir(out_dir);
    const std::string csv_path = join_path(out_dir, "projection.csv");
    {
        std::ofstream out = open_out(csv_path);
        out << "x,y,predicted_mos,domain_label,truth_score\n";
        for (const auto& r : res.rows)
            out << csv_num(r.x) << "," << csv_num(r.y) << "," << csv_num(r.predicted_mos) << ","
                << r.domain_label << "," << csv_num(r.truth_score) << "\n";
    }
    const std::string meta_path = join_path(out_dir, "projection_meta.json");
    open_out(meta_path) << ordered_json{{"n_components", res.n_components},
                                        {"rank_deficient", res.rank_deficient},
                                        {"split", split},
                                        {"aspect", aspect}}
                               .dump(2)
                        << "\n";

    Manifest m;
    m.command = "project";
    m.config = ordered_json{{"split", split}, {"aspect", aspect}};
    m.inputs = {{"checkpoint", ckpt_path}, {"corpus", in_path}};
    m.outputs = {{"projection_csv", csv_path}, {"meta", meta_path}};
    write_manifest(out_dir, m, sw.ms());
    std::cout << res.rows.size() << " rows, " << res.n_components << " components\n";
    return 0;
}

int run_data_export(const std::string& in_path, const std::string& out_path,
                    const std::string& out_dir) {
    Stopwatch sw;
    datqa::Corpus corpus = datqa::load_jsonl(in_path);
    datqa::export_jsonl(corpus, out_path);
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        Manifest m;
        m.command = "data export";
        m.inputs = {{"corpus", in_path}};
        m.outputs = {{"corpus", out_path}};
        write_manifest(out_dir, m, sw.ms());
    }
    std::cout << "exported " << corpus.records.size() << " records\n";
    return 0;
}

int run_data_stats(const std::string& in_path, const std::string& out_dir) {
    Stopwatch sw;
    datqa::Corpus corpus = datqa::load_jsonl(in_path);

    std::ostringstream csv;
    csv << "metric,split,aspect,value\n";
    for (datqa::Split s : {datqa::Split::Train, datqa::Split::Val, datqa::Split::Eval}) {
        std::vector<size_t> idx = corpus.split_indices(s);
        csv << "count," << datqa::split_name(s) << ",," << idx.size() << "\n";
        if (idx.empty()) continue;
        for (size_t a = 0; a < corpus.schema.aspects.size(); ++a) {
            double mean = 0.0;
            for (size_t i : idx) mean += corpus.records[i].scores[a];
            mean /= static_cast<double>(idx.size());
            double var = 0.0;
            for (size_t i : idx) {
                double d = corpus.records[i].scores[a] - mean;
                var += d * d;
            }
            var /= static_cast<double>(idx.size());
            csv << "mean," << datqa::split_name(s) << "," << corpus.schema.aspects[a] << ","
                << csv_num(mean) << "\n";
            csv << "std," << datqa::split_name(s) << "," << corpus.schema.aspects[a] << ","
                << csv_num(std::sqrt(var)) << "\n";
        }
    }
    for (size_t a = 0; a < corpus.schema.aspects.size(); ++a) {
        try {
            double c = datqa::measure_confound(corpus, a, datqa::Split::Train);
            csv << "confound,train," << corpus.schema.aspects[a] << "," << csv_num(c) << "\n";
        } catch (const datqa::Error&) {
            // splits without >= 2 sources have no measurable confound
        }
    }
    std::cout << csv.str();

    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        const std::string csv_path = join_path(out_dir, "stats.csv");
        open_out(csv_path) << csv.str();
        Manifest m;
        m.command = "data stats";
        m.inputs = {{"corpus", in_path}};
        m.outputs = {{"stats_csv", csv_path}};
        write_manifest(out_dir, m, sw.ms());
    }
    return 0;
}

int run_domains_export(const std::string& in_path, const std::string& strategy, size_t k, size_t d,
                       size_t restarts, bool no_standardize, uint64_t seed,
                       const std::string& out_path, const std::string& out_dir) {
    Stopwatch sw;
    datqa::Corpus corpus = datqa::load_jsonl(in_path);
    datqa::DomainStrategy strat;
    strat.kind = datqa::parse_strategy(strategy);
    strat.k = k;
    strat.d = d;
    strat.restarts = restarts;
    strat.standardize = !no_standardize;
    strat.seed = seed;

    std::vector<datqa::Array> pooled(corpus.records.size());
    for (size_t i = 0; i < corpus.records.size(); ++i)
        pooled[i] = datqa::mean_pool(corpus.records[i].features);
    datqa::DomainAssignment assign = datqa::assign_domains(corpus, strat, pooled);

    std::ofstream out = open_out(out_path);
    out << "record_id,domain_label\n";
    for (const auto& [id, label] : assign.labels) out << id << "," << label << "\n";
    out.close();

    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        Manifest m;
        m.command = "domains export";
        m.config = ordered_json{{"strategy", strategy}, {"k", k},       {"d", d},
                                {"restarts", restarts}, {"seed", seed}, {"standardize", !no_standardize}};
        m.seed = seed;
        m.inputs = {{"corpus", in_path}};
        m.outputs = {{"labels_csv", out_path}};
        write_manifest(out_dir, m, sw.ms());
    }
    std::cout << assign.labels.size() << " records labeled across " << assign.D << " domains\n";
    return 0;
}

int run_selfcheck(uint64_t seed, size_t trials, bool break_gnll) {
    datqa::selfcheck::Options opt;
    opt.seed = seed;
    opt.trials = trials;
    opt.break_gnll_grad = break_gnll;

    struct Group {
        const char* name;
        std::vector<datqa::selfcheck::Failure> fails;
    };
    std::vector<Group> groups;
    groups.push_back({"gradient-suite", datqa::selfcheck::gradient_suite(opt)});
    groups.push_back({"grl-law", datqa::selfcheck::grl_law(opt.seed)});
    groups.push_back({"closed-forms", datqa::selfcheck::closed_forms()});
    groups.push_back({"loss-laws", datqa::selfcheck::loss_laws(opt.seed)});
    groups.push_back({"numeric-spots", datqa::selfcheck::numeric_spots(opt.seed)});

    bool any = false;
    for (const auto& g : groups) {
        if (g.fails.empty()) {
            std::cout << "ok " << g.name << "\n";
        } else {
            any = true;
            std::cout << "FAIL " << g.name << " (" << g.fails.size() << "): " << g.fails[0].check
                      << ": " << g.fails[0].detail << "\n";
        }
    }
    return any ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"domain-adversarial multi-aspect quality prediction"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic confounded benchmark");
    datqa::SyntheticConfig gen_cfg;
    std::string gen_out, gen_out_dir, gen_config;
    gen->add_option("--out", gen_out, "output JSONL path")->required();
    gen->add_option("--out-dir", gen_out_dir, "manifest directory");
    gen->add_option("--rho", gen_cfg.rho, "confound strength in [0,1]")->capture_default_str();
    gen->add_option("--sources", gen_cfg.num_sources, "training source count")->capture_default_str();
    gen->add_option("--clips-per-source", gen_cfg.clips_per_source, "clips per training source")
        ->capture_default_str();
    gen->add_option("--eval-systems", gen_cfg.eval_systems, "eval system count")->capture_default_str();
    gen->add_option("--clips-per-system", gen_cfg.clips_per_system, "clips per eval system")
        ->capture_default_str();
    gen->add_option("--feature-dim", gen_cfg.feature_dim, "feature dimension")->capture_default_str();
    gen->add_option("--val-fraction", gen_cfg.val_fraction, "validation fraction")->capture_default_str();
    gen->add_option("--confound-aspect", gen_cfg.confound_aspect, "confounded aspect index")
        ->capture_default_str();
    gen->add_option("--seed", gen_cfg.seed, "master seed")->capture_default_str();
    gen->add_option("--config", gen_config, "JSON file supplying unset flags");

    // data export | data stats
    auto* data = app.add_subcommand("data", "corpus utilities");
    data->require_subcommand(1);
    auto* dexp = data->add_subcommand("export", "load and re-export a corpus");
    std::string dexp_in, dexp_out, dexp_out_dir;
    dexp->add_option("--in", dexp_in, "input JSONL")->required();
    dexp->add_option("--out", dexp_out, "output JSONL")->required();
    dexp->add_option("--out-dir", dexp_out_dir, "manifest directory");
    auto* dstat = data->add_subcommand("stats", "per-split counts, per-aspect moments, confounds");
    std::string dstat_in, dstat_out_dir;
    dstat->add_option("--in", dstat_in, "input JSONL")->required();
    dstat->add_option("--out-dir", dstat_out_dir, "also write stats.csv + manifest here");

    // domains export
    auto* doms = app.add_subcommand("domains", "domain assignment utilities");
    doms->require_subcommand(1);
    auto* dlab = doms->add_subcommand("export", "assign domains and write record_id,domain_label");
    std::string dlab_in, dlab_strategy = "source", dlab_out, dlab_out_dir;
    size_t dlab_k = 8, dlab_d = 2, dlab_restarts = 1;
    uint64_t dlab_seed = 0;
    bool dlab_nostd = false;
    dlab->add_option("--in", dlab_in, "input JSONL")->required();
    dlab->add_option("--out", dlab_out, "output CSV")->required();
    dlab->add_option("--out-dir", dlab_out_dir, "manifest directory");
    dlab->add_option("--strategy", dlab_strategy, "source|kmeans|random")->capture_default_str();
    dlab->add_option("--k", dlab_k, "k-means cluster count")->capture_default_str();
    dlab->add_option("--d", dlab_d, "random label count")->capture_default_str();
    dlab->add_option("--restarts", dlab_restarts, "k-means restarts")->capture_default_str();
    dlab->add_flag("--no-standardize", dlab_nostd, "skip z-scoring before k-means");
    dlab->add_option("--seed", dlab_seed, "strategy seed")->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "train a model and write a checkpoint");
    std::string tr_in, tr_out_dir;
    TrainFlags tr_flags;
    tr->add_option("--in", tr_in, "input JSONL")->required();
    tr->add_option("--out-dir", tr_out_dir, "output directory")->required();
    tr_flags.attach(tr);

    // eval
    auto* ev = app.add_subcommand("eval", "system-level evaluation of a checkpoint");
    std::string ev_ckpt, ev_in, ev_split = "eval", ev_ref, ev_out_dir;
    bool ev_sq = false;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--in", ev_in, "input JSONL")->required();
    ev->add_option("--out-dir", ev_out_dir, "output directory")->required();
    ev->add_option("--split", ev_split, "train|val|eval")->capture_default_str();
    ev->add_option("--ref", ev_ref, "reference eval_report.json for a paired t-test");
    ev->add_flag("--ttest-squared", ev_sq, "t-test on squared instead of absolute errors");

    // probe
    auto* pr = app.add_subcommand("probe", "linear probes on frozen latents");
    std::vector<std::string> pr_ckpts;
    std::string pr_in, pr_split = "train", pr_out_dir;
    uint64_t pr_seed = 0;
    pr->add_option("--ckpt", pr_ckpts, "checkpoint path (repeatable)")->required();
    pr->add_option("--in", pr_in, "input JSONL")->required();
    pr->add_option("--out-dir", pr_out_dir, "output directory")->required();
    pr->add_option("--split", pr_split, "train|val|eval")->capture_default_str();
    pr->add_option("--seed", pr_seed, "probe split seed")->capture_default_str();

    // ablate-k
    auto* ab = app.add_subcommand("ablate-k", "domain-granularity ablation");
    std::string ab_in, ab_out_dir, ab_aspect = "PC";
    std::vector<size_t> ab_klist = {2, 4, 6, 8, 10};
    TrainFlags ab_flags;
    ab->add_option("--in", ab_in, "input JSONL")->required();
    ab->add_option("--out-dir", ab_out_dir, "output directory")->required();
    ab->add_option("--k-list", ab_klist, "granularities to sweep")->delimiter(',');
    ab->add_option("--aspect", ab_aspect, "aspect to report")->capture_default_str();
    ab_flags.attach(ab);

    // project
    auto* pj = app.add_subcommand("project", "2-D principal-component latent projection");
    std::string pj_ckpt, pj_in, pj_split = "eval", pj_aspect = "PQ", pj_out_dir;
    pj->add_option("--ckpt", pj_ckpt, "checkpoint path")->required();
    pj->add_option("--in", pj_in, "input JSONL")->required();
    pj->add_option("--out-dir", pj_out_dir, "output directory")->required();
    pj->add_option("--split", pj_split, "train|val|eval")->capture_default_str();
    pj->add_option("--aspect", pj_aspect, "aspect supplying predicted_mos")->capture_default_str();

    // selfcheck
    auto* sc = app.add_subcommand("selfcheck", "gradient checks, closed forms, numeric oracles");
    uint64_t sc_seed = 0;
    size_t sc_trials = 8;
    bool sc_break = false;
    sc->add_option("--seed", sc_seed, "randomization seed")->capture_default_str();
    sc->add_option("--trials", sc_trials, "instances per op kind")->capture_default_str();
    sc->add_flag("--break-gnll-grad", sc_break)->group("");  // deliberate fault, for harness tests

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            ConfigFile f;
            f.load(gen_config);
            f.apply(gen->get_option("--rho"), "rho", gen_cfg.rho);
            f.apply(gen->get_option("--sources"), "sources", gen_cfg.num_sources);
            f.apply(gen->get_option("--clips-per-source"), "clips_per_source",
                    gen_cfg.clips_per_source);
            f.apply(gen->get_option("--eval-systems"), "eval_systems", gen_cfg.eval_systems);
            f.apply(gen->get_option("--clips-per-system"), "clips_per_system",
                    gen_cfg.clips_per_system);
            f.apply(gen->get_option("--feature-dim"), "feature_dim", gen_cfg.feature_dim);
            f.apply(gen->get_option("--val-fraction"), "val_fraction", gen_cfg.val_fraction);
            f.apply(gen->get_option("--confound-aspect"), "confound_aspect", gen_cfg.confound_aspect);
            f.apply(gen->get_option("--seed"), "seed", gen_cfg.seed);
            gen_cfg.validate();
            return run_gen_data(gen_out, gen_out_dir, gen_cfg);
        }
        if (dexp->parsed()) return run_data_export(dexp_in, dexp_out, dexp_out_dir);
        if (dstat->parsed()) return run_data_stats(dstat_in, dstat_out_dir);
        if (dlab->parsed())
            return run_domains_export(dlab_in, dlab_strategy, dlab_k, dlab_d, dlab_restarts,
                                      dlab_nostd, dlab_seed, dlab_out, dlab_out_dir);
        if (tr->parsed()) {
            tr_flags.resolve(tr);
            return run_train(tr_in, tr_out_dir, tr_flags);
        }
        if (ev->parsed()) return run_eval(ev_ckpt, ev_in, ev_split, ev_ref, ev_sq, ev_out_dir);
        if (pr->parsed()) return run_probe(pr_ckpts, pr_in, pr_split, pr_seed, pr_out_dir);
        if (ab->parsed()) {
            ab_flags.resolve(ab);
            return run_ablate(ab_in, ab_out_dir, ab_flags, ab_klist, ab_aspect);
        }
        if (pj->parsed()) return run_project(pj_ckpt, pj_in, pj_split, pj_aspect, pj_out_dir);
        if (sc->parsed()) return run_selfcheck(sc_seed, sc_trials, sc_break);
    } catch (const datqa::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const datqa::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const datqa::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const datqa::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const datqa::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
