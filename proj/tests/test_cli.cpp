#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "datqa/data.hpp"
#include "datqa/rng.hpp"
#include "datqa/train.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;  // stdout + stderr
};

fs::path work_dir() {
    fs::path dir = fs::temp_directory_path() / "datqa_cli_tests";
    fs::create_directories(dir);
    return dir;
}

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    fs::path cap = work_dir() / ("capture_" + std::to_string(counter++) + ".txt");
    std::string cmd = std::string(DATQA_CLI) + " " + args + " > " + cap.string() + " 2>&1";
    int status = std::system(cmd.c_str());
    RunResult r;
    if (status != -1 && WIFEXITED(status)) r.code = WEXITSTATUS(status);
    std::ifstream in(cap);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

size_t line_count(const fs::path& p) {
    std::string bytes = read_bytes(p);
    size_t n = 0;
    for (char c : bytes)
        if (c == '\n') ++n;
    return n;
}

// Small corpus shared by the heavier subcommand tests.
const fs::path& tiny_corpus() {
    static fs::path path = [] {
        fs::path p = work_dir() / "tiny.jsonl";
        RunResult r = run_cli("gen-data --out " + p.string() +
                              " --sources 2 --clips-per-source 40 --eval-systems 3"
                              " --clips-per-system 6 --feature-dim 6 --val-fraction 0.15 --seed 5");
        REQUIRE(r.code == 0);
        return p;
    }();
    return path;
}

// A quick training run; returns the output directory holding checkpoint.bin.
fs::path train_dir(const std::string& name, const std::string& extra) {
    fs::path dir = work_dir() / name;
    RunResult r = run_cli("train --in " + tiny_corpus().string() + " --out-dir " + dir.string() +
                          " --epochs 2 --batch-size 32 --lr 1e-2 --latent 8 --seed 1 " + extra);
    REQUIRE(r.code == 0);
    return dir;
}

}  // namespace

TEST_CASE("gen-data produces the documented default benchmark", "[cli]") {
    fs::path p = work_dir() / "defaults.jsonl";
    RunResult r = run_cli("gen-data --out " + p.string());
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("3000 records") != std::string::npos);

    datqa::Corpus c = datqa::load_jsonl(p.string());
    REQUIRE(c.records.size() == 3000);
    REQUIRE(c.feature_dim == 32);
    REQUIRE(c.split_indices(datqa::Split::Eval).size() == 600);
}

TEST_CASE("gen-data writes a manifest with content hashes", "[cli]") {
    fs::path out = work_dir() / "hashed.jsonl";
    fs::path dir = work_dir() / "hashed_run";
    RunResult r = run_cli("gen-data --out " + out.string() + " --out-dir " + dir.string() +
                          " --sources 2 --clips-per-source 10 --eval-systems 2"
                          " --clips-per-system 3 --feature-dim 4 --seed 8");
    REQUIRE(r.code == 0);

    nlohmann::json m = nlohmann::json::parse(read_bytes(dir / "run.json"));
    REQUIRE(m.at("command") == "gen-data");
    REQUIRE(m.at("seed") == 8);
    REQUIRE(m.at("config").at("rho") == 0.8);
    REQUIRE(m.contains("wall_ms"));

    std::string bytes = read_bytes(out);
    char want[19];
    std::snprintf(want, sizeof want, "0x%016llx",
                  static_cast<unsigned long long>(datqa::fnv1a64_bytes(bytes.data(), bytes.size())));
    REQUIRE(m.at("outputs").at("corpus").at("fnv64") == std::string(want));
    REQUIRE(m.at("outputs").at("corpus").at("path") == out.string());
}

TEST_CASE("gen-data is deterministic across invocations", "[cli]") {
    fs::path a = work_dir() / "det_a.jsonl";
    fs::path b = work_dir() / "det_b.jsonl";
    std::string flags = " --sources 2 --clips-per-source 15 --eval-systems 2 --clips-per-system 4"
                        " --feature-dim 4 --seed 33";
    REQUIRE(run_cli("gen-data --out " + a.string() + flags).code == 0);
    REQUIRE(run_cli("gen-data --out " + b.string() + flags).code == 0);
    REQUIRE(read_bytes(a) == read_bytes(b));
}

TEST_CASE("usage errors exit with code 2", "[cli]") {
    REQUIRE(run_cli("gen-data").code == 2);                      // missing --out
    REQUIRE(run_cli("no-such-command").code == 2);               // unknown subcommand
    REQUIRE(run_cli("").code == 2);                              // subcommand required
    fs::path p = work_dir() / "never.jsonl";
    REQUIRE(run_cli("gen-data --out " + p.string() + " --rho 1.5").code == 2);
    REQUIRE(run_cli("--help").code == 0);
}

TEST_CASE("data stats surfaces the confound dial", "[cli]") {
    fs::path lo = work_dir() / "rho0.jsonl";
    fs::path hi = work_dir() / "rho8.jsonl";
    std::string base = " --sources 4 --clips-per-source 60 --eval-systems 2 --clips-per-system 3"
                       " --feature-dim 4 --seed 2";
    REQUIRE(run_cli("gen-data --out " + lo.string() + base + " --rho 0").code == 0);
    REQUIRE(run_cli("gen-data --out " + hi.string() + base + " --rho 0.8").code == 0);

    auto confound_pc = [](const fs::path& p) {
        RunResult r = run_cli("data stats --in " + p.string());
        REQUIRE(r.code == 0);
        std::istringstream lines(r.out);
        std::string line;
        while (std::getline(lines, line))
            if (line.rfind("confound,train,PC,", 0) == 0)
                return std::stod(line.substr(std::string("confound,train,PC,").size()));
        FAIL("confound row missing");
        return 0.0;
    };
    double at0 = std::abs(confound_pc(lo));
    double at8 = confound_pc(hi);
    REQUIRE(at0 <= 0.3);  // small corpus, noisy estimate; the tight bound is tested on full size
    REQUIRE(at8 >= 0.6);
    REQUIRE(at8 > at0);
}

TEST_CASE("data export round-trips the generator output byte for byte", "[cli]") {
    fs::path copy = work_dir() / "tiny_copy.jsonl";
    RunResult r = run_cli("data export --in " + tiny_corpus().string() + " --out " + copy.string());
    REQUIRE(r.code == 0);
    REQUIRE(read_bytes(copy) == read_bytes(tiny_corpus()));
}

TEST_CASE("train writes checkpoint, loss curve, and manifest", "[cli]") {
    fs::path dir = train_dir("train_smoke", "--lambda 0.5");
    REQUIRE(fs::exists(dir / "checkpoint.bin"));
    REQUIRE(line_count(dir / "loss_curve.csv") == 1 + 2 * 2);  // header + train/val per epoch
    REQUIRE(read_bytes(dir / "loss_curve.csv").rfind("epoch,split,task,adv,total\n", 0) == 0);

    nlohmann::json m = nlohmann::json::parse(read_bytes(dir / "run.json"));
    REQUIRE(m.at("command") == "train");
    REQUIRE(m.at("config").at("lambda") == 0.5);
    REQUIRE(m.at("config").at("strategy") == "source");
    REQUIRE(m.at("inputs").contains("corpus"));
    REQUIRE(m.at("outputs").contains("checkpoint"));

    datqa::Checkpoint ck = datqa::load_checkpoint((dir / "checkpoint.bin").string());
    REQUIRE(ck.strat_D == 2);
    REQUIRE(ck.train.lambda == 0.5);
    REQUIRE(ck.history.size() == 2);
}

TEST_CASE("train rejects bad invocations", "[cli]") {
    fs::path dir = work_dir() / "train_bad";
    REQUIRE(run_cli("train --in " + tiny_corpus().string() + " --out-dir " + dir.string() +
                    " --strategy umap").code == 2);
    REQUIRE(run_cli("train --in " + (work_dir() / "missing.jsonl").string() + " --out-dir " +
                    dir.string()).code == 2);
    REQUIRE(run_cli("train --in " + tiny_corpus().string() + " --out-dir " + dir.string() +
                    " --epochs 2 --lambda 0 --lr 1e300").code == 3);
}

TEST_CASE("eval emits reports and a self-test t-test at p = 1", "[cli]") {
    fs::path tdir = train_dir("train_for_eval", "--lambda 0");
    fs::path edir = work_dir() / "eval_out";
    RunResult r = run_cli("eval --ckpt " + (tdir / "checkpoint.bin").string() + " --in " +
                          tiny_corpus().string() + " --out-dir " + edir.string());
    REQUIRE(r.code == 0);
    REQUIRE(line_count(edir / "eval_report.csv") == 1 + 4);
    nlohmann::json rep = nlohmann::json::parse(read_bytes(edir / "eval_report.json"));
    REQUIRE(rep.at("split") == "eval");
    REQUIRE(rep.at("n_systems") == 3);
    REQUIRE(rep.at("aspects").size() == 4);

    fs::path edir2 = work_dir() / "eval_ref";
    RunResult r2 = run_cli("eval --ckpt " + (tdir / "checkpoint.bin").string() + " --in " +
                           tiny_corpus().string() + " --out-dir " + edir2.string() + " --ref " +
                           (edir / "eval_report.json").string());
    REQUIRE(r2.code == 0);
    std::istringstream tt(read_bytes(edir2 / "ttest.csv"));
    std::string line;
    std::getline(tt, line);
    REQUIRE(line == "aspect,t,p,significant");
    size_t rows = 0;
    while (std::getline(tt, line)) {
        if (line.empty()) continue;
        ++rows;
        REQUIRE(line.substr(line.find(',')) == ",0,1,0");  // identical reports: t=0, p=1
    }
    REQUIRE(rows == 4);

    fs::path garbage = work_dir() / "garbage.bin";
    std::ofstream(garbage) << "not a checkpoint";
    REQUIRE(run_cli("eval --ckpt " + garbage.string() + " --in " + tiny_corpus().string() +
                    " --out-dir " + (work_dir() / "eval_bad").string()).code == 2);
}

TEST_CASE("probe compares checkpoints against the same source target", "[cli]") {
    fs::path base = train_dir("probe_base", "--lambda 0");
    fs::path dat = train_dir("probe_dat", "--lambda 0.5");
    fs::path pdir = work_dir() / "probe_out";
    RunResult r = run_cli("probe --ckpt " + (base / "checkpoint.bin").string() + " --ckpt " +
                          (dat / "checkpoint.bin").string() + " --in " + tiny_corpus().string() +
                          " --out-dir " + pdir.string());
    REQUIRE(r.code == 0);

    std::istringstream csv(read_bytes(pdir / "probe.csv"));
    std::string header, row1, row2;
    std::getline(csv, header);
    std::getline(csv, row1);
    std::getline(csv, row2);
    REQUIRE(header == "strategy,domain_acc,srcc_PQ,srcc_PC,srcc_CE,srcc_CU");
    REQUIRE(row1.rfind("baseline,", 0) == 0);
    REQUIRE(row2.rfind("source,", 0) == 0);
    REQUIRE(r.out.find("baseline: domain acc") != std::string::npos);
}

TEST_CASE("domains export labels every train and val record", "[cli]") {
    fs::path out = work_dir() / "labels.csv";
    RunResult r = run_cli("domains export --in " + tiny_corpus().string() + " --out " + out.string() +
                          " --strategy kmeans --k 3 --restarts 2 --seed 4");
    REQUIRE(r.code == 0);

    datqa::Corpus c = datqa::load_jsonl(tiny_corpus().string());
    size_t expected = c.split_indices(datqa::Split::Train).size() +
                      c.split_indices(datqa::Split::Val).size();
    REQUIRE(line_count(out) == 1 + expected);
    REQUIRE(read_bytes(out).rfind("record_id,domain_label\n", 0) == 0);
    REQUIRE(r.out.find("across 3 domains") != std::string::npos);
}

TEST_CASE("project writes coordinates for the chosen split", "[cli]") {
    fs::path tdir = train_dir("train_for_project", "--lambda 0.1");
    fs::path pdir = work_dir() / "project_out";
    RunResult r = run_cli("project --ckpt " + (tdir / "checkpoint.bin").string() + " --in " +
                          tiny_corpus().string() + " --out-dir " + pdir.string() +
                          " --split eval --aspect PC");
    REQUIRE(r.code == 0);

    datqa::Corpus c = datqa::load_jsonl(tiny_corpus().string());
    REQUIRE(line_count(pdir / "projection.csv") ==
            1 + c.split_indices(datqa::Split::Eval).size());
    nlohmann::json meta = nlohmann::json::parse(read_bytes(pdir / "projection_meta.json"));
    REQUIRE(meta.at("n_components") == 2);
    REQUIRE(meta.at("rank_deficient") == false);
    REQUIRE(meta.at("aspect") == "PC");
}

TEST_CASE("selfcheck passes clean and fails under an injected gradient bug", "[cli]") {
    RunResult ok = run_cli("selfcheck --trials 2 --seed 3");
    REQUIRE(ok.code == 0);
    REQUIRE(ok.out.find("ok gradient-suite") != std::string::npos);
    REQUIRE(ok.out.find("ok grl-law") != std::string::npos);
    REQUIRE(ok.out.find("ok closed-forms") != std::string::npos);
    REQUIRE(ok.out.find("ok loss-laws") != std::string::npos);
    REQUIRE(ok.out.find("ok numeric-spots") != std::string::npos);

    RunResult bad = run_cli("selfcheck --trials 2 --seed 3 --break-gnll-grad");
    REQUIRE(bad.code == 1);
    REQUIRE(bad.out.find("FAIL gradient-suite") != std::string::npos);
}

TEST_CASE("config file fills flags the command line left unset", "[cli]") {
    fs::path cfg = work_dir() / "train_cfg.json";
    std::ofstream(cfg) << R"({"epochs": 2, "lr": 0.01, "lambda": 0.25, "latent": 8})";
    fs::path dir = work_dir() / "train_cfgrun";
    RunResult r = run_cli("train --in " + tiny_corpus().string() + " --out-dir " + dir.string() +
                          " --batch-size 32 --seed 1 --config " + cfg.string() + " --lambda 0.75");
    REQUIRE(r.code == 0);
    datqa::Checkpoint ck = datqa::load_checkpoint((dir / "checkpoint.bin").string());
    REQUIRE(ck.train.lambda == 0.75);  // explicit flag beats the file
    REQUIRE(ck.train.epochs == 2);     // file fills the rest
    REQUIRE(ck.train.lr == 0.01);
    REQUIRE(ck.model.latent_dim == 8);
}
