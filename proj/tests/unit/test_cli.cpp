#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "lns/harness.hpp"

using namespace lns;
namespace fs = std::filesystem;

namespace {

struct Workdir {
    fs::path dir = fs::temp_directory_path() / ("lns_cli_" + std::to_string(std::random_device{}()));
    fs::path conf = dir / "tiny.conf";

    Workdir() {
        fs::create_directories(dir);
        std::ofstream(conf) << "[data]\nsource = synth\nsynth_train = 60\nsynth_test = 30\nsynth_size = 10\n"
                               "[model]\nwidth = 4\n"
                               "[train]\nepochs = 1\nbatch_size = 16\n"
                               "[finetune]\nepochs = 1\nbatch_size = 16\n"
                               "[lns]\nwarm_start_epochs = 1\n";
    }
    ~Workdir() { fs::remove_all(dir); }
};

int run_cli(const std::string& args) {
    const char* exe = std::getenv("LNS_CLI");
    REQUIRE_MESSAGE(exe != nullptr, "LNS_CLI must point at the command-line tool");
    const int status = std::system((std::string("\"") + exe + "\" " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Run {
    int code;
    std::string out, err;
};

Run run(const std::string& command, const ExperimentConfig& cfg, CommandOptions o) {
    std::ostringstream out, err;
    const int code = run_command(command, cfg, o, out, err);
    return {code, out.str(), err.str()};
}

std::string accuracy_field(const std::string& s) {
    const auto p = s.find("accuracy=");
    return p == std::string::npos ? "" : s.substr(p, s.find(' ', p) - p);
}

// metrics.csv without the wall_seconds column
std::string metrics_without_time(const fs::path& p) {
    std::ifstream in(p);
    std::string all, line;
    while (std::getline(in, line)) all += line.substr(0, line.rfind(',')) + "\n";
    return all;
}

}  // namespace

TEST_CASE("tool exit codes") {
    Workdir w;
    const auto conf = w.conf.string();
    CHECK(run_cli("finetune --config " + conf) == kExitUsage);
    CHECK(run_cli("selftest") == kExitOk);
    CHECK(run_cli("eval --config " + conf + " --from " + (w.dir / "missing.lns").string()) != 0);
    CHECK(run_cli("") != 0);
    CHECK(run_cli("pretrain") != 0);
}

TEST_CASE("pretrain, finetune, export and eval") {
    Workdir w;
    const auto cfg = parse_config(w.conf);
    CommandOptions o;
    o.out = w.dir / "run";

    auto r = run("pretrain", cfg, o);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto pre = w.dir / "run" / "ckpt" / "pretrain.lns";
    CHECK(fs::exists(pre));
    CHECK(fs::exists(w.dir / "run" / "config.echo"));

    o.from = pre;
    r = run("finetune", cfg, o);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto ft = w.dir / "run" / "ckpt" / "finetune_lns.lns";
    CHECK(fs::exists(ft));

    o.from = ft;
    r = run("export", cfg, o);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto exported = w.dir / "run" / "export" / "model.lnsb";

    const auto from_ck = run("eval", cfg, o);
    o.from = exported;
    const auto from_export = run("eval", cfg, o);
    REQUIRE(from_ck.code == 0);
    REQUIRE(from_export.code == 0);
    CHECK_FALSE(accuracy_field(from_ck.out).empty());
    CHECK(accuracy_field(from_ck.out) == accuracy_field(from_export.out));

    // metrics: epoch-0 and epoch-1 test rows for each phase
    std::ifstream in(w.dir / "run" / "metrics.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("epoch,split,", 0) == 0);
}

TEST_CASE("runs are reproducible apart from wall time") {
    Workdir w;
    const auto cfg = parse_config(w.conf);
    for (const char* name : {"a", "b"}) {
        CommandOptions o;
        o.out = w.dir / name;
        o.seed = 7;
        REQUIRE(run("pretrain", cfg, o).code == 0);
    }
    CHECK(metrics_without_time(w.dir / "a" / "metrics.csv") == metrics_without_time(w.dir / "b" / "metrics.csv"));
    CHECK(metrics_without_time(w.dir / "a" / "metrics.csv").size() > 100);
}

TEST_CASE("fine-tune mode must match a resumed checkpoint") {
    Workdir w;
    auto cfg = parse_config(w.conf);
    CommandOptions o;
    o.out = w.dir / "run";
    REQUIRE(run("pretrain", cfg, o).code == 0);
    o.from = w.dir / "run" / "ckpt" / "pretrain.lns";
    REQUIRE(run("finetune", cfg, o).code == 0);
    o.from = w.dir / "run" / "ckpt" / "finetune_lns.lns";
    cfg.finetune_mode = "simple";
    CHECK(run("finetune", cfg, o).code == kExitUsage);
    CHECK(run("bogus", cfg, o).code == kExitUsage);
}
