#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "lns/error.hpp"
#include "lns/metrics.hpp"

using namespace lns;
namespace fs = std::filesystem;

namespace {

struct TempFile {
    fs::path dir = fs::temp_directory_path() / ("lns_metrics_" + std::to_string(std::random_device{}()));
    fs::path path = dir / "sub" / "metrics.csv";
    ~TempFile() { fs::remove_all(dir); }
};

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

MetricsRecord record(int epoch, double acc) {
    MetricsRecord r;
    r.epoch = epoch;
    r.split = "test";
    r.cls_loss = 1.25;
    r.aux_loss = 0.0312;
    r.total_loss = 1.2812;
    r.accuracy = acc;
    r.flip_rate = 0.004;
    r.lr = 0.01;
    r.wall_seconds = 3.5;
    return r;
}

}  // namespace

TEST_CASE("number formatting") {
    CHECK(format_metric(0.8506) == "0.8506");
    CHECK(format_metric(0.0) == "0");
    CHECK(format_metric(1.0) == "1");
    CHECK(format_metric(0.123456789) == "0.123457");
    CHECK(format_metric(1234567.0) == "1.23457e+06");
    CHECK(format_metric(1e-7) == "1e-07");
}

TEST_CASE("rows follow the header column order") {
    CHECK(metrics_header(false) == "epoch,split,cls_loss,aux_loss,total_loss,accuracy,flip_rate,lr,wall_seconds");
    CHECK(metrics_row(record(3, 0.8506), false) == "3,test,1.25,0.0312,1.2812,0.8506,0.004,0.01,3.5");
    auto r = record(1, 0.5);
    r.flip_rate_pretrain = 0.02;
    CHECK(metrics_row(r, true) == "1,test,1.25,0.0312,1.2812,0.5,0.004,0.01,3.5,0.02");
    r.split = "a,b";
    CHECK_THROWS_AS(metrics_row(r, false), ValueError);
}

TEST_CASE("two appends write one header") {
    TempFile f;
    write_metrics(record(1, 0.8506), f.path);
    write_metrics(record(2, 0.9), f.path);
    const auto l = lines(f.path);
    REQUIRE(l.size() == 3);
    CHECK(l[0] == kMetricsHeader);
    CHECK(l[1].find(",0.8506,") != std::string::npos);
}

TEST_CASE("read back equals what was written") {
    TempFile f;
    std::vector<MetricsRecord> written{record(0, 0.1), record(1, 0.25), record(2, 0.875)};
    for (const auto& r : written) write_metrics(r, f.path);
    CHECK(read_metrics(f.path) == written);

    TempFile g;
    auto r = record(4, 0.5);
    r.flip_rate_pretrain = 0.125;
    write_metrics(r, g.path);
    write_metrics(record(5, 0.5), g.path);
    const auto back = read_metrics(g.path);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == r);
    CHECK(back[1].flip_rate_pretrain == 0.0);
}

TEST_CASE("foreign files are rejected") {
    TempFile f;
    fs::create_directories(f.path.parent_path());
    std::ofstream(f.path) << "a,b,c\n";
    CHECK_THROWS_AS(write_metrics(record(1, 0.5), f.path), FormatError);
    CHECK_THROWS_AS(read_metrics(f.path), FormatError);
    CHECK_THROWS_AS(read_metrics(f.dir / "nope.csv"), IoError);
}
