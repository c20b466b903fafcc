#include "lns/metrics.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "lns/error.hpp"

namespace lns {

namespace {

double parse_double(const std::string& s, const std::filesystem::path& path, int line) {
    double v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw FormatError("bad number '" + s + "' on line " + std::to_string(line) + " of " + path.string(), 0);
    return v;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string f;
    std::istringstream in(line);
    while (std::getline(in, f, ',')) out.push_back(f);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::string format_metric(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 6);
    return std::string(buf, r.ptr);
}

std::string metrics_header(bool with_pretrain_flip) {
    std::string h = kMetricsHeader;
    if (with_pretrain_flip) h += std::string(",") + kFlipPretrainColumn;
    return h;
}

std::string metrics_row(const MetricsRecord& r, bool with_pretrain_flip) {
    if (r.split.find_first_of(",\n\"") != std::string::npos) throw ValueError("metrics split tag must be plain text");
    std::string s = std::to_string(r.epoch) + "," + r.split;
    for (double v : {r.cls_loss, r.aux_loss, r.total_loss, r.accuracy, r.flip_rate, r.lr, r.wall_seconds})
        s += "," + format_metric(v);
    if (with_pretrain_flip) s += "," + format_metric(r.flip_rate_pretrain.value_or(0.0));
    return s;
}

void write_metrics(const MetricsRecord& record, const std::filesystem::path& path) {
    bool extra = record.flip_rate_pretrain.has_value();
    bool need_header = true;
    if (std::filesystem::exists(path) && std::filesystem::file_size(path) > 0) {
        std::ifstream in(path);
        std::string first;
        std::getline(in, first);
        if (first == metrics_header(false))
            extra = false;
        else if (first == metrics_header(true))
            extra = true;
        else
            throw FormatError("'" + path.string() + "' does not start with the metrics header", 0);
        need_header = false;
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot open '" + path.string() + "' for appending");
    if (need_header) out << metrics_header(extra) << "\n";
    out << metrics_row(record, extra) << "\n";
    out.flush();
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty metrics file '" + path.string() + "'", 0);
    bool extra;
    if (line == metrics_header(false))
        extra = false;
    else if (line == metrics_header(true))
        extra = true;
    else
        throw FormatError("'" + path.string() + "' does not start with the metrics header", 0);
    const std::size_t columns = extra ? 10 : 9;
    std::vector<MetricsRecord> out;
    int n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        const auto f = split(line);
        if (f.size() != columns)
            throw FormatError("line " + std::to_string(n) + " of " + path.string() + " has " +
                                  std::to_string(f.size()) + " fields",
                              0);
        MetricsRecord r;
        r.epoch = static_cast<int>(parse_double(f[0], path, n));
        r.split = f[1];
        r.cls_loss = parse_double(f[2], path, n);
        r.aux_loss = parse_double(f[3], path, n);
        r.total_loss = parse_double(f[4], path, n);
        r.accuracy = parse_double(f[5], path, n);
        r.flip_rate = parse_double(f[6], path, n);
        r.lr = parse_double(f[7], path, n);
        r.wall_seconds = parse_double(f[8], path, n);
        if (extra) r.flip_rate_pretrain = parse_double(f[9], path, n);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace lns
