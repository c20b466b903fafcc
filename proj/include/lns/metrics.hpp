#pragma once
// Metrics CSV: one header, then one row per MetricsRecord. Numbers use the
// C locale with 6 significant digits.

#include <filesystem>
#include <string>
#include <vector>

#include "lns/train.hpp"

namespace lns {

inline constexpr const char* kMetricsHeader = "epoch,split,cls_loss,aux_loss,total_loss,accuracy,flip_rate,lr,wall_seconds";
inline constexpr const char* kFlipPretrainColumn = "flip_rate_pretrain";

/// Shortest general-format rendering with at most 6 significant digits.
std::string format_metric(double v);

std::string metrics_header(bool with_pretrain_flip);
std::string metrics_row(const MetricsRecord& r, bool with_pretrain_flip);

/// Appends a row, writing the header first when the file is new or empty.
/// The extra column is present when the record carries flip_rate_pretrain;
/// an existing file's header must agree.
void write_metrics(const MetricsRecord& record, const std::filesystem::path& path);

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

}  // namespace lns
