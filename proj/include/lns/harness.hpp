#pragma once
// Experiment commands behind the `lns` tool. Each run writes into an output
// directory laid out as:
//
//   ckpt/         checkpoints (pretrain.lns, finetune_lns.lns, finetune_simple.lns)
//   export/       exported inference models (model.lnsb)
//   metrics.csv   one row per epoch and split
//   config.echo   the resolved configuration

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "lns/config.hpp"

namespace lns {

struct CommandOptions {
    std::optional<std::filesystem::path> from;
    std::optional<std::filesystem::path> out;
    std::optional<std::uint64_t> seed;
};

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitDiverged = 3 };

/// Runs pretrain | finetune | eval | export | selftest. Diagnostics go to
/// `err`, results to `out`. Never throws for library errors; they map to a
/// nonzero exit status.
int run_command(const std::string& command, ExperimentConfig cfg, const CommandOptions& options, std::ostream& out,
                std::ostream& err);

}  // namespace lns
