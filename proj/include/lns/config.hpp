#pragma once
// Experiment configuration files.
//
// Grammar, one statement per line:
//
//   # comment                  (also allowed after a value)
//   [section]                  prefixes following keys with "section."
//   key = value                dotted keys, e.g. lns.alpha = 1.0
//
// Values are numbers, booleans (true/false), words, paths, or
// comma-separated lists. Surrounding double quotes are stripped. Unknown
// keys, duplicates, malformed values and constraint violations raise
// ConfigError naming the key and line. Relative paths resolve against the
// directory holding the file.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "lns/data.hpp"
#include "lns/train.hpp"

namespace lns {

struct DataConfig {
    std::string source = "idx";  // idx | synth
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    data::Normalization norm;
    std::size_t limit_train = 0;  // 0 keeps everything
    std::size_t limit_test = 0;
    std::size_t classes = 10;
    // Procedural digit corpus used when source = synth.
    std::size_t synth_train = 6000;
    std::size_t synth_test = 1000;
    std::size_t synth_size = 16;
    std::uint64_t synth_seed = 1234;
};

struct ExperimentConfig {
    TrainConfig pretrain = TrainConfig::pretrain_defaults();
    TrainConfig finetune = TrainConfig::finetune_defaults();
    std::string finetune_mode = "lns";  // lns | simple
    DataConfig data;
    std::string model_name = "bnn4";
    std::size_t model_width = 16;
    std::filesystem::path output_dir = "runs/default";
};

ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(std::string_view text, const std::filesystem::path& base_dir = {});

/// Resolved configuration as `key = value` lines that parse back to the same config.
std::string echo_config(const ExperimentConfig& cfg);

/// Train and test splits described by the data section.
std::pair<data::Dataset, data::Dataset> load_datasets(const DataConfig& cfg);

}  // namespace lns
