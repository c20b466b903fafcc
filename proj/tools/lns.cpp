// lns pretrain|finetune|eval|export|selftest --config <file> [--from <checkpoint>] [--out <dir>] [--seed <int>]

#include <iostream>

#include <CLI11.hpp>

#include "lns/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Binary network training with learned noisy-supervision mapping networks"};
    app.require_subcommand(1);

    std::string config;
    std::string from, out;
    std::uint64_t seed = 0;
    for (const auto& [name, help] : {std::pair{"pretrain", "train a sign/STE binary network from scratch"},
                                     {"finetune", "fine-tune a pretrained checkpoint"},
                                     {"eval", "report accuracy of a checkpoint or exported model"},
                                     {"export", "write a bit-packed inference model"},
                                     {"selftest", "run the built-in property checks"}}) {
        auto* sub = app.add_subcommand(name, help);
        auto* cfg = sub->add_option("--config", config, "configuration file")->check(CLI::ExistingFile);
        if (std::string(name) != "selftest") cfg->required();
        sub->add_option("--from", from, "checkpoint (or exported model for eval)");
        sub->add_option("--out", out, "output directory (overrides output.dir)");
        sub->add_option("--seed", seed, "random seed (overrides train.seed)");
    }
    CLI11_PARSE(app, argc, argv);

    auto* sub = app.get_subcommands().front();
    lns::ExperimentConfig cfg;
    try {
        if (!config.empty()) cfg = lns::parse_config(config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return lns::kExitFailure;
    }
    lns::CommandOptions opts;
    if (sub->count("--from")) opts.from = from;
    if (sub->count("--out")) opts.out = out;
    if (sub->count("--seed")) opts.seed = seed;
    return lns::run_command(sub->get_name(), cfg, opts, std::cout, std::cerr);
}
