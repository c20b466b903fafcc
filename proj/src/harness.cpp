#include "lns/harness.hpp"

#include <fstream>
#include <ostream>

#include "lns/metrics.hpp"
#include "lns/selftest.hpp"
#include "lns/train.hpp"

namespace lns {

namespace {

namespace fs = std::filesystem;

struct UsageError : Error {
    using Error::Error;
};

ModelSpec model_for(const ExperimentConfig& cfg, const data::Dataset& d) {
    const auto s = d.image_shape();
    return ModelSpec::by_name(cfg.model_name, s[0], s[1], s[2], cfg.data.classes, cfg.model_width);
}

void prepare_output(const ExperimentConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir / "ckpt");
    fs::create_directories(dir / "export");
    std::ofstream echo(dir / "config.echo", std::ios::trunc);
    if (!echo) throw IoError("cannot write '" + (dir / "config.echo").string() + "'");
    echo << echo_config(cfg);
}

TrainHooks hooks_for(const fs::path& dir, const fs::path& ckpt, const data::Dataset& test, std::ostream& out) {
    TrainHooks h;
    if (test.size()) h.test = &test;
    h.on_record = [dir, &out](const MetricsRecord& r) {
        write_metrics(r, dir / "metrics.csv");
        out << "epoch " << r.epoch << " " << r.split << " acc=" << format_metric(r.accuracy)
            << " loss=" << format_metric(r.total_loss) << " flip=" << format_metric(r.flip_rate) << "\n";
    };
    h.on_epoch_end = [ckpt](const Checkpoint& ck) { ck.save(ckpt); };
    return h;
}

int pretrain(const ExperimentConfig& cfg, const CommandOptions& o, const fs::path& dir, std::ostream& out) {
    const auto [train, test] = load_datasets(cfg.data);
    prepare_output(cfg, dir);
    const auto path = dir / "ckpt" / "pretrain.lns";
    auto hooks = hooks_for(dir, path, test, out);
    Checkpoint ck;
    if (o.from) {
        ck = Checkpoint::load(*o.from);
        if (ck.phase != Phase::pretrain) throw UsageError("--from must name a pretrain checkpoint to resume pretraining");
        ck.seed = cfg.pretrain.seed;
    } else {
        ck = init_checkpoint(model_for(cfg, train), cfg.pretrain);
    }
    if (ck.epoch == 0) ck.save(path);
    train_epochs(ck, train, cfg.pretrain, hooks);
    ck.save(path);
    out << "checkpoint " << path.string() << "\n";
    return kExitOk;
}

int finetune(const ExperimentConfig& cfg, const CommandOptions& o, const fs::path& dir, std::ostream& out) {
    if (!o.from) throw UsageError("finetune requires --from <checkpoint>");
    const auto [train, test] = load_datasets(cfg.data);
    const auto start = Checkpoint::load(*o.from);
    const Phase phase = cfg.finetune_mode == "lns" ? Phase::finetune_lns : Phase::finetune_simple;
    Checkpoint ck;
    if (start.phase == Phase::pretrain)
        ck = start_finetune(start, phase, train, cfg.finetune);
    else if (start.phase == phase)
        ck = start;
    else
        throw UsageError("--from holds a " + to_string(start.phase) + " checkpoint but finetune.mode is " +
                         cfg.finetune_mode);
    prepare_output(cfg, dir);
    const auto path = dir / "ckpt" / (to_string(phase) + ".lns");
    auto hooks = hooks_for(dir, path, test, out);
    if (ck.epoch == 0) ck.save(path);
    train_epochs(ck, train, cfg.finetune, hooks);
    ck.save(path);
    out << "checkpoint " << path.string() << "\n";
    return kExitOk;
}

int eval(const ExperimentConfig& cfg, const CommandOptions& o, std::ostream& out) {
    if (!o.from) throw UsageError("eval requires --from <checkpoint or exported model>");
    auto [train, test] = load_datasets(cfg.data);
    const auto& d = test.size() ? test : train;
    const auto magic = io::peek_magic(*o.from);
    EvalResult r;
    if (magic == io::kExportMagic)
        r = evaluate(InferenceModel::load(*o.from), d);
    else
        r = evaluate(Checkpoint::load(*o.from), d);
    out << "split=" << d.split << " samples=" << r.samples << " accuracy=" << format_metric(r.accuracy)
        << " cls_loss=" << format_metric(r.cls_loss) << "\n";
    return kExitOk;
}

int export_model(const CommandOptions& o, const fs::path& dir, std::ostream& out) {
    if (!o.from) throw UsageError("export requires --from <checkpoint>");
    const auto ck = Checkpoint::load(*o.from);
    const auto path = dir / "export" / "model.lnsb";
    export_binary(ck).save(path);
    out << "exported " << path.string() << " (" << fs::file_size(path) << " bytes)\n";
    return kExitOk;
}

int selftest(std::ostream& out) {
    bool ok = true;
    for (const auto& c : run_selftest()) {
        out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
        ok = ok && c.passed;
    }
    return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run_command(const std::string& command, ExperimentConfig cfg, const CommandOptions& options, std::ostream& out,
                std::ostream& err) {
    try {
        if (options.seed) cfg.pretrain.seed = cfg.finetune.seed = *options.seed;
        const fs::path dir = options.out ? *options.out : cfg.output_dir;
        if (options.out) cfg.output_dir = dir;
        if (command == "pretrain") return pretrain(cfg, options, dir, out);
        if (command == "finetune") return finetune(cfg, options, dir, out);
        if (command == "eval") return eval(cfg, options, out);
        if (command == "export") return export_model(options, dir, out);
        if (command == "selftest") return selftest(out);
        throw UsageError("unknown command '" + command + "' (expected pretrain, finetune, eval, export, selftest)");
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const TrainingDiverged& e) {
        const fs::path dir = options.out ? *options.out : cfg.output_dir;
        const auto path = dir / "ckpt" / "last_good.lns";
        try {
            e.last_good().save(path);
            err << "error: " << e.what() << "; last good state saved to " << path.string() << "\n";
        } catch (const std::exception& inner) {
            err << "error: " << e.what() << "; saving the last good state failed: " << inner.what() << "\n";
        }
        return kExitDiverged;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace lns
