#include "lns/train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "lns/functional.hpp"
#include "lns/mapping.hpp"
#include "lns/optim.hpp"

namespace lns {

namespace {

// Independent random streams per (seed, epoch).
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kMappingStream = 3;

constexpr int kMaxNonFiniteSteps = 3;

std::string reduction_name(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }

template <typename E>
std::string engine_state(const E& engine) {
    std::ostringstream os;
    os << engine;
    return os.str();
}

std::vector<std::size_t> quantized_without_mapping(const Model<float>& m) {
    std::vector<std::size_t> out;
    for (std::size_t i : m.spec.quantized_layers())
        if (!m.layers[i].mapping) out.push_back(i);
    return out;
}

struct StepResult {
    double cls = 0, aux = 0, total = 0;
    std::size_t correct = 0;
    bool finite = true;
};

StepResult train_step(Checkpoint& ck, const data::Batch& batch, const TrainConfig& cfg, double lr) {
    const bool frozen = lr == 0.0;
    const bool lns = ck.phase == Phase::finetune_lns;
    ag::Tape<float> tape;
    const auto bound = BoundModel<float>::bind(tape, ck.model, !frozen, lns && !frozen);

    ForwardOptions<float> opt;
    opt.mode = ag::Mode::train;
    opt.source = ck.source();
    opt.update_running_stats = !frozen;
    opt.rates = cfg.rates;
    opt.reduction = cfg.reduction;
    if (cfg.labels == LabelMode::frozen) opt.frozen_labels = &ck.frozen_labels;

    const auto res = forward(ck.model, bound, tape.constant(batch.images), opt);
    const auto cls = ag::cross_entropy(res.logits, batch.labels);
    const auto total = total_loss(cls, res.aux_losses, static_cast<float>(cfg.alpha));

    StepResult r;
    r.cls = cls.value()[0];
    for (const auto& a : res.aux_losses) r.aux += a.value()[0];
    r.total = total.value()[0];
    const auto pred = fn::argmax_rows(res.logits.value());
    for (std::size_t k = 0; k < pred.size(); ++k) r.correct += pred[k] == batch.labels[k];
    r.finite = std::isfinite(r.total);
    if (!r.finite || frozen) return r;

    tape.backward(total);
    auto params = ck.model.params();
    if (ck.velocity.size() != params.size()) ck.velocity.assign(params.size(), Tensor());
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!bound.vars[i].requires_grad()) continue;
        sgd_step(*params[i].tensor, tape.grad(bound.vars[i]), ck.velocity[i], static_cast<float>(lr),
                 static_cast<float>(cfg.momentum), static_cast<float>(cfg.weight_decay));
    }
    return r;
}

std::vector<fn::BatchNormState<float>> bn_states(const Model<float>& m) {
    std::vector<fn::BatchNormState<float>> out;
    for (const auto& l : m.layers) out.push_back(l.bn);
    return out;
}

void restore_bn(Model<float>& m, const std::vector<fn::BatchNormState<float>>& s) {
    for (std::size_t i = 0; i < s.size(); ++i) m.layers[i].bn = s[i];
}

void check_data(const Checkpoint& ck, const data::Dataset& d) {
    if (d.size() == 0) throw ValueError("training set is empty");
    const auto& s = ck.model.spec;
    if (d.image_shape() != Shape{s.channels, s.height, s.width})
        throw ShapeError("dataset images " + d.image_shape().str() + " do not match model input " +
                         Shape{s.channels, s.height, s.width}.str());
}

MetricsRecord eval_record(const Checkpoint& ck, const data::Dataset& data, const std::string& split,
                          const TrainConfig& cfg, double flip, double lr, std::size_t threads) {
    MetricsRecord m;
    m.epoch = ck.epoch;
    m.split = split;
    const auto r = evaluate(ck, data, threads);
    m.cls_loss = r.cls_loss;
    m.aux_loss = aux_loss(ck, cfg);
    m.total_loss = total_loss(m.cls_loss, {m.aux_loss}, cfg.alpha);
    m.accuracy = r.accuracy;
    m.flip_rate = flip;
    m.lr = lr;
    return m;
}

}  // namespace

std::string to_string(Phase p) {
    switch (p) {
        case Phase::pretrain: return "pretrain";
        case Phase::finetune_lns: return "finetune_lns";
        case Phase::finetune_simple: return "finetune_simple";
    }
    return "pretrain";
}

Phase phase_from_string(const std::string& s) {
    if (s == "pretrain") return Phase::pretrain;
    if (s == "finetune_lns") return Phase::finetune_lns;
    if (s == "finetune_simple") return Phase::finetune_simple;
    throw ValueError("unknown phase '" + s + "'");
}

TrainConfig TrainConfig::pretrain_defaults() {
    TrainConfig c;
    c.lr = 0.1;
    c.epochs = 400;
    c.batch_size = 128;
    c.momentum = 0.9;
    c.weight_decay = 0.0;
    c.milestones = {200, 300};
    return c;
}

TrainConfig TrainConfig::finetune_defaults() {
    TrainConfig c;
    c.lr = 0.01;
    c.epochs = 120;
    c.batch_size = 128;
    c.momentum = 0.9;
    c.weight_decay = 0.0;
    c.milestones = {30, 60, 90};
    c.lr_decay = 0.1;
    return c;
}

void TrainConfig::validate() const {
    if (!(alpha >= 0) || !std::isfinite(alpha)) throw ConfigError("alpha", 0, "must be a finite value >= 0");
    try {
        rates.validate();
    } catch (const ValueError& e) {
        throw ConfigError("rho_pos", 0, e.what());
    }
    if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("lr", 0, "must be a finite value >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum", 0, "must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay", 0, "must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size", 0, "must be >= 1");
    if (epochs < 0) throw ConfigError("epochs", 0, "must be >= 0");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (milestones[i] < 1) throw ConfigError("milestones", 0, "must be positive");
        if (i > 0 && milestones[i] <= milestones[i - 1])
            throw ConfigError("milestones", 0, "must be strictly increasing");
    }
    if (!(lr_decay > 0)) throw ConfigError("lr_decay", 0, "must be > 0");
    if (warm_start_epochs < 0) throw ConfigError("warm_start_epochs", 0, "must be >= 0");
    if (!(warm_start_lr >= 0)) throw ConfigError("warm_start_lr", 0, "must be >= 0");
    if (augment.hflip_prob < 0 || augment.hflip_prob > 1) throw ConfigError("hflip_prob", 0, "must lie in [0, 1]");
}

double TrainConfig::lr_at(int epoch) const {
    double v = lr;
    for (int m : milestones)
        if (epoch > m) v *= lr_decay;
    return v;
}

nlohmann::json TrainConfig::to_json() const {
    return {{"alpha", alpha},
            {"rho_pos", rates.rho_pos},
            {"rho_neg", rates.rho_neg},
            {"reduction", reduction_name(reduction)},
            {"labels", labels == LabelMode::current ? "current" : "frozen"},
            {"lr", lr},
            {"momentum", momentum},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"milestones", milestones},
            {"lr_decay", lr_decay},
            {"warm_start_epochs", warm_start_epochs},
            {"warm_start_lr", warm_start_lr},
            {"seed", seed},
            {"scale_mode", scale_mode == ScaleMode::none ? "none" : "layer_wise"},
            {"augment", {{"pad", augment.pad}, {"crop", augment.crop}, {"hflip_prob", augment.hflip_prob}}},
            {"shuffle", shuffle}};
}

double flip_rate(const Tensor& before, const Tensor& after) {
    require_same_shape(before.shape(), after.shape(), "flip_rate");
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        if ((before[i] != 1.0f && before[i] != -1.0f) || (after[i] != 1.0f && after[i] != -1.0f))
            throw ValueError("flip_rate: element " + std::to_string(i) + " is not +1 or -1");
        flipped += before[i] != after[i];
    }
    return static_cast<double>(flipped) / static_cast<double>(before.size());
}

double flip_rate(const std::vector<Tensor>& before, const std::vector<Tensor>& after) {
    if (before.size() != after.size())
        throw ShapeError("flip_rate: " + std::to_string(before.size()) + " layers vs " +
                         std::to_string(after.size()));
    double flipped = 0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        flipped += flip_rate(before[i], after[i]) * static_cast<double>(before[i].size());
        total += before[i].size();
    }
    return total == 0 ? 0.0 : flipped / static_cast<double>(total);
}

std::vector<Tensor> Checkpoint::binary_weights() const {
    std::vector<Tensor> out;
    for (std::size_t i : model.spec.quantized_layers()) out.push_back(lns::binary_weights(model.layers[i], source()));
    return out;
}

io::Container Checkpoint::to_container() const {
    io::Container c;
    c.magic = std::string(io::kCheckpointMagic);
    c.meta["phase"] = to_string(phase);
    c.meta["model"] = model.spec.to_json();
    c.meta["scale_mode"] = model.scale_mode == ScaleMode::none ? "none" : "layer_wise";
    c.meta["epoch"] = epoch;
    c.meta["rng"] = {{"seed", seed},
                     {"next_epoch", epoch + 1},
                     {"augment_engine", engine_state(data::epoch_rng(seed, epoch + 1, kAugmentStream))}};
    c.meta["config"] = config;
    std::vector<std::size_t> mapped;
    for (std::size_t i = 0; i < model.layers.size(); ++i)
        if (model.layers[i].mapping) mapped.push_back(i);
    c.meta["mapping_layers"] = mapped;

    auto& m = const_cast<Model<float>&>(model);
    const auto params = m.params();
    for (const auto& p : params) c.add(p.name, *p.tensor);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (!model.spec.layers[i].batch_norm) continue;
        c.add("layer" + std::to_string(i) + ".bn_running_mean", model.layers[i].bn.running_mean);
        c.add("layer" + std::to_string(i) + ".bn_running_var", model.layers[i].bn.running_var);
    }
    for (std::size_t i = 0; i < velocity.size(); ++i)
        if (!velocity[i].empty()) c.add("velocity." + params[i].name, velocity[i]);
    auto add_list = [&c](const std::string& prefix, const std::vector<Tensor>& list) {
        for (std::size_t k = 0; k < list.size(); ++k) c.add(prefix + "." + std::to_string(k), list[k]);
    };
    add_list("pretrain_binary", pretrain_binary);
    add_list("prev_binary", prev_binary);
    add_list("frozen_labels", frozen_labels);
    c.meta["lists"] = {{"pretrain_binary", pretrain_binary.size()},
                       {"prev_binary", prev_binary.size()},
                       {"frozen_labels", frozen_labels.size()}};
    return c;
}

Checkpoint Checkpoint::from_container(const io::Container& c) {
    Checkpoint ck;
    try {
        ck.phase = phase_from_string(c.meta.at("phase").get<std::string>());
        const auto spec = ModelSpec::from_json(c.meta.at("model"));
        std::mt19937_64 unused(0);
        ck.model = Model<float>::init(spec, unused);
        ck.model.scale_mode =
            c.meta.at("scale_mode").get<std::string>() == "layer_wise" ? ScaleMode::layer_wise : ScaleMode::none;
        ck.epoch = c.meta.at("epoch").get<int>();
        ck.seed = c.meta.at("rng").at("seed").get<std::uint64_t>();
        ck.config = c.meta.value("config", nlohmann::json::object());
        for (std::size_t i : c.meta.at("mapping_layers").get<std::vector<std::size_t>>()) {
            if (i >= spec.layers.size() || !spec.layers[i].quantized)
                throw ValueError("checkpoint lists a mapping network on non-quantized layer " + std::to_string(i));
            ck.model.layers[i].mapping = MappingNet<float>::zeros(spec.layers[i].in);
        }
        auto params = ck.model.params();
        for (auto& p : params) {
            auto t = c.tensor(p.name);
            require_same_shape(p.tensor->shape(), t.shape(), ("checkpoint tensor " + p.name).c_str());
            *p.tensor = std::move(t);
        }
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            if (!spec.layers[i].batch_norm) continue;
            ck.model.layers[i].bn.running_mean = c.tensor("layer" + std::to_string(i) + ".bn_running_mean");
            ck.model.layers[i].bn.running_var = c.tensor("layer" + std::to_string(i) + ".bn_running_var");
        }
        bool any_velocity = false;
        for (const auto& p : params) any_velocity = any_velocity || c.contains("velocity." + p.name);
        if (any_velocity) {
            ck.velocity.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i)
                if (c.contains("velocity." + params[i].name)) ck.velocity[i] = c.tensor("velocity." + params[i].name);
        }
        const auto& lists = c.meta.at("lists");
        auto read_list = [&c, &lists](const std::string& prefix) {
            std::vector<Tensor> out;
            const auto n = lists.at(prefix).get<std::size_t>();
            for (std::size_t k = 0; k < n; ++k) out.push_back(c.tensor(prefix + "." + std::to_string(k)));
            return out;
        };
        ck.pretrain_binary = read_list("pretrain_binary");
        ck.prev_binary = read_list("prev_binary");
        ck.frozen_labels = read_list("frozen_labels");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint metadata: ") + e.what(), 10);
    }
    return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { io::write_file(path, to_container()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    return from_container(io::read_file(path, io::kCheckpointMagic));
}

Checkpoint init_checkpoint(const ModelSpec& spec, const TrainConfig& cfg) {
    cfg.validate();
    Checkpoint ck;
    ck.phase = Phase::pretrain;
    ck.seed = cfg.seed;
    auto rng = data::epoch_rng(cfg.seed, 0, kInitStream);
    ck.model = Model<float>::init(spec, rng);
    ck.model.scale_mode = cfg.scale_mode;
    ck.prev_binary = ck.binary_weights();
    ck.config = cfg.to_json();
    return ck;
}

Checkpoint pretrain_baseline(const ModelSpec& spec, const data::Dataset& train, const TrainConfig& cfg,
                             const TrainHooks& hooks) {
    auto ck = init_checkpoint(spec, cfg);
    train_epochs(ck, train, cfg, hooks);
    return ck;
}

Checkpoint start_finetune(const Checkpoint& pretrained, Phase phase, const data::Dataset& train,
                          const TrainConfig& cfg) {
    if (pretrained.phase != Phase::pretrain)
        throw ValueError("fine-tuning must start from a pretrain checkpoint, got phase " + to_string(pretrained.phase));
    if (phase == Phase::pretrain) throw ValueError("start_finetune: target phase must be a fine-tune phase");
    cfg.validate();
    check_data(pretrained, train);
    Checkpoint ck = pretrained;
    ck.phase = phase;
    ck.epoch = 0;
    ck.seed = cfg.seed;
    ck.velocity.clear();
    ck.pretrain_binary.clear();
    for (std::size_t i : ck.model.spec.quantized_layers()) ck.pretrain_binary.push_back(sign(ck.model.layers[i].weight));
    ck.frozen_labels = ck.pretrain_binary;

    if (phase == Phase::finetune_lns) {
        auto rng = data::epoch_rng(cfg.seed, 0, kMappingStream);
        WarmStartOptions ws;
        ws.epochs = cfg.lr == 0.0 ? 0 : cfg.warm_start_epochs;
        ws.steps_per_epoch = static_cast<int>((train.size() + cfg.batch_size - 1) / cfg.batch_size);
        ws.lr = cfg.warm_start_lr > 0 ? cfg.warm_start_lr : cfg.lr;
        ws.momentum = cfg.momentum;
        ws.rates = cfg.rates;
        ws.reduction = cfg.reduction;
        const auto q = ck.model.spec.quantized_layers();
        for (std::size_t k = 0; k < q.size(); ++k) {
            auto& layer = ck.model.layers[q[k]];
            layer.mapping = MappingNet<float>::passthrough(layer.weight, rng);
            warm_start(*layer.mapping, layer.weight, ck.pretrain_binary[k], ws);
        }
    } else {
        for (auto& layer : ck.model.layers) layer.mapping.reset();
    }
    ck.prev_binary = ck.binary_weights();
    ck.config = cfg.to_json();
    return ck;
}

Checkpoint lns_finetune(const Checkpoint& start, const data::Dataset& train, const TrainConfig& cfg,
                        const TrainHooks& hooks) {
    Checkpoint ck;
    if (start.phase == Phase::pretrain)
        ck = start_finetune(start, Phase::finetune_lns, train, cfg);
    else if (start.phase == Phase::finetune_lns)
        ck = start;
    else
        throw ValueError("lns_finetune: cannot continue a " + to_string(start.phase) + " checkpoint");
    train_epochs(ck, train, cfg, hooks);
    return ck;
}

Checkpoint simple_finetune(const Checkpoint& start, const data::Dataset& train, const TrainConfig& cfg,
                           const TrainHooks& hooks) {
    Checkpoint ck;
    if (start.phase == Phase::pretrain)
        ck = start_finetune(start, Phase::finetune_simple, train, cfg);
    else if (start.phase == Phase::finetune_simple)
        ck = start;
    else
        throw ValueError("simple_finetune: cannot continue a " + to_string(start.phase) + " checkpoint");
    train_epochs(ck, train, cfg, hooks);
    return ck;
}

void train_epochs(Checkpoint& ck, const data::Dataset& train, const TrainConfig& cfg, const TrainHooks& hooks) {
    using clock = std::chrono::steady_clock;
    cfg.validate();
    check_data(ck, train);
    if (ck.phase == Phase::finetune_lns) {
        const auto missing = quantized_without_mapping(ck.model);
        if (!missing.empty())
            throw ValueError("quantized layer " + std::to_string(missing.front()) + " has no mapping network");
        if (cfg.labels == LabelMode::frozen && ck.frozen_labels.size() != ck.model.spec.quantized_layers().size())
            throw ValueError("checkpoint carries no frozen noisy labels");
    }
    const auto [h, w] = std::pair{ck.model.spec.height, ck.model.spec.width};
    cfg.augment.validate(h, w);
    if (cfg.augment.crop != 0 && (cfg.augment.crop != h || cfg.augment.crop != w))
        throw ConfigError("crop", 0, "must equal the model input size");
    const bool augment = !cfg.augment.is_identity(h, w);
    const bool finetune = ck.phase != Phase::pretrain;
    auto pretrain_flip = [&](MetricsRecord& m, const std::vector<Tensor>& now) {
        if (cfg.flip_vs_pretrain) m.flip_rate_pretrain = finetune ? flip_rate(ck.pretrain_binary, now) : 0.0;
    };

    if (ck.epoch == 0 && hooks.on_record) {
        const auto start = clock::now();
        const auto now = ck.binary_weights();
        const double flip = finetune ? flip_rate(ck.pretrain_binary, now) : 0.0;
        const auto* d = hooks.test ? hooks.test : &train;
        auto m = eval_record(ck, *d, hooks.test ? "test" : "train", cfg, flip, cfg.lr_at(1), hooks.eval_threads);
        pretrain_flip(m, now);
        m.wall_seconds = std::chrono::duration<double>(clock::now() - start).count();
        hooks.on_record(m);
    }

    int nonfinite = 0;
    for (int epoch = ck.epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = clock::now();
        const auto last_good = std::make_shared<const Checkpoint>(ck);
        const double lr = cfg.lr_at(epoch);
        const auto batches = data::batch_indices(train.size(), cfg.batch_size, cfg.shuffle, ck.seed, epoch);
        auto rng = data::epoch_rng(ck.seed, epoch, kAugmentStream);

        double cls = 0, aux = 0, total = 0;
        std::size_t correct = 0, seen = 0, steps = 0;
        for (const auto& idx : batches) {
            const auto batch = data::gather(train, idx, augment ? &cfg.augment : nullptr, &rng);
            const auto bn = bn_states(ck.model);
            const auto r = train_step(ck, batch, cfg, lr);
            if (!r.finite) {
                restore_bn(ck.model, bn);
                if (++nonfinite >= kMaxNonFiniteSteps)
                    throw TrainingDiverged("loss was non-finite for " + std::to_string(kMaxNonFiniteSteps) +
                                               " consecutive steps in epoch " + std::to_string(epoch),
                                           last_good);
                continue;
            }
            nonfinite = 0;
            const double n = static_cast<double>(idx.size());
            cls += r.cls * n;
            aux += r.aux * n;
            total += r.total * n;
            correct += r.correct;
            seen += idx.size();
            ++steps;
        }
        ck.epoch = epoch;
        const auto now = ck.binary_weights();
        const double flip = flip_rate(ck.prev_binary, now);
        ck.prev_binary = now;
        ck.config = cfg.to_json();

        if (hooks.on_record) {
            MetricsRecord m;
            m.epoch = epoch;
            m.split = "train";
            const double denom = seen == 0 ? 1.0 : static_cast<double>(seen);
            m.cls_loss = cls / denom;
            m.aux_loss = aux / denom;
            m.total_loss = total / denom;
            m.accuracy = static_cast<double>(correct) / denom;
            m.flip_rate = flip;
            m.lr = lr;
            pretrain_flip(m, now);
            m.wall_seconds = std::chrono::duration<double>(clock::now() - start).count();
            hooks.on_record(m);
            if (hooks.test) {
                const auto t0 = clock::now();
                auto t = eval_record(ck, *hooks.test, "test", cfg, flip, lr, hooks.eval_threads);
                pretrain_flip(t, now);
                t.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
                hooks.on_record(t);
            }
        }
        if (hooks.on_epoch_end) hooks.on_epoch_end(ck);
    }
}

EvalResult evaluate(const Checkpoint& ck, const data::Dataset& data, std::size_t threads) {
    return evaluate(export_binary(ck), data, 256, threads);
}

InferenceModel export_binary(const Checkpoint& ck) {
    if (ck.phase == Phase::finetune_lns) {
        const auto missing = quantized_without_mapping(ck.model);
        if (!missing.empty())
            throw ValueError("quantized layer " + std::to_string(missing.front()) + " has no mapping network");
    }
    return InferenceModel::from_model(ck.model, ck.source());
}

double aux_loss(const Checkpoint& ck, const TrainConfig& cfg) {
    if (ck.phase != Phase::finetune_lns) return 0.0;
    double s = 0;
    const auto q = ck.model.spec.quantized_layers();
    for (std::size_t k = 0; k < q.size(); ++k) {
        const auto& layer = ck.model.layers[q[k]];
        if (!layer.mapping) continue;
        const auto labels = cfg.labels == LabelMode::frozen ? ck.frozen_labels.at(k) : sign(layer.weight);
        s += layer_loss(mapping_predict(layer.weight, *layer.mapping), labels, cfg.rates, cfg.reduction);
    }
    return s;
}

}  // namespace lns
