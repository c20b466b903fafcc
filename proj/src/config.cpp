#include "lns/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "lns/error.hpp"

namespace lns {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct Ctx {
    std::string key;
    int line;

    [[noreturn]] void fail(const std::string& what) const { throw ConfigError(key, line, what); }

    double number(const std::string& v) const {
        double x = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc() || p != v.data() + v.size()) fail("expected a number, got '" + v + "'");
        return x;
    }

    long long integer(const std::string& v) const {
        long long x = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc() || p != v.data() + v.size()) fail("expected an integer, got '" + v + "'");
        return x;
    }

    std::size_t count(const std::string& v) const {
        const auto x = integer(v);
        if (x < 0) fail("must be >= 0, got " + v);
        return static_cast<std::size_t>(x);
    }

    bool boolean(const std::string& v) const {
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        fail("expected true or false, got '" + v + "'");
    }

    std::vector<int> int_list(const std::string& v) const {
        std::vector<int> out;
        for (const auto& s : split_list(v)) out.push_back(static_cast<int>(integer(s)));
        return out;
    }

    std::vector<float> float_list(const std::string& v) const {
        std::vector<float> out;
        for (const auto& s : split_list(v)) out.push_back(static_cast<float>(number(s)));
        if (out.empty()) fail("expected at least one value");
        return out;
    }
};

using Setter = std::function<void(ExperimentConfig&, const Ctx&, const std::string&, const std::filesystem::path&)>;

// Applies `f` to both phase configs.
template <typename F>
Setter both(F f) {
    return [f](ExperimentConfig& c, const Ctx& x, const std::string& v, const std::filesystem::path&) {
        f(c.pretrain, x, v);
        f(c.finetune, x, v);
    };
}

template <typename F>
Setter phase(TrainConfig ExperimentConfig::*which, F f) {
    return [which, f](ExperimentConfig& c, const Ctx& x, const std::string& v, const std::filesystem::path&) {
        f(c.*which, x, v);
    };
}

Setter path_setter(std::filesystem::path DataConfig::*field) {
    return [field](ExperimentConfig& c, const Ctx& x, const std::string& v, const std::filesystem::path& base) {
        if (v.empty()) x.fail("empty path");
        std::filesystem::path p(v);
        if (p.is_relative() && !base.empty()) p = base / p;
        c.data.*field = p.lexically_normal();
    };
}

void add_phase_keys(std::map<std::string, Setter>& s, const std::string& prefix, TrainConfig ExperimentConfig::*w) {
    s[prefix + ".lr"] = phase(w, [](TrainConfig& t, const Ctx& x, const std::string& v) { t.lr = x.number(v); });
    s[prefix + ".momentum"] =
        phase(w, [](TrainConfig& t, const Ctx& x, const std::string& v) { t.momentum = x.number(v); });
    s[prefix + ".weight_decay"] =
        phase(w, [](TrainConfig& t, const Ctx& x, const std::string& v) { t.weight_decay = x.number(v); });
    s[prefix + ".batch_size"] =
        phase(w, [](TrainConfig& t, const Ctx& x, const std::string& v) { t.batch_size = x.count(v); });
    s[prefix + ".epochs"] =
        phase(w, [](TrainConfig& t, const Ctx& x, const std::string& v) { t.epochs = static_cast<int>(x.integer(v)); });
    s[prefix + ".milestones"] =
        phase(w, [](TrainConfig& t, const Ctx& x, const std::string& v) { t.milestones = x.int_list(v); });
    s[prefix + ".lr_decay"] =
        phase(w, [](TrainConfig& t, const Ctx& x, const std::string& v) { t.lr_decay = x.number(v); });
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> s;
        s["lns.alpha"] = both([](TrainConfig& t, const Ctx& x, const std::string& v) { t.alpha = x.number(v); });
        s["lns.rho_pos"] =
            both([](TrainConfig& t, const Ctx& x, const std::string& v) { t.rates.rho_pos = x.number(v); });
        s["lns.rho_neg"] =
            both([](TrainConfig& t, const Ctx& x, const std::string& v) { t.rates.rho_neg = x.number(v); });
        s["lns.reduction"] = both([](TrainConfig& t, const Ctx& x, const std::string& v) {
            if (v == "mean")
                t.reduction = Reduction::mean;
            else if (v == "sum")
                t.reduction = Reduction::sum;
            else
                x.fail("expected mean or sum, got '" + v + "'");
        });
        s["lns.labels"] = both([](TrainConfig& t, const Ctx& x, const std::string& v) {
            if (v == "current")
                t.labels = LabelMode::current;
            else if (v == "frozen")
                t.labels = LabelMode::frozen;
            else
                x.fail("expected current or frozen, got '" + v + "'");
        });
        s["lns.warm_start_epochs"] = both([](TrainConfig& t, const Ctx& x, const std::string& v) {
            t.warm_start_epochs = static_cast<int>(x.integer(v));
        });
        s["lns.warm_start_lr"] =
            both([](TrainConfig& t, const Ctx& x, const std::string& v) { t.warm_start_lr = x.number(v); });

        add_phase_keys(s, "train", &ExperimentConfig::pretrain);
        add_phase_keys(s, "finetune", &ExperimentConfig::finetune);
        s["train.seed"] = both([](TrainConfig& t, const Ctx& x, const std::string& v) {
            const auto n = x.integer(v);
            if (n < 0) x.fail("must be >= 0");
            t.seed = static_cast<std::uint64_t>(n);
        });
        s["train.shuffle"] = both([](TrainConfig& t, const Ctx& x, const std::string& v) { t.shuffle = x.boolean(v); });
        s["train.scale_mode"] = both([](TrainConfig& t, const Ctx& x, const std::string& v) {
            if (v == "none")
                t.scale_mode = ScaleMode::none;
            else if (v == "layer_wise")
                t.scale_mode = ScaleMode::layer_wise;
            else
                x.fail("expected none or layer_wise, got '" + v + "'");
        });
        s["finetune.mode"] = [](ExperimentConfig& c, const Ctx& x, const std::string& v, const std::filesystem::path&) {
            if (v != "lns" && v != "simple") x.fail("expected lns or simple, got '" + v + "'");
            c.finetune_mode = v;
        };

        s["augment.pad"] =
            both([](TrainConfig& t, const Ctx& x, const std::string& v) { t.augment.pad = x.count(v); });
        s["augment.crop"] =
            both([](TrainConfig& t, const Ctx& x, const std::string& v) { t.augment.crop = x.count(v); });
        s["augment.hflip_prob"] =
            both([](TrainConfig& t, const Ctx& x, const std::string& v) { t.augment.hflip_prob = x.number(v); });
        s["metrics.flip_vs_pretrain"] =
            both([](TrainConfig& t, const Ctx& x, const std::string& v) { t.flip_vs_pretrain = x.boolean(v); });

        s["data.source"] = [](ExperimentConfig& c, const Ctx& x, const std::string& v, const std::filesystem::path&) {
            if (v != "idx" && v != "synth") x.fail("expected idx or synth, got '" + v + "'");
            c.data.source = v;
        };
        s["data.train_images"] = path_setter(&DataConfig::train_images);
        s["data.train_labels"] = path_setter(&DataConfig::train_labels);
        s["data.test_images"] = path_setter(&DataConfig::test_images);
        s["data.test_labels"] = path_setter(&DataConfig::test_labels);
        s["data.mean"] = [](ExperimentConfig& c, const Ctx& x, const std::string& v, const std::filesystem::path&) {
            c.data.norm.mean = x.float_list(v);
        };
        s["data.std"] = [](ExperimentConfig& c, const Ctx& x, const std::string& v, const std::filesystem::path&) {
            c.data.norm.std = x.float_list(v);
            for (float f : c.data.norm.std)
                if (!(f > 0)) x.fail("standard deviations must be > 0");
        };
        auto data_count = [](std::size_t DataConfig::*f) -> Setter {
            return [f](ExperimentConfig& c, const Ctx& x, const std::string& v, const std::filesystem::path&) {
                c.data.*f = x.count(v);
            };
        };
        s["data.limit_train"] = data_count(&DataConfig::limit_train);
        s["data.limit_test"] = data_count(&DataConfig::limit_test);
        s["data.classes"] = data_count(&DataConfig::classes);
        s["data.synth_train"] = data_count(&DataConfig::synth_train);
        s["data.synth_test"] = data_count(&DataConfig::synth_test);
        s["data.synth_size"] = data_count(&DataConfig::synth_size);
        s["data.synth_seed"] = [](ExperimentConfig& c, const Ctx& x, const std::string& v, const std::filesystem::path&) {
            c.data.synth_seed = x.count(v);
        };

        s["model.name"] = [](ExperimentConfig& c, const Ctx& x, const std::string& v, const std::filesystem::path&) {
            if (v != "bnn4" && v != "toy") x.fail("unknown model '" + v + "' (known: bnn4, toy)");
            c.model_name = v;
        };
        s["model.width"] = [](ExperimentConfig& c, const Ctx& x, const std::string& v, const std::filesystem::path&) {
            c.model_width = x.count(v);
            if (c.model_width == 0) x.fail("must be >= 1");
        };
        s["output.dir"] = [](ExperimentConfig& c, const Ctx& x, const std::string& v,
                             const std::filesystem::path& base) {
            if (v.empty()) x.fail("empty path");
            std::filesystem::path p(v);
            if (p.is_relative() && !base.empty()) p = base / p;
            c.output_dir = p.lexically_normal();
        };
        return s;
    }();
    return table;
}

// Maps a TrainConfig field name to its config key.
std::string key_for_field(const std::string& field, const std::string& prefix) {
    if (field == "alpha" || field == "rho_pos" || field == "rho_neg" || field == "warm_start_epochs" ||
        field == "warm_start_lr")
        return "lns." + field;
    if (field == "hflip_prob") return "augment.hflip_prob";
    return prefix + "." + field;
}

void validate_experiment(const ExperimentConfig& c, const std::map<std::string, int>& lines) {
    auto line_of = [&lines](const std::string& k) {
        const auto it = lines.find(k);
        return it == lines.end() ? 0 : it->second;
    };
    auto fail = [&](const std::string& k, const std::string& what) { throw ConfigError(k, line_of(k), what); };

    const auto& f = c.finetune;
    if (!(f.alpha >= 0)) fail("lns.alpha", "must be >= 0");
    if (!(f.rates.rho_pos >= 0 && f.rates.rho_pos < 1)) fail("lns.rho_pos", "must lie in [0, 1)");
    if (!(f.rates.rho_neg >= 0 && f.rates.rho_neg < 1)) fail("lns.rho_neg", "must lie in [0, 1)");
    if (f.rates.rho_pos + f.rates.rho_neg >= 1) {
        const std::string k = line_of("lns.rho_neg") > line_of("lns.rho_pos") ? "lns.rho_neg" : "lns.rho_pos";
        fail(k, "lns.rho_pos + lns.rho_neg must be < 1");
    }
    if (!(c.pretrain.lr > 0)) fail("train.lr", "must be > 0");
    if (!(c.finetune.lr > 0)) fail("finetune.lr", "must be > 0");

    for (const auto& [t, prefix] : {std::pair{&c.pretrain, std::string("train")}, {&c.finetune, "finetune"}}) {
        try {
            t->validate();
        } catch (const ConfigError& e) {
            const auto k = key_for_field(e.key(), prefix);
            const std::string what = e.what();
            fail(k, what.substr(what.find(": ") + 2));
        }
    }
    if (c.data.classes < 2) fail("data.classes", "must be >= 2");
    if (c.data.source == "idx") {
        for (const auto& [k, p] : {std::pair{"data.train_images", &c.data.train_images},
                                   {"data.train_labels", &c.data.train_labels},
                                   {"data.test_images", &c.data.test_images},
                                   {"data.test_labels", &c.data.test_labels}})
            if (!p->empty() && !std::filesystem::exists(*p)) fail(k, "file '" + p->string() + "' does not exist");
        if (c.data.train_images.empty() != c.data.train_labels.empty())
            fail(c.data.train_images.empty() ? "data.train_images" : "data.train_labels",
                 "train images and labels must be given together");
        if (c.data.test_images.empty() != c.data.test_labels.empty())
            fail(c.data.test_images.empty() ? "data.test_images" : "data.test_labels",
                 "test images and labels must be given together");
    } else if (c.data.synth_size < 8) {
        fail("data.synth_size", "must be >= 8");
    }
}

std::string num(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename V>
std::string join(const std::vector<V>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        if constexpr (std::is_floating_point_v<V>)
            s += num(v[i]);
        else
            s += std::to_string(v[i]);
    }
    return s;
}

}  // namespace

ExperimentConfig parse_config_text(std::string_view text, const std::filesystem::path& base_dir) {
    ExperimentConfig cfg;
    std::map<std::string, int> lines;
    std::string section;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        const auto s = trim(raw);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError(s, line, "unterminated section header");
            section = trim(std::string_view(s).substr(1, s.size() - 2));
            if (section.empty()) throw ConfigError(s, line, "empty section name");
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(s, line, "expected 'key = value'");
        std::string key = trim(std::string_view(s).substr(0, eq));
        if (key.empty()) throw ConfigError(s, line, "missing key");
        if (!section.empty()) key = section + "." + key;
        const std::string value = unquote(trim(std::string_view(s).substr(eq + 1)));
        const auto it = setters().find(key);
        if (it == setters().end()) throw ConfigError(key, line, "unknown key");
        if (lines.count(key)) throw ConfigError(key, line, "duplicate key (first set on line " +
                                                               std::to_string(lines[key]) + ")");
        lines[key] = line;
        if (value.empty()) throw ConfigError(key, line, "missing value");
        it->second(cfg, Ctx{key, line}, value, base_dir);
    }
    validate_experiment(cfg, lines);
    return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), std::filesystem::absolute(path).parent_path());
}

std::string echo_config(const ExperimentConfig& c) {
    std::ostringstream o;
    const auto& f = c.finetune;
    const auto& p = c.pretrain;
    o << "lns.alpha = " << num(f.alpha) << "\n";
    o << "lns.rho_pos = " << num(f.rates.rho_pos) << "\n";
    o << "lns.rho_neg = " << num(f.rates.rho_neg) << "\n";
    o << "lns.reduction = " << (f.reduction == Reduction::mean ? "mean" : "sum") << "\n";
    o << "lns.labels = " << (f.labels == LabelMode::current ? "current" : "frozen") << "\n";
    o << "lns.warm_start_epochs = " << f.warm_start_epochs << "\n";
    o << "lns.warm_start_lr = " << num(f.warm_start_lr) << "\n";
    for (const auto& [t, prefix] : {std::pair{&p, "train"}, {&f, "finetune"}}) {
        o << prefix << ".lr = " << num(t->lr) << "\n";
        o << prefix << ".momentum = " << num(t->momentum) << "\n";
        o << prefix << ".weight_decay = " << num(t->weight_decay) << "\n";
        o << prefix << ".batch_size = " << t->batch_size << "\n";
        o << prefix << ".epochs = " << t->epochs << "\n";
        if (!t->milestones.empty()) o << prefix << ".milestones = " << join(t->milestones) << "\n";
        o << prefix << ".lr_decay = " << num(t->lr_decay) << "\n";
    }
    o << "finetune.mode = " << c.finetune_mode << "\n";
    o << "train.seed = " << f.seed << "\n";
    o << "train.shuffle = " << (f.shuffle ? "true" : "false") << "\n";
    o << "train.scale_mode = " << (f.scale_mode == ScaleMode::none ? "none" : "layer_wise") << "\n";
    o << "augment.pad = " << f.augment.pad << "\n";
    o << "augment.crop = " << f.augment.crop << "\n";
    o << "augment.hflip_prob = " << num(f.augment.hflip_prob) << "\n";
    o << "metrics.flip_vs_pretrain = " << (f.flip_vs_pretrain ? "true" : "false") << "\n";
    o << "data.source = " << c.data.source << "\n";
    for (const auto& [k, v] : {std::pair{"data.train_images", &c.data.train_images},
                               {"data.train_labels", &c.data.train_labels},
                               {"data.test_images", &c.data.test_images},
                               {"data.test_labels", &c.data.test_labels}})
        if (!v->empty()) o << k << " = " << v->string() << "\n";
    o << "data.mean = " << join(c.data.norm.mean) << "\n";
    o << "data.std = " << join(c.data.norm.std) << "\n";
    o << "data.limit_train = " << c.data.limit_train << "\n";
    o << "data.limit_test = " << c.data.limit_test << "\n";
    o << "data.classes = " << c.data.classes << "\n";
    o << "data.synth_train = " << c.data.synth_train << "\n";
    o << "data.synth_test = " << c.data.synth_test << "\n";
    o << "data.synth_size = " << c.data.synth_size << "\n";
    o << "data.synth_seed = " << c.data.synth_seed << "\n";
    o << "model.name = " << c.model_name << "\n";
    o << "model.width = " << c.model_width << "\n";
    o << "output.dir = " << c.output_dir.string() << "\n";
    return o.str();
}

std::pair<data::Dataset, data::Dataset> load_datasets(const DataConfig& cfg) {
    data::Dataset train, test;
    if (cfg.source == "synth") {
        const auto a = data::synth_digits(cfg.synth_train, cfg.synth_size, cfg.synth_seed);
        const auto b = data::synth_digits(cfg.synth_test, cfg.synth_size, cfg.synth_seed + 1);
        train = data::to_dataset(a.images, a.labels, cfg.norm, cfg.classes, "train");
        test = data::to_dataset(b.images, b.labels, cfg.norm, cfg.classes, "test");
    } else {
        if (cfg.train_images.empty()) throw ConfigError("data.train_images", 0, "not set");
        train = data::load_idx(cfg.train_images, cfg.train_labels, cfg.norm, cfg.classes, "train");
        if (!cfg.test_images.empty())
            test = data::load_idx(cfg.test_images, cfg.test_labels, cfg.norm, cfg.classes, "test");
    }
    if (cfg.limit_train) train = train.head(cfg.limit_train);
    if (cfg.limit_test && test.size()) test = test.head(cfg.limit_test);
    return {std::move(train), std::move(test)};
}

}  // namespace lns
