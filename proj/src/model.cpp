#include "lns/model.hpp"

#include <cmath>

namespace lns {

std::string to_string(fn::Activation a) {
    switch (a) {
        case fn::Activation::none: return "none";
        case fn::Activation::relu: return "relu";
        case fn::Activation::hardtanh: return "hardtanh";
        case fn::Activation::prelu: return "prelu";
    }
    return "none";
}

fn::Activation activation_from_string(const std::string& s) {
    if (s == "none") return fn::Activation::none;
    if (s == "relu") return fn::Activation::relu;
    if (s == "hardtanh") return fn::Activation::hardtanh;
    if (s == "prelu") return fn::Activation::prelu;
    throw ValueError("unknown activation '" + s + "'");
}

void ModelSpec::validate() const {
    if (layers.empty()) throw ValueError("model '" + name + "' has no layers");
    if (height == 0 || width == 0 || channels == 0) throw ValueError("model '" + name + "' has no input shape");
    if (layers.back().kind != LayerKind::linear) throw ValueError("model must end with a linear classifier");
    if (layers.front().kind != LayerKind::conv) throw ValueError("model must start with a convolution");
    if (layers.front().quantized) throw ValueError("the first convolution must stay full precision");
    if (layers.back().quantized) throw ValueError("the final classifier must stay full precision");
    std::size_t c = channels, h = height, w = width;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& L = layers[i];
        if (L.out == 0) throw ValueError("layer " + std::to_string(i) + " has no outputs");
        if (L.kind == LayerKind::linear) {
            if (i + 1 != layers.size()) throw ValueError("only the last layer may be linear");
            if (L.in != c * h * w)
                throw ShapeError("layer " + std::to_string(i) + ": linear expects " + std::to_string(L.in) +
                                 " features, previous layer yields " + std::to_string(c * h * w));
            if (L.out != classes) throw ShapeError("classifier outputs must equal the class count");
            if (L.activation == fn::Activation::prelu) throw ValueError("prelu is not supported on the classifier");
            continue;
        }
        if (L.in != c)
            throw ShapeError("layer " + std::to_string(i) + ": expects " + std::to_string(L.in) + " channels, gets " +
                             std::to_string(c));
        const auto g = fn::ConvGeometry::make(Shape{1, c, h, w}, Shape{L.out, L.in, L.kernel, L.kernel}, L.stride,
                                              L.padding);
        c = L.out;
        h = g.oh;
        w = g.ow;
    }
}

std::pair<std::size_t, std::size_t> ModelSpec::output_hw(std::size_t i) const {
    std::size_t h = height, w = width;
    for (std::size_t j = 0; j <= i && j < layers.size(); ++j) {
        const auto& L = layers[j];
        if (L.kind != LayerKind::conv) break;
        h = (h + 2 * L.padding - L.kernel) / L.stride + 1;
        w = (w + 2 * L.padding - L.kernel) / L.stride + 1;
    }
    return {h, w};
}

std::vector<std::size_t> ModelSpec::quantized_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].quantized) out.push_back(i);
    return out;
}

nlohmann::json ModelSpec::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["channels"] = channels;
    j["height"] = height;
    j["width"] = width;
    j["classes"] = classes;
    j["layers"] = nlohmann::json::array();
    for (const auto& L : layers)
        j["layers"].push_back({{"kind", L.kind == LayerKind::conv ? "conv" : "linear"},
                               {"in", L.in},
                               {"out", L.out},
                               {"kernel", L.kernel},
                               {"stride", L.stride},
                               {"padding", L.padding},
                               {"activation", to_string(L.activation)},
                               {"batch_norm", L.batch_norm},
                               {"quantized", L.quantized}});
    return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.name = j.at("name").get<std::string>();
    s.channels = j.at("channels").get<std::size_t>();
    s.height = j.at("height").get<std::size_t>();
    s.width = j.at("width").get<std::size_t>();
    s.classes = j.at("classes").get<std::size_t>();
    for (const auto& l : j.at("layers")) {
        LayerSpec L;
        const auto kind = l.at("kind").get<std::string>();
        if (kind != "conv" && kind != "linear") throw ValueError("unknown layer kind '" + kind + "'");
        L.kind = kind == "conv" ? LayerKind::conv : LayerKind::linear;
        L.in = l.at("in").get<std::size_t>();
        L.out = l.at("out").get<std::size_t>();
        L.kernel = l.at("kernel").get<std::size_t>();
        L.stride = l.at("stride").get<std::size_t>();
        L.padding = l.at("padding").get<std::size_t>();
        L.activation = activation_from_string(l.at("activation").get<std::string>());
        L.batch_norm = l.at("batch_norm").get<bool>();
        L.quantized = l.at("quantized").get<bool>();
        s.layers.push_back(L);
    }
    s.validate();
    return s;
}

namespace {

ModelSpec four_layer(std::string name, std::size_t channels, std::size_t height, std::size_t width,
                     std::size_t classes, std::size_t w1, std::size_t w2, std::size_t w3, std::size_t s2,
                     std::size_t s3) {
    ModelSpec s;
    s.name = std::move(name);
    s.channels = channels;
    s.height = height;
    s.width = width;
    s.classes = classes;
    // Output sizes must divide exactly, so a stride-2 layer on an even input
    // uses a 4x4 kernel instead of 3x3.
    auto kernel = [&s](std::size_t stride) {
        const auto [h, w] = s.output_hw(s.layers.size() - 1);
        return stride == 2 && (h % 2 == 0 || w % 2 == 0) ? std::size_t{4} : std::size_t{3};
    };
    s.layers.push_back({LayerKind::conv, channels, w1, 3, 1, 1, fn::Activation::hardtanh, true, false});
    s.layers.push_back({LayerKind::conv, w1, w2, kernel(s2), s2, 1, fn::Activation::hardtanh, true, true});
    s.layers.push_back({LayerKind::conv, w2, w3, kernel(s3), s3, 1, fn::Activation::relu, true, true});
    const auto [h, w] = s.output_hw(2);
    s.layers.push_back({LayerKind::linear, w3 * h * w, classes, 1, 1, 0, fn::Activation::none, false, false});
    s.validate();
    return s;
}

}  // namespace

ModelSpec ModelSpec::bnn4(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes,
                          std::size_t base_width) {
    return four_layer("bnn4", channels, height, width, classes, base_width, 2 * base_width, 2 * base_width, 2, 2);
}

ModelSpec ModelSpec::toy(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes) {
    return four_layer("toy", channels, height, width, classes, 2, 4, 4, 2, 1);
}

ModelSpec ModelSpec::by_name(const std::string& name, std::size_t channels, std::size_t height, std::size_t width,
                             std::size_t classes, std::size_t base_width) {
    if (name == "bnn4") return bnn4(channels, height, width, classes, base_width);
    if (name == "toy") return toy(channels, height, width, classes);
    throw ValueError("unknown model '" + name + "' (known: bnn4, toy)");
}

template <typename T>
Model<T> Model<T>::init(const ModelSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    Model m;
    m.spec = spec;
    auto uniform = [&rng](BasicTensor<T>& t, double bound) {
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : t.data()) v = static_cast<T>(u(rng));
    };
    for (const auto& L : spec.layers) {
        LayerParams<T> p;
        if (L.kind == LayerKind::conv) {
            p.weight = BasicTensor<T>(Shape{L.out, L.in, L.kernel, L.kernel});
            uniform(p.weight, 1.0 / std::sqrt(static_cast<double>(L.in * L.kernel * L.kernel)));
        } else {
            p.weight = BasicTensor<T>(Shape{L.out, L.in});
            p.bias = BasicTensor<T>(Shape{L.out});
            const double bound = 1.0 / std::sqrt(static_cast<double>(L.in));
            uniform(p.weight, bound);
            uniform(p.bias, bound);
        }
        if (L.batch_norm) {
            p.gamma = BasicTensor<T>(Shape{L.out}, T{1});
            p.beta = BasicTensor<T>(Shape{L.out});
            p.bn = fn::BatchNormState<T>(L.out);
        }
        if (L.activation == fn::Activation::prelu) p.slope = BasicTensor<T>(Shape{L.out}, T(0.25));
        m.layers.push_back(std::move(p));
    }
    return m;
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::params() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& p = layers[i];
        const std::string pre = "layer" + std::to_string(i) + ".";
        out.push_back({pre + "weight", &p.weight, false});
        if (!p.bias.empty()) out.push_back({pre + "bias", &p.bias, false});
        if (!p.gamma.empty()) {
            out.push_back({pre + "bn_gamma", &p.gamma, false});
            out.push_back({pre + "bn_beta", &p.beta, false});
        }
        if (!p.slope.empty()) out.push_back({pre + "prelu_slope", &p.slope, false});
        if (p.mapping) {
            auto mp = p.mapping->params();
            for (std::size_t k = 0; k < mp.size(); ++k)
                out.push_back({pre + "map." + MappingNet<T>::kParamNames[k], mp[k], true});
        }
    }
    return out;
}

template <typename T>
std::vector<std::pair<std::string, const BasicTensor<T>*>> Model<T>::params() const {
    std::vector<std::pair<std::string, const BasicTensor<T>*>> out;
    for (const auto& r : const_cast<Model*>(this)->params()) out.emplace_back(r.name, r.tensor);
    return out;
}

template <typename T>
bool Model<T>::has_mapping() const {
    for (const auto& l : layers)
        if (l.mapping) return true;
    return false;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
    Model<U> m;
    m.spec = spec;
    m.scale_mode = scale_mode;
    for (const auto& l : layers) {
        LayerParams<U> p;
        p.weight = l.weight.template cast<U>();
        p.bias = l.bias.template cast<U>();
        p.gamma = l.gamma.template cast<U>();
        p.beta = l.beta.template cast<U>();
        p.slope = l.slope.template cast<U>();
        p.bn.running_mean = l.bn.running_mean.template cast<U>();
        p.bn.running_var = l.bn.running_var.template cast<U>();
        if (l.mapping) p.mapping = l.mapping->template cast<U>();
        m.layers.push_back(std::move(p));
    }
    return m;
}

template <typename T>
BoundModel<T> BoundModel<T>::bind(ag::Tape<T>& tape, Model<T>& model, bool train_main, bool train_mapping) {
    BoundModel b;
    for (auto& p : model.layers) {
        Layer l;
        auto put = [&](const BasicTensor<T>& t, bool grad) {
            auto v = tape.leaf(t, grad);
            b.vars.push_back(v);
            return v;
        };
        l.weight = put(p.weight, train_main);
        if (!p.bias.empty()) l.bias = put(p.bias, train_main);
        if (!p.gamma.empty()) {
            l.gamma = put(p.gamma, train_main);
            l.beta = put(p.beta, train_main);
        }
        if (!p.slope.empty()) l.slope = put(p.slope, train_main);
        if (p.mapping) {
            MappingVars<T> mv;
            auto mp = p.mapping->params();
            for (std::size_t k = 0; k < mp.size(); ++k) mv.p[k] = put(*mp[k], train_mapping);
            l.mapping = mv;
        }
        b.layers.push_back(l);
    }
    return b;
}

template <typename T>
ForwardResult<T> forward(Model<T>& model, const BoundModel<T>& bound, ag::Var<T> input,
                         const ForwardOptions<T>& options) {
    ForwardResult<T> r;
    ag::Var<T> x = input;
    std::size_t qi = 0;
    ag::RegionFreeze<T>* freeze = options.linearization ? &options.linearization->regions : nullptr;
    for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
        const auto& L = model.spec.layers[i];
        auto& p = model.layers[i];
        const auto& b = bound.layers[i];
        ag::Var<T> y;
        if (L.kind == LayerKind::linear) {
            if (x.value().rank() != 2) x = ag::reshape(x, Shape{x.shape()[0], x.value().size() / x.shape()[0]});
            y = ag::linear(x, b.weight, b.bias);
        } else if (L.quantized) {
            const auto xb = ag::sign_ste(x, options.linearization);
            ag::Var<T> wq;
            if (options.source == WeightSource::mapping) {
                if (!b.mapping) throw ValueError("layer " + std::to_string(i) + " has no mapping network");
                const auto qhat = mapping_forward(b.weight, *b.mapping, freeze);
                wq = mapping_binarize(qhat, options.linearization);
                const auto labels = options.frozen_labels ? options.frozen_labels->at(qi) : sign(p.weight);
                r.aux_losses.push_back(ag::corrected_layer_loss(qhat, labels, options.rates, options.reduction));
            } else {
                wq = ag::sign_ste(b.weight, options.linearization);
            }
            y = ag::conv2d(xb, wq, L.stride, L.padding, T{-1});
            if (model.scale_mode == ScaleMode::layer_wise)
                y = ag::scale(y, static_cast<T>(layer_scale(p.weight).value));
            ++qi;
        } else {
            y = ag::conv2d(x, b.weight, L.stride, L.padding);
        }
        if (L.batch_norm) {
            const bool stats = options.mode == ag::Mode::eval || options.update_running_stats;
            y = ag::batch_norm(y, b.gamma, b.beta, stats ? &p.bn : nullptr, options.mode);
        }
        if (L.activation == fn::Activation::prelu)
            y = ag::activation(y, L.activation, std::optional<ag::Var<T>>(b.slope), freeze);
        else
            y = ag::activation(y, L.activation, std::optional<ag::Var<T>>(), freeze);
        x = y;
    }
    r.logits = x;
    return r;
}

template <typename T>
ag::Var<T> total_loss(ag::Var<T> cls, const std::vector<ag::Var<T>>& aux, T alpha) {
    if (alpha < T{0}) throw ValueError("total_loss: alpha must be >= 0");
    if (aux.empty()) return cls;
    ag::Var<T> s = aux.front();
    for (std::size_t i = 1; i < aux.size(); ++i) s = ag::add(s, aux[i]);
    return ag::add(cls, ag::scale(s, alpha));
}

double total_loss(double cls, const std::vector<double>& aux, double alpha) {
    if (alpha < 0) throw ValueError("total_loss: alpha must be >= 0");
    double s = 0;
    for (double a : aux) s += a;
    return cls + alpha * s;
}

template <typename T>
BasicTensor<T> binary_weights(const LayerParams<T>& layer, WeightSource source) {
    if (source == WeightSource::mapping && layer.mapping) return sign(mapping_predict(layer.weight, *layer.mapping));
    return sign(layer.weight);
}

template struct Model<float>;
template struct Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template struct BoundModel<float>;
template struct BoundModel<double>;
template ForwardResult<float> forward(Model<float>&, const BoundModel<float>&, ag::Var<float>,
                                      const ForwardOptions<float>&);
template ForwardResult<double> forward(Model<double>&, const BoundModel<double>&, ag::Var<double>,
                                       const ForwardOptions<double>&);
template ag::Var<float> total_loss(ag::Var<float>, const std::vector<ag::Var<float>>&, float);
template ag::Var<double> total_loss(ag::Var<double>, const std::vector<ag::Var<double>>&, double);
template BasicTensor<float> binary_weights(const LayerParams<float>&, WeightSource);
template BasicTensor<double> binary_weights(const LayerParams<double>&, WeightSource);

}  // namespace lns
