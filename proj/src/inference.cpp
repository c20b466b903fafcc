#include "lns/inference.hpp"

#include <cstdlib>
#include <string>
#include <thread>

#include "lns/functional.hpp"

namespace lns {

namespace {

std::string layer_key(std::size_t i, const char* what) { return "layer" + std::to_string(i) + "." + what; }

}  // namespace

InferenceModel InferenceModel::from_model(const Model<float>& model, WeightSource source) {
    InferenceModel out;
    out.spec = model.spec;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& L = model.spec.layers[i];
        const auto& p = model.layers[i];
        InferenceLayer il;
        if (L.quantized) {
            il.bits = BitTensor::pack(binary_weights(p, source));
            if (model.scale_mode == ScaleMode::layer_wise) il.scale = static_cast<float>(layer_scale(p.weight).value);
        } else {
            il.weight = p.weight;
            il.bias = p.bias;
        }
        if (L.batch_norm) {
            il.gamma = p.gamma;
            il.beta = p.beta;
            il.running_mean = p.bn.running_mean;
            il.running_var = p.bn.running_var;
        }
        il.slope = p.slope;
        out.layers.push_back(std::move(il));
    }
    return out;
}

Tensor InferenceModel::logits(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != spec.channels || images.dim(2) != spec.height ||
        images.dim(3) != spec.width)
        throw ShapeError("inference: expected images [n, " + std::to_string(spec.channels) + ", " +
                         std::to_string(spec.height) + ", " + std::to_string(spec.width) + "], got " +
                         images.shape().str());
    Tensor x = images;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& L = spec.layers[i];
        const auto& il = layers[i];
        Tensor y;
        if (L.kind == LayerKind::linear) {
            if (x.rank() != 2) x = x.reshaped(Shape{x.dim(0), x.size() / x.dim(0)});
            y = fn::linear(x, il.weight, il.bias);
        } else if (L.quantized) {
            const auto acc = binary_conv2d(BitTensor::pack(sign(x)), il.bits, L.stride, L.padding);
            y = Tensor(acc.shape());
            for (std::size_t k = 0; k < acc.size(); ++k) y[k] = static_cast<float>(acc[k]) * il.scale;
        } else {
            y = fn::conv2d(x, il.weight, L.stride, L.padding);
        }
        if (L.batch_norm) {
            fn::BatchNormState<float> st;
            st.running_mean = il.running_mean;
            st.running_var = il.running_var;
            y = fn::batch_norm_eval(y, il.gamma, il.beta, st);
        }
        x = fn::activate(y, L.activation, il.slope.empty() ? nullptr : &il.slope);
    }
    return x;
}

io::Container InferenceModel::to_container() const {
    io::Container c;
    c.magic = std::string(io::kExportMagic);
    c.meta["model"] = spec.to_json();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& L = spec.layers[i];
        const auto& il = layers[i];
        if (L.quantized) {
            c.add(layer_key(i, "weight_bits"), il.bits);
            c.add(layer_key(i, "scale"), Tensor(Shape{1}, il.scale));
        } else {
            c.add(layer_key(i, "weight"), il.weight);
            if (!il.bias.empty()) c.add(layer_key(i, "bias"), il.bias);
        }
        if (L.batch_norm) {
            c.add(layer_key(i, "bn_gamma"), il.gamma);
            c.add(layer_key(i, "bn_beta"), il.beta);
            c.add(layer_key(i, "bn_running_mean"), il.running_mean);
            c.add(layer_key(i, "bn_running_var"), il.running_var);
        }
        if (!il.slope.empty()) c.add(layer_key(i, "prelu_slope"), il.slope);
    }
    return c;
}

InferenceModel InferenceModel::from_container(const io::Container& c) {
    InferenceModel m;
    m.spec = ModelSpec::from_json(c.meta.at("model"));
    for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
        const auto& L = m.spec.layers[i];
        InferenceLayer il;
        if (L.quantized) {
            il.bits = c.bits(layer_key(i, "weight_bits"));
            if (il.bits.shape() != Shape{L.out, L.in, L.kernel, L.kernel})
                throw ShapeError("export: layer " + std::to_string(i) + " bits have shape " +
                                 il.bits.shape().str());
            il.scale = c.tensor(layer_key(i, "scale"))[0];
        } else {
            il.weight = c.tensor(layer_key(i, "weight"));
            if (c.contains(layer_key(i, "bias"))) il.bias = c.tensor(layer_key(i, "bias"));
        }
        if (L.batch_norm) {
            il.gamma = c.tensor(layer_key(i, "bn_gamma"));
            il.beta = c.tensor(layer_key(i, "bn_beta"));
            il.running_mean = c.tensor(layer_key(i, "bn_running_mean"));
            il.running_var = c.tensor(layer_key(i, "bn_running_var"));
        }
        if (c.contains(layer_key(i, "prelu_slope"))) il.slope = c.tensor(layer_key(i, "prelu_slope"));
        m.layers.push_back(std::move(il));
    }
    return m;
}

void InferenceModel::save(const std::filesystem::path& path) const { io::write_file(path, to_container()); }

InferenceModel InferenceModel::load(const std::filesystem::path& path) {
    return from_container(io::read_file(path, io::kExportMagic));
}

std::size_t thread_count_from_env() {
    const char* s = std::getenv("LNS_THREADS");
    if (!s || !*s) return 1;
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (*end != '\0' || v < 1) throw ValueError(std::string("LNS_THREADS must be a positive integer, got '") + s + "'");
    return static_cast<std::size_t>(v);
}

EvalResult evaluate(const InferenceModel& model, const data::Dataset& data, std::size_t batch_size,
                    std::size_t threads) {
    if (data.size() == 0) throw ValueError("evaluate: empty dataset");
    if (batch_size == 0) throw ValueError("evaluate: batch size must be >= 1");
    if (threads == 0) threads = thread_count_from_env();
    const auto batches = data::batch_indices(data.size(), batch_size, false, 0, 0);
    struct Part {
        std::size_t correct = 0;
        double loss_sum = 0;
    };
    std::vector<Part> parts(batches.size());
    auto work = [&](std::size_t first) {
        for (std::size_t b = first; b < batches.size(); b += threads) {
            const auto batch = data::gather(data, batches[b]);
            const auto logits = model.logits(batch.images);
            const auto pred = fn::argmax_rows(logits);
            for (std::size_t k = 0; k < pred.size(); ++k) parts[b].correct += pred[k] == batch.labels[k];
            parts[b].loss_sum =
                static_cast<double>(fn::cross_entropy(logits, batch.labels)) * static_cast<double>(pred.size());
        }
    };
    threads = std::min(threads, batches.size());
    if (threads <= 1) {
        threads = 1;
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    }
    EvalResult r;
    std::size_t correct = 0;
    double loss = 0;
    for (const auto& p : parts) {
        correct += p.correct;
        loss += p.loss_sum;
    }
    r.samples = data.size();
    r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    r.cls_loss = loss / static_cast<double>(data.size());
    return r;
}

}  // namespace lns
