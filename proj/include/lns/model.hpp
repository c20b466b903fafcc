#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lns/autograd.hpp"
#include "lns/binarize.hpp"
#include "lns/functional.hpp"
#include "lns/mapping.hpp"
#include "lns/noisy_loss.hpp"

namespace lns {

enum class LayerKind { conv, linear };

struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    std::size_t in = 0, out = 0;
    std::size_t kernel = 3, stride = 1, padding = 1;
    fn::Activation activation = fn::Activation::none;
    bool batch_norm = true;
    bool quantized = false;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Ordered layers of a plain CNN: convolutions followed by exactly one
/// final linear classifier. The first convolution and the classifier stay
/// full precision.
struct ModelSpec {
    std::string name;
    std::size_t channels = 1, height = 0, width = 0, classes = 10;
    std::vector<LayerSpec> layers;

    void validate() const;

    /// Spatial extent after layer `i` (convolutions only).
    std::pair<std::size_t, std::size_t> output_hw(std::size_t i) const;

    /// Indices of quantized layers, in order.
    std::vector<std::size_t> quantized_layers() const;

    nlohmann::json to_json() const;
    static ModelSpec from_json(const nlohmann::json& j);

    /// Four layers: full-precision conv(width), binary conv(2 width, stride 2),
    /// binary conv(2 width, stride 2), full-precision linear. Stride-2 layers
    /// use 3x3 kernels on odd inputs and 4x4 on even ones.
    static ModelSpec bnn4(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes,
                          std::size_t base_width = 16);

    /// Same topology with tiny widths, for gradient checks.
    static ModelSpec toy(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes);

    static ModelSpec by_name(const std::string& name, std::size_t channels, std::size_t height, std::size_t width,
                             std::size_t classes, std::size_t base_width = 16);

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

std::string to_string(fn::Activation a);
fn::Activation activation_from_string(const std::string& s);

template <typename T>
struct LayerParams {
    BasicTensor<T> weight;
    BasicTensor<T> bias;   // linear only
    BasicTensor<T> gamma;  // batch norm
    BasicTensor<T> beta;
    BasicTensor<T> slope;  // prelu
    fn::BatchNormState<T> bn;
    std::optional<MappingNet<T>> mapping;
};

/// A named reference to one trainable tensor.
template <typename T>
struct ParamRef {
    std::string name;
    BasicTensor<T>* tensor;
    bool mapping;  // belongs to a mapping network
};

template <typename T>
struct Model {
    ModelSpec spec;
    std::vector<LayerParams<T>> layers;
    ScaleMode scale_mode = ScaleMode::none;

    /// Fan-in scaled uniform weights, unit gammas, zero betas, 0.25 prelu slopes.
    static Model init(const ModelSpec& spec, std::mt19937_64& rng);

    /// Every trainable tensor in a fixed order.
    std::vector<ParamRef<T>> params();
    std::vector<std::pair<std::string, const BasicTensor<T>*>> params() const;

    bool has_mapping() const;

    template <typename U>
    Model<U> cast() const;
};

enum class WeightSource { sign, mapping };

/// Model parameters placed on a tape, aligned with Model::params().
template <typename T>
struct BoundModel {
    struct Layer {
        ag::Var<T> weight, bias, gamma, beta, slope;
        std::optional<MappingVars<T>> mapping;
    };
    std::vector<Layer> layers;
    std::vector<ag::Var<T>> vars;  // same order as Model::params()

    static BoundModel bind(ag::Tape<T>& tape, Model<T>& model, bool train_main, bool train_mapping);
};

template <typename T>
struct ForwardOptions {
    ag::Mode mode = ag::Mode::train;
    WeightSource source = WeightSource::sign;
    bool update_running_stats = true;
    NoiseRates rates;
    Reduction reduction = Reduction::mean;
    /// Noisy labels per quantized layer. Empty: sign(current latent weights).
    const std::vector<BasicTensor<T>>* frozen_labels = nullptr;
    SignLinearization<T>* linearization = nullptr;
};

template <typename T>
struct ForwardResult {
    ag::Var<T> logits;
    std::vector<ag::Var<T>> aux_losses;  // one per quantized layer when source == mapping
};

template <typename T>
ForwardResult<T> forward(Model<T>& model, const BoundModel<T>& bound, ag::Var<T> input,
                         const ForwardOptions<T>& options);

/// cls + alpha * sum(aux).
template <typename T>
ag::Var<T> total_loss(ag::Var<T> cls, const std::vector<ag::Var<T>>& aux, T alpha);
double total_loss(double cls, const std::vector<double>& aux, double alpha);

/// Binary weights a quantized layer convolves with: sign(W), or
/// sign(f(W)) when a mapping network is attached and requested.
template <typename T>
BasicTensor<T> binary_weights(const LayerParams<T>& layer, WeightSource source);

}  // namespace lns
