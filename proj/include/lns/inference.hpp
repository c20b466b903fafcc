#pragma once
// Inference-only model: quantized layers hold bit-packed ±1 weights and a
// float scale, everything else stays full precision. Latent weights and
// mapping networks are gone.

#include <cstddef>
#include <filesystem>
#include <vector>

#include "lns/binarize.hpp"
#include "lns/container.hpp"
#include "lns/data.hpp"
#include "lns/model.hpp"

namespace lns {

struct InferenceLayer {
    Tensor weight;  // full-precision layers only
    Tensor bias;
    BitTensor bits;  // quantized layers only
    float scale = 1.0f;
    Tensor gamma, beta, running_mean, running_var;
    Tensor slope;
};

struct InferenceModel {
    ModelSpec spec;
    std::vector<InferenceLayer> layers;

    /// Binary weights come from sign(f(W)) when `source` is mapping and the
    /// layer has a mapping network, from sign(W) otherwise.
    static InferenceModel from_model(const Model<float>& model, WeightSource source);

    /// Logits [n, classes] for images [n, c, h, w]. Quantized layers run
    /// sign -> pack -> popcount convolution -> scale.
    Tensor logits(const Tensor& images) const;

    io::Container to_container() const;
    static InferenceModel from_container(const io::Container& c);

    void save(const std::filesystem::path& path) const;
    static InferenceModel load(const std::filesystem::path& path);
};

struct EvalResult {
    double accuracy = 0;
    double cls_loss = 0;  // mean cross-entropy
    std::size_t samples = 0;
};

/// Top-1 accuracy and loss, in batches sharded across `threads` workers
/// (0 reads LNS_THREADS, default 1). Per-batch results are reduced in batch
/// order, so the result does not depend on the thread count.
EvalResult evaluate(const InferenceModel& model, const data::Dataset& data, std::size_t batch_size = 256,
                    std::size_t threads = 0);

/// Worker count from LNS_THREADS (default 1).
std::size_t thread_count_from_env();

}  // namespace lns
