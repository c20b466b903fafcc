#pragma once
// Two-phase training: pretrain a sign/STE binary network, then fine-tune it,
// either plainly or with per-layer mapping networks trained under the
// noise-corrected loss.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lns/data.hpp"
#include "lns/error.hpp"
#include "lns/inference.hpp"
#include "lns/model.hpp"
#include "lns/noisy_loss.hpp"

namespace lns {

enum class Phase { pretrain, finetune_lns, finetune_simple };
enum class LabelMode { current, frozen };

std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

struct TrainConfig {
    double alpha = 1.0;
    NoiseRates rates;
    Reduction reduction = Reduction::mean;
    LabelMode labels = LabelMode::current;

    double lr = 0.1;  // 0 freezes every parameter and batch-norm statistic
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::size_t batch_size = 128;
    int epochs = 400;
    std::vector<int> milestones;  // epochs after which lr is multiplied by lr_decay
    double lr_decay = 0.1;

    int warm_start_epochs = 5;
    double warm_start_lr = 0.0;  // 0: use lr

    std::uint64_t seed = 0;
    ScaleMode scale_mode = ScaleMode::none;
    data::AugmentSpec augment;
    bool shuffle = true;
    bool flip_vs_pretrain = false;  // adds the flip_rate_pretrain column

    /// Reference schedules: pretrain 400 epochs at lr 0.1; fine-tune 120
    /// epochs at lr 0.01, decayed by 0.1 every 30 epochs.
    static TrainConfig pretrain_defaults();
    static TrainConfig finetune_defaults();

    /// Throws ConfigError naming the offending field.
    void validate() const;
    /// Learning rate used during epoch `epoch` (1-based).
    double lr_at(int epoch) const;

    nlohmann::json to_json() const;
};

struct MetricsRecord {
    int epoch = 0;
    std::string split;
    double cls_loss = 0, aux_loss = 0, total_loss = 0;
    double accuracy = 0;
    double flip_rate = 0;
    double lr = 0;
    double wall_seconds = 0;
    std::optional<double> flip_rate_pretrain;

    friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct Checkpoint {
    Phase phase = Phase::pretrain;
    Model<float> model;
    std::vector<Tensor> velocity;  // aligned with model.params(); empty before the first step
    int epoch = 0;                 // completed epochs in this phase
    std::uint64_t seed = 0;
    std::vector<Tensor> pretrain_binary;  // sign(W) when fine-tuning started, per quantized layer
    std::vector<Tensor> prev_binary;      // binary weights at the end of the last epoch
    std::vector<Tensor> frozen_labels;    // noisy labels for LabelMode::frozen
    nlohmann::json config = nlohmann::json::object();

    WeightSource source() const {
        return phase == Phase::finetune_lns ? WeightSource::mapping : WeightSource::sign;
    }

    /// Binary weights of every quantized layer as the network currently uses them.
    std::vector<Tensor> binary_weights() const;

    io::Container to_container() const;
    static Checkpoint from_container(const io::Container& c);
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

/// Fraction of positions where two ±1 tensors differ.
double flip_rate(const Tensor& before, const Tensor& after);
/// Aggregated over layers: total differing positions / total positions.
double flip_rate(const std::vector<Tensor>& before, const std::vector<Tensor>& after);

/// Raised when the total loss stays non-finite for three consecutive steps.
/// Carries the state at the start of the failing epoch.
class TrainingDiverged : public DivergenceError {
public:
    TrainingDiverged(const std::string& what, std::shared_ptr<const Checkpoint> last_good)
        : DivergenceError(what), last_good_(std::move(last_good)) {}
    const Checkpoint& last_good() const { return *last_good_; }

private:
    std::shared_ptr<const Checkpoint> last_good_;
};

struct TrainHooks {
    const data::Dataset* test = nullptr;  // evaluated after every epoch when set
    std::function<void(const MetricsRecord&)> on_record;
    std::function<void(const Checkpoint&)> on_epoch_end;
    std::size_t eval_threads = 0;  // 0: LNS_THREADS
};

/// A fresh pretrain checkpoint at epoch 0.
Checkpoint init_checkpoint(const ModelSpec& spec, const TrainConfig& cfg);

/// Sign/STE training with cross-entropy only.
Checkpoint pretrain_baseline(const ModelSpec& spec, const data::Dataset& train, const TrainConfig& cfg,
                             const TrainHooks& hooks = {});

/// Turns a pretrain checkpoint into epoch 0 of a fine-tune phase. For the
/// mapping variant this attaches a near-passthrough mapping network to every
/// quantized layer and warm-starts them with everything else frozen.
Checkpoint start_finetune(const Checkpoint& pretrained, Phase phase, const data::Dataset& train,
                          const TrainConfig& cfg);

/// Fine-tunes with mapping networks under cls + alpha * sum of corrected
/// layer losses. Accepts a pretrain checkpoint (starting the phase) or a
/// mapping fine-tune checkpoint (resuming it).
Checkpoint lns_finetune(const Checkpoint& start, const data::Dataset& train, const TrainConfig& cfg,
                        const TrainHooks& hooks = {});

/// Continues sign/STE training with the fine-tune schedule.
Checkpoint simple_finetune(const Checkpoint& start, const data::Dataset& train, const TrainConfig& cfg,
                           const TrainHooks& hooks = {});

/// Runs epochs ck.epoch + 1 .. cfg.epochs in place. Emits an epoch-0 record
/// first when nothing has been trained yet.
void train_epochs(Checkpoint& ck, const data::Dataset& train, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Inference-path evaluation of a checkpoint.
EvalResult evaluate(const Checkpoint& ck, const data::Dataset& data, std::size_t threads = 0);

/// Inference model with binary weights sign(f(W)) (or sign(W) for sign-only phases).
InferenceModel export_binary(const Checkpoint& ck);

/// Sum over quantized layers of the corrected loss of f(W) against the
/// layer's noisy labels. Zero without mapping networks.
double aux_loss(const Checkpoint& ck, const TrainConfig& cfg);

}  // namespace lns
