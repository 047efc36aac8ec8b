#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "appt/model.hpp"

namespace appt {

struct TrainConfig {
    double lr_max = 5e-4;
    double lr_min = 1e-6;
    double weight_decay = 5e-2;
    int epochs = 60;
    int batch_size = 8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 10.0;
    uint64_t seed = 1;
    // Stop once the post-epoch training accuracy reaches this value; 0 keeps
    // running for the configured epoch count.
    double stop_train_acc = 0.0;
    bool augment = false;

    void validate() const;
};

// lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi * step / total_steps)).
double cosine_lr(int64_t step, int64_t total_steps, const TrainConfig& config);

// -log softmax(logits)[label]; thin wrapper kept for the training surface.
Var cross_entropy(Var logits, int label);

using GradList = std::vector<std::pair<const ParamSet::Entry*, Tensor>>;

// Decoupled weight decay (theta *= 1 - lr*wd) followed by bias-corrected Adam.
// The whole step aborts before touching any parameter if a gradient is
// non-finite.
class AdamW {
public:
    explicit AdamW(const TrainConfig& config) : config_(config) {}
    void step(const GradList& grads, double lr);
    int64_t step_count() const { return t_; }

private:
    struct Slot {
        Tensor m, v;
    };
    TrainConfig config_;
    std::map<const void*, Slot> slots_;
    int64_t t_ = 0;
};

// Scale all gradients by clip/||g|| when the global L2 norm exceeds clip.
double clip_grad_norm(GradList& grads, double clip);

struct LoadedDataset {
    std::vector<PointCloud> clouds;
    std::vector<int> labels;
    std::vector<std::string> class_names;

    int n_classes() const { return static_cast<int>(class_names.size()); }
    int size() const { return static_cast<int>(clouds.size()); }
};

// Reads a manifest and every cloud it references (paths resolve relative to
// the manifest's directory).
LoadedDataset load_dataset(const std::string& manifest_path);

struct PreparedDataset {
    std::vector<Tensor> group_rows; // cached tokenization, one per sample
    std::vector<int> labels;
    int n_classes = 0;
};

// Tokenizes every cloud once (normalize -> fps -> knn); fps seeds derive from
// `seed` and the sample index, so preparation is reproducible.
PreparedDataset prepare_dataset(const LoadedDataset& data, const ModelConfig& config,
                                uint64_t seed);

// Seeded z-rotation plus coordinate jitter; the optional augmentation path.
PointCloud augment_cloud(const PointCloud& cloud, Rng& rng);

struct EpochMetrics {
    int epoch = 0;        // 1-based
    int64_t step = 0;     // global optimizer steps completed
    double lr = 0.0;      // rate used for the epoch's last step
    double mean_loss = 0.0;
    double train_accuracy = 0.0; // full-train evaluation after the epoch's updates
};

struct FrozenBaseline {
    std::vector<std::pair<std::string, uint64_t>> hashes;
};

FrozenBaseline frozen_baseline(const ParamSet& params);
// IntegrityError naming the first changed tensor.
void verify_frozen(const ParamSet& params, const FrozenBaseline& baseline);

// One pass over the data: seeded shuffle, per-batch forward/backward over the
// trainable set, clip, AdamW; the frozen set is verified byte-identical
// before returning. Accuracy is re-evaluated on the full training set after
// the epoch's updates.
EpochMetrics train_epoch(Model& model, const PreparedDataset& data, AdamW& optimizer,
                         const TrainConfig& config, int epoch_index, int64_t total_steps,
                         int64_t& global_step);

struct TrainRunResult {
    std::vector<EpochMetrics> epochs;
    std::string metrics_csv; // header + one row per epoch, stable bytes
    double final_train_accuracy = 0.0;
    int64_t steps_run = 0;
    bool stopped_early = false;
};

TrainRunResult train_model(Model& model, const LoadedDataset& data, const TrainConfig& config);

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::vector<std::vector<int>> confusion; // [true][predicted]
    std::vector<int> predictions;
};

// Deterministic, mutation-free argmax evaluation.
EvalResult evaluate(const Model& model, const PreparedDataset& data);

struct EpisodeSpec {
    int n_way = 5;
    int k_shot = 10;
    int queries_per_class = 20;
    int repeats = 10;
};

struct Episode {
    std::vector<int> classes; // sampled class ids
    std::vector<int> support; // sample indices
    std::vector<int> query;   // disjoint from support
};

std::vector<Episode> few_shot_episodes(const std::vector<int>& labels, int n_classes,
                                       const EpisodeSpec& spec, uint64_t seed);

struct FewShotResult {
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    std::vector<double> per_episode;
};

// Frozen feature extractor + per-episode head refit on the support set.
FewShotResult few_shot_eval(const Model& model, const PreparedDataset& data,
                            const EpisodeSpec& spec, uint64_t seed);

// e_cls feature rows for every sample (no gradients, no mutation).
Tensor extract_features(const Model& model, const PreparedDataset& data);

} // namespace appt
