#include "appt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

namespace appt {

void TrainConfig::validate() const {
    if (!(lr_max > lr_min) || lr_min < 0.0) throw ConfigError("require lr_max > lr_min >= 0");
    if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch size must be positive");
    if (clip_norm <= 0.0) throw ConfigError("clip norm must be positive");
}

double cosine_lr(int64_t step, int64_t total_steps, const TrainConfig& config) {
    if (step < 0 || total_steps < 1 || step > total_steps) {
        throw ContractError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
    }
    double phase = static_cast<double>(step) / static_cast<double>(total_steps);
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + std::cos(M_PI * phase));
}

Var cross_entropy(Var logits, int label) { return cross_entropy_logits(logits, label); }

void AdamW::step(const GradList& grads, double lr) {
    // validate everything before mutating anything
    for (const auto& [entry, grad] : grads) {
        if (!grad.all_finite()) {
            throw NumericError("non-finite gradient for " + entry->name + "; step aborted");
        }
        if (!grad.same_shape(entry->tensor)) {
            throw ContractError("gradient shape mismatch for " + entry->name);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (const auto& [entry, grad] : grads) {
        Slot& slot = slots_[entry->tensor.storage_id()];
        if (!slot.m.defined()) {
            slot.m = Tensor::zeros(entry->tensor.shape());
            slot.v = Tensor::zeros(entry->tensor.shape());
        }
        double* theta = const_cast<Tensor&>(entry->tensor).data();
        double* m = slot.m.data();
        double* v = slot.v.data();
        const double* g = grad.data();
        const int64_t n = grad.size();
        for (int64_t i = 0; i < n; ++i) {
            theta[i] *= 1.0 - lr * config_.weight_decay; // decoupled decay first
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.adam_eps);
        }
    }
}

double clip_grad_norm(GradList& grads, double clip) {
    double sq = 0.0;
    for (const auto& [entry, grad] : grads) {
        const double* g = grad.data();
        for (int64_t i = 0; i < grad.size(); ++i) sq += g[i] * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > clip) {
        const double scale = clip / norm;
        for (auto& [entry, grad] : grads) {
            double* g = grad.data();
            for (int64_t i = 0; i < grad.size(); ++i) g[i] *= scale;
        }
    }
    return norm;
}

LoadedDataset load_dataset(const std::string& manifest_path) {
    DatasetManifest manifest = load_manifest(manifest_path);
    if (manifest.entries.empty()) throw ContractError("dataset manifest is empty: " + manifest_path);
    std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    LoadedDataset out;
    out.class_names = manifest.class_names;
    int max_label = 0;
    for (const auto& e : manifest.entries) {
        PointCloud cloud = load_cloud((base / e.path).string());
        cloud.label = e.label;
        out.clouds.push_back(std::move(cloud));
        out.labels.push_back(e.label);
        max_label = std::max(max_label, e.label);
    }
    if (out.class_names.empty()) {
        for (int c = 0; c <= max_label; ++c) out.class_names.push_back("class" + std::to_string(c));
    }
    return out;
}

PreparedDataset prepare_dataset(const LoadedDataset& data, const ModelConfig& config,
                                uint64_t seed) {
    PreparedDataset out;
    out.n_classes = data.n_classes();
    out.labels = data.labels;
    out.group_rows.reserve(data.clouds.size());
    for (size_t i = 0; i < data.clouds.size(); ++i) {
        PointGroups groups = tokenize_cloud(data.clouds[i], config, Rng::derive(seed, "fps", i));
        out.group_rows.push_back(groups.flat_rows());
    }
    return out;
}

PointCloud augment_cloud(const PointCloud& cloud, Rng& rng) {
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    const double c = std::cos(angle), s = std::sin(angle);
    const double sigma = 0.01;
    const int n = cloud.n_points();
    Tensor coords({n, 3});
    const double* p = cloud.coords.data();
    double* q = coords.data();
    for (int i = 0; i < n; ++i) {
        const double x = p[i * 3], y = p[i * 3 + 1], z = p[i * 3 + 2];
        q[i * 3] = c * x - s * y + rng.normal(0, sigma);
        q[i * 3 + 1] = s * x + c * y + rng.normal(0, sigma);
        q[i * 3 + 2] = z + rng.normal(0, sigma);
    }
    PointCloud out;
    out.coords = std::move(coords);
    out.features = cloud.features;
    out.label = cloud.label;
    return out;
}

FrozenBaseline frozen_baseline(const ParamSet& params) {
    FrozenBaseline out;
    for (const auto* e : params.partition(false)) {
        out.hashes.emplace_back(e->name, tensor_bytes_hash(e->tensor));
    }
    return out;
}

void verify_frozen(const ParamSet& params, const FrozenBaseline& baseline) {
    for (const auto& [name, hash] : baseline.hashes) {
        if (tensor_bytes_hash(params.at(name).tensor) != hash) {
            throw IntegrityError("frozen tensor " + name + " changed during training");
        }
    }
}

namespace {

GradList collect_trainable_grads(Tape& tape, const BoundModel& bound, const Model& model) {
    GradList grads;
    for (const auto& entry : model.params.entries()) {
        if (!entry.trainable) continue;
        Var v = bound.by_name.at(entry.name);
        if (tape.has_grad(v)) {
            grads.emplace_back(&entry, tape.grad(v).clone());
        } else {
            // trainable leaf unused by this graph (e.g. ablated path)
            grads.emplace_back(&entry, Tensor::zeros(entry.tensor.shape()));
        }
    }
    return grads;
}

std::string format_csv(const std::vector<EpochMetrics>& rows) {
    std::string out = "epoch,step,lr,loss,accuracy\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%lld,%.17g,%.17g,%.17g\n", r.epoch,
                      static_cast<long long>(r.step), r.lr, r.mean_loss, r.train_accuracy);
        out += buf;
    }
    return out;
}

} // namespace

EpochMetrics train_epoch(Model& model, const PreparedDataset& data, AdamW& optimizer,
                         const TrainConfig& config, int epoch_index, int64_t total_steps,
                         int64_t& global_step) {
    if (data.group_rows.empty()) throw ContractError("train_epoch: empty dataset");
    const int n = static_cast<int>(data.group_rows.size());

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::derive(config.seed, "shuffle", static_cast<uint64_t>(epoch_index)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int batches = 0;
    double last_lr = 0.0;
    for (int start = 0; start < n; start += config.batch_size) {
        const int count = std::min(config.batch_size, n - start);
        Tape tape;
        BoundModel bound = BoundModel::bind(tape, model);
        Var loss_acc;
        for (int b = 0; b < count; ++b) {
            const int idx = order[static_cast<size_t>(start + b)];
            ForwardResult fwd = model_forward(tape, bound, model, data.group_rows[static_cast<size_t>(idx)]);
            Var sample_loss = cross_entropy(fwd.logits, data.labels[static_cast<size_t>(idx)]);
            loss_acc = loss_acc.valid() ? add(loss_acc, sample_loss) : sample_loss;
        }
        Var batch_loss = scale(loss_acc, 1.0 / count);
        tape.backward(batch_loss);

        GradList grads = collect_trainable_grads(tape, bound, model);
        clip_grad_norm(grads, config.clip_norm);
        last_lr = cosine_lr(global_step, total_steps, config);
        optimizer.step(grads, last_lr);
        ++global_step;

        loss_sum += tape.value(batch_loss).data()[0];
        ++batches;
    }

    EpochMetrics m;
    m.epoch = epoch_index + 1;
    m.step = global_step;
    m.lr = last_lr;
    m.mean_loss = loss_sum / batches;
    m.train_accuracy = evaluate(model, data).accuracy;
    return m;
}

TrainRunResult train_model(Model& model, const LoadedDataset& data, const TrainConfig& config) {
    config.validate();
    ParamPartition partition = param_partition(model); // validates the split
    (void)partition;
    FrozenBaseline baseline = frozen_baseline(model.params);

    PreparedDataset prepared;
    if (!config.augment) prepared = prepare_dataset(data, model.config, config.seed);

    const int n = data.size();
    const int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const int64_t total_steps = steps_per_epoch * config.epochs;

    AdamW optimizer(config);
    TrainRunResult result;
    int64_t global_step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.augment) {
            Rng aug_rng(Rng::derive(config.seed, "augment", static_cast<uint64_t>(epoch)));
            LoadedDataset augmented;
            augmented.class_names = data.class_names;
            augmented.labels = data.labels;
            for (const auto& cloud : data.clouds) {
                augmented.clouds.push_back(augment_cloud(cloud, aug_rng));
            }
            prepared = prepare_dataset(augmented, model.config,
                                       Rng::derive(config.seed, "fps-epoch", static_cast<uint64_t>(epoch)));
        }
        EpochMetrics m =
            train_epoch(model, prepared, optimizer, config, epoch, total_steps, global_step);
        verify_frozen(model.params, baseline); // hard integrity gate, every epoch
        result.epochs.push_back(m);
        if (config.stop_train_acc > 0.0 && m.train_accuracy >= config.stop_train_acc) {
            result.stopped_early = true;
            break;
        }
    }
    result.metrics_csv = format_csv(result.epochs);
    result.final_train_accuracy = result.epochs.back().train_accuracy;
    result.steps_run = global_step;
    return result;
}

EvalResult evaluate(const Model& model, const PreparedDataset& data) {
    if (data.group_rows.empty()) throw ContractError("evaluate: empty dataset");
    const int c = model.config.n_classes;
    EvalResult out;
    out.confusion.assign(static_cast<size_t>(c), std::vector<int>(static_cast<size_t>(c), 0));
    int correct = 0;
    for (size_t i = 0; i < data.group_rows.size(); ++i) {
        Tape tape;
        BoundModel bound = BoundModel::bind(tape, model);
        ForwardResult fwd = model_forward(tape, bound, model, data.group_rows[i]);
        const Tensor& logits = tape.value(fwd.logits);
        const double* p = logits.data();
        int pred = 0;
        for (int j = 1; j < c; ++j) {
            if (p[j] > p[pred]) pred = j; // ties keep the smaller class id
        }
        const int truth = data.labels[i];
        if (truth < 0 || truth >= c) throw ContractError("evaluate: label out of range");
        out.predictions.push_back(pred);
        out.confusion[static_cast<size_t>(truth)][static_cast<size_t>(pred)] += 1;
        if (pred == truth) ++correct;
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(data.group_rows.size());
    out.per_class_accuracy.resize(static_cast<size_t>(c), 0.0);
    for (int t = 0; t < c; ++t) {
        int row_total = 0;
        for (int pcol = 0; pcol < c; ++pcol) row_total += out.confusion[static_cast<size_t>(t)][static_cast<size_t>(pcol)];
        out.per_class_accuracy[static_cast<size_t>(t)] =
            row_total > 0 ? static_cast<double>(out.confusion[static_cast<size_t>(t)][static_cast<size_t>(t)]) / row_total : 0.0;
    }
    return out;
}

std::vector<Episode> few_shot_episodes(const std::vector<int>& labels, int n_classes,
                                       const EpisodeSpec& spec, uint64_t seed) {
    if (spec.n_way < 2 || spec.n_way > n_classes) {
        throw ConfigError("few-shot: n_way " + std::to_string(spec.n_way) + " with " +
                          std::to_string(n_classes) + " classes");
    }
    std::vector<std::vector<int>> by_class(static_cast<size_t>(n_classes));
    for (size_t i = 0; i < labels.size(); ++i) {
        by_class[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
    }
    const int needed = spec.k_shot + spec.queries_per_class;
    std::vector<Episode> episodes;
    for (int r = 0; r < spec.repeats; ++r) {
        Rng rng(Rng::derive(seed, "episode", static_cast<uint64_t>(r)));
        std::vector<int> class_ids(static_cast<size_t>(n_classes));
        std::iota(class_ids.begin(), class_ids.end(), 0);
        rng.shuffle(class_ids);
        class_ids.resize(static_cast<size_t>(spec.n_way));

        Episode ep;
        ep.classes = class_ids;
        for (int cls : class_ids) {
            auto pool = by_class[static_cast<size_t>(cls)];
            if (static_cast<int>(pool.size()) < needed) {
                throw ConfigError("few-shot: class " + std::to_string(cls) + " has " +
                                  std::to_string(pool.size()) + " samples, needs " +
                                  std::to_string(needed));
            }
            rng.shuffle(pool);
            for (int i = 0; i < spec.k_shot; ++i) ep.support.push_back(pool[static_cast<size_t>(i)]);
            for (int i = 0; i < spec.queries_per_class; ++i) {
                ep.query.push_back(pool[static_cast<size_t>(spec.k_shot + i)]);
            }
        }
        episodes.push_back(std::move(ep));
    }
    return episodes;
}

Tensor extract_features(const Model& model, const PreparedDataset& data) {
    const int d = model.config.backbone.d;
    Tensor features({static_cast<int>(data.group_rows.size()), d});
    for (size_t i = 0; i < data.group_rows.size(); ++i) {
        Tape tape;
        BoundModel bound = BoundModel::bind(tape, model);
        ForwardResult fwd = model_forward(tape, bound, model, data.group_rows[i]);
        const Tensor& e_cls = tape.value(fwd.e_cls);
        std::copy_n(e_cls.data(), d, features.data() + static_cast<int64_t>(i) * d);
    }
    return features;
}

namespace {

// Logistic-regression refit on cached features: the episode's classifier.
double episode_accuracy(const Tensor& features, const std::vector<int>& labels,
                        const Episode& ep, uint64_t seed) {
    const int d = features.cols();
    const int n_way = static_cast<int>(ep.classes.size());
    std::map<int, int> remap; // dataset label -> episode slot
    for (int i = 0; i < n_way; ++i) remap[ep.classes[static_cast<size_t>(i)]] = i;

    Tensor w({d, n_way});
    Rng rng(Rng::derive(seed, "episode-head"));
    double* pw = w.data();
    for (int64_t i = 0; i < w.size(); ++i) pw[i] = rng.truncated_normal(0.0, 0.02, 2.0);
    w.set_requires_grad(true);

    TrainConfig head_cfg;
    head_cfg.lr_max = 1e-2;
    head_cfg.lr_min = 1e-4;
    head_cfg.weight_decay = 1e-3;
    AdamW opt(head_cfg);
    ParamSet dummy;
    dummy.add("episode.head", w, true);
    const ParamSet::Entry& entry = dummy.at("episode.head");

    const int steps = 120;
    for (int s = 0; s < steps; ++s) {
        Tape tape;
        Var wv = tape.leaf(w);
        Var loss;
        for (int idx : ep.support) {
            Tensor feat({1, d});
            std::copy_n(features.data() + static_cast<int64_t>(idx) * d, d, feat.data());
            Var logits = matmul(tape.constant(std::move(feat)), wv);
            Var l = cross_entropy_logits(logits, remap.at(labels[static_cast<size_t>(idx)]));
            loss = loss.valid() ? add(loss, l) : l;
        }
        loss = scale(loss, 1.0 / static_cast<double>(ep.support.size()));
        tape.backward(loss);
        GradList grads;
        grads.emplace_back(&entry, tape.grad(wv).clone());
        opt.step(grads, cosine_lr(s, steps, head_cfg));
    }

    int correct = 0;
    for (int idx : ep.query) {
        Tensor feat({1, d});
        std::copy_n(features.data() + static_cast<int64_t>(idx) * d, d, feat.data());
        Tensor logits = matmul_nn(feat, w);
        const double* p = logits.data();
        int pred = 0;
        for (int j = 1; j < n_way; ++j) {
            if (p[j] > p[pred]) pred = j;
        }
        if (pred == remap.at(labels[static_cast<size_t>(idx)])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ep.query.size());
}

} // namespace

FewShotResult few_shot_eval(const Model& model, const PreparedDataset& data,
                            const EpisodeSpec& spec, uint64_t seed) {
    std::vector<Episode> episodes = few_shot_episodes(data.labels, data.n_classes, spec, seed);
    Tensor features = extract_features(model, data);
    FewShotResult out;
    for (size_t i = 0; i < episodes.size(); ++i) {
        out.per_episode.push_back(
            episode_accuracy(features, data.labels, episodes[i], Rng::derive(seed, "head", i)));
    }
    double mean = 0.0;
    for (double a : out.per_episode) mean += a;
    mean /= static_cast<double>(out.per_episode.size());
    double var = 0.0;
    for (double a : out.per_episode) var += (a - mean) * (a - mean);
    // sample standard deviation over the repeats
    if (out.per_episode.size() > 1) var /= static_cast<double>(out.per_episode.size() - 1);
    out.mean_accuracy = mean;
    out.std_accuracy = std::sqrt(var);
    return out;
}

} // namespace appt
