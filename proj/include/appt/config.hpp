#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "appt/model.hpp"
#include "appt/train.hpp"

namespace appt {

// Flat key = value run configuration with dotted keys. Every field has a
// default; unknown keys are errors. The fully resolved config is echoed into
// the run manifest, and reloading a manifest requires every key to be present
// so a stored run is never silently reinterpreted under newer defaults.
struct RunConfig {
    uint64_t seed = 1;

    int group_n_s = 64;
    int group_k = 16;
    bool group_normalize = true;

    int embed_stage1 = 0; // 0 -> d/2
    int embed_stage2 = 0; // 0 -> 3d/2

    int backbone_blocks = 4;
    int backbone_d = 128;
    int backbone_heads = 4;
    int backbone_mlp_hidden = 0; // 0 -> 4d
    bool backbone_cls_token = true;
    bool backbone_pre_norm = true;
    bool backbone_final_norm = false;

    int model_classes = 4;
    bool model_prompt = true;
    bool model_posin = true;
    bool model_pooled_cls = true;

    double train_lr_max = 5e-4;
    double train_lr_min = 1e-6;
    double train_weight_decay = 5e-2;
    int train_epochs = 60;
    int train_batch = 8;
    double train_beta1 = 0.9;
    double train_beta2 = 0.999;
    double train_eps = 1e-8;
    double train_clip_norm = 10.0;
    double train_stop_train_acc = 0.0;
    bool train_augment = false;

    ModelConfig model_config() const;
    TrainConfig train_config() const;
};

// Ordered list of every key, used for rendering, parsing and documentation.
std::vector<std::string> run_config_keys();

// ConfigError on unknown key or unparsable value.
void set_config_key(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_key(const RunConfig& config, const std::string& key);

// "key = value" lines, '#' comments. When `require_all_keys` is set, a
// missing key is a ConfigError naming the key (manifest reload mode).
RunConfig parse_run_config(std::istream& in, bool require_all_keys = false);
RunConfig load_run_config(const std::string& path, bool require_all_keys = false);

// Full echo, one line per key, fixed order; doubles round-trip exactly.
std::string render_run_config(const RunConfig& config);

// The run manifest is the config echo plus "source.*" / "info.*" lines that
// record where the run's inputs came from and what it produced.
struct RunManifest {
    RunConfig config;
    std::map<std::string, std::string> extra;
};

void save_run_manifest(const RunManifest& manifest, const std::string& path);
RunManifest load_run_manifest(const std::string& path);

} // namespace appt
