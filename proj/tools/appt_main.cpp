// appt: point-cloud classification on a frozen transformer backbone, driven
// by generated point-prompts. Subcommands cover dataset generation, training
// of the small trainable subset, evaluation, the executable property suite,
// and checkpoint inspection.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "appt/checkpoint.hpp"
#include "appt/config.hpp"
#include "appt/oracles.hpp"
#include "appt/properties.hpp"
#include "appt/train.hpp"

namespace fs = std::filesystem;
using namespace appt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitContract = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

void atomic_write_text(const std::string& path, const std::string& text) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write " + path);
        f << text;
        if (!f) throw IoError("write failed: " + path);
    }
    fs::rename(tmp, path);
}

std::string render_confusion(const EvalResult& eval, const std::vector<std::string>& names) {
    std::ostringstream os;
    os << "accuracy: " << eval.accuracy << "\n";
    os << "confusion matrix (rows = truth):\n";
    for (size_t t = 0; t < eval.confusion.size(); ++t) {
        os << "  " << (t < names.size() ? names[t] : "class" + std::to_string(t)) << ":";
        for (int v : eval.confusion[t]) os << " " << v;
        os << "  (per-class acc " << eval.per_class_accuracy[t] << ")\n";
    }
    return os.str();
}

// --------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    std::string out_dir;
    int per_class = 40;
    std::string classes = "sphere,cube,cylinder,torus";
    uint64_t seed = 1;
    int points = 1024;
    double noise = 0.02;
};

int run_gen_data(const GenDataArgs& args) {
    std::vector<SurfaceKind> kinds;
    std::vector<std::string> names;
    std::stringstream ss(args.classes);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        kinds.push_back(parse_surface_kind(tok)); // ConfigError lists valid kinds
        names.push_back(tok);
    }
    if (kinds.empty()) throw ConfigError("no classes requested");
    if (args.per_class < 2) throw ConfigError("need at least 2 samples per class");

    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + args.out_dir + ": " + ec.message());

    DatasetManifest train_manifest, test_manifest;
    train_manifest.class_names = names;
    train_manifest.split = "train";
    test_manifest.class_names = names;
    test_manifest.split = "test";

    char buf[128];
    for (size_t c = 0; c < kinds.size(); ++c) {
        // seeded 80/20 split within each class
        std::vector<int> order(static_cast<size_t>(args.per_class));
        std::iota(order.begin(), order.end(), 0);
        Rng split_rng(Rng::derive(args.seed, "split", c));
        split_rng.shuffle(order);
        const int n_train = (args.per_class * 8) / 10;

        for (int i = 0; i < args.per_class; ++i) {
            uint64_t sample_seed = Rng::derive(args.seed, "sample", c * 100000 + static_cast<uint64_t>(i));
            PointCloud cloud = gen_synthetic(kinds[c], args.points, args.noise, sample_seed);
            std::snprintf(buf, sizeof(buf), "%s_%03d.xyz", names[c].c_str(), i);
            std::string rel = buf;

            std::string text;
            const double* p = cloud.coords.data();
            for (int r = 0; r < cloud.n_points(); ++r) {
                char line[128];
                std::snprintf(line, sizeof(line), "%.17g %.17g %.17g\n", p[r * 3], p[r * 3 + 1],
                              p[r * 3 + 2]);
                text += line;
            }
            atomic_write_text(args.out_dir + "/" + rel, text);

            bool is_train = false;
            for (int t = 0; t < n_train; ++t) is_train = is_train || order[static_cast<size_t>(t)] == i;
            auto& manifest = is_train ? train_manifest : test_manifest;
            manifest.entries.push_back({rel, static_cast<int>(c)});
        }
    }
    save_manifest(train_manifest, args.out_dir + "/train_manifest.tsv");
    save_manifest(test_manifest, args.out_dir + "/test_manifest.tsv");
    std::cout << "wrote " << kinds.size() * static_cast<size_t>(args.per_class) << " clouds ("
              << train_manifest.entries.size() << " train, " << test_manifest.entries.size()
              << " test) to " << args.out_dir << "\n";
    return kExitOk;
}

// --------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config_file;
    std::string data_dir;
    std::string backbone = "random:1";
    std::string out_dir;
    bool no_prompt = false;
    bool no_posin = false;
    std::vector<std::string> overrides;
};

BackboneParams resolve_backbone(const std::string& spec, const BackboneConfig& config) {
    if (spec.rfind("random:", 0) == 0) {
        uint64_t seed = 0;
        try {
            seed = std::stoull(spec.substr(7));
        } catch (...) {
            throw ConfigError("bad backbone spec \"" + spec + "\" (expected random:SEED or a path)");
        }
        return init_random(config, seed);
    }
    return load_backbone_checkpoint(spec, config);
}

int run_train(const TrainArgs& args) {
    RunConfig config;
    if (!args.config_file.empty()) config = load_run_config(args.config_file);
    for (const auto& kv : args.overrides) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("override \"" + kv + "\" is not key=value");
        set_config_key(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (args.no_prompt) config.model_prompt = false;
    if (args.no_posin) config.model_posin = false;

    LoadedDataset data = load_dataset(args.data_dir + "/train_manifest.tsv");
    if (data.n_classes() != config.model_classes) {
        throw ConfigError("dataset has " + std::to_string(data.n_classes()) +
                          " classes but model.classes = " + std::to_string(config.model_classes));
    }

    ModelConfig model_cfg = config.model_config();
    BackboneParams backbone = resolve_backbone(args.backbone, model_cfg.backbone);
    const uint64_t trainable_seed = Rng::derive(config.seed, "trainable");
    Model model = Model::create(model_cfg, trainable_seed, std::move(backbone));

    ParamPartition partition = param_partition(model);
    FrozenBaseline baseline = frozen_baseline(model.params);

    TrainRunResult result = train_model(model, data, config.train_config());
    verify_frozen(model.params, baseline);

    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + args.out_dir + ": " + ec.message());
    atomic_write_text(args.out_dir + "/metrics.csv", result.metrics_csv);

    // trainable parameters only; the frozen backbone is reproducible from its source
    std::vector<std::pair<std::string, Tensor>> trainable_tensors;
    for (const auto* e : partition.trainable) trainable_tensors.emplace_back(e->name, e->tensor);
    CheckpointMeta ckpt_meta;
    ckpt_meta.set("kind", "trainable");
    ckpt_meta.set("seed", std::to_string(config.seed));
    ckpt_meta.set("trainable_params", std::to_string(partition.trainable_count));
    ckpt_meta.set("frozen_params", std::to_string(partition.frozen_count));
    save_checkpoint(args.out_dir + "/trainable", trainable_tensors, ckpt_meta);

    uint64_t frozen_digest = 1469598103934665603ull;
    for (const auto& [name, hash] : baseline.hashes) frozen_digest ^= hash;

    RunManifest manifest;
    manifest.config = config;
    manifest.extra["source.backbone"] = args.backbone;
    manifest.extra["source.data"] = fs::absolute(args.data_dir).string();
    manifest.extra["source.trainable_seed"] = std::to_string(trainable_seed);
    manifest.extra["info.trainable_params"] = std::to_string(partition.trainable_count);
    manifest.extra["info.frozen_params"] = std::to_string(partition.frozen_count);
    {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", partition.trainable_ratio());
        manifest.extra["info.trainable_ratio"] = buf;
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(frozen_digest));
        manifest.extra["info.frozen_hash"] = buf;
        std::snprintf(buf, sizeof(buf), "%.17g", result.final_train_accuracy);
        manifest.extra["info.final_train_accuracy"] = buf;
    }
    manifest.extra["info.epochs_run"] = std::to_string(result.epochs.size());
    manifest.extra["info.ablation_no_prompt"] = config.model_prompt ? "false" : "true";
    manifest.extra["info.ablation_no_posin"] = config.model_posin ? "false" : "true";
    save_run_manifest(manifest, args.out_dir + "/run_manifest.txt");

    std::cout << "trained " << result.epochs.size() << " epochs (" << result.steps_run
              << " steps), final train accuracy " << result.final_train_accuracy << "\n"
              << "trainable " << partition.trainable_count << " / frozen "
              << partition.frozen_count << " parameters (ratio "
              << partition.trainable_ratio() << ")\n"
              << "artifacts in " << args.out_dir << "\n";
    return kExitOk;
}

// --------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string model_dir;
    std::string data_dir;
    std::string few_shot; // "N,K" when set
};

Model rebuild_model(const RunManifest& manifest) {
    const auto& extra = manifest.extra;
    auto need = [&](const std::string& key) -> const std::string& {
        auto it = extra.find(key);
        if (it == extra.end()) throw ConfigError("run manifest is missing " + key);
        return it->second;
    };
    ModelConfig model_cfg = manifest.config.model_config();
    BackboneParams backbone = resolve_backbone(need("source.backbone"), model_cfg.backbone);
    uint64_t trainable_seed = std::stoull(need("source.trainable_seed"));
    return Model::create(model_cfg, trainable_seed, std::move(backbone));
}

int run_eval(const EvalArgs& args) {
    RunManifest manifest = load_run_manifest(args.model_dir + "/run_manifest.txt");
    Model model = rebuild_model(manifest);
    LoadedCheckpoint trained = load_checkpoint(args.model_dir + "/trainable");
    fill_params_from_checkpoint(trained, model.params, /*trainable_only=*/true);

    std::ostringstream report;
    if (args.few_shot.empty()) {
        LoadedDataset data = load_dataset(args.data_dir + "/test_manifest.tsv");
        if (data.n_classes() != model.config.n_classes) {
            throw ParseError("model was trained for " + std::to_string(model.config.n_classes) +
                             " classes but the dataset has " + std::to_string(data.n_classes()));
        }
        PreparedDataset prepared = prepare_dataset(data, model.config, manifest.config.seed);
        EvalResult eval = evaluate(model, prepared);
        report << render_confusion(eval, data.class_names);
    } else {
        EpisodeSpec spec;
        if (std::sscanf(args.few_shot.c_str(), "%d,%d", &spec.n_way, &spec.k_shot) != 2) {
            throw ConfigError("--few-shot expects N,K");
        }
        // episodes draw from the full train+test pool
        LoadedDataset train = load_dataset(args.data_dir + "/train_manifest.tsv");
        LoadedDataset test = load_dataset(args.data_dir + "/test_manifest.tsv");
        for (size_t i = 0; i < test.clouds.size(); ++i) {
            train.clouds.push_back(std::move(test.clouds[i]));
            train.labels.push_back(test.labels[i]);
        }
        PreparedDataset prepared = prepare_dataset(train, model.config, manifest.config.seed);
        FewShotResult fs_result = few_shot_eval(model, prepared, spec, manifest.config.seed);
        report << spec.n_way << "-way " << spec.k_shot << "-shot over " << spec.repeats
               << " episodes: " << fs_result.mean_accuracy * 100.0 << " +/- "
               << fs_result.std_accuracy * 100.0 << " (accuracy %)\n";
        report << "episodes:";
        for (double a : fs_result.per_episode) report << " " << a;
        report << "\n";
    }
    std::cout << report.str();
    atomic_write_text(args.model_dir + "/eval_results.txt", report.str());
    return kExitOk;
}

// --------------------------------------------------------------------------
// check

struct CheckArgs {
    std::string level = "fast";
    uint64_t seed = 1;
    bool corrupt_frozen = false;
};

int run_check(const CheckArgs& args) {
    CheckOptions options;
    if (args.level == "fast") {
        options.level = CheckLevel::Fast;
    } else if (args.level == "full") {
        options.level = CheckLevel::Full;
    } else {
        throw ConfigError("--level must be fast or full");
    }
    options.seed = args.seed;
    options.corrupt_frozen = args.corrupt_frozen;

    std::vector<PropertyResult> results = run_property_suite(options);
    bool all_pass = true;
    for (const auto& r : results) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%6.2fs", r.seconds);
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << " (" << buf << ") " << r.detail
                  << "\n";
        all_pass = all_pass && r.pass;
    }
    std::cout << (all_pass ? "all properties passed" : "property failures detected") << "\n";
    return all_pass ? kExitOk : kExitContract;
}

// --------------------------------------------------------------------------
// inspect-checkpoint

int run_inspect(const std::string& path) {
    CheckpointInfo info = inspect_checkpoint(path);
    std::printf("%-28s %-12s %s\n", "tensor", "shape", "bytes");
    for (const auto& row : info.rows) {
        std::string shape;
        for (size_t i = 0; i < row.shape.size(); ++i) {
            if (i) shape += "x";
            shape += std::to_string(row.shape[static_cast<size_t>(i)]);
        }
        std::printf("%-28s %-12s %llu\n", row.name.c_str(), shape.c_str(),
                     static_cast<unsigned long long>(row.bytes));
    }
    std::printf("total: %llu values, %llu bytes\n",
                static_cast<unsigned long long>(info.total_values),
                static_cast<unsigned long long>(info.total_bytes));
    const std::string* kind = info.meta.find("kind");
    const std::string* trainable = info.meta.find("trainable_params");
    const std::string* frozen = info.meta.find("frozen_params");
    if (kind) std::printf("kind: %s\n", kind->c_str());
    if (trainable && frozen) {
        const double tr = std::stod(*trainable);
        const double fr = std::stod(*frozen);
        std::printf("trainable: %s, frozen: %s, trainable ratio: %.2f%%\n", trainable->c_str(),
                    frozen->c_str(), 100.0 * tr / (tr + fr));
    } else if (kind && *kind == "backbone") {
        std::printf("frozen parameters: %llu\n",
                    static_cast<unsigned long long>(info.total_values));
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"point-prompt tuning of a frozen transformer on raw point clouds"};
    app.require_subcommand(1);

    GenDataArgs gen_args;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
    gen->add_option("--out", gen_args.out_dir, "output directory")->required();
    gen->add_option("--per-class", gen_args.per_class, "samples per class");
    gen->add_option("--classes", gen_args.classes, "comma-separated surface kinds");
    gen->add_option("--seed", gen_args.seed, "generator seed");
    gen->add_option("--points", gen_args.points, "points per cloud");
    gen->add_option("--noise", gen_args.noise, "noise sigma");

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "fine-tune the trainable subset");
    train->add_option("--config", train_args.config_file, "key = value config file");
    train->add_option("--data", train_args.data_dir, "dataset directory")->required();
    train->add_option("--backbone", train_args.backbone, "random:SEED or a checkpoint path");
    train->add_option("--out", train_args.out_dir, "run output directory")->required();
    train->add_flag("--no-prompt", train_args.no_prompt, "disable the prompt path");
    train->add_flag("--no-posin", train_args.no_posin, "disable position injection");
    train->add_option("--set", train_args.overrides, "config override key=value")
        ->take_all();

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a trained run");
    eval->add_option("--model", eval_args.model_dir, "training output directory")->required();
    eval->add_option("--data", eval_args.data_dir, "dataset directory")->required();
    eval->add_option("--few-shot", eval_args.few_shot, "N,K episode evaluation");

    CheckArgs check_args;
    CLI::App* check = app.add_subcommand("check", "run the executable property suite");
    check->add_option("--level", check_args.level, "fast or full");
    check->add_option("--seed", check_args.seed, "suite seed");
    check->add_flag("--corrupt-frozen", check_args.corrupt_frozen,
                    "test hook: corrupt a frozen tensor so frozen_hash must fail");

    std::string inspect_path;
    CLI::App* inspect = app.add_subcommand("inspect-checkpoint", "print a checkpoint's contents");
    inspect->add_option("path", inspect_path, "checkpoint directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (gen->parsed()) return run_gen_data(gen_args);
        if (train->parsed()) return run_train(train_args);
        if (eval->parsed()) return run_eval(eval_args);
        if (check->parsed()) return run_check(check_args);
        if (inspect->parsed()) return run_inspect(inspect_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitContract;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitContract;
    }
    return kExitConfig;
}
