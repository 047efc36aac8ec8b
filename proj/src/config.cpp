#include "appt/config.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace appt {

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.backbone.n_blocks = backbone_blocks;
    m.backbone.d = backbone_d;
    m.backbone.n_heads = backbone_heads;
    m.backbone.mlp_hidden = backbone_mlp_hidden;
    m.backbone.has_cls_token = backbone_cls_token;
    m.backbone.pre_norm = backbone_pre_norm;
    m.backbone.final_norm = backbone_final_norm;
    m.embed.in_width = 3;
    m.embed.d_out = backbone_d;
    m.embed.stage1_width = embed_stage1;
    m.embed.stage2_width = embed_stage2;
    m.n_classes = model_classes;
    m.n_groups = group_n_s;
    m.k_neighbors = group_k;
    m.normalize_input = group_normalize;
    m.use_prompt = model_prompt;
    m.use_posin = model_posin;
    m.use_pooled_cls = model_pooled_cls;
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.lr_max = train_lr_max;
    t.lr_min = train_lr_min;
    t.weight_decay = train_weight_decay;
    t.epochs = train_epochs;
    t.batch_size = train_batch;
    t.beta1 = train_beta1;
    t.beta2 = train_beta2;
    t.adam_eps = train_eps;
    t.clip_norm = train_clip_norm;
    t.stop_train_acc = train_stop_train_acc;
    t.augment = train_augment;
    t.seed = seed;
    return t;
}

namespace {

std::string render_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& s) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        throw ConfigError("key " + key + ": expected a number, got \"" + s + "\"");
    }
}

int parse_int(const std::string& key, const std::string& s) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw ConfigError("key " + key + ": expected an integer, got \"" + s + "\"");
    }
    return v;
}

uint64_t parse_u64(const std::string& key, const std::string& s) {
    uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw ConfigError("key " + key + ": expected an unsigned integer, got \"" + s + "\"");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("key " + key + ": expected true/false, got \"" + s + "\"");
}

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define APPT_FIELD_U64(key, member)                                        \
    Field{key, [](const RunConfig& c) { return std::to_string(c.member); },  \
          [](RunConfig& c, const std::string& v) { c.member = parse_u64(key, v); }}
#define APPT_FIELD_INT(key, member)                                        \
    Field{key, [](const RunConfig& c) { return std::to_string(c.member); },  \
          [](RunConfig& c, const std::string& v) { c.member = parse_int(key, v); }}
#define APPT_FIELD_BOOL(key, member)                                          \
    Field{key, [](const RunConfig& c) { return c.member ? "true" : "false"; }, \
          [](RunConfig& c, const std::string& v) { c.member = parse_bool(key, v); }}
#define APPT_FIELD_DBL(key, member)                                     \
    Field{key, [](const RunConfig& c) { return render_double(c.member); }, \
          [](RunConfig& c, const std::string& v) { c.member = parse_double(key, v); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        APPT_FIELD_U64("run.seed", seed),
        APPT_FIELD_INT("group.n_s", group_n_s),
        APPT_FIELD_INT("group.k", group_k),
        APPT_FIELD_BOOL("group.normalize", group_normalize),
        APPT_FIELD_INT("embed.stage1", embed_stage1),
        APPT_FIELD_INT("embed.stage2", embed_stage2),
        APPT_FIELD_INT("backbone.blocks", backbone_blocks),
        APPT_FIELD_INT("backbone.d", backbone_d),
        APPT_FIELD_INT("backbone.heads", backbone_heads),
        APPT_FIELD_INT("backbone.mlp_hidden", backbone_mlp_hidden),
        APPT_FIELD_BOOL("backbone.cls_token", backbone_cls_token),
        APPT_FIELD_BOOL("backbone.pre_norm", backbone_pre_norm),
        APPT_FIELD_BOOL("backbone.final_norm", backbone_final_norm),
        APPT_FIELD_INT("model.classes", model_classes),
        APPT_FIELD_BOOL("model.prompt", model_prompt),
        APPT_FIELD_BOOL("model.posin", model_posin),
        APPT_FIELD_BOOL("model.pooled_cls", model_pooled_cls),
        APPT_FIELD_DBL("train.lr_max", train_lr_max),
        APPT_FIELD_DBL("train.lr_min", train_lr_min),
        APPT_FIELD_DBL("train.weight_decay", train_weight_decay),
        APPT_FIELD_INT("train.epochs", train_epochs),
        APPT_FIELD_INT("train.batch", train_batch),
        APPT_FIELD_DBL("train.beta1", train_beta1),
        APPT_FIELD_DBL("train.beta2", train_beta2),
        APPT_FIELD_DBL("train.eps", train_eps),
        APPT_FIELD_DBL("train.clip_norm", train_clip_norm),
        APPT_FIELD_DBL("train.stop_train_acc", train_stop_train_acc),
        APPT_FIELD_BOOL("train.augment", train_augment),
    };
    return f;
}

#undef APPT_FIELD_U64
#undef APPT_FIELD_INT
#undef APPT_FIELD_BOOL
#undef APPT_FIELD_DBL

const Field* find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (key == f.key) return &f;
    }
    return nullptr;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Parses "key = value" lines; non-config keys go to `extra` when provided,
// otherwise they are errors.
void parse_lines(std::istream& in, RunConfig& config, std::set<std::string>* seen,
                 std::map<std::string, std::string>* extra) {
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected \"key = value\"");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        const Field* f = find_field(key);
        if (f) {
            f->set(config, value);
            if (seen) seen->insert(key);
        } else if (extra && (key.rfind("source.", 0) == 0 || key.rfind("info.", 0) == 0)) {
            (*extra)[key] = value;
        } else {
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key \"" + key + "\"");
        }
    }
}

} // namespace

std::vector<std::string> run_config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
}

void set_config_key(RunConfig& config, const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown key \"" + key + "\"");
    f->set(config, value);
}

std::string get_config_key(const RunConfig& config, const std::string& key) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown key \"" + key + "\"");
    return f->get(config);
}

RunConfig parse_run_config(std::istream& in, bool require_all_keys) {
    RunConfig config;
    std::set<std::string> seen;
    parse_lines(in, config, &seen, nullptr);
    if (require_all_keys) {
        for (const auto& f : fields()) {
            if (!seen.count(f.key)) {
                throw ConfigError("missing config key \"" + std::string(f.key) + "\"");
            }
        }
    }
    return config;
}

RunConfig load_run_config(const std::string& path, bool require_all_keys) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    try {
        return parse_run_config(in, require_all_keys);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string render_run_config(const RunConfig& config) {
    std::string out;
    for (const auto& f : fields()) {
        out += f.key;
        out += " = ";
        out += f.get(config);
        out += "\n";
    }
    return out;
}

void save_run_manifest(const RunManifest& manifest, const std::string& path) {
    std::ostringstream out;
    out << "# appt run manifest\n";
    out << render_run_config(manifest.config);
    for (const auto& [k, v] : manifest.extra) out << k << " = " << v << "\n";
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write run manifest: " + path);
        f << out.str();
    }
    std::filesystem::rename(tmp, path);
}

RunManifest load_run_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open run manifest: " + path);
    RunManifest m;
    std::set<std::string> seen;
    try {
        parse_lines(in, m.config, &seen, &m.extra);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    for (const auto& f_key : run_config_keys()) {
        if (!seen.count(f_key)) {
            throw ConfigError(path + ": missing config key \"" + f_key + "\"");
        }
    }
    return m;
}

} // namespace appt
