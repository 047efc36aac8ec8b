#include "appt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace appt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace fs = std::filesystem;

void CheckpointMeta::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : items) {
        if (k == key) {
            v = value;
            return;
        }
    }
    items.emplace_back(key, value);
}

const std::string* CheckpointMeta::find(const std::string& key) const {
    for (const auto& [k, v] : items) {
        if (k == key) return &v;
    }
    return nullptr;
}

namespace {

constexpr const char* kMagic = "appt-checkpoint v1";

std::string shape_token(const Shape& s) {
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out;
}

Shape parse_shape_token(const std::string& tok, const std::string& name) {
    Shape s;
    size_t pos = 0;
    while (pos < tok.size()) {
        size_t next = tok.find('x', pos);
        if (next == std::string::npos) next = tok.size();
        try {
            s.push_back(std::stoi(tok.substr(pos, next - pos)));
        } catch (...) {
            throw ParseError("tensor " + name + ": bad shape \"" + tok + "\"");
        }
        pos = next + 1;
    }
    if (s.empty()) throw ParseError("tensor " + name + ": empty shape");
    return s;
}

void atomic_write(const std::string& path, const std::string& bytes) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write " + path);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("write failed: " + path);
    }
    fs::rename(tmp, path);
}

} // namespace

void save_checkpoint(const std::string& dir,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const CheckpointMeta& meta) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir + ": " + ec.message());

    std::string blob;
    std::ostringstream manifest;
    manifest << kMagic << "\n";
    for (const auto& [k, v] : meta.items) manifest << "meta " << k << " " << v << "\n";
    uint64_t offset = 0;
    for (const auto& [name, tensor] : tensors) {
        const uint64_t length = static_cast<uint64_t>(tensor.size()) * 4;
        manifest << "tensor " << name << " f32 " << shape_token(tensor.shape()) << " " << offset
                 << " " << length << "\n";
        const double* p = tensor.data();
        std::vector<float> f32(static_cast<size_t>(tensor.size()));
        for (int64_t i = 0; i < tensor.size(); ++i) f32[static_cast<size_t>(i)] = static_cast<float>(p[i]);
        blob.append(reinterpret_cast<const char*>(f32.data()), f32.size() * 4);
        offset += length;
    }
    atomic_write(dir + "/weights.bin", blob);
    atomic_write(dir + "/manifest.txt", manifest.str()); // manifest last: no manifest, no checkpoint
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    const std::string manifest_path = dir + "/manifest.txt";
    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open checkpoint manifest: " + manifest_path);

    std::string line;
    if (!std::getline(mf, line) || line != kMagic) {
        throw ParseError(manifest_path + ": missing checkpoint magic");
    }

    std::ifstream bf(dir + "/weights.bin", std::ios::binary | std::ios::ate);
    if (!bf) throw IoError("cannot open checkpoint blob: " + dir + "/weights.bin");
    const uint64_t blob_size = static_cast<uint64_t>(bf.tellg());

    LoadedCheckpoint out;
    std::vector<std::pair<uint64_t, uint64_t>> ranges;
    int line_no = 1;
    while (std::getline(mf, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value[0] == ' ') value.erase(0, 1);
            out.meta.set(key, value);
            continue;
        }
        if (kind != "tensor") {
            throw ParseError(manifest_path + ": line " + std::to_string(line_no) +
                             ": unknown record \"" + kind + "\"");
        }
        std::string name, dtype, shape_tok;
        uint64_t offset = 0, length = 0;
        if (!(ls >> name >> dtype >> shape_tok >> offset >> length)) {
            throw ParseError(manifest_path + ": line " + std::to_string(line_no) +
                             ": malformed tensor record");
        }
        if (dtype != "f32") throw ParseError("tensor " + name + ": unsupported dtype " + dtype);
        Shape shape = parse_shape_token(shape_tok, name);
        uint64_t count = 1;
        for (int d : shape) {
            if (d <= 0) throw ParseError("tensor " + name + ": non-positive dimension");
            count *= static_cast<uint64_t>(d);
        }
        if (length != count * 4) {
            throw ParseError("tensor " + name + ": length " + std::to_string(length) +
                             " does not match shape " + shape_tok);
        }
        if (offset + length > blob_size) {
            throw ParseError("tensor " + name + ": data range ends beyond blob end (" +
                             std::to_string(offset + length) + " > " + std::to_string(blob_size) +
                             ")");
        }
        for (const auto& [o, l] : ranges) {
            if (offset < o + l && o < offset + length) {
                throw ParseError("tensor " + name + ": blob range overlaps another tensor");
            }
        }
        ranges.emplace_back(offset, length);

        bf.seekg(static_cast<std::streamoff>(offset));
        std::vector<float> f32(count);
        bf.read(reinterpret_cast<char*>(f32.data()), static_cast<std::streamsize>(length));
        if (!bf) throw IoError("tensor " + name + ": blob read failed");
        std::vector<double> values(count);
        for (uint64_t i = 0; i < count; ++i) values[i] = static_cast<double>(f32[i]);
        if (out.tensors.count(name)) throw ParseError("tensor " + name + ": duplicate manifest entry");
        out.tensors.emplace(name, Tensor(std::move(shape), std::move(values)));
    }
    if (out.tensors.empty()) throw ParseError(manifest_path + ": checkpoint holds no tensors");
    return out;
}

void fill_params_from_checkpoint(const LoadedCheckpoint& ckpt, ParamSet& params,
                                 bool trainable_only, const std::vector<std::string>& optional) {
    for (const auto& entry : params.entries()) {
        if (trainable_only && !entry.trainable) continue;
        auto it = ckpt.tensors.find(entry.name);
        if (it == ckpt.tensors.end()) {
            bool skippable = false;
            for (const auto& name : optional) skippable = skippable || name == entry.name;
            if (skippable) continue;
            throw ParseError("checkpoint is missing tensor " + entry.name);
        }
        const Tensor& src = it->second;
        if (!src.same_shape(entry.tensor)) {
            throw ParseError("tensor " + entry.name + ": checkpoint shape " +
                             shape_str(src.shape()) + " does not match expected " +
                             shape_str(entry.tensor.shape()));
        }
        // copy into the registered storage; flags and sharing stay intact
        Tensor& dst = const_cast<Tensor&>(entry.tensor);
        std::copy_n(src.data(), src.size(), dst.data());
    }
    for (const auto& [name, tensor] : ckpt.tensors) {
        if (!params.contains(name)) {
            std::cerr << "warning: ignoring unknown checkpoint tensor " << name << "\n";
        }
    }
}

void save_backbone_checkpoint(const BackboneParams& backbone, const std::string& dir) {
    ParamSet params;
    backbone.register_into(params);
    std::vector<std::pair<std::string, Tensor>> tensors;
    for (const auto& e : params.entries()) tensors.emplace_back(e.name, e.tensor);
    CheckpointMeta meta;
    meta.set("kind", "backbone");
    meta.set("backbone.blocks", std::to_string(backbone.config.n_blocks));
    meta.set("backbone.d", std::to_string(backbone.config.d));
    meta.set("backbone.heads", std::to_string(backbone.config.n_heads));
    meta.set("backbone.mlp_hidden", std::to_string(backbone.config.resolved_mlp_hidden()));
    meta.set("backbone.cls_token", backbone.config.has_cls_token ? "true" : "false");
    meta.set("seed", std::to_string(backbone.init_seed));
    save_checkpoint(dir, tensors, meta);
}

BackboneParams load_backbone_checkpoint(const std::string& dir, const BackboneConfig& config) {
    config.validate();
    // start from a zeroed parameter set with the right shapes
    BackboneParams out;
    out.config = config;
    const int d = config.d;
    const int h = config.resolved_mlp_hidden();
    out.blocks.resize(static_cast<size_t>(config.n_blocks));
    for (auto& b : out.blocks) {
        b.wq = Tensor({d, d});
        b.bq = Tensor({1, d});
        b.wk = Tensor({d, d});
        b.bk = Tensor({1, d});
        b.wv = Tensor({d, d});
        b.bv = Tensor({1, d});
        b.wo = Tensor({d, d});
        b.bo = Tensor({1, d});
        b.ln1_g = Tensor({1, d});
        b.ln1_b = Tensor({1, d});
        b.ln2_g = Tensor({1, d});
        b.ln2_b = Tensor({1, d});
        b.mlp_w1 = Tensor({d, h});
        b.mlp_b1 = Tensor({1, h});
        b.mlp_w2 = Tensor({h, d});
        b.mlp_b2 = Tensor({1, d});
    }
    LoadedCheckpoint ckpt = load_checkpoint(dir);
    if (config.has_cls_token) {
        if (ckpt.tensors.count("cls_token")) {
            out.cls_token = Tensor({1, d});
        } else {
            // seeded stand-in when the external checkpoint lacks one
            BackboneConfig tiny = config;
            tiny.n_blocks = 1;
            out.cls_token = init_random(tiny, 1).cls_token;
        }
    }
    if (config.final_norm) {
        out.final_ln_g = Tensor::full({1, d}, 1.0); // identity fallback when absent
        out.final_ln_b = Tensor({1, d});
    }
    ParamSet params;
    out.register_into(params);
    fill_params_from_checkpoint(ckpt, params, false, {"cls_token", "final_ln.gamma", "final_ln.beta"});
    if (const std::string* s = ckpt.meta.find("seed")) {
        try {
            out.init_seed = std::stoull(*s);
        } catch (...) {
            out.init_seed = 0;
        }
    }
    return out;
}

CheckpointInfo inspect_checkpoint(const std::string& dir) {
    LoadedCheckpoint ckpt = load_checkpoint(dir);
    CheckpointInfo info;
    info.meta = ckpt.meta;
    for (const auto& [name, tensor] : ckpt.tensors) {
        CheckpointInfo::Row row;
        row.name = name;
        row.shape = tensor.shape();
        row.bytes = static_cast<uint64_t>(tensor.size()) * 4;
        info.total_values += static_cast<uint64_t>(tensor.size());
        info.total_bytes += row.bytes;
        info.rows.push_back(std::move(row));
    }
    return info;
}

} // namespace appt
