#include <doctest.h>

#include <fstream>
#include <sstream>

#include "appt/config.hpp"
#include "test_util.hpp"

using namespace appt;
using appt_test::TempDir;

TEST_CASE("defaults follow the documented values") {
    RunConfig c;
    CHECK(c.train_lr_max == 5e-4);
    CHECK(c.train_lr_min == 1e-6);
    CHECK(c.train_weight_decay == 5e-2);
    CHECK(c.train_beta1 == 0.9);
    CHECK(c.train_beta2 == 0.999);
    CHECK(c.train_eps == 1e-8);
    CHECK(c.train_clip_norm == 10.0);
    CHECK(c.train_batch == 8);
    CHECK(c.group_n_s == 64);
    CHECK(c.group_k == 16);
}

TEST_CASE("parse accepts comments, whitespace, and overrides") {
    std::istringstream in(
        "# run configuration\n"
        "backbone.d = 256\n"
        "  backbone.heads=8\n"
        "train.lr_max = 1e-3\n"
        "model.prompt = false\n");
    RunConfig c = parse_run_config(in);
    CHECK(c.backbone_d == 256);
    CHECK(c.backbone_heads == 8);
    CHECK(c.train_lr_max == 1e-3);
    CHECK_FALSE(c.model_prompt);
    CHECK(c.group_k == 16); // untouched default
}

TEST_CASE("unknown keys are errors, not silent typos") {
    std::istringstream in("backbone.dd = 256\n");
    CHECK_THROWS_AS(parse_run_config(in), ConfigError);
    RunConfig c;
    CHECK_THROWS_AS(set_config_key(c, "train.lr", "1"), ConfigError);
}

TEST_CASE("bad values name the key") {
    std::istringstream in("backbone.d = twelve\n");
    try {
        parse_run_config(in);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("backbone.d") != std::string::npos);
    }
}

TEST_CASE("render/parse round trip preserves every field") {
    RunConfig c;
    c.backbone_d = 96;
    c.train_lr_max = 3.25e-4;
    c.model_posin = false;
    c.seed = 123456789;
    std::string text = render_run_config(c);
    std::istringstream in(text);
    RunConfig back = parse_run_config(in, /*require_all_keys=*/true);
    CHECK(render_run_config(back) == text);
}

TEST_CASE("manifest reload requires every key") {
    RunConfig c;
    std::string text = render_run_config(c);
    // drop the backbone.d line
    std::string removed;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.rfind("backbone.d ", 0) == 0) continue;
        removed += line + "\n";
    }
    std::istringstream in(removed);
    try {
        parse_run_config(in, /*require_all_keys=*/true);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("backbone.d") != std::string::npos);
    }
}

TEST_CASE("run manifest keeps source and info lines") {
    TempDir dir;
    RunManifest m;
    m.config.backbone_d = 64;
    m.extra["source.backbone"] = "random:7";
    m.extra["info.trainable_params"] = "12345";
    save_run_manifest(m, dir.str() + "/run_manifest.txt");
    RunManifest back = load_run_manifest(dir.str() + "/run_manifest.txt");
    CHECK(back.config.backbone_d == 64);
    CHECK(back.extra.at("source.backbone") == "random:7");
    CHECK(back.extra.at("info.trainable_params") == "12345");
}

TEST_CASE("model_config mirrors the run config") {
    RunConfig c;
    c.backbone_d = 32;
    c.backbone_blocks = 3;
    c.embed_stage1 = 24;
    c.model_classes = 5;
    c.group_n_s = 12;
    c.group_k = 6;
    ModelConfig m = c.model_config();
    CHECK(m.backbone.d == 32);
    CHECK(m.backbone.n_blocks == 3);
    CHECK(m.embed.d_out == 32);
    CHECK(m.embed.resolved_stage1() == 24);
    CHECK(m.embed.resolved_stage2() == 48); // default 3d/2
    CHECK(m.n_classes == 5);
    CHECK(m.n_groups == 12);
    CHECK(m.k_neighbors == 6);
}
