// End-to-end checks of the appt binary: exit codes, artifact layout, and the
// determinism contracts that only hold across whole process invocations.

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "appt/config.hpp"
#include "appt/pointcloud.hpp"
#include "test_util.hpp"

using appt_test::TempDir;
namespace fs = std::filesystem;

namespace {

std::string g_binary;

int run(const std::string& args) {
    std::string cmd = g_binary + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string fast_train_overrides() {
    return " --set backbone.blocks=2 backbone.d=16 backbone.heads=2 group.n_s=4 group.k=3"
           " train.epochs=2 train.batch=4 model.classes=2";
}

} // namespace

TEST_CASE("gen-data writes files, manifests, and an 80/20 split") {
    TempDir dir;
    int rc = run("gen-data --out " + dir.str() + "/data --per-class 10 --classes sphere,cube"
                 " --seed 3 --points 64");
    REQUIRE(rc == 0);
    appt::DatasetManifest train = appt::load_manifest(dir.str() + "/data/train_manifest.tsv");
    appt::DatasetManifest test = appt::load_manifest(dir.str() + "/data/test_manifest.tsv");
    CHECK(train.entries.size() == 16);
    CHECK(test.entries.size() == 4);
    CHECK(train.class_names == std::vector<std::string>{"sphere", "cube"});
    int files = 0;
    for (const auto& entry : fs::directory_iterator(dir.str() + "/data")) {
        if (entry.path().extension() == ".xyz") ++files;
    }
    CHECK(files == 20);
}

TEST_CASE("gen-data is byte-deterministic under a seed") {
    TempDir dir;
    REQUIRE(run("gen-data --out " + dir.str() + "/a --per-class 3 --classes torus --seed 9 --points 32") == 0);
    REQUIRE(run("gen-data --out " + dir.str() + "/b --per-class 3 --classes torus --seed 9 --points 32") == 0);
    CHECK(read_bytes(dir.str() + "/a/torus_000.xyz") == read_bytes(dir.str() + "/b/torus_000.xyz"));
    CHECK(read_bytes(dir.str() + "/a/train_manifest.tsv") == read_bytes(dir.str() + "/b/train_manifest.tsv"));
}

TEST_CASE("gen-data rejects unknown class kinds with exit code 2") {
    TempDir dir;
    CHECK(run("gen-data --out " + dir.str() + "/x --per-class 3 --classes pyramid --seed 1") == 2);
}

TEST_CASE("train produces metrics, manifest, and a trainable checkpoint; eval reloads them") {
    TempDir dir;
    REQUIRE(run("gen-data --out " + dir.str() + "/data --per-class 10 --classes sphere,cube"
                " --seed 4 --points 64") == 0);
    int rc = run("train --data " + dir.str() + "/data --backbone random:5 --out " + dir.str() +
                 "/run" + fast_train_overrides());
    REQUIRE(rc == 0);
    CHECK(fs::exists(dir.str() + "/run/metrics.csv"));
    CHECK(fs::exists(dir.str() + "/run/run_manifest.txt"));
    CHECK(fs::exists(dir.str() + "/run/trainable/manifest.txt"));
    CHECK(fs::exists(dir.str() + "/run/trainable/weights.bin"));

    std::string csv = read_bytes(dir.str() + "/run/metrics.csv");
    CHECK(csv.rfind("epoch,step,lr,loss,accuracy\n", 0) == 0);

    rc = run("eval --model " + dir.str() + "/run --data " + dir.str() + "/data");
    CHECK(rc == 0);
    CHECK(fs::exists(dir.str() + "/run/eval_results.txt"));
    std::string results = read_bytes(dir.str() + "/run/eval_results.txt");
    CHECK(results.find("accuracy:") != std::string::npos);
    CHECK(results.find("confusion matrix") != std::string::npos);
}

TEST_CASE("two same-seed training runs emit identical metrics bytes") {
    TempDir dir;
    REQUIRE(run("gen-data --out " + dir.str() + "/data --per-class 8 --classes sphere,torus"
                " --seed 6 --points 64") == 0);
    REQUIRE(run("train --data " + dir.str() + "/data --backbone random:7 --out " + dir.str() +
                "/r1" + fast_train_overrides()) == 0);
    REQUIRE(run("train --data " + dir.str() + "/data --backbone random:7 --out " + dir.str() +
                "/r2" + fast_train_overrides()) == 0);
    CHECK(read_bytes(dir.str() + "/r1/metrics.csv") == read_bytes(dir.str() + "/r2/metrics.csv"));
    CHECK(read_bytes(dir.str() + "/r1/trainable/weights.bin") ==
          read_bytes(dir.str() + "/r2/trainable/weights.bin"));
}

TEST_CASE("ablation flags are recorded in the run manifest") {
    TempDir dir;
    REQUIRE(run("gen-data --out " + dir.str() + "/data --per-class 8 --classes sphere,cube"
                " --seed 8 --points 64") == 0);
    REQUIRE(run("train --data " + dir.str() + "/data --backbone random:9 --out " + dir.str() +
                "/run --no-prompt --no-posin" + fast_train_overrides()) == 0);
    appt::RunManifest manifest = appt::load_run_manifest(dir.str() + "/run/run_manifest.txt");
    CHECK(manifest.extra.at("info.ablation_no_prompt") == "true");
    CHECK(manifest.extra.at("info.ablation_no_posin") == "true");
    CHECK_FALSE(manifest.config.model_prompt);
    CHECK_FALSE(manifest.config.model_posin);
}

TEST_CASE("config errors exit with code 2 and name the problem key") {
    TempDir dir;
    REQUIRE(run("gen-data --out " + dir.str() + "/data --per-class 8 --classes sphere,cube"
                " --seed 2 --points 64") == 0);
    std::ofstream bad(dir.str() + "/bad.conf");
    bad << "backbone.dd = 12\n";
    bad.close();
    CHECK(run("train --config " + dir.str() + "/bad.conf --data " + dir.str() +
              "/data --backbone random:1 --out " + dir.str() + "/run") == 2);
    // class count mismatch is also a config error
    CHECK(run("train --data " + dir.str() + "/data --backbone random:1 --out " + dir.str() +
              "/run2" + fast_train_overrides() + " model.classes=3") == 2);
}

TEST_CASE("eval on a corrupt trainable checkpoint names the tensor and fails") {
    TempDir dir;
    REQUIRE(run("gen-data --out " + dir.str() + "/data --per-class 8 --classes sphere,cube"
                " --seed 12 --points 64") == 0);
    REQUIRE(run("train --data " + dir.str() + "/data --backbone random:13 --out " + dir.str() +
                "/run" + fast_train_overrides()) == 0);
    // truncate the trainable blob
    std::string blob = read_bytes(dir.str() + "/run/trainable/weights.bin");
    std::ofstream f(dir.str() + "/run/trainable/weights.bin", std::ios::binary);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size() / 2));
    f.close();
    CHECK(run("eval --model " + dir.str() + "/run --data " + dir.str() + "/data") == 1);
}

TEST_CASE("missing run manifest key is a config error naming the key") {
    TempDir dir;
    REQUIRE(run("gen-data --out " + dir.str() + "/data --per-class 8 --classes sphere,cube"
                " --seed 14 --points 64") == 0);
    REQUIRE(run("train --data " + dir.str() + "/data --backbone random:15 --out " + dir.str() +
                "/run" + fast_train_overrides()) == 0);
    std::string manifest = read_bytes(dir.str() + "/run/run_manifest.txt");
    std::string stripped;
    std::istringstream lines(manifest);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.rfind("backbone.d ", 0) == 0) continue;
        stripped += line + "\n";
    }
    std::ofstream(dir.str() + "/run/run_manifest.txt", std::ios::binary) << stripped;
    CHECK(run("eval --model " + dir.str() + "/run --data " + dir.str() + "/data") == 2);
}

TEST_CASE("few-shot eval prints a mean and standard deviation") {
    TempDir dir;
    REQUIRE(run("gen-data --out " + dir.str() + "/data --per-class 32 --classes sphere,cube,cylinder"
                " --seed 16 --points 64") == 0);
    REQUIRE(run("train --data " + dir.str() + "/data --backbone random:17 --out " + dir.str() +
                "/run" + fast_train_overrides() + " model.classes=3 train.epochs=1") == 0);
    REQUIRE(run("eval --model " + dir.str() + "/run --data " + dir.str() +
                "/data --few-shot 2,5") == 0);
    std::string results = read_bytes(dir.str() + "/run/eval_results.txt");
    CHECK(results.find("2-way 5-shot over 10 episodes") != std::string::npos);
    CHECK(results.find("+/-") != std::string::npos);
}

TEST_CASE("inspect-checkpoint prints the tensor table and the trainable ratio") {
    TempDir dir;
    REQUIRE(run("gen-data --out " + dir.str() + "/data --per-class 8 --classes sphere,cube"
                " --seed 18 --points 64") == 0);
    REQUIRE(run("train --data " + dir.str() + "/data --backbone random:19 --out " + dir.str() +
                "/run" + fast_train_overrides()) == 0);
    std::string cmd = g_binary + " inspect-checkpoint " + dir.str() + "/run/trainable > " +
                      dir.str() + "/inspect.txt 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    std::string out = read_bytes(dir.str() + "/inspect.txt");
    CHECK(out.find("head.w") != std::string::npos);
    CHECK(out.find("posin.kernel") != std::string::npos);
    CHECK(out.find("trainable ratio") != std::string::npos);

    // empty checkpoint directory: parse error, nonzero exit
    fs::create_directories(dir.str() + "/empty");
    std::ofstream(dir.str() + "/empty/manifest.txt").close();
    std::ofstream(dir.str() + "/empty/weights.bin").close();
    CHECK(run("inspect-checkpoint " + dir.str() + "/empty") == 1);
}

TEST_CASE("check --corrupt-frozen makes the frozen-hash property fail") {
    // the negative control for the integrity property
    CHECK(run("check --level fast --seed 5 --corrupt-frozen") == 1);
}

TEST_CASE("usage errors exit with code 2") {
    CHECK(run("train") == 2);
    CHECK(run("no-such-command") == 2);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-appt-binary>\n");
        return 1;
    }
    g_binary = argv[1];
    doctest::Context context;
    context.applyCommandLine(argc - 1, argv + 1);
    return context.run();
}

