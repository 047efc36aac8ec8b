#include <doctest.h>

#include <cmath>
#include <set>

#include "appt/properties.hpp"
#include "appt/rng.hpp"
#include "appt/train.hpp"

using namespace appt;

namespace {

LoadedDataset tiny_dataset(int per_class, int n_points, uint64_t seed,
                           std::vector<SurfaceKind> kinds = {SurfaceKind::Sphere,
                                                             SurfaceKind::Cube}) {
    LoadedDataset data;
    for (const auto& k : kinds) data.class_names.push_back(surface_kind_name(k));
    for (size_t c = 0; c < kinds.size(); ++c) {
        for (int i = 0; i < per_class; ++i) {
            data.clouds.push_back(gen_synthetic(kinds[c], n_points, 0.02,
                                                Rng::derive(seed, "cloud", c * 1000 + static_cast<uint64_t>(i))));
            data.labels.push_back(static_cast<int>(c));
        }
    }
    return data;
}

Model tiny_model(uint64_t seed, int classes = 2) {
    TestModelSpec spec;
    spec.blocks = 2;
    spec.d = 16;
    spec.heads = 2;
    spec.n_groups = 4;
    spec.k = 3;
    spec.classes = classes;
    spec.seed = seed;
    spec.randomize_trainables = false; // training starts from the real init
    return make_random_model(spec);
}

} // namespace

TEST_CASE("cross_entropy closed forms") {
    Tape tape;
    Tensor logits({1, 4});
    logits.set_requires_grad(true);
    Var lv = tape.leaf(logits);
    Var loss = cross_entropy(lv, 2);
    CHECK(tape.value(loss).data()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Tape tape2;
    Var saturated = tape2.constant(Tensor({1, 3}, {20.0, 0.0, 0.0}));
    CHECK(tape2.value(cross_entropy(saturated, 0)).data()[0] <= 1e-8);

    Tape tape3;
    CHECK_THROWS_AS(cross_entropy(tape3.constant(Tensor({1, 3})), 3), ContractError);
    CHECK_THROWS_AS(cross_entropy(tape3.constant(Tensor({1, 3})), -1), ContractError);
}

TEST_CASE("cosine_lr endpoints and midpoint") {
    TrainConfig cfg;
    CHECK(cosine_lr(0, 100, cfg) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(cosine_lr(100, 100, cfg) == doctest::Approx(1e-6).epsilon(1e-12));
    CHECK(cosine_lr(50, 100, cfg) == doctest::Approx((5e-4 + 1e-6) / 2).epsilon(1e-12));
    CHECK_THROWS_AS(cosine_lr(101, 100, cfg), ContractError);
}

TEST_CASE("adamw: zero gradient with zero decay is a no-op") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(cfg);
    ParamSet params;
    Tensor w = Tensor::row({1.5, -2.0});
    w.set_requires_grad(true);
    params.add("w", w, true);
    GradList grads;
    grads.emplace_back(&params.at("w"), Tensor({1, 2}));
    opt.step(grads, 5e-4);
    CHECK(w.data()[0] == 1.5);
    CHECK(w.data()[1] == -2.0);
}

TEST_CASE("adamw: zero gradient applies only the decoupled decay") {
    TrainConfig cfg; // wd 5e-2
    AdamW opt(cfg);
    ParamSet params;
    Tensor w = Tensor::row({2.0});
    w.set_requires_grad(true);
    params.add("w", w, true);
    GradList grads;
    grads.emplace_back(&params.at("w"), Tensor({1, 1}));
    opt.step(grads, 5e-4);
    CHECK(w.data()[0] == doctest::Approx(2.0 * (1.0 - 2.5e-5)).epsilon(1e-15));
}

TEST_CASE("adamw matches a hand-stepped scalar trace on (w-1)^2") {
    TrainConfig cfg;
    cfg.weight_decay = 5e-2;
    AdamW opt(cfg);
    ParamSet params;
    Tensor w = Tensor::row({0.0});
    w.set_requires_grad(true);
    params.add("w", w, true);

    // independent scalar trace
    double ref_w = 0.0, m = 0.0, v = 0.0;
    const double lr = 1e-2, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 5e-2;
    for (int t = 1; t <= 3; ++t) {
        double g = 2.0 * (ref_w - 1.0);
        ref_w *= 1.0 - lr * wd;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double m_hat = m / (1 - std::pow(b1, t));
        double v_hat = v / (1 - std::pow(b2, t));
        ref_w -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }

    for (int t = 0; t < 3; ++t) {
        GradList grads;
        grads.emplace_back(&params.at("w"), Tensor::row({2.0 * (w.data()[0] - 1.0)}));
        opt.step(grads, 1e-2);
    }
    CHECK(std::fabs(w.data()[0] - ref_w) <= 1e-12);
}

TEST_CASE("adamw aborts the whole step on a non-finite gradient") {
    TrainConfig cfg;
    AdamW opt(cfg);
    ParamSet params;
    Tensor w = Tensor::row({1.0});
    w.set_requires_grad(true);
    params.add("w", w, true);
    GradList grads;
    grads.emplace_back(&params.at("w"), Tensor::row({std::nan("")}));
    CHECK_THROWS_AS(opt.step(grads, 1e-3), NumericError);
    CHECK(w.data()[0] == 1.0); // untouched
}

TEST_CASE("clip_grad_norm rescales only above the threshold") {
    ParamSet params;
    Tensor w = Tensor::row({0.0});
    w.set_requires_grad(true);
    params.add("w", w, true);
    GradList grads;
    grads.emplace_back(&params.at("w"), Tensor::row({3.0}));
    grads.emplace_back(&params.at("w"), Tensor::row({4.0}));
    double norm = clip_grad_norm(grads, 10.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(grads[0].second.data()[0] == 3.0);
    norm = clip_grad_norm(grads, 1.0);
    CHECK(grads[0].second.data()[0] == doctest::Approx(0.6));
    CHECK(grads[1].second.data()[0] == doctest::Approx(0.8));
}

TEST_CASE("config validation rejects degenerate schedules") {
    TrainConfig cfg;
    cfg.lr_min = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.lr_min = cfg.lr_max;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("adamw step at zero rate is exactly a no-op") {
    TrainConfig cfg;
    AdamW opt(cfg);
    ParamSet params;
    Tensor w = Tensor::row({0.7, -0.3});
    w.set_requires_grad(true);
    params.add("w", w, true);
    GradList grads;
    grads.emplace_back(&params.at("w"), Tensor::row({1.0, -2.0}));
    opt.step(grads, 0.0);
    CHECK(w.data()[0] == 0.7);
    CHECK(w.data()[1] == -0.3);
}

TEST_CASE("an epoch at vanishing rate leaves parameters and loss unchanged") {
    // lr too small to move any double: the loop runs end to end as a no-op
    Model model = tiny_model(73);
    LoadedDataset data = tiny_dataset(4, 48, 74);
    PreparedDataset prepared = prepare_dataset(data, model.config, 75);
    TrainConfig cfg;
    cfg.seed = 75;
    cfg.lr_max = 1e-300;
    cfg.lr_min = 0.0;
    AdamW opt(cfg);
    std::vector<Tensor> before;
    for (const auto& e : model.params.entries()) before.push_back(e.tensor.clone());
    int64_t step = 0;
    EpochMetrics a = train_epoch(model, prepared, opt, cfg, 0, 4, step);
    EpochMetrics b = train_epoch(model, prepared, opt, cfg, 0, 4, step);
    CHECK(a.mean_loss == b.mean_loss); // same epoch index -> same shuffle -> same bytes
    CHECK(a.train_accuracy == b.train_accuracy);
    size_t i = 0;
    for (const auto& e : model.params.entries()) {
        CHECK(e.tensor.max_abs_diff(before[i]) == 0.0);
        ++i;
    }
}

TEST_CASE("train accuracy equals an immediate re-evaluation of the train set") {
    Model model = tiny_model(76);
    LoadedDataset data = tiny_dataset(6, 48, 77);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = 78;
    TrainRunResult result = train_model(model, data, cfg);
    PreparedDataset prepared = prepare_dataset(data, model.config, cfg.seed);
    EvalResult eval = evaluate(model, prepared);
    CHECK(eval.accuracy == result.final_train_accuracy);
}

TEST_CASE("evaluate: confusion rows sum to per-class counts and random heads sit near chance") {
    TestModelSpec spec;
    spec.blocks = 2;
    spec.d = 16;
    spec.heads = 2;
    spec.n_groups = 4;
    spec.k = 3;
    spec.classes = 4;
    spec.seed = 80;
    Model model = make_random_model(spec); // random trainables: an untrained head
    LoadedDataset data = tiny_dataset(50, 48, 81,
                                      {SurfaceKind::Sphere, SurfaceKind::Cube,
                                       SurfaceKind::Cylinder, SurfaceKind::Torus});
    PreparedDataset prepared = prepare_dataset(data, model.config, 82);
    EvalResult eval = evaluate(model, prepared);
    for (int c = 0; c < 4; ++c) {
        int row = 0;
        for (int j = 0; j < 4; ++j) row += eval.confusion[static_cast<size_t>(c)][static_cast<size_t>(j)];
        CHECK(row == 50);
    }
    CHECK(eval.accuracy >= 0.15);
    CHECK(eval.accuracy <= 0.35);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
    LoadedDataset data = tiny_dataset(4, 48, 83);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 84;
    Model m1 = tiny_model(85);
    Model m2 = tiny_model(85);
    TrainRunResult r1 = train_model(m1, data, cfg);
    TrainRunResult r2 = train_model(m2, data, cfg);
    CHECK(r1.metrics_csv == r2.metrics_csv);
    for (size_t i = 0; i < m1.params.entries().size(); ++i) {
        CHECK(m1.params.entries()[i].tensor.max_abs_diff(m2.params.entries()[i].tensor) == 0.0);
    }
}

TEST_CASE("loss decreases within the first ten steps for most seeds") {
    int improved = 0;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Model model = tiny_model(Rng::derive(seed, "model"));
        LoadedDataset data = tiny_dataset(8, 48, Rng::derive(seed, "data"));
        PreparedDataset prepared = prepare_dataset(data, model.config, seed);
        TrainConfig cfg;
        cfg.seed = seed;
        cfg.batch_size = 2; // 8 batches per epoch
        AdamW opt(cfg);
        int64_t step = 0;

        // capture the first-batch loss before and after ten optimizer steps
        auto first_batch_loss = [&]() {
            Tape tape;
            BoundModel bound = BoundModel::bind(tape, model);
            Var loss;
            for (int i = 0; i < 2; ++i) {
                ForwardResult fwd = model_forward(tape, bound, model, prepared.group_rows[static_cast<size_t>(i)]);
                Var l = cross_entropy(fwd.logits, prepared.labels[static_cast<size_t>(i)]);
                loss = loss.valid() ? add(loss, l) : l;
            }
            return tape.value(scale(loss, 0.5)).data()[0];
        };
        double before = first_batch_loss();
        train_epoch(model, prepared, opt, cfg, 0, 1000, step); // 8 steps
        if (first_batch_loss() < before) ++improved;
    }
    CHECK(improved >= 9);
}

TEST_CASE("frozen tensors never move during training") {
    Model model = tiny_model(86);
    LoadedDataset data = tiny_dataset(4, 48, 87);
    FrozenBaseline baseline = frozen_baseline(model.params);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 4;
    cfg.seed = 88;
    train_model(model, data, cfg);
    verify_frozen(model.params, baseline); // must not throw

    // and the check itself trips when a frozen tensor is touched
    const_cast<Tensor&>(model.params.at("blocks.0.attn.wk").tensor).data()[3] += 1.0;
    CHECK_THROWS_AS(verify_frozen(model.params, baseline), IntegrityError);
}

TEST_CASE("few-shot episodes have the declared composition") {
    std::vector<int> labels;
    std::vector<SurfaceKind> kinds = {SurfaceKind::Sphere, SurfaceKind::Cube,
                                      SurfaceKind::Cylinder, SurfaceKind::Torus};
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < 40; ++i) labels.push_back(c);
    }
    EpisodeSpec spec;
    spec.n_way = 3;
    spec.k_shot = 10;
    std::vector<Episode> episodes = few_shot_episodes(labels, 4, spec, 90);
    REQUIRE(episodes.size() == 10);
    for (const auto& ep : episodes) {
        CHECK(ep.support.size() == 30);  // n_way * k_shot
        CHECK(ep.query.size() == 60);    // n_way * 20
        std::set<int> support(ep.support.begin(), ep.support.end());
        for (int q : ep.query) CHECK(support.count(q) == 0);
    }
    // determinism
    std::vector<Episode> again = few_shot_episodes(labels, 4, spec, 90);
    CHECK(again[0].support == episodes[0].support);
    CHECK(again[7].query == episodes[7].query);

    spec.n_way = 5;
    CHECK_THROWS_AS(few_shot_episodes(labels, 4, spec, 90), ConfigError);
    spec.n_way = 3;
    spec.k_shot = 25; // 25 + 20 > 40 samples per class
    CHECK_THROWS_AS(few_shot_episodes(labels, 4, spec, 90), ConfigError);
}
