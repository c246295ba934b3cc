#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <set>
#include <vector>

#include "maxw/trainer.hpp"

using namespace maxw;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.model.height = 32;
  cfg.model.width = 32;
  cfg.model.slots = 6;
  cfg.model.mask_channels = 6;
  cfg.model.stem_channels = 6;
  cfg.model.stage8_channels = 8;
  cfg.model.stage16_channels = 12;
  cfg.model.decoder4_channels = 8;
  cfg.model.heads = 2;
  cfg.model.blocks16 = 1;
  cfg.scene.height = 32;
  cfg.scene.width = 32;
  cfg.scene.max_things = 2;
  cfg.scene.seed = 4242;
  cfg.seed = 4242;
  cfg.batch_size = 2;
  cfg.total_steps = 10000;
  cfg.validate();
  return cfg;
}

std::vector<std::vector<double>> snapshot_trainables(const ParamStore& store) {
  std::vector<std::vector<double>> snap;
  for (int i = 0; i < store.size(); ++i)
    if (store[i].trainable) snap.push_back(store[i].value);
  return snap;
}

}  // namespace

TEST_CASE("poly learning rate follows the schedule") {
  TrainConfig cfg;
  cfg.base_lr = 0.02;
  cfg.poly_power = 0.9;
  cfg.total_steps = 100;
  CHECK(poly_lr(0, cfg) == 0.02);
  CHECK_THAT(poly_lr(50, cfg), Catch::Matchers::WithinRel(0.02 * std::pow(0.5, 0.9), 1e-12));
  CHECK_THAT(poly_lr(99, cfg), Catch::Matchers::WithinRel(0.02 * std::pow(0.01, 0.9), 1e-12));
  CHECK(poly_lr(100, cfg) == 0.0);
  CHECK(poly_lr(5000, cfg) == 0.0);
  CHECK_THROWS_AS(poly_lr(-1, cfg), ContractError);

  cfg.poly_power = 1.0;  // linear decay
  CHECK_THAT(poly_lr(25, cfg), Catch::Matchers::WithinRel(0.015, 1e-12));
}

TEST_CASE("compact scenes expand back to the exact ground truth") {
  SceneConfig sc;
  sc.height = 32;
  sc.width = 32;
  sc.max_things = 3;
  sc.seed = 99;
  for (int i = 0; i < 5; ++i) {
    Scene scene = generate_scene(sc, i);
    TrainExample e = compact_scene(scene);
    GroundTruthSet back = expand_ground_truth(e);
    REQUIRE(back.count() == scene.gt.count());
    CHECK(back.classes == scene.gt.classes);
    CHECK(back.height == scene.gt.height);
    for (int m = 0; m < back.count(); ++m)
      CHECK(back.masks[static_cast<std::size_t>(m)] == scene.gt.masks[static_cast<std::size_t>(m)]);
    CHECK(e.image.rgb == scene.image.rgb);
  }
}

TEST_CASE("datasets from memory and from disk agree") {
  SceneConfig sc;
  sc.height = 32;
  sc.width = 32;
  sc.max_things = 2;
  sc.seed = 31337;

  Dataset mem = dataset_from_config(sc, 3);
  REQUIRE(mem.size() == 3);
  CHECK(mem.height == 32);
  CHECK(mem.width == 32);

  const std::string dir = "trainer_ds_tmp";
  std::filesystem::create_directories(dir);
  std::vector<std::string> stems;
  for (int i = 0; i < 3; ++i) {
    std::string stem = "scene_" + std::to_string(i);
    write_scene(dir, stem, generate_scene(sc, i));
    stems.push_back(stem);
  }
  write_manifest(dir + "/manifest.txt", stems);

  Dataset disk = dataset_from_dir(dir);
  REQUIRE(disk.size() == 3);
  for (int i = 0; i < 3; ++i) {
    const TrainExample& a = mem.examples[static_cast<std::size_t>(i)];
    const TrainExample& b = disk.examples[static_cast<std::size_t>(i)];
    CHECK(a.image.rgb == b.image.rgb);
    CHECK(a.ids.ids == b.ids.ids);
    CHECK(a.classes == b.classes);
  }
  std::filesystem::remove_all(dir);

  CHECK_THROWS_AS(dataset_from_dir("no_such_dataset_dir"), Error);
  CHECK_THROWS_AS(dataset_from_config(sc, 0), ConfigError);
}

TEST_CASE("batch selection is a pure function of seed and step") {
  std::vector<int> a = batch_indices(7, 3, 4, 100);
  std::vector<int> b = batch_indices(7, 3, 4, 100);
  CHECK(a == b);
  CHECK(a.size() == 4);
  for (int i : a) {
    CHECK(i >= 0);
    CHECK(i < 100);
  }
  // across many steps the draws cover plenty of distinct indices
  std::set<int> seen;
  bool any_step_differs = false;
  for (int step = 0; step < 32; ++step) {
    std::vector<int> idx = batch_indices(7, step, 4, 100);
    if (idx != a) any_step_differs = true;
    seen.insert(idx.begin(), idx.end());
  }
  CHECK(any_step_differs);
  CHECK(seen.size() > 40);
  CHECK(batch_indices(8, 3, 4, 100) != a);
  CHECK_THROWS_AS(batch_indices(7, 0, 0, 100), ContractError);
  CHECK_THROWS_AS(batch_indices(7, 0, 4, 0), ContractError);
}

TEST_CASE("adam applies bias-corrected decoupled updates") {
  ParamStore store;
  store.add("head.w", {1}, {1.0}, true, false, true);
  store.add("head.nodecay", {1}, {1.0}, true, false, false);
  store.add("backbone.w", {1}, {1.0}, true, true, true);
  store.add("frozen.buf", {1}, {1.0}, false, false, false);
  AdamState st = make_adam_state(store);
  REQUIRE(st.m.size() == 4);
  CHECK(st.m[0].size() == 1);
  CHECK(st.m[3].empty());

  std::vector<std::vector<double>> grads = {{0.5}, {0.5}, {0.5}, {}};

  SECTION("zero learning rate leaves parameters untouched") {
    adam_update(store, grads, st, 0.0, 0.1);
    CHECK(store[0].value[0] == 1.0);
    CHECK(store[1].value[0] == 1.0);
    CHECK(store[2].value[0] == 1.0);
    CHECK(st.step == 1);
    CHECK(st.m[0][0] != 0.0);  // moments still accumulate
  }

  SECTION("first step matches the closed form") {
    const double lr = 0.1;
    adam_update(store, grads, st, lr, 0.25);
    const double mhat = (1.0 - kAdamBeta1) * 0.5 / (1.0 - kAdamBeta1);
    const double vhat = (1.0 - kAdamBeta2) * 0.25 / (1.0 - kAdamBeta2);
    const double adam_dir = mhat / (std::sqrt(vhat) + kAdamEps);
    CHECK_THAT(store[0].value[0],
               Catch::Matchers::WithinAbs(1.0 - lr * (adam_dir + kWeightDecay * 1.0), 1e-15));
    CHECK_THAT(store[1].value[0], Catch::Matchers::WithinAbs(1.0 - lr * adam_dir, 1e-15));
    CHECK_THAT(store[2].value[0],
               Catch::Matchers::WithinAbs(1.0 - 0.25 * lr * (adam_dir + kWeightDecay * 1.0), 1e-15));
    CHECK(store[3].value[0] == 1.0);
  }

  SECTION("layout mismatches are rejected") {
    std::vector<std::vector<double>> bad = {{0.5}, {0.5}, {0.5}};
    CHECK_THROWS_AS(adam_update(store, bad, st, 0.1, 1.0), ContractError);
    std::vector<std::vector<double>> bad2 = {{0.5, 0.5}, {0.5}, {0.5}, {}};
    CHECK_THROWS_AS(adam_update(store, bad2, st, 0.1, 1.0), ContractError);
  }
}

TEST_CASE("training steps are deterministic and reduce the loss on a frozen batch") {
  TrainConfig cfg = tiny_config();
  Dataset data = dataset_from_config(cfg.scene, 4);

  Model a = Model::build(cfg.model, cfg.seed);
  Model b = Model::build(cfg.model, cfg.seed);
  AdamState oa = make_adam_state(a.store);
  AdamState ob = make_adam_state(b.store);

  std::vector<double> totals;
  for (int step = 0; step < 10; ++step) {
    std::vector<int> idx = batch_indices(cfg.seed, 0, cfg.batch_size, data.size());
    StepLog la = train_step(a, data, idx, oa, cfg, step);
    StepLog lb = train_step(b, data, idx, ob, cfg, step);
    CHECK(la.total == lb.total);  // bitwise reproducibility
    totals.push_back(la.total);
    CHECK(std::isfinite(la.total));
    CHECK(la.lr == poly_lr(step, cfg));
  }
  for (int i = 0; i < a.store.size(); ++i) CHECK(a.store[i].value == b.store[i].value);
  CHECK(totals.back() < totals.front());

  SECTION("zero learning rate freezes the weights through a full step") {
    std::vector<std::vector<double>> before = snapshot_trainables(a.store);
    std::vector<int> idx = batch_indices(cfg.seed, 1, cfg.batch_size, data.size());
    train_step(a, data, idx, oa, cfg, cfg.total_steps + 5);  // schedule exhausted -> lr 0
    CHECK(snapshot_trainables(a.store) == before);
  }

  SECTION("bad batch indices are rejected") {
    AdamState opt = make_adam_state(a.store);
    CHECK_THROWS_AS(train_step(a, data, {}, opt, cfg, 0), ContractError);
    CHECK_THROWS_AS(train_step(a, data, {data.size()}, opt, cfg, 0), ContractError);
  }
}

TEST_CASE("a poisoned parameter aborts the step with diagnostics") {
  TrainConfig cfg = tiny_config();
  Dataset data = dataset_from_config(cfg.scene, 2);
  Model model = Model::build(cfg.model, cfg.seed);
  for (int i = 0; i < model.store.size(); ++i)
    if (model.store[i].name.rfind("semhead.", 0) == 0 && model.store[i].trainable) {
      model.store[i].value[0] = std::numeric_limits<double>::quiet_NaN();
      break;
    }
  AdamState opt = make_adam_state(model.store);
  CHECK_THROWS_MATCHES(
      train_step(model, data, {0, 1}, opt, cfg, 0), Error,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("non-finite loss")));
}

TEST_CASE("evaluation produces a coherent deterministic report") {
  TrainConfig cfg = tiny_config();
  Dataset data = dataset_from_config(cfg.scene, 2);
  Model model = Model::build(cfg.model, cfg.seed);

  PQReport r1 = evaluate(model, data);
  PQReport r2 = evaluate(model, data);
  CHECK(r1.all.pq == r2.all.pq);
  CHECK(r1.all.tp == r2.all.tp);

  int gt_segments = 0;
  for (const TrainExample& e : data.examples) gt_segments += static_cast<int>(e.classes.size());
  CHECK(r1.all.tp + r1.all.fn == gt_segments);
  CHECK(r1.all.pq >= 0.0);
  CHECK(r1.all.pq <= 1.0);
  CHECK(std::isfinite(r1.all.sq));
  CHECK(r1.things.tp + r1.stuff.tp == r1.all.tp);
}

TEST_CASE("checkpoints resume training bit for bit") {
  TrainConfig cfg = tiny_config();
  Dataset data = dataset_from_config(cfg.scene, 4);

  Model model = Model::build(cfg.model, cfg.seed);
  AdamState opt = make_adam_state(model.store);
  for (int step = 0; step < 4; ++step)
    train_step(model, data, batch_indices(cfg.seed, step, cfg.batch_size, data.size()), opt, cfg,
               step);

  const std::string stem = "trainer_ckpt_tmp";
  save_training_state(stem, model, &opt, 4);

  // uninterrupted continuation
  std::vector<double> expect;
  for (int step = 4; step < 7; ++step)
    expect.push_back(train_step(model, data,
                                batch_indices(cfg.seed, step, cfg.batch_size, data.size()), opt,
                                cfg, step)
                         .total);

  // resumed continuation
  AdamState opt2;
  std::int64_t step0 = -1;
  Model resumed = load_training_state(stem, &opt2, &step0);
  REQUIRE(step0 == 4);
  CHECK(opt2.step == opt.step - 3);  // state as of the save point
  std::vector<double> got;
  for (int step = 4; step < 7; ++step)
    got.push_back(train_step(resumed, data,
                             batch_indices(cfg.seed, step, cfg.batch_size, data.size()), opt2, cfg,
                             step)
                      .total);
  CHECK(got == expect);

  // weights-only load reproduces the saved parameters exactly
  Model fresh = load_training_state(stem);
  Model ref = load_training_state(stem, &opt2, &step0);
  for (int i = 0; i < fresh.store.size(); ++i)
    CHECK(fresh.store[i].value == ref.store[i].value);

  std::remove((stem + ".maxw").c_str());
  std::remove((stem + ".model.txt").c_str());
  CHECK_THROWS_AS(load_training_state(stem), ParseError);
}

TEST_CASE("step logs serialize to stable csv") {
  StepLog s;
  s.step = 12;
  s.lr = 0.00050625;
  s.total = 1.5;
  s.pq_pos = 0.25;
  s.pq_neg = 0.5;
  s.instdis = 0.125;
  s.maskid = 0.0625;
  s.semantic = 0.5625;
  CHECK(csv_header() == "step,lr,total,pq_pos,pq_neg,instdis,maskid,semantic");
  CHECK(csv_line(s) == "12,0.00050625,1.5,0.25,0.5,0.125,0.0625,0.5625");
}
