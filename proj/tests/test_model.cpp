#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "maxw/gradcheck.hpp"
#include "maxw/model.hpp"

using namespace maxw;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.slots = 2;
  cfg.mask_channels = 3;
  cfg.decoder_stacks = 0;
  cfg.stem_channels = 3;
  cfg.stage8_channels = 4;
  cfg.stage16_channels = 4;
  cfg.decoder4_channels = 3;
  cfg.heads = 2;
  cfg.blocks16 = 1;
  cfg.blocks8 = 0;
  cfg.p2p_mode = P2PMode::conv;
  cfg.num_classes = 2;
  return cfg;
}

ModelConfig small_cfg() {
  ModelConfig cfg = tiny_cfg();
  cfg.slots = 4;
  cfg.num_classes = 3;
  return cfg;
}

std::vector<double> random_image(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return random_values(static_cast<std::size_t>(3 * cfg.height * cfg.width), rng, 0.0, 1.0);
}

Tensor weighted_sum(Graph& g, const Tensor& y, Rng& rng) {
  Tensor w = g.constant(y.shape(), random_values(y.size(), rng, -1.0, 1.0));
  return sum(mul(y, w));
}

Tensor probe_all_outputs(Graph& g, const ModelOutputs& out, Rng& rng) {
  Tensor loss = weighted_sum(g, out.mask_probs_full, rng);
  loss = add(loss, weighted_sum(g, out.class_probs, rng));
  loss = add(loss, weighted_sum(g, out.semantic_logits, rng));
  loss = add(loss, weighted_sum(g, out.g_norm, rng));
  loss = add(loss, weighted_sum(g, out.f, rng));
  return loss;
}

}  // namespace

TEST_CASE("parameter count matches the layer-by-layer audit") {
  // Default plan (64x64, 16 slots, D=32, no extra decoder stacks), summed by
  // hand from the formula next to param_count.
  ModelConfig cfg;
  Model m = Model::build(cfg, 1);
  CHECK(m.store.total_elements() == 451803u);
  CHECK(param_count(cfg) == 451803u);
}

TEST_CASE("parameter count formula tracks every configuration switch") {
  for (int stacks : {0, 1, 2}) {
    for (int b8 : {0, 1}) {
      for (P2PMode mode : {P2PMode::conv, P2PMode::axial}) {
        for (bool p2m : {true, false}) {
          ModelConfig cfg = tiny_cfg();
          cfg.decoder_stacks = stacks;
          cfg.blocks8 = b8;
          cfg.p2p_mode = mode;
          cfg.use_p2m = p2m;
          Model m = Model::build(cfg, 3);
          INFO("stacks=" << stacks << " blocks8=" << b8 << " mode="
                         << p2p_mode_name(mode) << " p2m=" << p2m);
          CHECK(m.store.total_elements() == param_count(cfg));
        }
      }
    }
  }
}

TEST_CASE("same seed builds bit-identical parameters") {
  ModelConfig cfg = small_cfg();
  Model a = Model::build(cfg, 42);
  Model b = Model::build(cfg, 42);
  REQUIRE(a.store.size() == b.store.size());
  for (int i = 0; i < a.store.size(); ++i) {
    REQUIRE(a.store[i].name == b.store[i].name);
    REQUIRE(a.store[i].value == b.store[i].value);
  }
  Model c = Model::build(cfg, 43);
  bool any_diff = false;
  for (int i = 0; i < a.store.size() && !any_diff; ++i)
    any_diff = a.store[i].value != c.store[i].value;
  CHECK(any_diff);
}

TEST_CASE("invalid configurations are rejected") {
  ModelConfig cfg = tiny_cfg();
  cfg.height = 20;
  CHECK_THROWS_AS(Model::build(cfg, 1), ConfigError);
  cfg = tiny_cfg();
  cfg.stage16_channels = 5;  // not divisible by heads=2
  CHECK_THROWS_AS(Model::build(cfg, 1), ConfigError);
  cfg = tiny_cfg();
  cfg.decoder_stacks = 3;
  CHECK_THROWS_AS(Model::build(cfg, 1), ConfigError);
  cfg = tiny_cfg();
  cfg.blocks16 = 0;
  CHECK_THROWS_AS(Model::build(cfg, 1), ConfigError);
}

TEST_CASE("forward rejects images that do not match the config") {
  Model m = Model::build(tiny_cfg(), 1);
  Graph g;
  std::vector<double> too_small(3 * 8 * 8, 0.5);
  CHECK_THROWS_AS(m.forward(g, too_small, false), DimensionError);
}

TEST_CASE("output shapes and normalizations hold across configurations") {
  struct Variant {
    int stacks;
    int b8;
    P2PMode mode;
    bool p2m;
  };
  for (const Variant& v : {Variant{0, 0, P2PMode::conv, true},
                           Variant{1, 0, P2PMode::axial, true},
                           Variant{2, 1, P2PMode::conv, false}}) {
    ModelConfig cfg = small_cfg();
    cfg.decoder_stacks = v.stacks;
    cfg.blocks8 = v.b8;
    cfg.p2p_mode = v.mode;
    cfg.use_p2m = v.p2m;
    Model m = Model::build(cfg, 11);
    Graph g;
    ModelOutputs out = m.forward(g, random_image(cfg, 5), false);
    const int h4 = cfg.height / 4, w4 = cfg.width / 4;
    INFO("stacks=" << v.stacks << " blocks8=" << v.b8);
    REQUIRE(out.mask_probs.shape() == Shape{cfg.slots, h4, w4});
    REQUIRE(out.mask_probs_full.shape() == Shape{cfg.slots, cfg.height, cfg.width});
    REQUIRE(out.class_probs.shape() == Shape{cfg.slots, cfg.num_classes + 1});
    REQUIRE(out.semantic_logits.shape() == Shape{cfg.num_classes, h4, w4});
    REQUIRE(out.g_raw.shape() == Shape{cfg.mask_channels, h4, w4});
    REQUIRE(out.g_norm.shape() == Shape{cfg.mask_channels, h4, w4});
    REQUIRE(out.f.shape() == Shape{cfg.slots, cfg.mask_channels});
    REQUIRE(out.memory.shape() == Shape{cfg.slots, cfg.stage16_channels});

    const auto& m4 = out.mask_probs.value();
    for (int p = 0; p < h4 * w4; ++p) {
      double s = 0.0;
      for (int n = 0; n < cfg.slots; ++n) s += m4[static_cast<std::size_t>(n * h4 * w4 + p)];
      REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
    }
    const auto& mf = out.mask_probs_full.value();
    const int hw = cfg.height * cfg.width;
    for (int p = 0; p < hw; p += 37) {
      double s = 0.0;
      for (int n = 0; n < cfg.slots; ++n) s += mf[static_cast<std::size_t>(n * hw + p)];
      REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
    }
    const auto& cp = out.class_probs.value();
    for (int n = 0; n < cfg.slots; ++n) {
      double s = 0.0;
      for (int c = 0; c <= cfg.num_classes; ++c)
        s += cp[static_cast<std::size_t>(n * (cfg.num_classes + 1) + c)];
      REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
    }
    const auto& gn = out.g_norm.value();
    for (int p = 0; p < h4 * w4; ++p) {
      double s = 0.0;
      for (int d = 0; d < cfg.mask_channels; ++d) {
        double v = gn[static_cast<std::size_t>(d * h4 * w4 + p)];
        s += v * v;
      }
      REQUIRE(std::sqrt(s) == Catch::Approx(1.0).margin(1e-6));
    }
  }
}

TEST_CASE("zeroed final head weights give uniform masks and classes") {
  ModelConfig cfg = small_cfg();
  Model m = Model::build(cfg, 9);
  for (const char* name : {"fhead.w2", "fhead.b2", "chead.w2", "chead.b2"}) {
    auto& v = m.store.at(name).value;
    std::fill(v.begin(), v.end(), 0.0);
  }
  Graph g;
  ModelOutputs out = m.forward(g, random_image(cfg, 2), false);
  const double um = 1.0 / cfg.slots;
  for (double v : out.mask_probs.value()) REQUIRE(v == Catch::Approx(um).margin(1e-9));
  const double uc = 1.0 / (cfg.num_classes + 1);
  for (double v : out.class_probs.value()) REQUIRE(v == Catch::Approx(uc).margin(1e-12));
}

TEST_CASE("mask head matches a scalar pipeline on two slots") {
  const double eps = kStdEps;
  const double fv[2] = {0.7, -0.3};
  const std::vector<double> gv = {0.2, -0.5, 1.0, 0.1};
  const double gf = 1.2, bf = -0.1;
  const double gp[2] = {0.9, 1.1}, bp[2] = {0.05, -0.2};

  // scalar reference
  double mean_f = (fv[0] + fv[1]) / 2.0;
  double var_f = ((fv[0] - mean_f) * (fv[0] - mean_f) + (fv[1] - mean_f) * (fv[1] - mean_f)) / 2.0;
  double fs[2];
  for (int i = 0; i < 2; ++i) fs[i] = (fv[i] - mean_f) / std::sqrt(var_f + eps) * gf + bf;
  double prod[2][4];
  for (int i = 0; i < 2; ++i)
    for (int p = 0; p < 4; ++p) prod[i][p] = fs[i] * gv[static_cast<std::size_t>(p)];
  double ps[2][4];
  for (int i = 0; i < 2; ++i) {
    double mp = 0.0;
    for (int p = 0; p < 4; ++p) mp += prod[i][p];
    mp /= 4.0;
    double vp = 0.0;
    for (int p = 0; p < 4; ++p) vp += (prod[i][p] - mp) * (prod[i][p] - mp);
    vp /= 4.0;
    for (int p = 0; p < 4; ++p) ps[i][p] = (prod[i][p] - mp) / std::sqrt(vp + eps) * gp[i] + bp[i];
  }
  double want[2][4];
  for (int p = 0; p < 4; ++p) {
    double e0 = std::exp(ps[0][p]), e1 = std::exp(ps[1][p]);
    want[0][p] = e0 / (e0 + e1);
    want[1][p] = e1 / (e0 + e1);
  }

  Graph g;
  Tensor f = g.constant({2, 1}, {fv[0], fv[1]});
  Tensor gfeat = g.constant({1, 2, 2}, gv);
  Tensor out = mask_head(f, gfeat, g.constant({1}, {gf}), g.constant({1}, {bf}),
                         g.constant({2}, {gp[0], gp[1]}), g.constant({2}, {bp[0], bp[1]}));
  REQUIRE(out.shape() == Shape{2, 2, 2});
  for (int i = 0; i < 2; ++i)
    for (int p = 0; p < 4; ++p)
      REQUIRE(out.value()[static_cast<std::size_t>(i * 4 + p)] ==
              Catch::Approx(want[i][p]).margin(1e-12));
}

TEST_CASE("mask head edge cases") {
  Graph g;
  SECTION("single slot saturates to one") {
    Tensor f = g.constant({1, 2}, {0.3, -0.8});
    Rng rng(5);
    Tensor gfeat = g.constant({2, 2, 2}, random_values(8, rng, -1.0, 1.0));
    Tensor out = mask_head(f, gfeat, g.constant({2}, {1.0, 1.0}), g.constant({2}, {0.0, 0.0}),
                           g.constant({1}, {1.0}), g.constant({1}, {0.0}));
    for (double v : out.value()) REQUIRE(v == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("identical slot features give a uniform split") {
    Tensor f = g.constant({3, 2}, {0.4, -0.2, 0.4, -0.2, 0.4, -0.2});
    Rng rng(6);
    Tensor gfeat = g.constant({2, 2, 2}, random_values(8, rng, -1.0, 1.0));
    Tensor out = mask_head(f, gfeat, g.constant({2}, {1.0, 1.0}), g.constant({2}, {0.0, 0.0}),
                           g.constant({3}, {1.0, 1.0, 1.0}), g.constant({3}, {0.0, 0.0, 0.0}));
    for (double v : out.value()) REQUIRE(v == Catch::Approx(1.0 / 3.0).margin(1e-12));
  }
  SECTION("inner dimension mismatch is rejected") {
    Tensor f = g.constant({2, 3}, std::vector<double>(6, 0.1));
    Tensor gfeat = g.constant({2, 2, 2}, std::vector<double>(8, 0.1));
    CHECK_THROWS_AS(mask_head(f, gfeat, g.constant({3}, {1.0, 1.0, 1.0}),
                              g.constant({3}, {0.0, 0.0, 0.0}), g.constant({2}, {1.0, 1.0}),
                              g.constant({2}, {0.0, 0.0})),
                    DimensionError);
  }
}

TEST_CASE("class head rows are stochastic and slot-equivariant") {
  Graph g;
  Rng rng(12);
  Tensor w1 = g.constant({4, 4}, random_values(16, rng, -0.7, 0.7));
  Tensor b1 = g.constant({4}, random_values(4, rng, -0.2, 0.2));
  Tensor w2 = g.constant({4, 3}, random_values(12, rng, -0.7, 0.7));
  Tensor b2 = g.constant({3}, random_values(3, rng, -0.2, 0.2));
  std::vector<double> mv = random_values(12, rng, -1.0, 1.0);
  Tensor mem = g.constant({3, 4}, mv);
  Tensor out = class_head(mem, w1, b1, w2, b2);
  for (int n = 0; n < 3; ++n) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += out.value()[static_cast<std::size_t>(n * 3 + c)];
    REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
  }
  // rotate the slots: row i of the permuted input is row perm[i] of the original
  const int perm[3] = {2, 0, 1};
  std::vector<double> pv(12);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      pv[static_cast<std::size_t>(i * 4 + j)] = mv[static_cast<std::size_t>(perm[i] * 4 + j)];
  Tensor pout = class_head(g.constant({3, 4}, pv), w1, b1, w2, b2);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c)
      REQUIRE(pout.value()[static_cast<std::size_t>(i * 3 + c)] ==
              Catch::Approx(out.value()[static_cast<std::size_t>(perm[i] * 3 + c)]).margin(1e-12));
}

TEST_CASE("training updates running statistics and inference replays them") {
  ModelConfig cfg = tiny_cfg();
  Model m = Model::build(cfg, 21);
  std::vector<double> img = random_image(cfg, 3);
  const std::vector<double> mean_before = m.store.at("stem.c1.bn.mean").value;
  {
    Graph g;
    m.forward(g, img, true);
  }
  CHECK(m.store.at("stem.c1.bn.mean").value != mean_before);

  Graph g1, g2;
  ModelOutputs a = m.forward(g1, img, false);
  ModelOutputs b = m.forward(g2, img, false);
  CHECK(a.mask_probs_full.value() == b.mask_probs_full.value());
  CHECK(a.class_probs.value() == b.class_probs.value());
  CHECK(a.semantic_logits.value() == b.semantic_logits.value());
  CHECK(a.f.value() == b.f.value());

  Graph g3;
  ModelOutputs t = m.forward(g3, img, true);
  CHECK(t.mask_probs_full.value() != a.mask_probs_full.value());
}

TEST_CASE("permuting memory rows permutes every slot-indexed output") {
  ModelConfig cfg = small_cfg();
  Model a = Model::build(cfg, 33);
  Model b = a;
  const std::vector<int> perm = {2, 0, 3, 1};
  auto permute_rows = [&](const std::string& name, int row_len) {
    const std::vector<double> old = a.store.at(name).value;
    auto& now = b.store.at(name).value;
    for (int i = 0; i < cfg.slots; ++i)
      for (int j = 0; j < row_len; ++j)
        now[static_cast<std::size_t>(i * row_len + j)] =
            old[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)] * row_len + j)];
  };
  permute_rows("mem.init", cfg.stage16_channels);
  permute_rows("mhead.p.g", 1);
  permute_rows("mhead.p.b", 1);

  std::vector<double> img = random_image(cfg, 8);
  Graph ga, gb;
  ModelOutputs oa = a.forward(ga, img, false);
  ModelOutputs ob = b.forward(gb, img, false);

  const int D = cfg.mask_channels;
  for (int i = 0; i < cfg.slots; ++i)
    for (int d = 0; d < D; ++d)
      REQUIRE(ob.f.value()[static_cast<std::size_t>(i * D + d)] ==
              Catch::Approx(oa.f.value()[static_cast<std::size_t>(perm[static_cast<std::size_t>(
                                i)] * D + d)])
                  .margin(1e-9));
  const int labels = cfg.num_classes + 1;
  for (int i = 0; i < cfg.slots; ++i)
    for (int c = 0; c < labels; ++c)
      REQUIRE(ob.class_probs.value()[static_cast<std::size_t>(i * labels + c)] ==
              Catch::Approx(oa.class_probs.value()[static_cast<std::size_t>(
                                perm[static_cast<std::size_t>(i)] * labels + c)])
                  .margin(1e-9));
  const int hw4 = (cfg.height / 4) * (cfg.width / 4);
  for (int i = 0; i < cfg.slots; ++i)
    for (int p = 0; p < hw4; ++p)
      REQUIRE(ob.mask_probs.value()[static_cast<std::size_t>(i * hw4 + p)] ==
              Catch::Approx(oa.mask_probs.value()[static_cast<std::size_t>(
                                perm[static_cast<std::size_t>(i)] * hw4 + p)])
                  .margin(1e-9));
}

TEST_CASE("model gradients match finite differences on a tiny configuration") {
  ModelConfig cfg = tiny_cfg();
  Model m = Model::build(cfg, 17);
  // Fresh initialization has exact symmetric cancellations (zero offsets make
  // some gradients analytically zero while finite differences see rounding
  // noise); jitter moves the check to a generic point in parameter space.
  Rng jitter(71);
  for (int i = 0; i < m.store.size(); ++i) {
    if (!m.store[i].trainable) continue;
    for (double& v : m.store[i].value) v += jitter.uniform(-0.05, 0.05);
  }
  std::vector<double> img = random_image(cfg, 4);
  std::vector<Shape> shapes;
  std::vector<std::vector<double>> values;
  for (int i = 0; i < m.store.size(); ++i) {
    shapes.push_back(m.store[i].shape);
    values.push_back(m.store[i].value);
  }
  // The probe loss is O(10), so central differences carry ~1e-10 of rounding
  // noise; gradients below 1e-5 are compared absolutely instead of relatively.
  GradReport rep = check_gradients(
      shapes, values,
      [&](Graph& g, const std::vector<Tensor>& xs) {
        BoundParams P(m.store, xs);
        ModelOutputs out = m.forward_bound(g, P, img, true);
        Rng rng(99);
        return probe_all_outputs(g, out, rng);
      },
      1e-5, 1e-4, 1e-5);
  INFO(rep.worst);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("every trainable parameter receives gradient on a stacked model") {
  // 32x32 input keeps the stride-16 grid at 2x2; on a single position the
  // normalizations are exactly degenerate and block gradient flow by design.
  ModelConfig cfg = tiny_cfg();
  cfg.height = 32;
  cfg.width = 32;
  cfg.decoder_stacks = 2;
  cfg.blocks8 = 1;
  cfg.slots = 3;
  cfg.p2p_mode = P2PMode::axial;
  Model m = Model::build(cfg, 55);
  Graph g;
  BoundParams P(g, m.store, true);
  ModelOutputs out = m.forward_bound(g, P, random_image(cfg, 6), true);
  Rng rng(100);
  Tensor loss = probe_all_outputs(g, out, rng);
  g.backward(loss);
  for (int i = 0; i < m.store.size(); ++i) {
    if (!m.store[i].trainable) continue;
    const auto& grad = P.get(i).grad();
    double mag = 0.0;
    for (double v : grad) mag += std::abs(v);
    INFO(m.store[i].name);
    CHECK(mag > 0.0);
  }
}

TEST_CASE("model manifest round-trips and rejects malformed input") {
  ModelConfig cfg = small_cfg();
  cfg.decoder_stacks = 2;
  cfg.blocks8 = 1;
  cfg.p2p_mode = P2PMode::axial;
  cfg.use_p2m = false;
  const std::string path = "test_model_manifest.txt";
  write_model_manifest(path, cfg);
  ModelConfig back = read_model_manifest(path);
  CHECK(back.height == cfg.height);
  CHECK(back.width == cfg.width);
  CHECK(back.slots == cfg.slots);
  CHECK(back.mask_channels == cfg.mask_channels);
  CHECK(back.decoder_stacks == cfg.decoder_stacks);
  CHECK(back.stem_channels == cfg.stem_channels);
  CHECK(back.stage8_channels == cfg.stage8_channels);
  CHECK(back.stage16_channels == cfg.stage16_channels);
  CHECK(back.decoder4_channels == cfg.decoder4_channels);
  CHECK(back.heads == cfg.heads);
  CHECK(back.blocks16 == cfg.blocks16);
  CHECK(back.blocks8 == cfg.blocks8);
  CHECK(back.p2p_mode == cfg.p2p_mode);
  CHECK(back.use_p2m == cfg.use_p2m);
  CHECK(back.num_classes == cfg.num_classes);
  std::remove(path.c_str());

  auto write_text = [](const std::string& p, const std::string& text) {
    std::ofstream fs(p, std::ios::binary);
    fs << text;
  };
  write_text(path, "bogus_key = 3\n");
  CHECK_THROWS_AS(read_model_manifest(path), ParseError);
  write_text(path, "slots = banana\n");
  CHECK_THROWS_AS(read_model_manifest(path), ParseError);
  write_text(path, "p2p_mode = diagonal\n");
  CHECK_THROWS_AS(read_model_manifest(path), ParseError);
  write_text(path, "height 64\n");
  CHECK_THROWS_AS(read_model_manifest(path), ParseError);
  std::remove(path.c_str());
}
