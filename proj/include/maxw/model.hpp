#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "maxw/attention.hpp"
#include "maxw/error.hpp"
#include "maxw/params.hpp"
#include "maxw/rng.hpp"
#include "maxw/tensor.hpp"

namespace maxw {

inline constexpr double kBnMomentum = 0.9;

// Network plan. The encoder runs stride 4 -> 8 -> 16; dual-path blocks
// operate on the stride-16 grid (optionally stride 8 first); the decoder
// returns to stride 4 where the mask/semantic heads live.
struct ModelConfig {
  int height = 64;
  int width = 64;
  int slots = 16;             // memory rows N
  int mask_channels = 32;     // D, shared by f and g
  int decoder_stacks = 0;     // extra hourglass passes after the base decode
  int stem_channels = 16;     // stride-4 width
  int stage8_channels = 32;   // stride-8 width
  int stage16_channels = 64;  // stride-16 width (= transformer channels)
  int decoder4_channels = 24; // stride-4 decoder width
  int heads = 8;
  int blocks16 = 2;           // dual-path blocks at stride 16
  int blocks8 = 0;            // optional dual-path blocks at stride 8
  P2PMode p2p_mode = P2PMode::conv;
  bool use_p2m = true;        // memory-to-pixel feedback inside blocks
  int num_classes = 5;        // real classes; heads add one no-object slot
};

inline void validate(const ModelConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (cfg.height < 16 || cfg.width < 16 || cfg.height % 16 != 0 || cfg.width % 16 != 0)
    fail("input size must be a positive multiple of 16, got " + std::to_string(cfg.height) + "x" +
         std::to_string(cfg.width));
  if (cfg.slots < 1) fail("slots must be >= 1");
  if (cfg.mask_channels < 1) fail("mask_channels must be >= 1");
  if (cfg.decoder_stacks < 0 || cfg.decoder_stacks > 2) fail("decoder_stacks must be 0, 1 or 2");
  if (cfg.stem_channels < 1 || cfg.stage8_channels < 1 || cfg.stage16_channels < 1 ||
      cfg.decoder4_channels < 1)
    fail("channel widths must be >= 1");
  if (cfg.heads < 1) fail("heads must be >= 1");
  if (cfg.blocks16 < 1) fail("blocks16 must be >= 1");
  if (cfg.blocks8 < 0) fail("blocks8 must be >= 0");
  if (cfg.stage16_channels % cfg.heads != 0)
    fail("stage16_channels must be divisible by heads");
  if (cfg.blocks8 > 0 && cfg.stage8_channels % cfg.heads != 0)
    fail("stage8_channels must be divisible by heads when blocks8 > 0");
  if (cfg.num_classes < 1) fail("num_classes must be >= 1");
}

// Parameter-count formula. Every named array the model registers, including
// running-stat buffers, in terms of the config. Convolutions whose output
// feeds a normalization directly carry no bias (the mean subtraction would
// absorb it):
//   conv3x3(ci,co)    = 9*ci*co + co
//   conv3x3nb(ci,co)  = 9*ci*co                               (bias-free)
//   conv1x1(ci,co)    = ci*co + co
//   norm(c)           = 4c            (scale, offset, running mean, running var)
//   resblock(c)       = 2*norm(c) + conv3x3nb(c,c) + conv3x3(c,c)
//   stage(ci,co)      = norm(ci) + conv3x3nb(ci,co) + norm(co) + conv3x3(co,co)
//                       + conv3x3(ci,co)                      (projection skip)
//   stem              = conv3x3nb(3,c4) + norm(c4) + conv3x3nb(c4,c4) + norm(c4)
//   block(C)          = 8C (norms) + [p2m: 4C^2] + [p2p axial: 8C^2 | conv: 18C^2+2C]
//                       + 6C^2 (joint memory attention) + 8C^2 + 6C (two FFNs)
//   memory            = N*cm + [blocks8>0: c8*c16 + c16]      (cm = c8 or c16)
//   base decode       = conv1x1(c16,c8) + conv1x1(c8,c8) + resblock(c8)
//                       + conv1x1(c8,cd4) + conv1x1(c4,cd4) + resblock(cd4)
//   stack l           = norm(cd4) + conv3x3(cd4,c8) + 2*conv1x1(c8,c8) + resblock(c8)
//                       + norm(c8) + conv3x3(c8,c16) + 2*conv1x1(c16,c16) + resblock(c16)
//                       + norm(c16) + conv1x1(c16,c8) + 2*conv1x1(c8,c8) + resblock(c8)
//                       + norm(c8) + conv1x1(c8,cd4) + min(2,l+1)*conv1x1(cd4,cd4)
//                       + resblock(cd4)
//   f head            = c16*c16 + c16 + c16*D + D
//   class head        = c16*c16 + c16 + c16*(|C|+1) + (|C|+1)
//   g head            = conv3x3nb(cd4,D) + norm(D) + conv1x1(D,D)
//   mask head         = 2D + 2N      (affine for the f and product standardizations)
//   semantic head     = conv3x3nb(cd4,cd4) + norm(cd4) + conv1x1(cd4,|C|)
inline std::size_t dual_path_block_param_count(int channels, P2PMode mode, bool use_p2m) {
  const std::size_t C = static_cast<std::size_t>(channels);
  std::size_t n = 8 * C;
  if (use_p2m) n += 4 * C * C;
  n += mode == P2PMode::axial ? 8 * C * C : 18 * C * C + 2 * C;
  n += 6 * C * C;
  n += 2 * (4 * C * C + 3 * C);
  return n;
}

inline std::size_t param_count(const ModelConfig& cfg) {
  const std::size_t c4 = static_cast<std::size_t>(cfg.stem_channels);
  const std::size_t c8 = static_cast<std::size_t>(cfg.stage8_channels);
  const std::size_t c16 = static_cast<std::size_t>(cfg.stage16_channels);
  const std::size_t cd4 = static_cast<std::size_t>(cfg.decoder4_channels);
  const std::size_t D = static_cast<std::size_t>(cfg.mask_channels);
  const std::size_t N = static_cast<std::size_t>(cfg.slots);
  const std::size_t cls = static_cast<std::size_t>(cfg.num_classes);
  auto conv = [](std::size_t ci, std::size_t co) { return 9 * ci * co + co; };
  auto convnb = [](std::size_t ci, std::size_t co) { return 9 * ci * co; };
  auto pw = [](std::size_t ci, std::size_t co) { return ci * co + co; };
  auto norm = [](std::size_t c) { return 4 * c; };
  auto resblock = [&](std::size_t c) { return 2 * norm(c) + convnb(c, c) + conv(c, c); };
  auto stage = [&](std::size_t ci, std::size_t co) {
    return norm(ci) + convnb(ci, co) + norm(co) + conv(co, co) + conv(ci, co);
  };
  std::size_t n = 0;
  n += convnb(3, c4) + norm(c4) + convnb(c4, c4) + norm(c4);  // stem
  n += stage(c4, c8) + stage(c8, c16);
  n += N * (cfg.blocks8 > 0 ? c8 : c16);  // initial memory
  for (int i = 0; i < cfg.blocks8; ++i)
    n += dual_path_block_param_count(cfg.stage8_channels, cfg.p2p_mode, cfg.use_p2m);
  if (cfg.blocks8 > 0) n += c8 * c16 + c16;  // memory width projection
  for (int i = 0; i < cfg.blocks16; ++i)
    n += dual_path_block_param_count(cfg.stage16_channels, cfg.p2p_mode, cfg.use_p2m);
  n += pw(c16, c8) + pw(c8, c8) + resblock(c8);    // base decode to stride 8
  n += pw(c8, cd4) + pw(c4, cd4) + resblock(cd4);  // base decode to stride 4
  for (int l = 0; l < cfg.decoder_stacks; ++l) {
    n += norm(cd4) + conv(cd4, c8) + 2 * pw(c8, c8) + resblock(c8);
    n += norm(c8) + conv(c8, c16) + 2 * pw(c16, c16) + resblock(c16);
    n += norm(c16) + pw(c16, c8) + 2 * pw(c8, c8) + resblock(c8);
    n += norm(c8) + pw(c8, cd4) + static_cast<std::size_t>(l >= 1 ? 2 : 1) * pw(cd4, cd4) +
         resblock(cd4);
  }
  n += c16 * c16 + c16 + c16 * D + D;              // f head
  n += c16 * c16 + c16 + c16 * (cls + 1) + cls + 1;  // class head
  n += convnb(cd4, D) + norm(D) + pw(D, D);        // g head
  n += 2 * D + 2 * N;                              // mask head standardizations
  n += convnb(cd4, cd4) + norm(cd4) + pw(cd4, cls);  // semantic head
  return n;
}

struct ModelOutputs {
  Tensor mask_probs;       // [N, H/4, W/4], softmax over slots at each pixel
  Tensor mask_probs_full;  // [N, H, W], bilinear upsample of mask_probs
  Tensor class_probs;      // [N, num_classes+1], no-object last
  Tensor semantic_logits;  // [num_classes, H/4, W/4]
  Tensor g_raw;            // [D, H/4, W/4], feeds the mask head
  Tensor g_norm;           // [D, H/4, W/4], unit-norm pixel columns
  Tensor f;                // [N, D]
  Tensor memory;           // [N, stage16_channels] after the last block
};

// m_hat = softmax over slots of standardized(f) . g, itself standardized.
// f is normalized per feature channel (statistics over slots), the product per
// slot (statistics over pixels).
inline Tensor mask_head(const Tensor& f, const Tensor& g_feat, const Tensor& gamma_f,
                        const Tensor& beta_f, const Tensor& gamma_p, const Tensor& beta_p) {
  if (f.rank() != 2 || g_feat.rank() != 3)
    throw DimensionError("mask_head: expected f [N,D] and g [D,h,w], got " +
                         shape_str(f.shape()) + " and " + shape_str(g_feat.shape()));
  if (f.dim(1) != g_feat.dim(0))
    throw DimensionError("mask_head: f " + shape_str(f.shape()) + " and g " +
                         shape_str(g_feat.shape()) + " disagree on D");
  const int N = f.dim(0), D = g_feat.dim(0), h = g_feat.dim(1), w = g_feat.dim(2);
  Tensor fs = standardize_batch(f, 1, gamma_f, beta_f, kStdEps);
  Tensor prod = matmul(fs, reshape(g_feat, {D, h * w}));  // [N, h*w]
  Tensor ps = standardize_batch(prod, 0, gamma_p, beta_p, kStdEps);
  return reshape(softmax(ps, 0), {N, h, w});
}

// Two fully-connected layers and a row softmax over num_classes+1 labels.
inline Tensor class_head(const Tensor& x_m, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                         const Tensor& b2) {
  Tensor hdn = gelu(add_bias(matmul(x_m, w1), b1, 1));
  return softmax(add_bias(matmul(hdn, w2), b2, 1), 1);
}

class Model {
 public:
  ModelConfig cfg;
  ParamStore store;

  static Model build(const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Model m;
    m.cfg = cfg;
    ParamStore& s = m.store;
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    const int c4 = cfg.stem_channels, c8 = cfg.stage8_channels, c16 = cfg.stage16_channels;
    const int cd4 = cfg.decoder4_channels, D = cfg.mask_channels, N = cfg.slots;

    auto conv = [&](const std::string& prefix, int ci, int co, bool bb, bool bias = true) {
      s.add(prefix + ".w", {co, ci * 9},
            init_normal_fan_in(static_cast<std::size_t>(co) * ci * 9,
                               static_cast<std::size_t>(ci) * 9, rng),
            true, bb, true);
      if (bias)
        s.add(prefix + ".b", {co}, init_const(static_cast<std::size_t>(co), 0.0), true, bb,
              false);
    };
    auto pw = [&](const std::string& prefix, int ci, int co, bool bb) {
      s.add(prefix + ".w", {co, ci},
            init_normal_fan_in(static_cast<std::size_t>(co) * ci, static_cast<std::size_t>(ci),
                               rng),
            true, bb, true);
      s.add(prefix + ".b", {co}, init_const(static_cast<std::size_t>(co), 0.0), true, bb, false);
    };
    auto norm = [&](const std::string& prefix, int c, bool bb) {
      const auto n = static_cast<std::size_t>(c);
      s.add(prefix + ".g", {c}, init_const(n, 1.0), true, bb, false);
      s.add(prefix + ".b", {c}, init_const(n, 0.0), true, bb, false);
      s.add(prefix + ".mean", {c}, init_const(n, 0.0), false, bb, false);
      s.add(prefix + ".var", {c}, init_const(n, 1.0), false, bb, false);
    };
    auto resblock = [&](const std::string& prefix, int c) {
      norm(prefix + ".bn1", c, false);
      conv(prefix + ".c1", c, c, false, false);
      norm(prefix + ".bn2", c, false);
      conv(prefix + ".c2", c, c, false);
    };
    auto stage = [&](const std::string& prefix, int ci, int co) {
      norm(prefix + ".bn_in", ci, true);
      conv(prefix + ".c1", ci, co, true, false);
      norm(prefix + ".bn_mid", co, true);
      conv(prefix + ".c2", co, co, true);
      conv(prefix + ".skip", ci, co, true);
    };

    conv("stem.c1", 3, c4, true, false);
    norm("stem.c1.bn", c4, true);
    conv("stem.c2", c4, c4, true, false);
    norm("stem.c2.bn", c4, true);
    stage("stage8", c4, c8);
    stage("stage16", c8, c16);

    const int cm = cfg.blocks8 > 0 ? c8 : c16;
    s.add("mem.init", {N, cm},
          init_normal_fan_in(static_cast<std::size_t>(N) * cm, static_cast<std::size_t>(cm), rng),
          true, false, false);
    for (int i = 0; i < cfg.blocks8; ++i)
      m.blocks8_.push_back(DualPathBlockDef::create(s, "tf8." + std::to_string(i), c8, cfg.heads,
                                                    c8 / cfg.heads, c8 / cfg.heads, cfg.p2p_mode,
                                                    cfg.use_p2m, rng));
    if (cfg.blocks8 > 0) {
      s.add("mem.proj.w", {c8, c16},
            init_normal_fan_in(static_cast<std::size_t>(c8) * c16, static_cast<std::size_t>(c8),
                               rng),
            true, false, true);
      s.add("mem.proj.b", {c16}, init_const(static_cast<std::size_t>(c16), 0.0), true, false,
            false);
    }
    for (int i = 0; i < cfg.blocks16; ++i)
      m.blocks16_.push_back(DualPathBlockDef::create(s, "tf16." + std::to_string(i), c16,
                                                     cfg.heads, c16 / cfg.heads, c16 / cfg.heads,
                                                     cfg.p2p_mode, cfg.use_p2m, rng));

    pw("dec8.up", c16, c8, false);
    pw("dec8.lat", c8, c8, false);
    resblock("dec8.res", c8);
    pw("dec4.up", c8, cd4, false);
    pw("dec4.lat", c4, cd4, false);
    resblock("dec4.res", cd4);
    for (int l = 0; l < cfg.decoder_stacks; ++l) {
      const std::string sp = "stack" + std::to_string(l);
      norm(sp + ".down8.bn", cd4, false);
      conv(sp + ".down8.c", cd4, c8, false);
      pw(sp + ".down8.sc0", c8, c8, false);
      pw(sp + ".down8.sc1", c8, c8, false);
      resblock(sp + ".down8.res", c8);
      norm(sp + ".down16.bn", c8, false);
      conv(sp + ".down16.c", c8, c16, false);
      pw(sp + ".down16.sc0", c16, c16, false);
      pw(sp + ".down16.sc1", c16, c16, false);
      resblock(sp + ".down16.res", c16);
      norm(sp + ".up8.bn", c16, false);
      pw(sp + ".up8.proj", c16, c8, false);
      pw(sp + ".up8.sc0", c8, c8, false);
      pw(sp + ".up8.sc1", c8, c8, false);
      resblock(sp + ".up8.res", c8);
      norm(sp + ".up4.bn", c8, false);
      pw(sp + ".up4.proj", c8, cd4, false);
      pw(sp + ".up4.sc0", cd4, cd4, false);
      if (l >= 1) pw(sp + ".up4.sc1", cd4, cd4, false);
      resblock(sp + ".up4.res", cd4);
    }

    s.add("fhead.w1", {c16, c16},
          init_normal_fan_in(static_cast<std::size_t>(c16) * c16, static_cast<std::size_t>(c16),
                             rng),
          true, false, true);
    s.add("fhead.b1", {c16}, init_const(static_cast<std::size_t>(c16), 0.0), true, false, false);
    s.add("fhead.w2", {c16, D},
          init_normal_fan_in(static_cast<std::size_t>(c16) * D, static_cast<std::size_t>(c16),
                             rng),
          true, false, true);
    s.add("fhead.b2", {D}, init_const(static_cast<std::size_t>(D), 0.0), true, false, false);
    const int labels = cfg.num_classes + 1;
    s.add("chead.w1", {c16, c16},
          init_normal_fan_in(static_cast<std::size_t>(c16) * c16, static_cast<std::size_t>(c16),
                             rng),
          true, false, true);
    s.add("chead.b1", {c16}, init_const(static_cast<std::size_t>(c16), 0.0), true, false, false);
    s.add("chead.w2", {c16, labels},
          init_normal_fan_in(static_cast<std::size_t>(c16) * labels,
                             static_cast<std::size_t>(c16), rng),
          true, false, true);
    s.add("chead.b2", {labels}, init_const(static_cast<std::size_t>(labels), 0.0), true, false,
          false);
    conv("ghead.c1", cd4, D, false, false);
    norm("ghead.bn", D, false);
    pw("ghead.c2", D, D, false);
    s.add("mhead.f.g", {D}, init_const(static_cast<std::size_t>(D), 1.0), true, false, false);
    s.add("mhead.f.b", {D}, init_const(static_cast<std::size_t>(D), 0.0), true, false, false);
    s.add("mhead.p.g", {N}, init_const(static_cast<std::size_t>(N), 1.0), true, false, false);
    s.add("mhead.p.b", {N}, init_const(static_cast<std::size_t>(N), 0.0), true, false, false);
    conv("semhead.c1", cd4, cd4, false, false);
    norm("semhead.bn", cd4, false);
    pw("semhead.cls", cd4, cfg.num_classes, false);
    return m;
  }

  // Forward pass over explicitly bound parameters so callers control whether
  // the graph tracks gradients. train=true uses batch statistics in the conv
  // path and folds them into the running buffers; train=false replays the
  // stored statistics (deterministic inference).
  ModelOutputs forward_bound(Graph& g, const BoundParams& P, const std::vector<double>& image,
                             bool train) {
    const int H = cfg.height, W = cfg.width;
    if (image.size() != static_cast<std::size_t>(3 * H * W))
      throw DimensionError("forward: image has " + std::to_string(image.size()) +
                           " values, config wants [3," + std::to_string(H) + "," +
                           std::to_string(W) + "]");
    Tensor x = g.constant({3, H, W}, image);

    auto bn = [&](const Tensor& t, const std::string& prefix) {
      const Tensor& gamma = P.get(prefix + ".g");
      const Tensor& beta = P.get(prefix + ".b");
      if (!train)
        return standardize_given(t, 0, gamma, beta, store.at(prefix + ".mean").value,
                                 store.at(prefix + ".var").value, kStdEps);
      std::vector<double> mean, var;
      Tensor y = standardize_batch(t, 0, gamma, beta, kStdEps, &mean, &var);
      auto& rm = store.at(prefix + ".mean").value;
      auto& rv = store.at(prefix + ".var").value;
      for (std::size_t i = 0; i < mean.size(); ++i) {
        rm[i] = kBnMomentum * rm[i] + (1.0 - kBnMomentum) * mean[i];
        rv[i] = kBnMomentum * rv[i] + (1.0 - kBnMomentum) * var[i];
      }
      return y;
    };
    // convolution feeding a normalization: no bias parameter exists for it
    auto conv_nb = [&](const Tensor& t, const std::string& prefix, int stride) {
      const Tensor& w = P.get(prefix + ".w");
      Tensor zero = g.constant({w.dim(0)}, std::vector<double>(static_cast<std::size_t>(w.dim(0)),
                                                               0.0));
      return conv3x3(t, w, zero, stride);
    };
    auto conv_bn_act = [&](const Tensor& t, const std::string& prefix, int stride) {
      return gelu(bn(conv_nb(t, prefix, stride), prefix + ".bn"));
    };
    auto resblock = [&](const Tensor& t, const std::string& prefix) {
      Tensor hdn = conv_nb(gelu(bn(t, prefix + ".bn1")), prefix + ".c1", 1);
      hdn = conv3x3(gelu(bn(hdn, prefix + ".bn2")), P.get(prefix + ".c2.w"),
                    P.get(prefix + ".c2.b"), 1);
      return add(t, hdn);
    };
    auto stage = [&](const Tensor& t, const std::string& prefix) {
      Tensor pre = gelu(bn(t, prefix + ".bn_in"));
      Tensor hdn = conv_nb(pre, prefix + ".c1", 2);
      hdn = conv3x3(gelu(bn(hdn, prefix + ".bn_mid")), P.get(prefix + ".c2.w"),
                    P.get(prefix + ".c2.b"), 1);
      Tensor sk = conv3x3(pre, P.get(prefix + ".skip.w"), P.get(prefix + ".skip.b"), 2);
      return add(hdn, sk);
    };
    auto pwise = [&](const Tensor& t, const std::string& prefix) {
      return conv1x1(t, P.get(prefix + ".w"), P.get(prefix + ".b"));
    };

    Tensor s2 = conv_bn_act(x, "stem.c1", 2);
    Tensor s4 = conv_bn_act(s2, "stem.c2", 2);
    Tensor s8 = stage(s4, "stage8");

    Tensor mem = P.get("mem.init");
    if (!blocks8_.empty()) {
      Tensor xp = permute(s8, {1, 2, 0});
      for (const auto& blk : blocks8_) {
        auto out = blk.apply(P, xp, mem);
        xp = out.first;
        mem = out.second;
      }
      s8 = permute(xp, {2, 0, 1});
      mem = add_bias(matmul(mem, P.get("mem.proj.w")), P.get("mem.proj.b"), 1);
    }
    Tensor s16 = stage(s8, "stage16");
    Tensor xp16 = permute(s16, {1, 2, 0});
    for (const auto& blk : blocks16_) {
      auto out = blk.apply(P, xp16, mem);
      xp16 = out.first;
      mem = out.second;
    }
    Tensor t16 = permute(xp16, {2, 0, 1});

    Tensor d8 = add(bilinear_resize(pwise(t16, "dec8.up"), H / 8, W / 8), pwise(s8, "dec8.lat"));
    d8 = resblock(d8, "dec8.res");
    Tensor d4 = add(bilinear_resize(pwise(d8, "dec4.up"), H / 4, W / 4), pwise(s4, "dec4.lat"));
    d4 = resblock(d4, "dec4.res");

    std::vector<Tensor> h4{d4}, h8{s8, d8}, h16{s16, t16};
    auto shortcuts = [&](const std::vector<Tensor>& hist, const std::string& prefix, int count) {
      Tensor acc = conv1x1(hist[hist.size() - 1], P.get(prefix + ".sc0.w"),
                           P.get(prefix + ".sc0.b"));
      if (count > 1)
        acc = add(acc, conv1x1(hist[hist.size() - 2], P.get(prefix + ".sc1.w"),
                               P.get(prefix + ".sc1.b")));
      return acc;
    };
    for (int l = 0; l < cfg.decoder_stacks; ++l) {
      const std::string sp = "stack" + std::to_string(l);
      Tensor pre4 = gelu(bn(h4.back(), sp + ".down8.bn"));
      Tensor y8 = add(conv3x3(pre4, P.get(sp + ".down8.c.w"), P.get(sp + ".down8.c.b"), 2),
                      shortcuts(h8, sp + ".down8", 2));
      h8.push_back(resblock(y8, sp + ".down8.res"));
      Tensor pre8 = gelu(bn(h8.back(), sp + ".down16.bn"));
      Tensor y16 = add(conv3x3(pre8, P.get(sp + ".down16.c.w"), P.get(sp + ".down16.c.b"), 2),
                       shortcuts(h16, sp + ".down16", 2));
      h16.push_back(resblock(y16, sp + ".down16.res"));
      Tensor pre16 = gelu(bn(h16.back(), sp + ".up8.bn"));
      Tensor z8 = add(bilinear_resize(pwise(pre16, sp + ".up8.proj"), H / 8, W / 8),
                      shortcuts(h8, sp + ".up8", 2));
      h8.push_back(resblock(z8, sp + ".up8.res"));
      Tensor pre8b = gelu(bn(h8.back(), sp + ".up4.bn"));
      Tensor z4 = add(bilinear_resize(pwise(pre8b, sp + ".up4.proj"), H / 4, W / 4),
                      shortcuts(h4, sp + ".up4", l >= 1 ? 2 : 1));
      h4.push_back(resblock(z4, sp + ".up4.res"));
    }

    Tensor sem_in = gelu(bn(conv_nb(h4.front(), "semhead.c1", 1), "semhead.bn"));
    Tensor semantic_logits = pwise(sem_in, "semhead.cls");

    Tensor gh = gelu(bn(conv_nb(h4.back(), "ghead.c1", 1), "ghead.bn"));
    Tensor g_raw = pwise(gh, "ghead.c2");
    Tensor g_norm = l2_normalize(g_raw, 0);

    Tensor fh = gelu(add_bias(matmul(mem, P.get("fhead.w1")), P.get("fhead.b1"), 1));
    Tensor f = add_bias(matmul(fh, P.get("fhead.w2")), P.get("fhead.b2"), 1);
    Tensor class_probs = class_head(mem, P.get("chead.w1"), P.get("chead.b1"), P.get("chead.w2"),
                                    P.get("chead.b2"));
    Tensor m4 = mask_head(f, g_raw, P.get("mhead.f.g"), P.get("mhead.f.b"), P.get("mhead.p.g"),
                          P.get("mhead.p.b"));
    Tensor mfull = bilinear_resize(m4, H, W);

    ModelOutputs out;
    out.mask_probs = m4;
    out.mask_probs_full = mfull;
    out.class_probs = class_probs;
    out.semantic_logits = semantic_logits;
    out.g_raw = g_raw;
    out.g_norm = g_norm;
    out.f = f;
    out.memory = mem;
    return out;
  }

  ModelOutputs forward(Graph& g, const std::vector<double>& image, bool train) {
    BoundParams P(g, store, train);
    return forward_bound(g, P, image, train);
  }

  const std::vector<DualPathBlockDef>& blocks16() const { return blocks16_; }
  const std::vector<DualPathBlockDef>& blocks8() const { return blocks8_; }

 private:
  std::vector<DualPathBlockDef> blocks8_;
  std::vector<DualPathBlockDef> blocks16_;
};

// Manifest: flat `key = value` text so checkpoints are self-describing.

inline const char* p2p_mode_name(P2PMode m) { return m == P2PMode::axial ? "axial" : "conv"; }

inline void write_model_manifest(const std::string& path, const ModelConfig& cfg) {
  std::ostringstream out;
  out << "height = " << cfg.height << "\n";
  out << "width = " << cfg.width << "\n";
  out << "slots = " << cfg.slots << "\n";
  out << "mask_channels = " << cfg.mask_channels << "\n";
  out << "decoder_stacks = " << cfg.decoder_stacks << "\n";
  out << "stem_channels = " << cfg.stem_channels << "\n";
  out << "stage8_channels = " << cfg.stage8_channels << "\n";
  out << "stage16_channels = " << cfg.stage16_channels << "\n";
  out << "decoder4_channels = " << cfg.decoder4_channels << "\n";
  out << "heads = " << cfg.heads << "\n";
  out << "blocks16 = " << cfg.blocks16 << "\n";
  out << "blocks8 = " << cfg.blocks8 << "\n";
  out << "p2p_mode = " << p2p_mode_name(cfg.p2p_mode) << "\n";
  out << "use_p2m = " << (cfg.use_p2m ? "true" : "false") << "\n";
  out << "num_classes = " << cfg.num_classes << "\n";
  std::ofstream fs(path, std::ios::binary);
  if (!fs) throw ParseError("cannot open '" + path + "' for writing");
  fs << out.str();
  if (!fs) throw ParseError("failed writing '" + path + "'");
}

namespace detail {

inline std::string trim_ws(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline int parse_int_field(const std::string& v, const std::string& key, int line) {
  try {
    std::size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw ParseError("manifest line " + std::to_string(line) + ": bad integer '" + v + "' for " +
                     key);
  }
}

}  // namespace detail

inline ModelConfig read_model_manifest(const std::string& path) {
  std::ifstream fs(path, std::ios::binary);
  if (!fs) throw ParseError("cannot open '" + path + "'");
  ModelConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(fs, line)) {
    ++lineno;
    std::string t = detail::trim_ws(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError("manifest line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim_ws(t.substr(0, eq));
    std::string val = detail::trim_ws(t.substr(eq + 1));
    auto num = [&] { return detail::parse_int_field(val, key, lineno); };
    if (key == "height") cfg.height = num();
    else if (key == "width") cfg.width = num();
    else if (key == "slots") cfg.slots = num();
    else if (key == "mask_channels") cfg.mask_channels = num();
    else if (key == "decoder_stacks") cfg.decoder_stacks = num();
    else if (key == "stem_channels") cfg.stem_channels = num();
    else if (key == "stage8_channels") cfg.stage8_channels = num();
    else if (key == "stage16_channels") cfg.stage16_channels = num();
    else if (key == "decoder4_channels") cfg.decoder4_channels = num();
    else if (key == "heads") cfg.heads = num();
    else if (key == "blocks16") cfg.blocks16 = num();
    else if (key == "blocks8") cfg.blocks8 = num();
    else if (key == "p2p_mode") {
      if (val == "axial") cfg.p2p_mode = P2PMode::axial;
      else if (val == "conv") cfg.p2p_mode = P2PMode::conv;
      else
        throw ParseError("manifest line " + std::to_string(lineno) + ": p2p_mode must be axial or conv");
    } else if (key == "use_p2m") {
      if (val == "true") cfg.use_p2m = true;
      else if (val == "false") cfg.use_p2m = false;
      else
        throw ParseError("manifest line " + std::to_string(lineno) + ": use_p2m must be true or false");
    } else if (key == "num_classes") cfg.num_classes = num();
    else
      throw ParseError("manifest line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  validate(cfg);
  return cfg;
}

}  // namespace maxw
