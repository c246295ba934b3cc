#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "maxw/params.hpp"
#include "maxw/tensor.hpp"

namespace maxw {

struct AttentionConfig {
  int heads = 8;
  int d_q = 0;
  int d_v = 0;
  int d_in = 0;
  int d_out = 0;
};

inline void validate(const AttentionConfig& cfg) {
  if (cfg.heads < 1 || cfg.d_q < 1 || cfg.d_v < 1 || cfg.d_in < 1 || cfg.d_out < 1)
    throw ContractError("attention config: heads and channel counts must be >= 1");
}

inline constexpr double kStdEps = 1e-5;

namespace detail {

inline void check_pixel_input(const Tensor& x_p, const AttentionConfig& cfg, const char* op) {
  if (x_p.rank() != 3 || x_p.dim(2) != cfg.d_in)
    throw DimensionError(std::string(op) + ": pixel input " + shape_str(x_p.shape()) +
                         " does not match d_in=" + std::to_string(cfg.d_in));
}

inline void check_memory_input(const Tensor& x_m, const AttentionConfig& cfg, const char* op) {
  if (x_m.rank() != 2 || x_m.dim(1) != cfg.d_in)
    throw DimensionError(std::string(op) + ": memory input " + shape_str(x_m.shape()) +
                         " does not match d_in=" + std::to_string(cfg.d_in));
}

inline void check_proj(const Tensor& w, int rows, int cols, const char* op, const char* which) {
  if (w.rank() != 2 || w.dim(0) != rows || w.dim(1) != cols)
    throw DimensionError(std::string(op) + ": " + which + " projection " + shape_str(w.shape()) +
                         " should be [" + std::to_string(rows) + "," + std::to_string(cols) + "]");
}

// [M, heads*d] -> [heads, M, d]
inline Tensor split_heads(const Tensor& x, int heads, int d) {
  Tensor r = reshape(x, {x.dim(0), heads, d});
  return permute(r, {1, 0, 2});
}

// [heads, M, d] -> [M, heads*d]
inline Tensor merge_heads(const Tensor& x) {
  Tensor r = permute(x, {1, 0, 2});
  return reshape(r, {x.dim(1), x.dim(0) * x.dim(2)});
}

}  // namespace detail

// Feedback attention: every pixel queries the N memory slots.
// y_a = Σ_n softmax_n(q_a · k_n / sqrt(d_q)) v_n, heads concatenated, then
// projected to d_out. Optional weights_out receives the [heads, H·W, N]
// attention distribution.
inline Tensor p2m_attention(const Tensor& x_p, const Tensor& x_m, const AttentionConfig& cfg,
                            const Tensor& wq, const Tensor& wk, const Tensor& wv,
                            const Tensor& wo, Tensor* weights_out = nullptr) {
  validate(cfg);
  detail::check_pixel_input(x_p, cfg, "p2m");
  detail::check_memory_input(x_m, cfg, "p2m");
  detail::check_proj(wq, cfg.d_in, cfg.heads * cfg.d_q, "p2m", "query");
  detail::check_proj(wk, cfg.d_in, cfg.heads * cfg.d_q, "p2m", "key");
  detail::check_proj(wv, cfg.d_in, cfg.heads * cfg.d_v, "p2m", "value");
  detail::check_proj(wo, cfg.heads * cfg.d_v, cfg.d_out, "p2m", "output");
  const int H = x_p.dim(0), W = x_p.dim(1);
  Tensor xp2 = reshape(x_p, {H * W, cfg.d_in});
  Tensor q = detail::split_heads(matmul(xp2, wq), cfg.heads, cfg.d_q);  // [h,HW,dq]
  Tensor k = detail::split_heads(matmul(x_m, wk), cfg.heads, cfg.d_q);  // [h,N,dq]
  Tensor v = detail::split_heads(matmul(x_m, wv), cfg.heads, cfg.d_v);  // [h,N,dv]
  Tensor scores = mul_scalar(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(cfg.d_q));
  Tensor att = softmax(scores, 2);
  if (weights_out) *weights_out = att;
  Tensor ctx = matmul(att, v);  // [h,HW,dv]
  Tensor out = matmul(detail::merge_heads(ctx), wo);
  return reshape(out, {H, W, cfg.d_out});
}

// Memory update: each slot queries the concatenation of pixel and memory
// keys/values with a single softmax over the H·W+N axis. weights_out receives
// [heads, N, H·W+N].
inline Tensor m2p_m2m_attention(const Tensor& x_p, const Tensor& x_m, const AttentionConfig& cfg,
                                const Tensor& wq, const Tensor& wkp, const Tensor& wvp,
                                const Tensor& wkm, const Tensor& wvm, const Tensor& wo,
                                Tensor* weights_out = nullptr) {
  validate(cfg);
  detail::check_pixel_input(x_p, cfg, "m2pm2m");
  detail::check_memory_input(x_m, cfg, "m2pm2m");
  detail::check_proj(wq, cfg.d_in, cfg.heads * cfg.d_q, "m2pm2m", "query");
  detail::check_proj(wkp, cfg.d_in, cfg.heads * cfg.d_q, "m2pm2m", "pixel key");
  detail::check_proj(wvp, cfg.d_in, cfg.heads * cfg.d_v, "m2pm2m", "pixel value");
  detail::check_proj(wkm, cfg.d_in, cfg.heads * cfg.d_q, "m2pm2m", "memory key");
  detail::check_proj(wvm, cfg.d_in, cfg.heads * cfg.d_v, "m2pm2m", "memory value");
  detail::check_proj(wo, cfg.heads * cfg.d_v, cfg.d_out, "m2pm2m", "output");
  const int H = x_p.dim(0), W = x_p.dim(1), N = x_m.dim(0);
  Tensor xp2 = reshape(x_p, {H * W, cfg.d_in});
  Tensor q = detail::split_heads(matmul(x_m, wq), cfg.heads, cfg.d_q);     // [h,N,dq]
  Tensor kp = detail::split_heads(matmul(xp2, wkp), cfg.heads, cfg.d_q);   // [h,HW,dq]
  Tensor km = detail::split_heads(matmul(x_m, wkm), cfg.heads, cfg.d_q);   // [h,N,dq]
  Tensor vp = detail::split_heads(matmul(xp2, wvp), cfg.heads, cfg.d_v);
  Tensor vm = detail::split_heads(matmul(x_m, wvm), cfg.heads, cfg.d_v);
  Tensor k = concat({kp, km}, 1);  // [h,HW+N,dq]
  Tensor v = concat({vp, vm}, 1);  // [h,HW+N,dv]
  Tensor scores = mul_scalar(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(cfg.d_q));
  Tensor att = softmax(scores, 2);  // single softmax over the joint axis
  if (weights_out) *weights_out = att;
  Tensor ctx = matmul(att, v);  // [h,N,dv]
  Tensor out = matmul(detail::merge_heads(ctx), wo);
  return reshape(out, {N, cfg.d_out});
}

enum class Axis { height, width };

// Self-attention within rows (width axis) or columns (height axis).
// weights_out receives [H·heads, W, W] in width mode (transposed geometry in
// height mode).
inline Tensor axial_attention(const Tensor& x_p, Axis axis, const AttentionConfig& cfg,
                              const Tensor& wq, const Tensor& wk, const Tensor& wv,
                              const Tensor& wo, Tensor* weights_out = nullptr) {
  validate(cfg);
  detail::check_pixel_input(x_p, cfg, "axial");
  detail::check_proj(wq, cfg.d_in, cfg.heads * cfg.d_q, "axial", "query");
  detail::check_proj(wk, cfg.d_in, cfg.heads * cfg.d_q, "axial", "key");
  detail::check_proj(wv, cfg.d_in, cfg.heads * cfg.d_v, "axial", "value");
  detail::check_proj(wo, cfg.heads * cfg.d_v, cfg.d_out, "axial", "output");
  Tensor x = axis == Axis::width ? x_p : permute(x_p, {1, 0, 2});
  const int R = x.dim(0), L = x.dim(1);  // R independent sequences of length L
  auto seq_heads = [&](const Tensor& proj, int d) {
    // [R*L, heads*d] -> [R*heads, L, d]
    Tensor r = reshape(proj, {R, L, cfg.heads, d});
    r = permute(r, {0, 2, 1, 3});
    return reshape(r, {R * cfg.heads, L, d});
  };
  Tensor x2 = reshape(x, {R * L, cfg.d_in});
  Tensor q = seq_heads(matmul(x2, wq), cfg.d_q);
  Tensor k = seq_heads(matmul(x2, wk), cfg.d_q);
  Tensor v = seq_heads(matmul(x2, wv), cfg.d_v);
  Tensor scores = mul_scalar(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(cfg.d_q));
  Tensor att = softmax(scores, 2);
  if (weights_out) *weights_out = att;
  Tensor ctx = matmul(att, v);  // [R*h, L, dv]
  Tensor merged = reshape(ctx, {R, cfg.heads, L, cfg.d_v});
  merged = permute(merged, {0, 2, 1, 3});
  Tensor out = matmul(reshape(merged, {R * L, cfg.heads * cfg.d_v}), wo);
  out = reshape(out, {R, L, cfg.d_out});
  return axis == Axis::width ? out : permute(out, {1, 0, 2});
}

// Two linear layers with 2x expansion and a smooth nonlinearity.
inline Tensor ffn(const Tensor& x2d, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                  const Tensor& b2) {
  Tensor h = gelu(add_bias(matmul(x2d, w1), b1, 1));
  return add_bias(matmul(h, w2), b2, 1);
}

enum class P2PMode { axial, conv };

// One dual-path layer. Each path pre-standardizes its input, applies its
// attention (pixel: P2M + P2P merged by addition; memory: joint M2P/M2M),
// adds the residual, then runs a pre-standardized FFN with residual. Channel
// count is preserved so blocks stack.
struct DualPathBlockDef {
  std::string prefix;
  AttentionConfig cfg;
  P2PMode p2p_mode = P2PMode::axial;
  bool use_p2m = true;

  static DualPathBlockDef create(ParamStore& store, const std::string& prefix, int channels,
                                 int heads, int d_q, int d_v, P2PMode p2p_mode, bool use_p2m,
                                 Rng& rng) {
    DualPathBlockDef def;
    def.prefix = prefix;
    def.cfg = AttentionConfig{heads, d_q, d_v, channels, channels};
    validate(def.cfg);
    def.p2p_mode = p2p_mode;
    def.use_p2m = use_p2m;
    const int C = channels;
    const int hq = heads * d_q, hv = heads * d_v;
    auto norm = [&](const std::string& name) {
      store.add(prefix + "." + name + ".g", {C}, init_const(static_cast<std::size_t>(C), 1.0),
                true, false, false);
      store.add(prefix + "." + name + ".b", {C}, init_const(static_cast<std::size_t>(C), 0.0),
                true, false, false);
    };
    auto proj = [&](const std::string& name, int rows, int cols) {
      store.add(prefix + "." + name, {rows, cols},
                init_normal_fan_in(static_cast<std::size_t>(rows) * cols,
                                   static_cast<std::size_t>(rows), rng));
    };
    norm("norm_att_p");
    norm("norm_att_m");
    norm("norm_ffn_p");
    norm("norm_ffn_m");
    if (use_p2m) {
      proj("p2m.wq", C, hq);
      proj("p2m.wk", C, hq);
      proj("p2m.wv", C, hv);
      proj("p2m.wo", hv, C);
    }
    if (p2p_mode == P2PMode::axial) {
      for (const char* ax : {"p2p_h", "p2p_w"}) {
        proj(std::string(ax) + ".wq", C, hq);
        proj(std::string(ax) + ".wk", C, hq);
        proj(std::string(ax) + ".wv", C, hv);
        proj(std::string(ax) + ".wo", hv, C);
      }
    } else {
      store.add(prefix + ".p2p_conv.w1", {C, C * 9},
                init_normal_fan_in(static_cast<std::size_t>(C) * C * 9,
                                   static_cast<std::size_t>(C) * 9, rng));
      store.add(prefix + ".p2p_conv.b1", {C}, init_const(static_cast<std::size_t>(C), 0.0), true,
                false, false);
      store.add(prefix + ".p2p_conv.w2", {C, C * 9},
                init_normal_fan_in(static_cast<std::size_t>(C) * C * 9,
                                   static_cast<std::size_t>(C) * 9, rng));
      store.add(prefix + ".p2p_conv.b2", {C}, init_const(static_cast<std::size_t>(C), 0.0), true,
                false, false);
    }
    proj("m2pm2m.wq", C, hq);
    proj("m2pm2m.wkp", C, hq);
    proj("m2pm2m.wvp", C, hv);
    proj("m2pm2m.wkm", C, hq);
    proj("m2pm2m.wvm", C, hv);
    proj("m2pm2m.wo", hv, C);
    for (const char* path : {"ffn_p", "ffn_m"}) {
      proj(std::string(path) + ".w1", C, 2 * C);
      store.add(prefix + "." + path + ".b1", {2 * C},
                init_const(static_cast<std::size_t>(2 * C), 0.0), true, false, false);
      proj(std::string(path) + ".w2", 2 * C, C);
      store.add(prefix + "." + path + ".b2", {C}, init_const(static_cast<std::size_t>(C), 0.0),
                true, false, false);
    }
    return def;
  }

  std::pair<Tensor, Tensor> apply(const BoundParams& P, const Tensor& x_p,
                                  const Tensor& x_m) const {
    const int H = x_p.dim(0), W = x_p.dim(1), C = cfg.d_in;
    auto G = [&](const std::string& name) { return P.get(prefix + "." + name); };
    Tensor np = standardize_batch(x_p, 2, G("norm_att_p.g"), G("norm_att_p.b"), kStdEps);
    Tensor nm = standardize_batch(x_m, 1, G("norm_att_m.g"), G("norm_att_m.b"), kStdEps);

    // pixel attention sublayer: P2P plus (optionally) P2M, one shared residual
    Tensor p2p_out;
    if (p2p_mode == P2PMode::axial) {
      Tensor h = axial_attention(np, Axis::height, cfg, G("p2p_h.wq"), G("p2p_h.wk"),
                                 G("p2p_h.wv"), G("p2p_h.wo"));
      p2p_out = axial_attention(h, Axis::width, cfg, G("p2p_w.wq"), G("p2p_w.wk"), G("p2p_w.wv"),
                                G("p2p_w.wo"));
    } else {
      Tensor chw = permute(np, {2, 0, 1});
      Tensor h = gelu(conv3x3(chw, G("p2p_conv.w1"), G("p2p_conv.b1"), 1));
      Tensor o = conv3x3(h, G("p2p_conv.w2"), G("p2p_conv.b2"), 1);
      p2p_out = permute(o, {1, 2, 0});
    }
    Tensor pixel_update = p2p_out;
    if (use_p2m) {
      Tensor fb = p2m_attention(np, nm, cfg, G("p2m.wq"), G("p2m.wk"), G("p2m.wv"), G("p2m.wo"));
      pixel_update = add(pixel_update, fb);
    }
    Tensor xp1 = add(x_p, pixel_update);

    // memory attention sublayer reads the block-input features of both paths
    Tensor mem_update = m2p_m2m_attention(np, nm, cfg, G("m2pm2m.wq"), G("m2pm2m.wkp"),
                                          G("m2pm2m.wvp"), G("m2pm2m.wkm"), G("m2pm2m.wvm"),
                                          G("m2pm2m.wo"));
    Tensor xm1 = add(x_m, mem_update);

    // feed-forward sublayers
    Tensor np2 = standardize_batch(xp1, 2, G("norm_ffn_p.g"), G("norm_ffn_p.b"), kStdEps);
    Tensor ffn_p_out = ffn(reshape(np2, {H * W, C}), G("ffn_p.w1"), G("ffn_p.b1"), G("ffn_p.w2"),
                           G("ffn_p.b2"));
    Tensor xp2 = add(xp1, reshape(ffn_p_out, {H, W, C}));

    Tensor nm2 = standardize_batch(xm1, 1, G("norm_ffn_m.g"), G("norm_ffn_m.b"), kStdEps);
    Tensor ffn_m_out = ffn(nm2, G("ffn_m.w1"), G("ffn_m.b1"), G("ffn_m.w2"), G("ffn_m.b2"));
    Tensor xm2 = add(xm1, ffn_m_out);

    return {xp2, xm2};
  }
};

}  // namespace maxw
