#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "maxw/attention.hpp"
#include "maxw/gradcheck.hpp"
#include "maxw/losses.hpp"
#include "maxw/rng.hpp"

namespace maxw {

struct SuiteCheck {
  std::string name;
  GradReport report;  // aggregated over all instances of this check
};

struct SuiteResult {
  std::vector<SuiteCheck> checks;
  bool pass = true;
  double max_rel_err = 0.0;

  void add(const std::string& name, const GradReport& rep) {
    checks.push_back({name, rep});
    pass = pass && rep.pass;
    if (rep.max_rel_err > max_rel_err) max_rel_err = rep.max_rel_err;
  }
  void merge(const SuiteResult& o) {
    for (const auto& c : o.checks) add(c.name, c.report);
  }
};

struct GradSuiteOptions {
  int instances = 100;
  std::uint64_t seed = 20260816;
};

namespace detail {

inline void fold_report(GradReport& agg, const GradReport& one, const std::string& tag) {
  agg.checks += one.checks;
  agg.pass = agg.pass && one.pass;
  if (one.max_rel_err > agg.max_rel_err) {
    agg.max_rel_err = one.max_rel_err;
    agg.worst = tag + ": " + one.worst;
  }
}

// Runs `one(rng)` `instances` times and aggregates.
inline GradReport repeat_check(int instances, std::uint64_t seed,
                               const std::function<GradReport(Rng&)>& one) {
  GradReport agg;
  for (int i = 0; i < instances; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    fold_report(agg, one(rng), "instance " + std::to_string(i));
  }
  return agg;
}

inline std::vector<double> uvals(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// magnitudes in [lo,hi], random sign — bounded away from zero
inline std::vector<double> svals(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi) * (rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0);
  return v;
}

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

// sum(y * r) for a pre-drawn random probe r: checks the full Jacobian action.
inline Tensor probe(Graph& g, const Tensor& y, const std::vector<double>& r) {
  return sum(mul(y, g.constant(y.shape(), r)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise, shaping, reduction and linear-algebra kernels
// ---------------------------------------------------------------------------

inline SuiteResult run_tensor_grad_suite(const GradSuiteOptions& opt = {}) {
  using detail::probe;
  using detail::repeat_check;
  using detail::svals;
  using detail::uvals;
  SuiteResult suite;
  std::uint64_t salt = opt.seed;

  auto check = [&](const std::string& name, const std::function<GradReport(Rng&)>& one) {
    suite.add(name, repeat_check(opt.instances, ++salt, one));
  };

  check("add_sub_neg", [](Rng& rng) {
    Shape s{2, 3};
    std::vector<double> a = svals(rng, 6, 0.1, 2.0), b = svals(rng, 6, 0.1, 2.0);
    std::vector<double> r = svals(rng, 6, 0.2, 1.0);
    return check_gradients({s, s}, {a, b}, [r](Graph& g, const std::vector<Tensor>& in) {
      return probe(g, sub(add(in[0], in[1]), neg(in[1])), r);
    });
  });

  check("mul_div", [](Rng& rng) {
    Shape s{2, 3};
    std::vector<double> a = svals(rng, 6, 0.2, 2.0), b = uvals(rng, 6, 0.5, 2.0);
    std::vector<double> r = svals(rng, 6, 0.2, 1.0);
    return check_gradients({s, s}, {a, b}, [r](Graph& g, const std::vector<Tensor>& in) {
      return probe(g, div(mul(in[0], in[1]), add_scalar(in[1], 1.0)), r);
    });
  });

  check("scalar_ops", [](Rng& rng) {
    Shape s{4};
    std::vector<double> a = svals(rng, 4, 0.1, 2.0);
    std::vector<double> r = svals(rng, 4, 0.2, 1.0);
    const double k = rng.uniform(0.5, 2.0);
    return check_gradients({s}, {a}, [r, k](Graph& g, const std::vector<Tensor>& in) {
      return probe(g, mul_scalar(add_scalar(in[0], k), 1.0 / k), r);
    });
  });

  check("exp_log", [](Rng& rng) {
    Shape s{3, 2};
    std::vector<double> a = uvals(rng, 6, 0.3, 2.5);
    std::vector<double> r = svals(rng, 6, 0.2, 1.0);
    return check_gradients({s}, {a}, [r](Graph& g, const std::vector<Tensor>& in) {
      return probe(g, log(add_scalar(exp(neg(in[0])), 0.5)), r);
    });
  });

  check("gelu", [](Rng& rng) {
    Shape s{2, 4};
    std::vector<double> a = svals(rng, 8, 0.05, 3.0);
    std::vector<double> r = svals(rng, 8, 0.2, 1.0);
    return check_gradients({s}, {a}, [r](Graph& g, const std::vector<Tensor>& in) {
      return probe(g, gelu(in[0]), r);
    });
  });

  check("reshape_permute_transpose", [](Rng& rng) {
    Shape s{2, 3, 2};
    std::vector<double> a = svals(rng, 12, 0.1, 2.0);
    std::vector<double> r = svals(rng, 12, 0.2, 1.0);
    return check_gradients({s}, {a}, [r](Graph& g, const std::vector<Tensor>& in) {
      Tensor y = permute(reshape(in[0], {3, 2, 2}), {2, 0, 1});
      return probe(g, transpose(reshape(y, {4, 3})), r);
    });
  });

  check("slice_concat", [](Rng& rng) {
    Shape s{3, 4};
    std::vector<double> a = svals(rng, 12, 0.1, 2.0);
    std::vector<double> r = svals(rng, 12, 0.2, 1.0);
    return check_gradients({s}, {a}, [r](Graph& g, const std::vector<Tensor>& in) {
      Tensor y = concat({slice(in[0], 1, 2, 2), slice(in[0], 1, 0, 2)}, 1);
      return probe(g, y, r);
    });
  });

  check("reduce_sum_mean", [](Rng& rng) {
    Shape s{3, 4};
    std::vector<double> a = svals(rng, 12, 0.1, 2.0);
    const int axis = static_cast<int>(rng.next_below(2));
    const std::size_t out = axis == 0 ? 4 : 3;
    std::vector<double> r = svals(rng, out, 0.2, 1.0);
    return check_gradients({s}, {a}, [r, axis](Graph& g, const std::vector<Tensor>& in) {
      Tensor y = add(sum(in[0], axis), mean(in[0], axis));
      return add(probe(g, y, r), add(sum(in[0]), mean(in[0])));
    });
  });

  check("softmax", [](Rng& rng) {
    Shape s{3, 4};
    std::vector<double> a = svals(rng, 12, 0.0, 3.0);
    const int axis = static_cast<int>(rng.next_below(2));
    std::vector<double> r = svals(rng, 12, 0.2, 1.0);
    return check_gradients({s}, {a}, [r, axis](Graph& g, const std::vector<Tensor>& in) {
      return probe(g, softmax(in[0], axis), r);
    });
  });

  check("matmul2d", [](Rng& rng) {
    std::vector<double> a = svals(rng, 6, 0.1, 1.5), b = svals(rng, 8, 0.1, 1.5);
    std::vector<double> r = svals(rng, 12, 0.2, 1.0);
    return check_gradients({{3, 2}, {2, 4}}, {a, b},
                           [r](Graph& g, const std::vector<Tensor>& in) {
                             return probe(g, matmul(in[0], in[1]), r);
                           });
  });

  check("matmul_batched", [](Rng& rng) {
    std::vector<double> a = svals(rng, 12, 0.1, 1.5), b = svals(rng, 12, 0.1, 1.5);
    std::vector<double> r = svals(rng, 8, 0.2, 1.0);
    return check_gradients({{2, 2, 3}, {2, 3, 2}}, {a, b},
                           [r](Graph& g, const std::vector<Tensor>& in) {
                             return probe(g, matmul(in[0], in[1]), r);
                           });
  });

  check("add_bias", [](Rng& rng) {
    std::vector<double> x = svals(rng, 12, 0.1, 2.0), b = svals(rng, 4, 0.1, 1.0);
    std::vector<double> r = svals(rng, 12, 0.2, 1.0);
    return check_gradients({{3, 4}, {4}}, {x, b}, [r](Graph& g, const std::vector<Tensor>& in) {
      return probe(g, add_bias(in[0], in[1], 1), r);
    });
  });

  check("conv1x1", [](Rng& rng) {
    std::vector<double> x = svals(rng, 2 * 9, 0.1, 1.5);
    std::vector<double> w = svals(rng, 6, 0.1, 1.0), b = svals(rng, 3, 0.1, 0.5);
    std::vector<double> r = svals(rng, 3 * 9, 0.2, 1.0);
    return check_gradients({{2, 3, 3}, {3, 2}, {3}}, {x, w, b},
                           [r](Graph& g, const std::vector<Tensor>& in) {
                             return probe(g, conv1x1(in[0], in[1], in[2]), r);
                           });
  });

  check("im2col3x3", [](Rng& rng) {
    std::vector<double> x = svals(rng, 2 * 16, 0.1, 1.5);
    std::vector<double> r = svals(rng, 18 * 16, 0.2, 1.0);
    return check_gradients({{2, 4, 4}}, {x}, [r](Graph& g, const std::vector<Tensor>& in) {
      return probe(g, im2col3x3(in[0], 1), r);
    });
  });

  check("conv3x3", [](Rng& rng) {
    const int stride = 1 + static_cast<int>(rng.next_below(2));
    const int out_hw = stride == 1 ? 16 : 4;
    std::vector<double> x = svals(rng, 2 * 16, 0.1, 1.5);
    std::vector<double> w = svals(rng, 2 * 18, 0.05, 0.5), b = svals(rng, 2, 0.1, 0.5);
    std::vector<double> r = svals(rng, static_cast<std::size_t>(2 * out_hw), 0.2, 1.0);
    return check_gradients({{2, 4, 4}, {2, 18}, {2}}, {x, w, b},
                           [r, stride](Graph& g, const std::vector<Tensor>& in) {
                             return probe(g, conv3x3(in[0], in[1], in[2], stride), r);
                           });
  });

  check("bilinear_resize", [](Rng& rng) {
    const bool up = rng.next_below(2) == 0;
    const int oh = up ? 5 : 2, ow = up ? 6 : 2;
    std::vector<double> x = svals(rng, 2 * 9, 0.1, 1.5);
    std::vector<double> r = svals(rng, static_cast<std::size_t>(2 * oh * ow), 0.2, 1.0);
    return check_gradients({{2, 3, 3}}, {x}, [r, oh, ow](Graph& g, const std::vector<Tensor>& in) {
      return probe(g, bilinear_resize(in[0], oh, ow), r);
    });
  });

  check("standardize_batch", [](Rng& rng) {
    std::vector<double> x = svals(rng, 3 * 4, 0.2, 2.0);
    std::vector<double> gm = uvals(rng, 3, 0.5, 1.5), bt = svals(rng, 3, 0.1, 0.5);
    std::vector<double> r = svals(rng, 12, 0.2, 1.0);
    return check_gradients({{3, 2, 2}, {3}, {3}}, {x, gm, bt},
                           [r](Graph& g, const std::vector<Tensor>& in) {
                             Tensor y = standardize_batch(in[0], 0, in[1], in[2], kStdEps);
                             return probe(g, y, r);
                           });
  });

  check("standardize_given", [](Rng& rng) {
    std::vector<double> x = svals(rng, 3 * 4, 0.2, 2.0);
    std::vector<double> gm = uvals(rng, 3, 0.5, 1.5), bt = svals(rng, 3, 0.1, 0.5);
    std::vector<double> mean = svals(rng, 3, 0.1, 0.5), var = uvals(rng, 3, 0.5, 1.5);
    std::vector<double> r = svals(rng, 12, 0.2, 1.0);
    return check_gradients({{3, 2, 2}, {3}, {3}}, {x, gm, bt},
                           [r, mean, var](Graph& g, const std::vector<Tensor>& in) {
                             Tensor y =
                                 standardize_given(in[0], 0, in[1], in[2], mean, var, kStdEps);
                             return probe(g, y, r);
                           });
  });

  check("l2_normalize", [](Rng& rng) {
    std::vector<double> x = svals(rng, 12, 0.5, 2.0);
    const int axis = static_cast<int>(rng.next_below(2));
    std::vector<double> r = svals(rng, 12, 0.2, 1.0);
    return check_gradients({{3, 4}}, {x}, [r, axis](Graph& g, const std::vector<Tensor>& in) {
      return probe(g, l2_normalize(in[0], axis), r);
    });
  });

  return suite;
}

// ---------------------------------------------------------------------------
// Attention kernels
// ---------------------------------------------------------------------------

inline SuiteResult run_attention_grad_suite(const GradSuiteOptions& opt = {}) {
  using detail::probe;
  using detail::repeat_check;
  using detail::svals;
  SuiteResult suite;
  std::uint64_t salt = opt.seed ^ 0xa77e;

  AttentionConfig cfg;
  cfg.heads = 2;
  cfg.d_q = 2;
  cfg.d_v = 2;
  cfg.d_in = 4;
  cfg.d_out = 3;
  const int H = 2, W = 3, N = 2;
  const Shape xp{H, W, cfg.d_in}, xm{N, cfg.d_in};
  const Shape wqk{cfg.d_in, cfg.heads * cfg.d_q}, wv{cfg.d_in, cfg.heads * cfg.d_v};
  const Shape wo{cfg.heads * cfg.d_v, cfg.d_out};

  auto check = [&](const std::string& name, const std::function<GradReport(Rng&)>& one) {
    suite.add(name, repeat_check(opt.instances, ++salt, one));
  };
  auto draw = [](Rng& rng, const Shape& s) { return svals(rng, detail::numel(s), 0.05, 0.8); };

  check("p2m_attention", [&, cfg](Rng& rng) {
    std::vector<std::vector<double>> v = {draw(rng, xp), draw(rng, xm), draw(rng, wqk),
                                          draw(rng, wqk), draw(rng, wv), draw(rng, wo)};
    std::vector<double> r = svals(rng, static_cast<std::size_t>(H * W * cfg.d_out), 0.2, 1.0);
    return check_gradients({xp, xm, wqk, wqk, wv, wo}, v,
                           [r, cfg](Graph& g, const std::vector<Tensor>& in) {
                             Tensor y = p2m_attention(in[0], in[1], cfg, in[2], in[3], in[4], in[5]);
                             return probe(g, y, r);
                           });
  });

  check("m2p_m2m_attention", [&, cfg](Rng& rng) {
    std::vector<std::vector<double>> v = {draw(rng, xp),  draw(rng, xm),  draw(rng, wqk),
                                          draw(rng, wqk), draw(rng, wv),  draw(rng, wqk),
                                          draw(rng, wv),  draw(rng, wo)};
    std::vector<double> r = svals(rng, static_cast<std::size_t>(N * cfg.d_out), 0.2, 1.0);
    return check_gradients({xp, xm, wqk, wqk, wv, wqk, wv, wo}, v,
                           [r, cfg](Graph& g, const std::vector<Tensor>& in) {
                             Tensor y = m2p_m2m_attention(in[0], in[1], cfg, in[2], in[3], in[4],
                                                          in[5], in[6], in[7]);
                             return probe(g, y, r);
                           });
  });

  check("axial_attention", [&, cfg](Rng& rng) {
    const Axis axis = rng.next_below(2) == 0 ? Axis::height : Axis::width;
    std::vector<std::vector<double>> v = {draw(rng, xp), draw(rng, wqk), draw(rng, wqk),
                                          draw(rng, wv), draw(rng, wo)};
    std::vector<double> r = svals(rng, static_cast<std::size_t>(H * W * cfg.d_out), 0.2, 1.0);
    return check_gradients({xp, wqk, wqk, wv, wo}, v,
                           [r, cfg, axis](Graph& g, const std::vector<Tensor>& in) {
                             Tensor y = axial_attention(in[0], axis, cfg, in[1], in[2], in[3], in[4]);
                             return probe(g, y, r);
                           });
  });

  check("ffn", [&](Rng& rng) {
    std::vector<std::vector<double>> v = {svals(rng, 12, 0.1, 1.0), svals(rng, 4 * 8, 0.05, 0.5),
                                          svals(rng, 8, 0.05, 0.3), svals(rng, 8 * 3, 0.05, 0.5),
                                          svals(rng, 3, 0.05, 0.3)};
    std::vector<double> r = svals(rng, 9, 0.2, 1.0);
    return check_gradients({{3, 4}, {4, 8}, {8}, {8, 3}, {3}}, v,
                           [r](Graph& g, const std::vector<Tensor>& in) {
                             return probe(g, ffn(in[0], in[1], in[2], in[3], in[4]), r);
                           });
  });

  return suite;
}

// ---------------------------------------------------------------------------
// Losses. The positive matching loss carries constant (gradient-stopped)
// weights, so plain central differences disagree with reverse mode through
// those weights by construction. The check therefore differentiates a
// reference with the weights frozen at the base point — an ordinary smooth
// function — and separately verifies the shipped loss produces exactly the
// reference's gradients.
// ---------------------------------------------------------------------------

namespace detail {

struct PqPosInstance {
  GroundTruthSet gt;
  MatchAssignment match;
  Shape mask_shape, class_shape;
  std::vector<double> masks, probs;
};

inline PqPosInstance draw_pq_pos_instance(Rng& rng) {
  PqPosInstance inst;
  const int K = 2, N = 3, h = 2, w = 2, classes = 3;
  inst.gt.height = h;
  inst.gt.width = w;
  for (int k = 0; k < K; ++k) {
    std::vector<double> m(static_cast<std::size_t>(h * w), 0.0);
    m[static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(h * w)))] = 1.0;
    m[static_cast<std::size_t>(k)] = 1.0;
    inst.gt.masks.push_back(m);
    inst.gt.classes.push_back(static_cast<int>(rng.next_below(classes)));
  }
  const int s0 = static_cast<int>(rng.next_below(N));
  const int s1 = (s0 + 1 + static_cast<int>(rng.next_below(N - 1))) % N;
  inst.match.pairs = {{0, s0}, {1, s1}};
  for (int s = 0; s < N; ++s)
    if (s != s0 && s != s1) inst.match.negatives.push_back(s);
  inst.mask_shape = {N, h, w};
  inst.class_shape = {N, classes + 1};
  inst.masks = uvals(rng, static_cast<std::size_t>(N * h * w), 0.05, 1.0);
  inst.probs = uvals(rng, static_cast<std::size_t>(N * (classes + 1)), 0.05, 1.0);
  return inst;
}

// Frozen-weight reference: same terms as the shipped loss, with the
// stop-gradient factors captured as plain numbers at the base point.
inline Tensor pq_pos_frozen(Graph& g, const Tensor& masks, const Tensor& probs,
                            const PqPosInstance& inst, const std::vector<double>& wdice,
                            const std::vector<double>& wprob) {
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < inst.match.pairs.size(); ++i) {
    const auto [gi, slot] = inst.match.pairs[i];
    Tensor pred = reshape(slice(masks, 0, slot, 1), {1, inst.gt.height * inst.gt.width});
    Tensor d = dice_overlap(pred, inst.gt.masks[static_cast<std::size_t>(gi)]);
    Tensor p = slot_class_prob(probs, slot, inst.gt.classes[static_cast<std::size_t>(gi)]);
    terms.push_back(add(mul_scalar(neg(d), wprob[i]), mul_scalar(neg(log(p)), wdice[i])));
  }
  return sum(concat(terms, 0));
}

}  // namespace detail

inline SuiteResult run_loss_grad_suite(const GradSuiteOptions& opt = {}) {
  using detail::probe;
  using detail::repeat_check;
  using detail::svals;
  using detail::uvals;
  SuiteResult suite;
  std::uint64_t salt = opt.seed ^ 0x105e5;

  auto check = [&](const std::string& name, const std::function<GradReport(Rng&)>& one) {
    suite.add(name, repeat_check(opt.instances, ++salt, one));
  };

  check("pq_loss_pos", [](Rng& rng) {
    detail::PqPosInstance inst = detail::draw_pq_pos_instance(rng);

    // capture the stop-gradient factors at the base point
    std::vector<double> wdice, wprob;
    {
      Graph g;
      Tensor masks = g.leaf(inst.mask_shape, inst.masks);
      Tensor probs = g.leaf(inst.class_shape, inst.probs);
      for (const auto& [gi, slot] : inst.match.pairs) {
        Tensor pred = reshape(slice(masks, 0, slot, 1), {1, inst.gt.height * inst.gt.width});
        wdice.push_back(dice_overlap(pred, inst.gt.masks[static_cast<std::size_t>(gi)]).item());
        wprob.push_back(
            slot_class_prob(probs, slot, inst.gt.classes[static_cast<std::size_t>(gi)]).item());
      }
    }

    GradReport rep = check_gradients(
        {inst.mask_shape, inst.class_shape}, {inst.masks, inst.probs},
        [&inst, &wdice, &wprob](Graph& g, const std::vector<Tensor>& in) {
          return detail::pq_pos_frozen(g, in[0], in[1], inst, wdice, wprob);
        });

    // the shipped loss must produce exactly the frozen reference's gradients
    Graph gl, gf;
    Tensor ml = gl.leaf(inst.mask_shape, inst.masks), pl = gl.leaf(inst.class_shape, inst.probs);
    Tensor mf = gf.leaf(inst.mask_shape, inst.masks), pf = gf.leaf(inst.class_shape, inst.probs);
    gl.backward(pq_loss_pos(inst.gt, ml, pl, inst.match));
    gf.backward(detail::pq_pos_frozen(gf, mf, pf, inst, wdice, wprob));
    double worst = 0.0;
    auto cmp = [&worst](const std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]));
    };
    cmp(ml.grad(), mf.grad());
    cmp(pl.grad(), pf.grad());
    ++rep.checks;
    if (worst > 1e-12) {
      rep.pass = false;
      if (worst > rep.max_rel_err) {
        rep.max_rel_err = worst;
        rep.worst = "live loss gradients deviate from the frozen-weight reference";
      }
    }
    return rep;
  });

  check("pq_loss_neg", [](Rng& rng) {
    Shape s{3, 4};
    std::vector<double> probs = uvals(rng, 12, 0.05, 1.0);
    std::vector<int> negatives = {0, 2};
    return check_gradients({s}, {probs},
                           [negatives](Graph& g, const std::vector<Tensor>& in) {
                             return pq_loss_neg(in[0], negatives);
                           });
  });

  check("instance_discrimination", [](Rng& rng) {
    Shape s{3, 2, 2};
    std::vector<double> x = svals(rng, 12, 0.4, 1.5);
    std::vector<std::vector<double>> masks = {{1, 1, 0, 0}, {0, 0, 1, 0}};
    const double tau = rng.uniform(0.2, 0.6);
    return check_gradients({s}, {x}, [masks, tau](Graph& g, const std::vector<Tensor>& in) {
      return instance_discrimination_loss(in[0], masks, tau);
    });
  });

  check("mask_id_cross_entropy", [](Rng& rng) {
    detail::PqPosInstance inst = detail::draw_pq_pos_instance(rng);
    return check_gradients({inst.mask_shape}, {inst.masks},
                           [&inst](Graph& g, const std::vector<Tensor>& in) {
                             return mask_id_cross_entropy(in[0], inst.gt, inst.match);
                           });
  });

  check("semantic_loss", [](Rng& rng) {
    Shape s{3, 2, 2};
    std::vector<double> logits = svals(rng, 12, 0.0, 2.0);
    std::vector<int> labels(4);
    for (int& l : labels) l = static_cast<int>(rng.next_below(4)) - 1;  // -1 = unlabeled
    if (labels[0] < 0) labels[0] = 1;  // keep at least one labeled pixel
    return check_gradients({s}, {logits}, [labels](Graph& g, const std::vector<Tensor>& in) {
      return semantic_loss(in[0], labels);
    });
  });

  check("dice_overlap", [](Rng& rng) {
    Shape s{1, 6};
    std::vector<double> pred = uvals(rng, 6, 0.05, 1.0);
    std::vector<double> gtm(6, 0.0);
    gtm[rng.next_below(6)] = 1.0;
    gtm[0] = 1.0;
    return check_gradients({s}, {pred}, [gtm](Graph& g, const std::vector<Tensor>& in) {
      return dice_overlap(in[0], gtm);
    });
  });

  return suite;
}

// module: "tensor", "attention", "losses", or ""/"all" for everything.
inline SuiteResult run_grad_suites(const std::string& module, const GradSuiteOptions& opt = {}) {
  SuiteResult all;
  bool known = false;
  if (module.empty() || module == "all" || module == "tensor") {
    all.merge(run_tensor_grad_suite(opt));
    known = true;
  }
  if (module.empty() || module == "all" || module == "attention") {
    all.merge(run_attention_grad_suite(opt));
    known = true;
  }
  if (module.empty() || module == "all" || module == "losses") {
    all.merge(run_loss_grad_suite(opt));
    known = true;
  }
  if (!known)
    throw ConfigError("unknown gradcheck module '" + module +
                      "' (expected tensor, attention or losses)");
  return all;
}

}  // namespace maxw
