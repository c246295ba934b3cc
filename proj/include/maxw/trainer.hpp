#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "maxw/checkpoint.hpp"
#include "maxw/config.hpp"
#include "maxw/imageio.hpp"
#include "maxw/inference.hpp"
#include "maxw/losses.hpp"
#include "maxw/model.hpp"
#include "maxw/rng.hpp"
#include "maxw/scene.hpp"

namespace maxw {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;
inline constexpr double kWeightDecay = 1e-4;

// base * (1 - step/total)^power, clamped to 0 once the schedule is exhausted.
inline double poly_lr(int step, const TrainConfig& cfg) {
  if (step < 0) throw ContractError("poly_lr: negative step");
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  if (frac >= 1.0) return 0.0;
  return cfg.base_lr * std::pow(1.0 - frac, cfg.poly_power);
}

// ---------------------------------------------------------------------------
// Dataset: scenes held in their compact on-disk shape (bytes + id map)
// ---------------------------------------------------------------------------

struct TrainExample {
  ImageU8 image;
  MaskIdMap ids;
  std::vector<int> classes;  // class of mask id i+1
};

struct Dataset {
  int height = 0;
  int width = 0;
  std::vector<TrainExample> examples;

  int size() const { return static_cast<int>(examples.size()); }
};

inline TrainExample compact_scene(const Scene& scene) {
  TrainExample e;
  e.image = scene.image;
  e.ids.height = scene.gt.height;
  e.ids.width = scene.gt.width;
  e.ids.ids.assign(static_cast<std::size_t>(scene.gt.height) * scene.gt.width, 0);
  for (std::size_t i = 0; i < scene.gt.masks.size(); ++i) {
    for (std::size_t p = 0; p < scene.gt.masks[i].size(); ++p)
      if (scene.gt.masks[i][p] > 0.5) e.ids.ids[p] = static_cast<std::uint16_t>(i + 1);
    e.classes.push_back(scene.gt.classes[i]);
  }
  return e;
}

inline GroundTruthSet expand_ground_truth(const TrainExample& e) {
  GroundTruthSet gt;
  gt.height = e.ids.height;
  gt.width = e.ids.width;
  const std::size_t hw = e.ids.ids.size();
  gt.masks.assign(e.classes.size(), std::vector<double>(hw, 0.0));
  for (std::size_t p = 0; p < hw; ++p) {
    const int id = e.ids.ids[p];
    if (id == 0) continue;
    if (id > static_cast<int>(e.classes.size()))
      throw ContractError("example id map references mask id " + std::to_string(id) +
                          " past its class list");
    gt.masks[static_cast<std::size_t>(id - 1)][p] = 1.0;
  }
  gt.classes = e.classes;
  return gt;
}

inline Dataset dataset_from_config(const SceneConfig& cfg, int count) {
  if (count < 1) throw ConfigError("dataset needs at least one scene");
  Dataset d;
  d.height = cfg.height;
  d.width = cfg.width;
  d.examples.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) d.examples.push_back(compact_scene(generate_scene(cfg, i)));
  return d;
}

inline Dataset dataset_from_dir(const std::string& dir) {
  Dataset d;
  for (const std::string& stem : read_manifest(dir + "/manifest.txt")) {
    TrainExample e = compact_scene(read_scene(dir, stem));
    if (d.examples.empty()) {
      d.height = e.image.height;
      d.width = e.image.width;
    } else if (e.image.height != d.height || e.image.width != d.width) {
      throw ParseError(stem + ": scene size differs from the rest of the dataset");
    }
    d.examples.push_back(std::move(e));
  }
  if (d.examples.empty()) throw ParseError(dir + ": dataset manifest lists no scenes");
  return d;
}

// Batch membership depends only on (seed, step).
inline std::vector<int> batch_indices(std::uint64_t seed, int step, int batch_size, int count) {
  if (batch_size < 1 || count < 1) throw ContractError("batch_indices: empty batch or dataset");
  Rng rng(mix_seed(seed ^ 0x62617463680aULL, static_cast<std::uint64_t>(step)));
  std::vector<int> idx(static_cast<std::size_t>(batch_size));
  for (int& i : idx) i = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(count)));
  return idx;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamState {
  std::int64_t step = 0;  // completed updates
  std::vector<std::vector<double>> m, v;  // per parameter index; empty when frozen
};

inline AdamState make_adam_state(const ParamStore& store) {
  AdamState st;
  st.m.resize(static_cast<std::size_t>(store.size()));
  st.v.resize(static_cast<std::size_t>(store.size()));
  for (int i = 0; i < store.size(); ++i)
    if (store[i].trainable) {
      st.m[static_cast<std::size_t>(i)].assign(store[i].value.size(), 0.0);
      st.v[static_cast<std::size_t>(i)].assign(store[i].value.size(), 0.0);
    }
  return st;
}

// One decoupled-weight-decay Adam update. Backbone parameters see the scaled
// learning rate; decay applies only to parameters flagged for it.
inline void adam_update(ParamStore& store, const std::vector<std::vector<double>>& grads,
                        AdamState& st, double lr, double backbone_multiplier) {
  if (static_cast<int>(grads.size()) != store.size() ||
      static_cast<int>(st.m.size()) != store.size())
    throw ContractError("adam_update: gradient/state layout does not match the store");
  ++st.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(st.step));
  for (int i = 0; i < store.size(); ++i) {
    Param& p = store[i];
    if (!p.trainable) continue;
    const auto& g = grads[static_cast<std::size_t>(i)];
    if (g.size() != p.value.size())
      throw ContractError("adam_update: gradient size mismatch for '" + p.name + "'");
    auto& m = st.m[static_cast<std::size_t>(i)];
    auto& v = st.v[static_cast<std::size_t>(i)];
    const double rate = lr * (p.backbone ? backbone_multiplier : 1.0);
    const double wd = p.decay ? kWeightDecay : 0.0;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g[k];
      v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p.value[k] -= rate * (mhat / (std::sqrt(vhat) + kAdamEps) + wd * p.value[k]);
    }
  }
}

// ---------------------------------------------------------------------------
// Steps, evaluation, logging
// ---------------------------------------------------------------------------

struct StepLog {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double pq_pos = 0.0;
  double pq_neg = 0.0;
  double instdis = 0.0;
  double maskid = 0.0;
  double semantic = 0.0;
};

inline std::string csv_header() { return "step,lr,total,pq_pos,pq_neg,instdis,maskid,semantic"; }

inline std::string csv_line(const StepLog& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g", s.step, s.lr, s.total,
                s.pq_pos, s.pq_neg, s.instdis, s.maskid, s.semantic);
  return std::string(buf);
}

// Forward the batch through one shared graph, average total_loss, backprop,
// and apply Adam. A non-finite loss aborts with the per-component values.
inline StepLog train_step(Model& model, const Dataset& data, const std::vector<int>& indices,
                          AdamState& opt, const TrainConfig& cfg, int step) {
  if (indices.empty()) throw ContractError("train_step: empty batch");
  StepLog log;
  log.step = step;
  log.lr = poly_lr(step, cfg);

  Graph g;
  BoundParams bound(g, model.store, true);
  std::vector<Tensor> totals;
  totals.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= data.size()) throw ContractError("train_step: batch index out of range");
    const TrainExample& e = data.examples[static_cast<std::size_t>(idx)];
    ModelOutputs out = model.forward_bound(g, bound, image_to_planar(e.image), true);
    LossBreakdown bd = loss_breakdown(expand_ground_truth(e), out.mask_probs_full, out.class_probs,
                                      out.g_norm, out.semantic_logits, cfg.loss);
    totals.push_back(bd.total);
    log.total += bd.total.item();
    log.pq_pos += bd.pq_pos.item();
    log.pq_neg += bd.pq_neg.item();
    log.instdis += bd.instdis.item();
    log.maskid += bd.maskid.item();
    log.semantic += bd.semantic.item();
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  log.total *= inv;
  log.pq_pos *= inv;
  log.pq_neg *= inv;
  log.instdis *= inv;
  log.maskid *= inv;
  log.semantic *= inv;
  if (!std::isfinite(log.total))
    throw Error("non-finite loss at step " + std::to_string(step) + " (" + csv_line(log) + ")");

  Tensor batch_loss = mul_scalar(sum(concat(totals, 0)), inv);
  g.backward(batch_loss);
  std::vector<std::vector<double>> grads(static_cast<std::size_t>(model.store.size()));
  for (int i = 0; i < model.store.size(); ++i)
    if (model.store[i].trainable) grads[static_cast<std::size_t>(i)] = bound.get(i).grad();
  adam_update(model.store, grads, opt, log.lr, cfg.backbone_lr_multiplier);
  return log;
}

// Eval-mode forward + dual-argmax inference over a whole dataset.
inline PQReport evaluate(Model& model, const Dataset& data,
                         const InferenceThresholds& thresholds = {}) {
  PQAccumulator acc;
  const std::vector<bool> things = default_thing_flags();
  for (const TrainExample& e : data.examples) {
    Graph g;
    ModelOutputs out = model.forward(g, image_to_planar(e.image), false);
    acc.add(panoptic_inference(out.mask_probs_full, out.class_probs, things, thresholds),
            expand_ground_truth(e));
  }
  return acc.finalize(things);
}

// ---------------------------------------------------------------------------
// Checkpointing: <stem>.maxw holds weights, optimizer state and the step;
// <stem>.model.txt holds the architecture manifest.
// ---------------------------------------------------------------------------

inline void save_training_state(const std::string& stem, const Model& model, const AdamState* opt,
                                std::int64_t step) {
  std::vector<NamedTensor> entries;
  entries.push_back(NamedTensor{"step", {1}, {static_cast<double>(step)}});
  for (int i = 0; i < model.store.size(); ++i) {
    const Param& p = model.store[i];
    entries.push_back(NamedTensor{"p/" + p.name, p.shape, p.value});
  }
  if (opt) {
    entries.push_back(
        NamedTensor{"adam_step", {1}, {static_cast<double>(opt->step)}});
    for (int i = 0; i < model.store.size(); ++i) {
      const Param& p = model.store[i];
      if (!p.trainable) continue;
      entries.push_back(NamedTensor{"m/" + p.name, p.shape, opt->m[static_cast<std::size_t>(i)]});
      entries.push_back(NamedTensor{"v/" + p.name, p.shape, opt->v[static_cast<std::size_t>(i)]});
    }
  }
  write_checkpoint(stem + ".maxw", entries);
  write_model_manifest(stem + ".model.txt", model.cfg);
}

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(int, const PQReport&)> on_eval;
};

// Full schedule: every step appends to <out>/log.csv, the checkpoint cadence
// rewrites <out>/checkpoint.{maxw,model.txt}, and the eval cadence appends
// panoptic quality over an up-to-32-scene slice to <out>/pq.csv. Both
// cadences also fire on the final step.
inline void train_loop(Model& model, AdamState& opt, const Dataset& data, const TrainConfig& cfg,
                       const std::string& out_dir, const TrainHooks& hooks = {}) {
  if (data.size() < 1) throw ContractError("train_loop: empty dataset");
  std::ofstream log(out_dir + "/log.csv", std::ios::binary);
  if (!log) throw Error("cannot open '" + out_dir + "/log.csv' for writing");
  log << csv_header() << "\n";
  std::ofstream pqcsv(out_dir + "/pq.csv", std::ios::binary);
  if (!pqcsv) throw Error("cannot open '" + out_dir + "/pq.csv' for writing");
  pqcsv << "step,pq,sq,rq,pq_things,pq_stuff\n";

  Dataset evalset;
  evalset.height = data.height;
  evalset.width = data.width;
  for (int i = 0; i < data.size() && i < 32; ++i)
    evalset.examples.push_back(data.examples[static_cast<std::size_t>(i)]);

  for (int step = 0; step < cfg.total_steps; ++step) {
    StepLog s = train_step(model, data, batch_indices(cfg.seed, step, cfg.batch_size, data.size()),
                           opt, cfg, step);
    log << csv_line(s) << "\n";
    log.flush();
    if (hooks.on_step) hooks.on_step(s);
    const int done = step + 1;
    if (done % cfg.checkpoint_every == 0 || done == cfg.total_steps)
      save_training_state(out_dir + "/checkpoint", model, &opt, done);
    if (done % cfg.eval_every == 0 || done == cfg.total_steps) {
      PQReport rep = evaluate(model, evalset);
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f", done, rep.all.pq, rep.all.sq,
                    rep.all.rq, rep.things.pq, rep.stuff.pq);
      pqcsv << buf << "\n";
      pqcsv.flush();
      if (hooks.on_eval) hooks.on_eval(done, rep);
    }
  }
}

// Rebuild a model (architecture from the manifest, weights from the blob).
// When `opt`/`step` are supplied the optimizer state must be present too;
// passing null skips it (inference-only loads).
inline Model load_training_state(const std::string& stem, AdamState* opt = nullptr,
                                 std::int64_t* step = nullptr) {
  Model model = Model::build(read_model_manifest(stem + ".model.txt"), 0);
  std::vector<NamedTensor> entries = read_checkpoint(stem + ".maxw");
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& e : entries) {
    if (by_name.count(e.name))
      throw ParseError(stem + ".maxw: duplicate entry '" + e.name + "'");
    by_name[e.name] = &e;
  }
  auto need = [&](const std::string& name) -> const NamedTensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(stem + ".maxw: missing entry '" + name + "'");
    return *it->second;
  };
  if (step) *step = static_cast<std::int64_t>(need("step").data.at(0));
  for (int i = 0; i < model.store.size(); ++i) {
    Param& p = model.store[i];
    const NamedTensor& e = need("p/" + p.name);
    if (e.shape != p.shape)
      throw ParseError(stem + ".maxw: shape mismatch for '" + p.name + "'");
    p.value = e.data;
  }
  if (opt) {
    *opt = make_adam_state(model.store);
    opt->step = static_cast<std::int64_t>(need("adam_step").data.at(0));
    for (int i = 0; i < model.store.size(); ++i) {
      const Param& p = model.store[i];
      if (!p.trainable) continue;
      const NamedTensor& m = need("m/" + p.name);
      const NamedTensor& v = need("v/" + p.name);
      if (m.shape != p.shape || v.shape != p.shape)
        throw ParseError(stem + ".maxw: optimizer shape mismatch for '" + p.name + "'");
      opt->m[static_cast<std::size_t>(i)] = m.data;
      opt->v[static_cast<std::size_t>(i)] = v.data;
    }
  }
  return model;
}

}  // namespace maxw
