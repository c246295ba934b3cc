#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "maxw/error.hpp"
#include "maxw/matching.hpp"
#include "maxw/tensor.hpp"

namespace maxw {

// Weights for the matched-pair loss and the three auxiliary losses.
struct LossConfig {
  double alpha = 0.75;            // balance between positive and negative slot terms
  double pq_weight = 3.0;         // scale on the combined positive/negative loss
  double instdis_weight = 1.0;    // pixel/embedding contrastive term
  double maskid_weight = 0.3;     // per-pixel slot-assignment cross-entropy
  double semantic_weight = 1.0;   // dense per-class cross-entropy
  double tau = 0.3;               // contrastive temperature
  SimilarityMode similarity = SimilarityMode::product;

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0,1]");
    if (pq_weight < 0.0 || instdis_weight < 0.0 || maskid_weight < 0.0 || semantic_weight < 0.0)
      throw ConfigError("loss weights must be non-negative");
    if (tau <= 0.0) throw ConfigError("tau must be positive");
  }
};

// ---------------------------------------------------------------------------
// Host-side ground-truth derivations
// ---------------------------------------------------------------------------

// Per-pixel class id painted from the owning mask; -1 where no mask claims
// the pixel.
inline std::vector<int> semantic_labels(const GroundTruthSet& gt) {
  const std::size_t hw = static_cast<std::size_t>(gt.height) * static_cast<std::size_t>(gt.width);
  std::vector<int> labels(hw, -1);
  for (std::size_t i = 0; i < gt.masks.size(); ++i)
    for (std::size_t p = 0; p < hw; ++p)
      if (gt.masks[i][p] > 0.5) labels[p] = gt.classes[i];
  return labels;
}

// Block-reduce a binary mask by `factor`: a cell is inside when at least half
// of its factor² source pixels are.
inline std::vector<double> downsample_mask(const std::vector<double>& mask, int height, int width,
                                           int factor) {
  if (factor < 1 || height % factor != 0 || width % factor != 0)
    throw ContractError("downsample_mask: factor must divide both extents");
  if (mask.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
    throw DimensionError("downsample_mask: mask size does not match canvas");
  const int oh = height / factor, ow = width / factor;
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      int cnt = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx)
          if (mask[static_cast<std::size_t>(y * factor + dy) * width + (x * factor + dx)] > 0.5)
            ++cnt;
      if (2 * cnt >= factor * factor) out[static_cast<std::size_t>(y) * ow + x] = 1.0;
    }
  return out;
}

// Block-reduce a label map by majority vote over the labeled pixels of each
// cell; ties break toward the lowest class id, fully unlabeled cells stay -1.
inline std::vector<int> downsample_labels(const std::vector<int>& labels, int height, int width,
                                          int factor) {
  if (factor < 1 || height % factor != 0 || width % factor != 0)
    throw ContractError("downsample_labels: factor must divide both extents");
  if (labels.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
    throw DimensionError("downsample_labels: label size does not match canvas");
  const int oh = height / factor, ow = width / factor;
  std::vector<int> out(static_cast<std::size_t>(oh) * ow, -1);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      std::map<int, int> votes;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) {
          const int c = labels[static_cast<std::size_t>(y * factor + dy) * width +
                               (x * factor + dx)];
          if (c >= 0) ++votes[c];
        }
      int best = -1, best_cnt = 0;
      for (const auto& [c, cnt] : votes)
        if (cnt > best_cnt) best = c, best_cnt = cnt;  // map order makes ties pick lowest id
      out[static_cast<std::size_t>(y) * ow + x] = best;
    }
  return out;
}

// Snapshot tensor outputs into the host-side prediction structure matching
// operates on.
inline PredictionSet prediction_view(const Tensor& mask_probs, const Tensor& class_probs) {
  if (mask_probs.rank() != 3) throw DimensionError("prediction_view: masks must be [N,H,W]");
  if (class_probs.rank() != 2) throw DimensionError("prediction_view: class probs must be rank 2");
  const int n = mask_probs.shape()[0];
  if (class_probs.shape()[0] != n)
    throw DimensionError("prediction_view: slot count mismatch between masks and classes");
  const int h = mask_probs.shape()[1], w = mask_probs.shape()[2];
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const auto& mv = mask_probs.value();
  const auto& cv = class_probs.value();
  const std::size_t l = static_cast<std::size_t>(class_probs.shape()[1]);
  PredictionSet pred;
  pred.height = h;
  pred.width = w;
  pred.masks.resize(static_cast<std::size_t>(n));
  pred.class_probs.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    pred.masks[static_cast<std::size_t>(j)].assign(mv.begin() + static_cast<std::ptrdiff_t>(j * hw),
                                                   mv.begin() +
                                                       static_cast<std::ptrdiff_t>((j + 1) * hw));
    pred.class_probs[static_cast<std::size_t>(j)].assign(
        cv.begin() + static_cast<std::ptrdiff_t>(j * l),
        cv.begin() + static_cast<std::ptrdiff_t>((j + 1) * l));
  }
  return pred;
}

// ---------------------------------------------------------------------------
// Differentiable building blocks
// ---------------------------------------------------------------------------

// Dice overlap between a constant binary mask and one predicted soft mask,
// smoothed by the same epsilon matching uses so values line up.
inline Tensor dice_overlap(const Tensor& pred_mask, const std::vector<double>& gt_mask) {
  if (pred_mask.size() != static_cast<int>(gt_mask.size()))
    throw DimensionError("dice_overlap: element count mismatch");
  Graph& g = *pred_mask.graph();
  const int n = pred_mask.size();
  Tensor flat = reshape(pred_mask, {n});
  Tensor gconst = g.constant({n}, gt_mask);
  double gt_sum = 0.0;
  for (double v : gt_mask) gt_sum += v;
  Tensor inter = sum(mul(gconst, flat));
  Tensor denom = add_scalar(sum(flat), gt_sum + kDiceEps);
  return div(mul_scalar(inter, 2.0), denom);
}

// The probability a slot assigns to one class, as a scalar tensor.
inline Tensor slot_class_prob(const Tensor& class_probs, int slot, int cls) {
  if (class_probs.rank() != 2) throw DimensionError("slot_class_prob: class probs must be rank 2");
  if (slot < 0 || slot >= class_probs.shape()[0]) throw DimensionError("slot_class_prob: bad slot");
  if (cls < 0 || cls >= class_probs.shape()[1]) throw DimensionError("slot_class_prob: bad class");
  return reshape(slice(slice(class_probs, 0, slot, 1), 1, cls, 1), {1});
}

// ---------------------------------------------------------------------------
// Matched-pair (positive) and unmatched-slot (negative) losses
// ---------------------------------------------------------------------------

// Σ over matched pairs of sg(p̂)·(−dice) + sg(dice)·(−log p̂). The weight in
// front of each factor is a frozen copy of the other factor's value: each
// term trains one head while the companion score only modulates magnitude.
inline Tensor pq_loss_pos(const GroundTruthSet& gt, const Tensor& mask_probs,
                          const Tensor& class_probs, const MatchAssignment& match) {
  if (match.pairs.empty()) throw ContractError("pq_loss_pos: empty match");
  if (mask_probs.rank() != 3 || mask_probs.shape()[1] != gt.height ||
      mask_probs.shape()[2] != gt.width)
    throw DimensionError("pq_loss_pos: mask probs must be [N,H,W] on the ground-truth canvas");
  if (class_probs.rank() != 2 || class_probs.shape()[0] != mask_probs.shape()[0])
    throw DimensionError("pq_loss_pos: class probs must be [N, |C|+1]");
  const int hw = gt.height * gt.width;
  std::vector<Tensor> terms;
  terms.reserve(match.pairs.size());
  for (const auto& [gi, sj] : match.pairs) {
    if (gi < 0 || gi >= gt.count() || sj < 0 || sj >= mask_probs.shape()[0])
      throw ContractError("pq_loss_pos: match index out of range");
    const int cls = gt.classes[static_cast<std::size_t>(gi)];
    if (cls < 0 || cls >= class_probs.shape()[1] - 1)
      throw ContractError("pq_loss_pos: ground-truth class outside prediction range");
    Tensor mrow = reshape(slice(mask_probs, 0, sj, 1), {hw});
    Tensor d = dice_overlap(mrow, gt.masks[static_cast<std::size_t>(gi)]);
    Tensor p = slot_class_prob(class_probs, sj, cls);
    terms.push_back(add(mul(stop_gradient(p), neg(d)), mul(stop_gradient(d), neg(log(p)))));
  }
  return sum(concat(terms, 0));
}

// Σ over unmatched slots of −log of their no-object probability.
inline Tensor pq_loss_neg(const Tensor& class_probs, const std::vector<int>& negatives) {
  if (class_probs.rank() != 2) throw DimensionError("pq_loss_neg: class probs must be rank 2");
  Graph& g = *class_probs.graph();
  if (negatives.empty()) return g.scalar(0.0);
  const int null_cls = class_probs.shape()[1] - 1;
  std::vector<Tensor> terms;
  terms.reserve(negatives.size());
  for (int sj : negatives) {
    if (sj < 0 || sj >= class_probs.shape()[0])
      throw ContractError("pq_loss_neg: slot index out of range");
    terms.push_back(neg(log(slot_class_prob(class_probs, sj, null_cls))));
  }
  return sum(concat(terms, 0));
}

// α·L_pos + (1−α)·L_neg for a given assignment, normalized by the slot count
// and scaled by the configured weight.
inline Tensor pq_loss(const GroundTruthSet& gt, const Tensor& mask_probs,
                      const Tensor& class_probs, const LossConfig& cfg,
                      const MatchAssignment& match) {
  cfg.validate();
  Tensor pos = pq_loss_pos(gt, mask_probs, class_probs, match);
  Tensor negl = pq_loss_neg(class_probs, match.negatives);
  const double n = static_cast<double>(mask_probs.shape()[0]);
  Tensor combined = add(mul_scalar(pos, cfg.alpha), mul_scalar(negl, 1.0 - cfg.alpha));
  return mul_scalar(combined, cfg.pq_weight / n);
}

// Convenience form that runs matching on the current predictions first.
inline Tensor pq_loss(const GroundTruthSet& gt, const Tensor& mask_probs,
                      const Tensor& class_probs, const LossConfig& cfg) {
  MatchAssignment match =
      match_sets(gt, prediction_view(mask_probs, class_probs), cfg.similarity);
  return pq_loss(gt, mask_probs, class_probs, cfg, match);
}

// ---------------------------------------------------------------------------
// Auxiliary losses
// ---------------------------------------------------------------------------

// Contrastive pixel/embedding loss: each annotated mask contributes an
// L2-normalized mask-weighted mean of the (already unit-norm) feature columns;
// every annotated pixel is then softmax-classified against the mask
// embeddings at temperature tau. Masks that vanished under downsampling are
// skipped; with nothing annotated the loss is zero.
inline Tensor instance_discrimination_loss(const Tensor& g_norm,
                                           const std::vector<std::vector<double>>& masks,
                                           double tau) {
  if (g_norm.rank() != 3) throw DimensionError("instance_discrimination_loss: g must be [D,h,w]");
  if (tau <= 0.0) throw ConfigError("tau must be positive");
  Graph& g = *g_norm.graph();
  const int d = g_norm.shape()[0];
  const int hw = g_norm.shape()[1] * g_norm.shape()[2];
  std::vector<const std::vector<double>*> active;
  double annotated = 0.0;
  for (const auto& m : masks) {
    if (m.size() != static_cast<std::size_t>(hw))
      throw DimensionError("instance_discrimination_loss: mask size does not match feature grid");
    double area = 0.0;
    for (double v : m) {
      if (v != 0.0 && v != 1.0)
        throw ContractError("instance_discrimination_loss: masks must be binary");
      area += v;
    }
    if (area > 0.0) {
      active.push_back(&m);
      annotated += area;
    }
  }
  if (active.empty()) return g.scalar(0.0);
  Tensor feat = reshape(g_norm, {d, hw});
  std::vector<Tensor> embeds;
  embeds.reserve(active.size());
  std::vector<double> weights(active.size() * static_cast<std::size_t>(hw));
  for (std::size_t i = 0; i < active.size(); ++i) {
    Tensor mcol = g.constant({hw, 1}, *active[i]);
    embeds.push_back(l2_normalize(matmul(feat, mcol), 0));
    for (int p = 0; p < hw; ++p)
      weights[i * static_cast<std::size_t>(hw) + static_cast<std::size_t>(p)] =
          (*active[i])[static_cast<std::size_t>(p)];
  }
  Tensor logits = matmul(transpose(concat(embeds, 1)), feat);  // [K_active, hw]
  Tensor lsm = log(softmax(mul_scalar(logits, 1.0 / tau), 0));
  Tensor wconst = g.constant({static_cast<int>(active.size()), hw}, weights);
  return mul_scalar(neg(sum(mul(wconst, lsm))), 1.0 / annotated);
}

// Mean over annotated pixels of −log of the mask probability at the slot the
// pixel's ground-truth mask matched to. Unannotated pixels are excluded; with
// none at all the loss is zero.
inline Tensor mask_id_cross_entropy(const Tensor& mask_probs, const GroundTruthSet& gt,
                                    const MatchAssignment& match) {
  if (mask_probs.rank() != 3 || mask_probs.shape()[1] != gt.height ||
      mask_probs.shape()[2] != gt.width)
    throw DimensionError("mask_id_cross_entropy: mask probs must be [N,H,W] on the canvas");
  Graph& g = *mask_probs.graph();
  const int n = mask_probs.shape()[0];
  const std::size_t hw = static_cast<std::size_t>(gt.height) * static_cast<std::size_t>(gt.width);
  std::vector<double> weights(static_cast<std::size_t>(n) * hw, 0.0);
  double annotated = 0.0;
  for (const auto& [gi, sj] : match.pairs) {
    if (gi < 0 || gi >= gt.count() || sj < 0 || sj >= n)
      throw ContractError("mask_id_cross_entropy: match index out of range");
    const auto& m = gt.masks[static_cast<std::size_t>(gi)];
    for (std::size_t p = 0; p < hw; ++p)
      if (m[p] > 0.5) {
        weights[static_cast<std::size_t>(sj) * hw + p] += 1.0;
        annotated += 1.0;
      }
  }
  if (annotated == 0.0) return g.scalar(0.0);
  Tensor lg = log(reshape(mask_probs, {n, static_cast<int>(hw)}));
  Tensor wconst = g.constant({n, static_cast<int>(hw)}, weights);
  return mul_scalar(neg(sum(mul(wconst, lg))), 1.0 / annotated);
}

// Per-pixel cross-entropy of the semantic logits against a label map over the
// same grid; -1 marks unlabeled pixels, which are excluded from the mean.
inline Tensor semantic_loss(const Tensor& sem_logits, const std::vector<int>& labels) {
  if (sem_logits.rank() != 3) throw DimensionError("semantic_loss: logits must be [C,h,w]");
  const int c = sem_logits.shape()[0];
  const int hw = sem_logits.shape()[1] * sem_logits.shape()[2];
  if (labels.size() != static_cast<std::size_t>(hw))
    throw DimensionError("semantic_loss: label count does not match logit grid");
  Graph& g = *sem_logits.graph();
  std::vector<double> weights(static_cast<std::size_t>(c) * static_cast<std::size_t>(hw), 0.0);
  double labeled = 0.0;
  for (int p = 0; p < hw; ++p) {
    const int cls = labels[static_cast<std::size_t>(p)];
    if (cls < -1 || cls >= c) throw ContractError("semantic_loss: label outside class range");
    if (cls >= 0) {
      weights[static_cast<std::size_t>(cls) * static_cast<std::size_t>(hw) +
              static_cast<std::size_t>(p)] = 1.0;
      labeled += 1.0;
    }
  }
  if (labeled == 0.0) return g.scalar(0.0);
  Tensor lsm = log(softmax(reshape(sem_logits, {c, hw}), 0));
  Tensor wconst = g.constant({c, hw}, weights);
  return mul_scalar(neg(sum(mul(wconst, lsm))), 1.0 / labeled);
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

struct LossBreakdown {
  Tensor total;
  Tensor pq;
  Tensor pq_pos;
  Tensor pq_neg;
  Tensor instdis;
  Tensor maskid;
  Tensor semantic;
  MatchAssignment match;
};

// Runs matching once, evaluates every component against it, and combines them
// with the configured weights. Ground truth for the auxiliary terms is
// derived on the fly: masks/labels are block-reduced to the stride the
// feature in question lives at.
inline LossBreakdown loss_breakdown(const GroundTruthSet& gt, const Tensor& mask_probs,
                                    const Tensor& class_probs, const Tensor& g_norm,
                                    const Tensor& sem_logits, const LossConfig& cfg) {
  cfg.validate();
  MatchAssignment match =
      match_sets(gt, prediction_view(mask_probs, class_probs), cfg.similarity);
  Tensor pos = pq_loss_pos(gt, mask_probs, class_probs, match);
  Tensor negl = pq_loss_neg(class_probs, match.negatives);
  const double n = static_cast<double>(mask_probs.shape()[0]);
  Tensor pq = mul_scalar(add(mul_scalar(pos, cfg.alpha), mul_scalar(negl, 1.0 - cfg.alpha)),
                         cfg.pq_weight / n);

  if (g_norm.rank() != 3 || sem_logits.rank() != 3)
    throw DimensionError("loss_breakdown: g and semantic logits must be rank 3");
  if (gt.height % g_norm.shape()[1] != 0 || gt.width % g_norm.shape()[2] != 0)
    throw DimensionError("loss_breakdown: feature grid must evenly divide the canvas");
  const int gfac = gt.height / g_norm.shape()[1];
  if (gt.width / g_norm.shape()[2] != gfac)
    throw DimensionError("loss_breakdown: feature grid aspect does not match canvas");
  std::vector<std::vector<double>> masks_ds;
  masks_ds.reserve(gt.masks.size());
  for (const auto& m : gt.masks) masks_ds.push_back(downsample_mask(m, gt.height, gt.width, gfac));
  Tensor inst = instance_discrimination_loss(g_norm, masks_ds, cfg.tau);

  Tensor mid = mask_id_cross_entropy(mask_probs, gt, match);

  if (gt.height % sem_logits.shape()[1] != 0 || gt.width % sem_logits.shape()[2] != 0)
    throw DimensionError("loss_breakdown: semantic grid must evenly divide the canvas");
  const int sfac = gt.height / sem_logits.shape()[1];
  if (gt.width / sem_logits.shape()[2] != sfac)
    throw DimensionError("loss_breakdown: semantic grid aspect does not match canvas");
  Tensor sem =
      semantic_loss(sem_logits, downsample_labels(semantic_labels(gt), gt.height, gt.width, sfac));

  Tensor total = add(pq, add(mul_scalar(inst, cfg.instdis_weight),
                             add(mul_scalar(mid, cfg.maskid_weight),
                                 mul_scalar(sem, cfg.semantic_weight))));
  return {total, pq, pos, negl, inst, mid, sem, match};
}

inline Tensor total_loss(const GroundTruthSet& gt, const Tensor& mask_probs,
                         const Tensor& class_probs, const Tensor& g_norm,
                         const Tensor& sem_logits, const LossConfig& cfg) {
  return loss_breakdown(gt, mask_probs, class_probs, g_norm, sem_logits, cfg).total;
}

}  // namespace maxw
