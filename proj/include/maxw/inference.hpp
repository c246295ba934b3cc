#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "maxw/error.hpp"
#include "maxw/matching.hpp"
#include "maxw/tensor.hpp"

namespace maxw {

// Confidence and minimum-area filters applied after the two argmaxes. Area
// limits are stated at the 641x641 reference resolution and rescaled to the
// actual canvas.
struct InferenceThresholds {
  double class_confidence = 0.7;
  double mask_id_confidence = 0.4;
  double stuff_area_limit = 4096.0;
  double thing_area_limit = 256.0;

  void validate() const {
    if (class_confidence < 0.0 || class_confidence > 1.0)
      throw ConfigError("class confidence threshold must lie in [0,1]");
    if (mask_id_confidence < 0.0 || mask_id_confidence > 1.0)
      throw ConfigError("mask-id confidence threshold must lie in [0,1]");
    if (stuff_area_limit < 0.0 || thing_area_limit < 0.0)
      throw ConfigError("area limits must be non-negative");
  }
};

// Reference-resolution limit rescaled by canvas area, rounded down.
inline int scaled_area_limit(double reference_limit, int height, int width) {
  const double scale =
      static_cast<double>(height) * static_cast<double>(width) / (641.0 * 641.0);
  return static_cast<int>(reference_limit * scale);
}

// Final segmentation: one id per pixel, 0 = void, slot j owns id j+1. Only
// ids that survived every filter (and own at least one pixel) carry a class.
struct PanopticMap {
  int height = 0;
  int width = 0;
  std::vector<int> mask_id;
  std::map<int, int> class_of;
  InferenceThresholds provenance;
};

inline void validate(const PanopticMap& map) {
  if (map.mask_id.size() !=
      static_cast<std::size_t>(map.height) * static_cast<std::size_t>(map.width))
    throw DimensionError("panoptic map size does not match its canvas");
  for (int id : map.mask_id) {
    if (id < 0) throw ContractError("panoptic map ids must be non-negative");
    if (id > 0 && map.class_of.find(id) == map.class_of.end())
      throw ContractError("panoptic map id " + std::to_string(id) + " has no class");
  }
}

// Argmax twice, then filter: slots keep their best non-null class only when
// its probability clears the class threshold; pixels keep their best slot
// only when its mask probability clears the mask-id threshold; surviving
// segments below the per-category minimum area (or empty) turn void.
inline PanopticMap panoptic_inference(const std::vector<double>& mask_probs,
                                      const std::vector<double>& class_probs, int slots,
                                      int classes_with_null, int height, int width,
                                      const std::vector<bool>& is_thing,
                                      const InferenceThresholds& thresholds = {}) {
  thresholds.validate();
  if (slots < 1 || classes_with_null < 2 || height < 1 || width < 1)
    throw DimensionError("panoptic_inference: degenerate extents");
  const std::size_t hw = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  if (mask_probs.size() != static_cast<std::size_t>(slots) * hw)
    throw DimensionError("panoptic_inference: mask probability size mismatch");
  if (class_probs.size() !=
      static_cast<std::size_t>(slots) * static_cast<std::size_t>(classes_with_null))
    throw DimensionError("panoptic_inference: class probability size mismatch");
  if (is_thing.size() != static_cast<std::size_t>(classes_with_null - 1))
    throw DimensionError("panoptic_inference: thing/stuff flags must cover every real class");

  const int null_cls = classes_with_null - 1;
  std::vector<int> slot_cls(static_cast<std::size_t>(slots), -1);
  for (int j = 0; j < slots; ++j) {
    const double* row = class_probs.data() + static_cast<std::size_t>(j) * classes_with_null;
    int best = 0;
    for (int c = 1; c < classes_with_null; ++c)
      if (row[c] > row[best]) best = c;  // ties stay at the lower index
    if (best != null_cls && row[best] >= thresholds.class_confidence)
      slot_cls[static_cast<std::size_t>(j)] = best;
  }

  PanopticMap map;
  map.height = height;
  map.width = width;
  map.provenance = thresholds;
  map.mask_id.assign(hw, 0);
  std::vector<int> area(static_cast<std::size_t>(slots), 0);
  for (std::size_t p = 0; p < hw; ++p) {
    int best = 0;
    for (int j = 1; j < slots; ++j)
      if (mask_probs[static_cast<std::size_t>(j) * hw + p] >
          mask_probs[static_cast<std::size_t>(best) * hw + p])
        best = j;
    if (mask_probs[static_cast<std::size_t>(best) * hw + p] < thresholds.mask_id_confidence)
      continue;
    if (slot_cls[static_cast<std::size_t>(best)] < 0) continue;
    map.mask_id[p] = best + 1;
    ++area[static_cast<std::size_t>(best)];
  }

  const int stuff_min = scaled_area_limit(thresholds.stuff_area_limit, height, width);
  const int thing_min = scaled_area_limit(thresholds.thing_area_limit, height, width);
  std::vector<bool> keep(static_cast<std::size_t>(slots), false);
  for (int j = 0; j < slots; ++j) {
    const int cls = slot_cls[static_cast<std::size_t>(j)];
    if (cls < 0 || area[static_cast<std::size_t>(j)] == 0) continue;
    const int limit = is_thing[static_cast<std::size_t>(cls)] ? thing_min : stuff_min;
    if (area[static_cast<std::size_t>(j)] >= limit) {
      keep[static_cast<std::size_t>(j)] = true;
      map.class_of[j + 1] = cls;
    }
  }
  for (std::size_t p = 0; p < hw; ++p)
    if (map.mask_id[p] > 0 && !keep[static_cast<std::size_t>(map.mask_id[p] - 1)])
      map.mask_id[p] = 0;
  return map;
}

inline PanopticMap panoptic_inference(const Tensor& mask_probs, const Tensor& class_probs,
                                      const std::vector<bool>& is_thing,
                                      const InferenceThresholds& thresholds = {}) {
  if (mask_probs.rank() != 3) throw DimensionError("panoptic_inference: masks must be [N,H,W]");
  if (class_probs.rank() != 2 || class_probs.shape()[0] != mask_probs.shape()[0])
    throw DimensionError("panoptic_inference: class probs must be [N, |C|+1]");
  return panoptic_inference(mask_probs.value(), class_probs.value(), mask_probs.shape()[0],
                            class_probs.shape()[1], mask_probs.shape()[1], mask_probs.shape()[2],
                            is_thing, thresholds);
}

// Ground truth viewed as a panoptic map (mask i owns id i+1, nothing void
// beyond unannotated pixels).
inline PanopticMap to_panoptic_map(const GroundTruthSet& gt) {
  PanopticMap map;
  map.height = gt.height;
  map.width = gt.width;
  const std::size_t hw = static_cast<std::size_t>(gt.height) * static_cast<std::size_t>(gt.width);
  map.mask_id.assign(hw, 0);
  for (std::size_t i = 0; i < gt.masks.size(); ++i) {
    for (std::size_t p = 0; p < hw; ++p)
      if (gt.masks[i][p] > 0.5) map.mask_id[p] = static_cast<int>(i) + 1;
    map.class_of[static_cast<int>(i) + 1] = gt.classes[i];
  }
  return map;
}

// ---------------------------------------------------------------------------
// Panoptic quality
// ---------------------------------------------------------------------------

struct PQClassEntry {
  int cls = 0;
  double pq = 0.0, sq = 0.0, rq = 0.0;
  int tp = 0, fp = 0, fn = 0;
};

struct PQAggregate {
  double pq = 0.0, sq = 0.0, rq = 0.0;
  int tp = 0, fp = 0, fn = 0;
  int classes = 0;
};

struct PQReport {
  std::vector<PQClassEntry> per_class;  // ascending class id, contributing classes only
  PQAggregate all, things, stuff;
};

// Accumulates matches across images; a predicted and ground-truth segment of
// the same class match iff IoU > 0.5, which disjointness makes unique.
class PQAccumulator {
 public:
  void add(const PanopticMap& pred, const GroundTruthSet& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
      throw DimensionError("pq: prediction and ground truth sizes differ");
    validate(pred);
    const std::size_t hw =
        static_cast<std::size_t>(gt.height) * static_cast<std::size_t>(gt.width);

    std::vector<int> owner(hw, -1);
    for (std::size_t i = 0; i < gt.masks.size(); ++i)
      for (std::size_t p = 0; p < hw; ++p)
        if (gt.masks[i][p] > 0.5) owner[p] = static_cast<int>(i);

    std::map<int, int> pred_area, pred_void;
    std::map<std::pair<int, int>, int> inter;  // (pred id, gt index) -> pixels
    for (std::size_t p = 0; p < hw; ++p) {
      const int id = pred.mask_id[p];
      if (id == 0) continue;
      ++pred_area[id];
      if (owner[p] < 0)
        ++pred_void[id];
      else
        ++inter[{id, owner[p]}];
    }
    std::vector<int> gt_area(gt.masks.size(), 0);
    for (std::size_t i = 0; i < gt.masks.size(); ++i)
      for (std::size_t p = 0; p < hw; ++p)
        if (gt.masks[i][p] > 0.5) ++gt_area[i];

    std::vector<bool> gt_matched(gt.masks.size(), false);
    std::map<int, bool> pred_matched;
    for (const auto& [key, in] : inter) {
      const auto [id, gi] = key;
      const int cls = pred.class_of.at(id);
      if (cls != gt.classes[static_cast<std::size_t>(gi)]) continue;
      // Ground-truth void pixels never count against a prediction.
      const double uni = static_cast<double>(pred_area[id] - pred_void[id] +
                                             gt_area[static_cast<std::size_t>(gi)] - in);
      const double iou = uni > 0.0 ? in / uni : 0.0;
      if (iou > 0.5) {
        if (gt_matched[static_cast<std::size_t>(gi)] || pred_matched[id])
          throw ContractError("pq: a segment matched twice; inputs are not disjoint");
        gt_matched[static_cast<std::size_t>(gi)] = true;
        pred_matched[id] = true;
        auto& s = stats_[cls];
        ++s.tp;
        s.iou_sum += iou;
      }
    }
    for (std::size_t i = 0; i < gt.masks.size(); ++i)
      if (!gt_matched[i] && gt_area[i] > 0) ++stats_[gt.classes[i]].fn;
    for (const auto& [id, cls] : pred.class_of)
      if (pred_area.count(id) && !pred_matched[id]) ++stats_[cls].fp;
  }

  PQReport finalize(const std::vector<bool>& is_thing) const {
    PQReport rep;
    for (const auto& [cls, s] : stats_) {
      if (cls < 0 || cls >= static_cast<int>(is_thing.size()))
        throw ContractError("pq: class id outside the thing/stuff table");
      PQClassEntry e;
      e.cls = cls;
      e.tp = s.tp;
      e.fp = s.fp;
      e.fn = s.fn;
      e.sq = s.tp > 0 ? s.iou_sum / s.tp : 0.0;
      const double denom = s.tp + 0.5 * s.fp + 0.5 * s.fn;
      e.rq = denom > 0.0 ? s.tp / denom : 0.0;
      e.pq = e.sq * e.rq;
      rep.per_class.push_back(e);
      accumulate(rep.all, e);
      accumulate(is_thing[static_cast<std::size_t>(cls)] ? rep.things : rep.stuff, e);
    }
    average(rep.all);
    average(rep.things);
    average(rep.stuff);
    return rep;
  }

  bool empty() const { return stats_.empty(); }

 private:
  struct Stats {
    double iou_sum = 0.0;
    int tp = 0, fp = 0, fn = 0;
  };
  std::map<int, Stats> stats_;

  static void accumulate(PQAggregate& agg, const PQClassEntry& e) {
    agg.pq += e.pq;
    agg.sq += e.sq;
    agg.rq += e.rq;
    agg.tp += e.tp;
    agg.fp += e.fp;
    agg.fn += e.fn;
    ++agg.classes;
  }
  static void average(PQAggregate& agg) {
    if (agg.classes == 0) return;
    agg.pq /= agg.classes;
    agg.sq /= agg.classes;
    agg.rq /= agg.classes;
  }
};

inline PQReport compute_pq(const PanopticMap& pred, const GroundTruthSet& gt,
                           const std::vector<bool>& is_thing) {
  PQAccumulator acc;
  acc.add(pred, gt);
  return acc.finalize(is_thing);
}

// One `name,PQ,SQ,RQ,TP,FP,FN` line per class, then ALL / THINGS / STUFF.
inline std::string format_pq_report(const PQReport& rep,
                                    const std::vector<std::string>& class_names) {
  auto line = [](const std::string& name, double pq, double sq, double rq, int tp, int fp,
                 int fn) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%d,%d,%d\n", name.c_str(), pq, sq, rq, tp,
                  fp, fn);
    return std::string(buf);
  };
  std::string out = "class,PQ,SQ,RQ,TP,FP,FN\n";
  for (const auto& e : rep.per_class) {
    if (e.cls >= static_cast<int>(class_names.size()))
      throw ContractError("pq report: missing name for class " + std::to_string(e.cls));
    out += line(class_names[static_cast<std::size_t>(e.cls)], e.pq, e.sq, e.rq, e.tp, e.fp, e.fn);
  }
  out += line("ALL", rep.all.pq, rep.all.sq, rep.all.rq, rep.all.tp, rep.all.fp, rep.all.fn);
  out += line("THINGS", rep.things.pq, rep.things.sq, rep.things.rq, rep.things.tp, rep.things.fp,
              rep.things.fn);
  out += line("STUFF", rep.stuff.pq, rep.stuff.sq, rep.stuff.rq, rep.stuff.tp, rep.stuff.fp,
              rep.stuff.fn);
  return out;
}

}  // namespace maxw
