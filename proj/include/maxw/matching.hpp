#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "maxw/error.hpp"

namespace maxw {

// K class-labeled binary masks over an H×W canvas. Masks are pairwise
// disjoint; classes never include the no-object label.
struct GroundTruthSet {
  int height = 0;
  int width = 0;
  std::vector<std::vector<double>> masks;
  std::vector<int> classes;

  int count() const { return static_cast<int>(masks.size()); }
};

// N soft masks (jointly softmaxed over slots) plus per-slot class
// distributions over |C|+1 entries, the last being the no-object class.
struct PredictionSet {
  int height = 0;
  int width = 0;
  std::vector<std::vector<double>> masks;
  std::vector<std::vector<double>> class_probs;

  int count() const { return static_cast<int>(masks.size()); }
};

inline void validate(const GroundTruthSet& gt, int max_slots) {
  const std::size_t hw = static_cast<std::size_t>(gt.height) * static_cast<std::size_t>(gt.width);
  if (gt.masks.empty() || gt.count() > max_slots)
    throw ContractError("ground truth must hold between 1 and " + std::to_string(max_slots) +
                        " masks, got " + std::to_string(gt.count()));
  if (gt.classes.size() != gt.masks.size())
    throw ContractError("ground truth masks/classes count mismatch");
  for (const auto& m : gt.masks)
    if (m.size() != hw) throw DimensionError("ground-truth mask size does not match canvas");
  for (std::size_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (const auto& m : gt.masks) s += m[p];
    if (s > 1.0 + 1e-9)
      throw ContractError("ground-truth masks overlap at pixel " + std::to_string(p));
  }
}

inline void validate(const PredictionSet& pred) {
  const std::size_t hw =
      static_cast<std::size_t>(pred.height) * static_cast<std::size_t>(pred.width);
  if (pred.masks.empty() || pred.masks.size() != pred.class_probs.size())
    throw ContractError("prediction masks/class_probs count mismatch");
  for (const auto& m : pred.masks)
    if (m.size() != hw) throw DimensionError("prediction mask size does not match canvas");
  for (std::size_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (const auto& m : pred.masks) s += m[p];
    if (std::abs(s - 1.0) > 1e-6)
      throw ContractError("prediction masks do not sum to 1 at pixel " + std::to_string(p));
  }
  for (const auto& cp : pred.class_probs) {
    double s = 0.0;
    for (double v : cp) s += v;
    if (std::abs(s - 1.0) > 1e-9) throw ContractError("class distribution does not sum to 1");
  }
}

// One-to-one assignment of ground-truth masks to prediction slots.
struct MatchAssignment {
  std::vector<std::pair<int, int>> pairs;  // (gt index, slot index), gt order
  std::vector<double> similarities;        // sim at each pair
  std::vector<int> negatives;              // unmatched slots, ascending
};

inline constexpr double kDiceEps = 1e-6;

// 2·Σ(m·m̂) / (Σm + Σm̂ + ε); the ε keeps empty-vs-empty defined (→0).
inline double dice(const std::vector<double>& m, const std::vector<double>& mhat) {
  if (m.size() != mhat.size())
    throw DimensionError("dice: mask sizes differ (" + std::to_string(m.size()) + " vs " +
                         std::to_string(mhat.size()) + ")");
  double inter = 0.0, sm = 0.0, smh = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    inter += m[i] * mhat[i];
    sm += m[i];
    smh += mhat[i];
  }
  return 2.0 * inter / (sm + smh + kDiceEps);
}

// How recognition (class probability) and segmentation (dice) combine into
// one similarity score: their product by default, their sum as an ablation.
enum class SimilarityMode { product, sum };

inline double mask_similarity(const std::vector<double>& m, int cls,
                              const std::vector<double>& mhat,
                              const std::vector<double>& class_probs,
                              SimilarityMode mode = SimilarityMode::product) {
  if (cls < 0 || cls + 1 >= static_cast<int>(class_probs.size()))
    throw ContractError("mask_similarity: class " + std::to_string(cls) +
                        " outside the real-class range");
  const double p = class_probs[static_cast<std::size_t>(cls)];
  const double d = dice(m, mhat);
  return mode == SimilarityMode::product ? p * d : p + d;
}

// sim[i*N + j] = similarity of gt mask i with slot j for all gt×slot pairs.
inline std::vector<double> similarity_matrix(const GroundTruthSet& gt, const PredictionSet& pred,
                                             SimilarityMode mode = SimilarityMode::product) {
  const int K = gt.count(), N = pred.count();
  std::vector<double> sim(static_cast<std::size_t>(K) * static_cast<std::size_t>(N));
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < N; ++j)
      sim[static_cast<std::size_t>(i) * N + j] =
          mask_similarity(gt.masks[static_cast<std::size_t>(i)], gt.classes[static_cast<std::size_t>(i)],
                          pred.masks[static_cast<std::size_t>(j)],
                          pred.class_probs[static_cast<std::size_t>(j)], mode);
  return sim;
}

namespace detail {

// Shortest-augmenting-path assignment on a rectangular cost matrix
// (rows <= cols), minimizing. Returns col index per row.
inline std::vector<int> assignment_min(const std::vector<double>& cost, int rows, int cols) {
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(rows) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(cols) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(cols) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(cols) + 1, 0);
  for (int i = 1; i <= rows; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(cols) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(cols) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= cols; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost[static_cast<std::size_t>(i0 - 1) * cols + (j - 1)] -
                           u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(rows), -1);
  for (int j = 1; j <= cols; ++j)
    if (p[static_cast<std::size_t>(j)] > 0) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

// Maximizing solve over a sub-rectangle of sim given original row/col index
// lists. Returns original col per listed row.
inline std::vector<int> solve_max_sub(const std::vector<double>& sim, int N,
                                      const std::vector<int>& rows, const std::vector<int>& cols) {
  const int R = static_cast<int>(rows.size()), C = static_cast<int>(cols.size());
  if (R == 0) return {};
  double max_entry = -std::numeric_limits<double>::infinity();
  for (int r : rows)
    for (int c : cols)
      max_entry = std::max(max_entry, sim[static_cast<std::size_t>(r) * N + c]);
  std::vector<double> cost(static_cast<std::size_t>(R) * static_cast<std::size_t>(C));
  for (int a = 0; a < R; ++a)
    for (int b = 0; b < C; ++b)
      cost[static_cast<std::size_t>(a) * C + b] =
          max_entry - sim[static_cast<std::size_t>(rows[static_cast<std::size_t>(a)]) * N +
                          cols[static_cast<std::size_t>(b)]];
  std::vector<int> sub = assignment_min(cost, R, C);
  std::vector<int> out(static_cast<std::size_t>(R));
  for (int a = 0; a < R; ++a) out[static_cast<std::size_t>(a)] = cols[static_cast<std::size_t>(sub[static_cast<std::size_t>(a)])];
  return out;
}

// Row-order total of a full assignment; matches the summation order of an
// exhaustive search so equal totals compare equal bit-for-bit.
inline double row_order_total(const std::vector<double>& sim, int N,
                              const std::vector<int>& assign) {
  double t = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i)
    t += sim[i * static_cast<std::size_t>(N) + static_cast<std::size_t>(assign[i])];
  return t;
}

}  // namespace detail

// Injective gt→slot assignment maximizing total similarity. Among optima the
// slot-index sequence (σ(0),…,σ(K−1)) is lexicographically smallest: slots are
// fixed row by row, taking the lowest slot whose optimal completion still
// attains the best total. Totals are compared as row-order sums so exact ties
// resolve exactly.
inline MatchAssignment hungarian_match(const std::vector<double>& sim, int K, int N) {
  if (K > N)
    throw ContractError("hungarian_match: more ground-truth masks (" + std::to_string(K) +
                        ") than slots (" + std::to_string(N) + ")");
  if (sim.size() != static_cast<std::size_t>(K) * static_cast<std::size_t>(N))
    throw DimensionError("hungarian_match: similarity matrix is not K x N");
  for (double v : sim)
    if (!std::isfinite(v)) throw ContractError("hungarian_match: non-finite similarity entry");

  MatchAssignment out;
  if (K == 0) {
    for (int j = 0; j < N; ++j) out.negatives.push_back(j);
    return out;
  }

  std::vector<int> all_rows(static_cast<std::size_t>(K));
  std::vector<int> all_cols(static_cast<std::size_t>(N));
  for (int i = 0; i < K; ++i) all_rows[static_cast<std::size_t>(i)] = i;
  for (int j = 0; j < N; ++j) all_cols[static_cast<std::size_t>(j)] = j;

  double best_total =
      detail::row_order_total(sim, N, detail::solve_max_sub(sim, N, all_rows, all_cols));

  std::vector<int> chosen(static_cast<std::size_t>(K), -1);
  bool restart = true;
  while (restart) {
    restart = false;
    std::vector<int> avail = all_cols;
    std::vector<int> prefix;
    for (int i = 0; i < K && !restart; ++i) {
      bool fixed = false;
      for (std::size_t a = 0; a < avail.size() && !fixed && !restart; ++a) {
        const int j = avail[a];
        std::vector<int> rest_rows;
        for (int r = i + 1; r < K; ++r) rest_rows.push_back(r);
        std::vector<int> rest_cols;
        for (int c : avail)
          if (c != j) rest_cols.push_back(c);
        std::vector<int> rest = detail::solve_max_sub(sim, N, rest_rows, rest_cols);
        std::vector<int> cand = prefix;
        cand.push_back(j);
        for (int c : rest) cand.push_back(c);
        const double t = detail::row_order_total(sim, N, cand);
        if (t > best_total) {
          best_total = t;  // defensive: a re-solve beat the first solve
          restart = true;
        } else if (t == best_total) {
          prefix.push_back(j);
          avail.erase(avail.begin() + static_cast<std::ptrdiff_t>(a));
          fixed = true;
        }
      }
      if (!fixed && !restart)
        throw ContractError("hungarian_match: internal tie-break failed to extend prefix");
    }
    if (!restart)
      for (int i = 0; i < K; ++i) chosen[static_cast<std::size_t>(i)] = prefix[static_cast<std::size_t>(i)];
  }

  std::vector<char> taken(static_cast<std::size_t>(N), 0);
  for (int i = 0; i < K; ++i) {
    const int j = chosen[static_cast<std::size_t>(i)];
    out.pairs.emplace_back(i, j);
    out.similarities.push_back(sim[static_cast<std::size_t>(i) * N + j]);
    taken[static_cast<std::size_t>(j)] = 1;
  }
  for (int j = 0; j < N; ++j)
    if (!taken[static_cast<std::size_t>(j)]) out.negatives.push_back(j);
  return out;
}

// Convenience wrapper used by losses and diagnostics.
inline MatchAssignment match_sets(const GroundTruthSet& gt, const PredictionSet& pred,
                                  SimilarityMode mode = SimilarityMode::product) {
  return hungarian_match(similarity_matrix(gt, pred, mode), gt.count(), pred.count());
}

}  // namespace maxw
