#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "maxw/imageio.hpp"
#include "maxw/matching.hpp"
#include "maxw/rng.hpp"

namespace maxw {

// Fixed class vocabulary: three thing shapes over two stuff bands. The
// no-object class sits one past the last real class.
struct ClassInfo {
  const char* name;
  bool is_thing;
};

inline const std::vector<ClassInfo>& class_vocabulary() {
  static const std::vector<ClassInfo> v = {
      {"circle", true}, {"square", true}, {"triangle", true}, {"sky", false}, {"ground", false}};
  return v;
}

inline int num_classes() { return static_cast<int>(class_vocabulary().size()); }
inline int no_object_class() { return num_classes(); }

inline int class_id_by_name(const std::string& name) {
  const auto& v = class_vocabulary();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (name == v[i].name) return static_cast<int>(i);
  throw ParseError("unknown class name '" + name + "'");
}

inline std::vector<bool> default_thing_flags() {
  std::vector<bool> f;
  for (const auto& c : class_vocabulary()) f.push_back(c.is_thing);
  return f;
}

struct SceneConfig {
  int height = 64;
  int width = 64;
  int max_things = 4;  // 0 => stuff-only scenes
  bool occlusion = true;
  double noise = 0.03;
  std::uint64_t seed = 1234;
};

inline void validate(const SceneConfig& cfg, int model_slots) {
  if (cfg.height < 8 || cfg.width < 8) throw ConfigError("scene size must be at least 8x8");
  if (cfg.max_things < 0) throw ConfigError("max_things must be >= 0");
  if (cfg.max_things + 2 > model_slots)
    throw ConfigError("max_things + 2 stuff bands exceeds the model's " +
                      std::to_string(model_slots) + " slots");
  if (cfg.noise < 0.0 || cfg.noise > 0.5) throw ConfigError("noise amplitude out of range");
}

struct Scene {
  ImageU8 image;
  GroundTruthSet gt;
  std::uint64_t effective_seed = 0;  // differs from mix(seed,index) after placement retries
};

namespace detail {

struct ShapeSpec {
  int cls;  // 0 circle, 1 square, 2 triangle
  double cx, cy, size;
};

inline bool inside_shape(const ShapeSpec& s, int x, int y) {
  const double dx = x + 0.5 - s.cx, dy = y + 0.5 - s.cy;
  switch (s.cls) {
    case 0:
      return dx * dx + dy * dy <= s.size * s.size;
    case 1:
      return std::abs(dx) <= s.size && std::abs(dy) <= s.size;
    default: {
      // upward triangle: apex (cx, cy-size), base corners (cx±size, cy+size)
      if (dy < -s.size || dy > s.size) return false;
      const double half_width = (dy + s.size) * 0.5;
      return std::abs(dx) <= half_width;
    }
  }
}

inline bool shapes_overlap(const ShapeSpec& a, const ShapeSpec& b) {
  // conservative bounding-circle test, enough to keep non-occluding layouts apart
  const double dx = a.cx - b.cx, dy = a.cy - b.cy;
  const double r = (a.size + b.size) * 1.45;
  return dx * dx + dy * dy < r * r;
}

inline unsigned char to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace detail

// Deterministic in (cfg.seed, index). Things are z-ordered by draw order;
// ground truth keeps only visible pixels and drops fully hidden masks, so the
// disjointness invariant holds by construction.
inline Scene generate_scene(const SceneConfig& cfg, int index) {
  const int H = cfg.height, W = cfg.width;
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  std::uint64_t scene_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(index));

  for (int attempt = 0;; ++attempt) {
    Rng rng(scene_seed);

    // stuff geometry and palette
    const int horizon = H * 3 / 10 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(H * 4 / 10)));
    double sky_rgb[3] = {0.45 + rng.uniform(-0.1, 0.1), 0.65 + rng.uniform(-0.1, 0.1),
                         0.95 + rng.uniform(-0.05, 0.05)};
    double ground_rgb[3] = {0.35 + rng.uniform(-0.1, 0.1), 0.55 + rng.uniform(-0.1, 0.1),
                            0.20 + rng.uniform(-0.1, 0.1)};

    // thing layout
    const int want = cfg.max_things == 0
                         ? 0
                         : 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.max_things)));
    std::vector<detail::ShapeSpec> shapes;
    bool placement_failed = false;
    const double smin = std::min(H, W) / 8.0, smax = std::min(H, W) / 3.6;
    for (int t = 0; t < want; ++t) {
      bool placed = false;
      for (int tries = 0; tries < 40 && !placed; ++tries) {
        detail::ShapeSpec s;
        s.cls = static_cast<int>(rng.next_below(3));
        s.size = rng.uniform(smin, smax) * 0.5;
        s.cx = rng.uniform(s.size, W - s.size);
        s.cy = rng.uniform(s.size, H - s.size);
        bool ok = true;
        if (!cfg.occlusion)
          for (const auto& other : shapes) ok = ok && !detail::shapes_overlap(s, other);
        if (ok) {
          shapes.push_back(s);
          placed = true;
        }
      }
      if (!placed) {
        placement_failed = true;
        break;
      }
    }
    if (placement_failed) {
      scene_seed = mix_seed(scene_seed, 0x5e7b0a11u);  // derived retry seed
      continue;
    }

    // thing palettes, one draw per shape (after layout so retries reshuffle)
    std::vector<std::array<double, 3>> shape_rgb;
    for (const auto& s : shapes) {
      static const double base[3][3] = {
          {0.85, 0.20, 0.20}, {0.90, 0.80, 0.15}, {0.75, 0.20, 0.80}};
      shape_rgb.push_back({base[s.cls][0] + rng.uniform(-0.08, 0.08),
                           base[s.cls][1] + rng.uniform(-0.08, 0.08),
                           base[s.cls][2] + rng.uniform(-0.08, 0.08)});
    }

    // rasterize: owner = topmost shape, else stuff band
    std::vector<int> owner(hw, -1);  // shape index, or -1 stuff
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int t = static_cast<int>(shapes.size()) - 1; t >= 0; --t)
          if (detail::inside_shape(shapes[static_cast<std::size_t>(t)], x, y)) {
            owner[static_cast<std::size_t>(y) * W + x] = t;
            break;
          }

    Scene scene;
    scene.effective_seed = scene_seed;
    scene.image.height = H;
    scene.image.width = W;
    scene.image.rgb.resize(hw * 3);
    scene.gt.height = H;
    scene.gt.width = W;

    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * W + x;
        const int t = owner[p];
        const double* base = t >= 0 ? shape_rgb[static_cast<std::size_t>(t)].data()
                                    : (y < horizon ? sky_rgb : ground_rgb);
        for (int c = 0; c < 3; ++c)
          scene.image.rgb[p * 3 + static_cast<std::size_t>(c)] =
              detail::to_byte(base[c] + rng.uniform(-cfg.noise, cfg.noise));
      }

    // ground truth: visible thing masks first (draw order), then stuff bands
    for (std::size_t t = 0; t < shapes.size(); ++t) {
      std::vector<double> mask(hw, 0.0);
      std::size_t area = 0;
      for (std::size_t p = 0; p < hw; ++p)
        if (owner[p] == static_cast<int>(t)) {
          mask[p] = 1.0;
          ++area;
        }
      if (area > 0) {
        scene.gt.masks.push_back(std::move(mask));
        scene.gt.classes.push_back(shapes[t].cls);
      }
    }
    for (int band = 0; band < 2; ++band) {
      std::vector<double> mask(hw, 0.0);
      std::size_t area = 0;
      for (int y = 0; y < H; ++y) {
        if ((band == 0) != (y < horizon)) continue;
        for (int x = 0; x < W; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * W + x;
          if (owner[p] < 0) {
            mask[p] = 1.0;
            ++area;
          }
        }
      }
      if (area > 0) {
        scene.gt.masks.push_back(std::move(mask));
        scene.gt.classes.push_back(band == 0 ? class_id_by_name("sky")
                                             : class_id_by_name("ground"));
      }
    }
    return scene;
  }
}

// Directory layout: <dir>/<stem>.ppm, .pgm, .labels.txt; ids are 1-based in
// ground-truth order, 0 = void.
inline void write_scene(const std::string& dir, const std::string& stem, const Scene& scene) {
  write_ppm(dir + "/" + stem + ".ppm", scene.image);
  MaskIdMap map;
  map.height = scene.gt.height;
  map.width = scene.gt.width;
  map.ids.assign(static_cast<std::size_t>(map.height) * map.width, 0);
  std::map<int, std::string> labels;
  for (std::size_t i = 0; i < scene.gt.masks.size(); ++i) {
    const auto& m = scene.gt.masks[i];
    for (std::size_t p = 0; p < m.size(); ++p)
      if (m[p] > 0.5) map.ids[p] = static_cast<std::uint16_t>(i + 1);
    labels[static_cast<int>(i + 1)] =
        class_vocabulary()[static_cast<std::size_t>(scene.gt.classes[i])].name;
  }
  write_pgm16(dir + "/" + stem + ".pgm", map);
  write_labels(dir + "/" + stem + ".labels.txt", labels);
}

inline Scene read_scene(const std::string& dir, const std::string& stem) {
  Scene scene;
  scene.image = read_ppm(dir + "/" + stem + ".ppm");
  const MaskIdMap map = read_pgm16(dir + "/" + stem + ".pgm");
  if (map.height != scene.image.height || map.width != scene.image.width)
    throw ParseError(stem + ": image and mask-id sizes differ");
  const auto labels = read_labels(dir + "/" + stem + ".labels.txt");
  scene.gt.height = map.height;
  scene.gt.width = map.width;
  const std::size_t hw = static_cast<std::size_t>(map.height) * map.width;
  for (const auto& [id, name] : labels) {
    std::vector<double> mask(hw, 0.0);
    std::size_t area = 0;
    for (std::size_t p = 0; p < hw; ++p)
      if (map.ids[p] == id) {
        mask[p] = 1.0;
        ++area;
      }
    if (area == 0)
      throw ParseError(stem + ": labels list mask id " + std::to_string(id) +
                       " absent from the id map");
    scene.gt.masks.push_back(std::move(mask));
    scene.gt.classes.push_back(class_id_by_name(name));
  }
  for (std::uint16_t id : map.ids)
    if (id != 0 && !labels.count(id))
      throw ParseError(stem + ": id map references unlabeled mask id " + std::to_string(id));
  return scene;
}

}  // namespace maxw
