#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maxw/gradsuite.hpp"
#include "maxw/trainer.hpp"

namespace maxw {

// ---------------------------------------------------------------------------
// Panoptic maps on disk: <stem>.pgm (16-bit ids) + <stem>.labels.txt
// (id -> class name). The same pair a synthesized scene uses for its ground
// truth, so prediction and ground-truth directories share one loader.
// ---------------------------------------------------------------------------

inline void write_panoptic_map(const std::string& dir, const std::string& stem,
                               const PanopticMap& map) {
  validate(map);
  MaskIdMap ids;
  ids.height = map.height;
  ids.width = map.width;
  ids.ids.reserve(map.mask_id.size());
  for (int id : map.mask_id) {
    if (id > 65535) throw ContractError("panoptic map id exceeds the 16-bit file format");
    ids.ids.push_back(static_cast<std::uint16_t>(id));
  }
  std::map<int, std::string> labels;
  for (const auto& [id, cls] : map.class_of) {
    if (cls < 0 || cls >= num_classes())
      throw ContractError("panoptic map class " + std::to_string(cls) + " not in the vocabulary");
    labels[id] = class_vocabulary()[static_cast<std::size_t>(cls)].name;
  }
  write_pgm16(dir + "/" + stem + ".pgm", ids);
  write_labels(dir + "/" + stem + ".labels.txt", labels);
}

inline PanopticMap read_panoptic_map(const std::string& dir, const std::string& stem) {
  const MaskIdMap ids = read_pgm16(dir + "/" + stem + ".pgm");
  const auto labels = read_labels(dir + "/" + stem + ".labels.txt");
  PanopticMap map;
  map.height = ids.height;
  map.width = ids.width;
  map.mask_id.assign(ids.ids.begin(), ids.ids.end());
  for (const auto& [id, name] : labels) map.class_of[id] = class_id_by_name(name);
  validate(map);
  return map;
}

inline GroundTruthSet ground_truth_from_map(const PanopticMap& map) {
  GroundTruthSet gt;
  gt.height = map.height;
  gt.width = map.width;
  for (const auto& [id, cls] : map.class_of) {
    std::vector<double> mask(map.mask_id.size(), 0.0);
    bool any = false;
    for (std::size_t p = 0; p < map.mask_id.size(); ++p)
      if (map.mask_id[p] == id) {
        mask[p] = 1.0;
        any = true;
      }
    if (!any) continue;  // classed but empty: nothing to segment against
    gt.masks.push_back(std::move(mask));
    gt.classes.push_back(cls);
  }
  return gt;
}

// Fixed palette: void black, each id a saturated hue stepped by the golden
// angle so neighbouring ids stay distinguishable.
inline ImageU8 colorize_map(const PanopticMap& map) {
  auto hue_rgb = [](double h) {  // h in [0,1), s=v=1
    const double x = h * 6.0;
    const int k = static_cast<int>(x) % 6;
    const double f = x - std::floor(x);
    const double q = 1.0 - f;
    double r = 0, g = 0, b = 0;
    switch (k) {
      case 0: r = 1, g = f; break;
      case 1: r = q, g = 1; break;
      case 2: g = 1, b = f; break;
      case 3: g = q, b = 1; break;
      case 4: r = f, b = 1; break;
      default: r = 1, b = q; break;
    }
    return std::array<double, 3>{r, g, b};
  };
  ImageU8 img;
  img.height = map.height;
  img.width = map.width;
  img.rgb.assign(map.mask_id.size() * 3, 0);
  for (std::size_t p = 0; p < map.mask_id.size(); ++p) {
    const int id = map.mask_id[p];
    if (id == 0) continue;
    const auto rgb = hue_rgb(std::fmod(0.61803398875 * id, 1.0));
    for (int c = 0; c < 3; ++c)
      img.rgb[p * 3 + static_cast<std::size_t>(c)] =
          static_cast<unsigned char>(std::lround(255.0 * rgb[static_cast<std::size_t>(c)]));
  }
  return img;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

namespace climpl {

inline std::string image_stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

inline std::string checkpoint_stem(const std::string& path) {
  const std::string suffix = ".maxw";
  if (path.size() > suffix.size() && path.substr(path.size() - suffix.size()) == suffix)
    return path.substr(0, path.size() - suffix.size());
  return path;
}

inline int cmd_synth(const std::string& config, const std::string& out, int count) {
  TrainConfig cfg = read_train_config(config);
  if (count < 1) throw ConfigError("--count must be >= 1");
  std::filesystem::create_directories(out);
  std::vector<std::string> stems;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05d", i);
    write_scene(out, name, generate_scene(cfg.scene, i));
    stems.push_back(name);
  }
  write_manifest(out + "/manifest.txt", stems);
  write_train_config(out + "/config.txt", cfg);
  std::cout << "wrote " << count << " scenes to " << out << "\n";
  return 0;
}

inline int cmd_train(const std::string& config, const std::string& data, const std::string& out) {
  TrainConfig cfg = read_train_config(config);
  Dataset dataset = dataset_from_dir(data);
  if (dataset.height != cfg.model.height || dataset.width != cfg.model.width)
    throw ConfigError("dataset canvas " + std::to_string(dataset.height) + "x" +
                      std::to_string(dataset.width) + " does not match the configured model");
  std::filesystem::create_directories(out);
  write_train_config(out + "/config.txt", cfg);
  Model model = Model::build(cfg.model, cfg.seed);
  AdamState opt = make_adam_state(model.store);
  std::cout << "training " << model.store.trainable_elements() << " weights on " << dataset.size()
            << " scenes for " << cfg.total_steps << " steps\n";
  TrainHooks hooks;
  hooks.on_eval = [](int step, const PQReport& rep) {
    std::printf("step %d: PQ %.4f (things %.4f, stuff %.4f)\n", step, rep.all.pq, rep.things.pq,
                rep.stuff.pq);
    std::fflush(stdout);
  };
  train_loop(model, opt, dataset, cfg, out, hooks);
  std::cout << "final checkpoint: " << out << "/checkpoint.maxw\n";
  return 0;
}

inline int cmd_infer(const std::string& checkpoint, const std::string& image,
                     const std::string& out) {
  Model model = load_training_state(checkpoint_stem(checkpoint));
  ImageU8 img = read_ppm(image);
  if (img.height != model.cfg.height || img.width != model.cfg.width)
    throw ConfigError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                      " but the checkpointed model expects " + std::to_string(model.cfg.height) +
                      "x" + std::to_string(model.cfg.width));
  std::filesystem::create_directories(out);
  Graph g;
  ModelOutputs outputs = model.forward(g, image_to_planar(img), false);
  PanopticMap map = panoptic_inference(outputs.mask_probs_full, outputs.class_probs,
                                       default_thing_flags());
  const std::string stem = image_stem(image);
  write_panoptic_map(out, stem, map);
  write_ppm(out + "/" + stem + ".view.ppm", colorize_map(map));
  std::cout << "segmented " << image << ": " << map.class_of.size() << " segments -> " << out
            << "/" << stem << ".{pgm,labels.txt,view.ppm}\n";
  return 0;
}

inline int cmd_eval(const std::string& pred, const std::string& gt, const std::string& report) {
  PQAccumulator acc;
  for (const std::string& stem : read_manifest(gt + "/manifest.txt")) {
    GroundTruthSet truth = ground_truth_from_map(read_panoptic_map(gt, stem));
    acc.add(read_panoptic_map(pred, stem), truth);
  }
  if (acc.empty()) throw ContractError("evaluation saw no segments at all");
  std::vector<std::string> names;
  for (const auto& c : class_vocabulary()) names.push_back(c.name);
  const std::string text = format_pq_report(acc.finalize(default_thing_flags()), names);
  std::ofstream fs(report, std::ios::binary);
  if (!fs) throw Error("cannot open '" + report + "' for writing");
  fs << text;
  std::cout << text;
  return 0;
}

inline int cmd_gradcheck(const std::string& module, int instances) {
  GradSuiteOptions opt;
  opt.instances = instances;
  SuiteResult res = run_grad_suites(module, opt);
  for (const auto& c : res.checks)
    std::printf("%-28s %s  max_rel_err %.3e  (%zu checks)\n", c.name.c_str(),
                c.report.pass ? "ok  " : "FAIL", c.report.max_rel_err, c.report.checks);
  std::printf("gradcheck %s: max relative error %.3e\n", res.pass ? "passed" : "FAILED",
              res.max_rel_err);
  if (!res.pass)
    for (const auto& c : res.checks)
      if (!c.report.pass) std::fprintf(stderr, "%s: %s\n", c.name.c_str(), c.report.worst.c_str());
  return res.pass ? 0 : 1;
}

inline int cmd_slot_stats(const std::string& pred) {
  std::vector<std::string> stems;
  if (!std::filesystem::is_directory(pred)) throw Error("'" + pred + "' is not a directory");
  for (const auto& entry : std::filesystem::directory_iterator(pred)) {
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() == ".pgm" && name.rfind("slot_", 0) != 0)
      stems.push_back(entry.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw Error("no .pgm maps under '" + pred + "'");

  int height = 0, width = 0, max_id = 0;
  std::vector<std::vector<int>> hits;  // per id-1: per-pixel occupancy counts
  std::vector<int> fired;              // per id-1: maps where the id owns pixels
  for (const std::string& stem : stems) {
    const MaskIdMap ids = read_pgm16(pred + "/" + stem + ".pgm");
    if (height == 0) {
      height = ids.height;
      width = ids.width;
    } else if (ids.height != height || ids.width != width) {
      throw ContractError(stem + ": map size differs from the rest of the directory");
    }
    std::vector<bool> seen;
    for (std::size_t p = 0; p < ids.ids.size(); ++p) {
      const int id = ids.ids[p];
      if (id == 0) continue;
      if (id > max_id) {
        max_id = id;
        hits.resize(static_cast<std::size_t>(max_id),
                    std::vector<int>(static_cast<std::size_t>(height * width), 0));
        fired.resize(static_cast<std::size_t>(max_id), 0);
        seen.resize(static_cast<std::size_t>(max_id), false);
      }
      if (seen.size() < static_cast<std::size_t>(max_id)) seen.resize(static_cast<std::size_t>(max_id), false);
      ++hits[static_cast<std::size_t>(id - 1)][p];
      seen[static_cast<std::size_t>(id - 1)] = true;
    }
    for (int i = 0; i < max_id; ++i)
      if (i < static_cast<int>(seen.size()) && seen[static_cast<std::size_t>(i)])
        ++fired[static_cast<std::size_t>(i)];
  }

  const std::string stats_dir = pred + "/slot_stats";
  std::filesystem::create_directories(stats_dir);
  const double denom = static_cast<double>(stems.size()) * height * width;
  std::printf("slot,fired,images,mean_area_fraction\n");
  for (int i = 0; i < max_id; ++i) {
    long total = 0;
    for (int h : hits[static_cast<std::size_t>(i)]) total += h;
    std::printf("%d,%d,%zu,%.6f\n", i, fired[static_cast<std::size_t>(i)], stems.size(),
                static_cast<double>(total) / denom);
    MaskIdMap mean;
    mean.height = height;
    mean.width = width;
    mean.ids.reserve(static_cast<std::size_t>(height * width));
    for (int h : hits[static_cast<std::size_t>(i)])
      mean.ids.push_back(static_cast<std::uint16_t>(
          std::lround(65535.0 * h / static_cast<double>(stems.size()))));
    char name[32];
    std::snprintf(name, sizeof(name), "slot_%03d.pgm", i);
    write_pgm16(stats_dir + "/" + name, mean);
  }
  std::cout << "mean masks written to " << stats_dir << "\n";
  return 0;
}

}  // namespace climpl

// argv without the program name. Returns the process exit code.
inline int cli(const std::vector<std::string>& args) {
  CLI::App app{"panoptic segmentation with a dual-path mask transformer"};
  app.require_subcommand(1);

  std::string config, out, data, checkpoint, image, pred, gt, report;
  std::string module = "all";
  int count = 0, instances = 100;

  CLI::App* synth = app.add_subcommand("synth", "generate a scene dataset");
  synth->add_option("--config", config, "training config file")->required();
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--count", count, "number of scenes")->required();

  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config, "training config file")->required();
  train->add_option("--data", data, "dataset directory (from synth)")->required();
  train->add_option("--out", out, "run directory for logs and checkpoints")->required();

  CLI::App* infer = app.add_subcommand("infer", "segment one image");
  infer->add_option("--checkpoint", checkpoint, "checkpoint file (.maxw)")->required();
  infer->add_option("--image", image, "input image (binary PPM)")->required();
  infer->add_option("--out", out, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "panoptic quality of predictions");
  eval->add_option("--pred", pred, "directory of predicted maps")->required();
  eval->add_option("--gt", gt, "directory of ground-truth maps (with manifest.txt)")->required();
  eval->add_option("--report", report, "report file to write")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  gradcheck->add_option("--module", module, "tensor, attention, losses or all");
  gradcheck->add_option("--instances", instances, "random instances per check");

  CLI::App* slots = app.add_subcommand("slot-stats", "per-slot firing counts and mean masks");
  slots->add_option("--pred", pred, "directory of predicted maps")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // prints to stderr / --help to stdout
  }

  try {
    if (synth->parsed()) return climpl::cmd_synth(config, out, count);
    if (train->parsed()) return climpl::cmd_train(config, data, out);
    if (infer->parsed()) return climpl::cmd_infer(checkpoint, image, out);
    if (eval->parsed()) return climpl::cmd_eval(pred, gt, report);
    if (gradcheck->parsed()) return climpl::cmd_gradcheck(module, instances);
    if (slots->parsed()) return climpl::cmd_slot_stats(pred);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}

}  // namespace maxw
