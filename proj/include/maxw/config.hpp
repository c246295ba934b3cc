#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "maxw/error.hpp"
#include "maxw/losses.hpp"
#include "maxw/model.hpp"
#include "maxw/scene.hpp"

namespace maxw {

// Everything one run needs, parsed from a flat `key = value` file. Canvas
// size is shared: `height`/`width` set both the model and the scene
// generator.
struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  SceneConfig scene;
  double base_lr = 1e-3;
  double poly_power = 0.9;
  int total_steps = 1000;
  int batch_size = 4;
  std::uint64_t seed = 1234;
  int checkpoint_every = 1000;
  int eval_every = 500;
  double backbone_lr_multiplier = 0.1;
  int threads = 0;  // recorded for provenance; kernels are sequential

  void validate() const {
    maxw::validate(model);
    loss.validate();
    maxw::validate(scene, model.slots);
    if (model.height != scene.height || model.width != scene.width)
      throw ConfigError("model and scene canvas sizes must agree");
    if (model.num_classes != num_classes())
      throw ConfigError("model num_classes must match the class vocabulary (" +
                        std::to_string(num_classes()) + ")");
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
    if (poly_power <= 0.0) throw ConfigError("poly_power must be positive");
    if (checkpoint_every < 1 || eval_every < 1)
      throw ConfigError("checkpoint/eval cadence must be >= 1");
    if (backbone_lr_multiplier < 0.0)
      throw ConfigError("backbone_lr_multiplier must be non-negative");
    if (threads < 0) throw ConfigError("threads must be non-negative");
  }
};

namespace detail {

inline double parse_double_field(const std::string& v, const std::string& key, int line) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line) + ": key '" + key + "' needs a number, got '" +
                     v + "'");
  }
}

inline bool parse_bool_field(const std::string& v, const std::string& key, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("line " + std::to_string(line) + ": key '" + key + "' needs true/false, got '" +
                   v + "'");
}

inline std::uint64_t parse_u64_field(const std::string& v, const std::string& key, int line) {
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return static_cast<std::uint64_t>(x);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line) + ": key '" + key +
                     "' needs an unsigned integer, got '" + v + "'");
  }
}

}  // namespace detail

inline TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = detail::trim_ws(raw);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                       line + "'");
    const std::string key = detail::trim_ws(line.substr(0, eq));
    const std::string val = detail::trim_ws(line.substr(eq + 1));
    auto iv = [&] { return detail::parse_int_field(val, key, lineno); };
    auto dv = [&] { return detail::parse_double_field(val, key, lineno); };
    auto bv = [&] { return detail::parse_bool_field(val, key, lineno); };

    if (key == "height") {
      cfg.model.height = iv();
      cfg.scene.height = cfg.model.height;
    } else if (key == "width") {
      cfg.model.width = iv();
      cfg.scene.width = cfg.model.width;
    } else if (key == "slots") {
      cfg.model.slots = iv();
    } else if (key == "mask_channels") {
      cfg.model.mask_channels = iv();
    } else if (key == "decoder_stacks") {
      cfg.model.decoder_stacks = iv();
    } else if (key == "stem_channels") {
      cfg.model.stem_channels = iv();
    } else if (key == "stage8_channels") {
      cfg.model.stage8_channels = iv();
    } else if (key == "stage16_channels") {
      cfg.model.stage16_channels = iv();
    } else if (key == "decoder4_channels") {
      cfg.model.decoder4_channels = iv();
    } else if (key == "heads") {
      cfg.model.heads = iv();
    } else if (key == "blocks16") {
      cfg.model.blocks16 = iv();
    } else if (key == "blocks8") {
      cfg.model.blocks8 = iv();
    } else if (key == "p2p_mode") {
      if (val == "conv")
        cfg.model.p2p_mode = P2PMode::conv;
      else if (val == "axial")
        cfg.model.p2p_mode = P2PMode::axial;
      else
        throw ParseError("line " + std::to_string(lineno) + ": p2p_mode must be conv or axial");
    } else if (key == "use_p2m") {
      cfg.model.use_p2m = bv();
    } else if (key == "num_classes") {
      cfg.model.num_classes = iv();
    } else if (key == "alpha") {
      cfg.loss.alpha = dv();
    } else if (key == "pq_weight") {
      cfg.loss.pq_weight = dv();
    } else if (key == "instdis_weight") {
      cfg.loss.instdis_weight = dv();
    } else if (key == "maskid_weight") {
      cfg.loss.maskid_weight = dv();
    } else if (key == "semantic_weight") {
      cfg.loss.semantic_weight = dv();
    } else if (key == "tau") {
      cfg.loss.tau = dv();
    } else if (key == "similarity") {
      if (val == "product")
        cfg.loss.similarity = SimilarityMode::product;
      else if (val == "sum")
        cfg.loss.similarity = SimilarityMode::sum;
      else
        throw ParseError("line " + std::to_string(lineno) + ": similarity must be product or sum");
    } else if (key == "max_things") {
      cfg.scene.max_things = iv();
    } else if (key == "occlusion") {
      cfg.scene.occlusion = bv();
    } else if (key == "noise") {
      cfg.scene.noise = dv();
    } else if (key == "base_lr") {
      cfg.base_lr = dv();
    } else if (key == "poly_power") {
      cfg.poly_power = dv();
    } else if (key == "total_steps") {
      cfg.total_steps = iv();
    } else if (key == "batch_size") {
      cfg.batch_size = iv();
    } else if (key == "seed") {
      cfg.seed = detail::parse_u64_field(val, key, lineno);
      cfg.scene.seed = cfg.seed;
    } else if (key == "checkpoint_every") {
      cfg.checkpoint_every = iv();
    } else if (key == "eval_every") {
      cfg.eval_every = iv();
    } else if (key == "backbone_lr_multiplier") {
      cfg.backbone_lr_multiplier = dv();
    } else if (key == "threads") {
      cfg.threads = iv();
    } else {
      throw ParseError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig read_train_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str());
}

inline std::string format_train_config(const TrainConfig& cfg) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "height = " << cfg.model.height << "\n";
  out << "width = " << cfg.model.width << "\n";
  out << "slots = " << cfg.model.slots << "\n";
  out << "mask_channels = " << cfg.model.mask_channels << "\n";
  out << "decoder_stacks = " << cfg.model.decoder_stacks << "\n";
  out << "stem_channels = " << cfg.model.stem_channels << "\n";
  out << "stage8_channels = " << cfg.model.stage8_channels << "\n";
  out << "stage16_channels = " << cfg.model.stage16_channels << "\n";
  out << "decoder4_channels = " << cfg.model.decoder4_channels << "\n";
  out << "heads = " << cfg.model.heads << "\n";
  out << "blocks16 = " << cfg.model.blocks16 << "\n";
  out << "blocks8 = " << cfg.model.blocks8 << "\n";
  out << "p2p_mode = " << p2p_mode_name(cfg.model.p2p_mode) << "\n";
  out << "use_p2m = " << (cfg.model.use_p2m ? "true" : "false") << "\n";
  out << "num_classes = " << cfg.model.num_classes << "\n";
  out << "alpha = " << cfg.loss.alpha << "\n";
  out << "pq_weight = " << cfg.loss.pq_weight << "\n";
  out << "instdis_weight = " << cfg.loss.instdis_weight << "\n";
  out << "maskid_weight = " << cfg.loss.maskid_weight << "\n";
  out << "semantic_weight = " << cfg.loss.semantic_weight << "\n";
  out << "tau = " << cfg.loss.tau << "\n";
  out << "similarity = " << (cfg.loss.similarity == SimilarityMode::product ? "product" : "sum")
      << "\n";
  out << "max_things = " << cfg.scene.max_things << "\n";
  out << "occlusion = " << (cfg.scene.occlusion ? "true" : "false") << "\n";
  out << "noise = " << cfg.scene.noise << "\n";
  out << "base_lr = " << cfg.base_lr << "\n";
  out << "poly_power = " << cfg.poly_power << "\n";
  out << "total_steps = " << cfg.total_steps << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "checkpoint_every = " << cfg.checkpoint_every << "\n";
  out << "eval_every = " << cfg.eval_every << "\n";
  out << "backbone_lr_multiplier = " << cfg.backbone_lr_multiplier << "\n";
  out << "threads = " << cfg.threads << "\n";
  return out.str();
}

inline void write_train_config(const std::string& path, const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out << format_train_config(cfg);
  if (!out) throw ParseError("failed writing '" + path + "'");
}

}  // namespace maxw
