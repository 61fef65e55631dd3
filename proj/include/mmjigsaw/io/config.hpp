#pragma once

// ExperimentConfig: one flat record of every hyperparameter, read from and
// written to an INI document. Unknown keys and malformed values are rejected
// with the offending key in the message.
//
//   seed = 0
//   [puzzle]     grid, patch_len, jitter, nps, perm_pool_size, foreground_threshold, max_puzzles
//   [sinkhorn]   iterations, eval_iterations, temperature
//   [optim]      lr_*, l2_lambda, epochs_*, batch_*, beta1_crossmodal
//   [init]       {puzzle,crossmodal,finetune}_{mean,std}
//   [crossmodal] lambda, adversarial_weight, base_channels, disc_channels, source, target, max_pairs
//   [encoder]    input_side, channels, kernels, strides, normalize
//   [data]       volumes, modalities, depth, height, width, noise_sigma, shade_floor, ...

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <system_error>
#include <type_traits>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/crossmodal/sweep.hpp"
#include "mmjigsaw/puzzle/puzzle.hpp"
#include "mmjigsaw/puzzle/synth.hpp"
#include "mmjigsaw/solver/solver.hpp"
#include "mmjigsaw/transfer/experiments.hpp"
#include "mmjigsaw/transfer/finetune.hpp"

namespace mmjigsaw {

using SizeList = std::array<std::size_t, kEncoderDepth>;

struct ExperimentConfig {
  std::uint64_t seed = 0;

  // puzzle
  std::size_t grid = 3;
  std::size_t patch_len = 0;
  std::size_t jitter = 5;
  std::size_t nps = 1;
  std::size_t perm_pool_size = 0;  // 0: all N! orderings
  double foreground_threshold = 0.05;
  std::size_t max_puzzles = 500;

  // sinkhorn
  int iterations = 20;
  int eval_iterations = 50;
  double temperature = 1.0;

  // optim
  double lr_puzzle = 0.001;
  double lr_crossmodal = 0.0002;
  double lr_finetune = 0.00001;
  double l2_lambda = 0.1;
  std::size_t epochs_puzzle = 500;
  std::size_t epochs_crossmodal = 200;
  std::size_t epochs_finetune = 50;
  std::size_t batch_puzzle = 32;
  std::size_t batch_crossmodal = 8;
  std::size_t batch_finetune = 8;
  double beta1_crossmodal = 0.9;

  // init
  double puzzle_mean = 0.1;
  double puzzle_std = 0.001;
  double crossmodal_mean = 0.0;
  double crossmodal_std = 0.02;
  double finetune_mean = 0.1;
  double finetune_std = 0.001;

  // crossmodal
  double lambda = 100.0;
  double adversarial_weight = 1.0;
  std::size_t base_channels = 16;
  std::size_t disc_channels = 8;
  std::size_t source = 0;
  std::size_t target = 1;
  std::size_t max_pairs = 0;

  // encoder
  std::size_t input_side = 12;
  SizeList channels{16, 32, 32, 64, 64};
  SizeList kernels{3, 3, 3, 3, 3};
  SizeList strides{1, 2, 1, 2, 1};
  bool normalize = true;

  // data
  std::size_t volumes = 8;
  std::size_t modalities = 2;
  std::size_t depth = 32;
  std::size_t height = 32;
  std::size_t width = 32;
  double noise_sigma = 0.03;
  double shade_floor = 0.6;
  double heldout_fraction = 0.0;
  double min_foreground = 0.05;
  std::size_t slice_stride = 1;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

struct ConfigKey {
  std::string name;  // "section.key", or "seed"
  std::function<void(ExperimentConfig&, const std::string&)> parse;
  std::function<std::string(const ExperimentConfig&)> format;
};

[[noreturn]] inline void bad_value(const std::string& key, const std::string& text, const char* expected) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got \"" + text + "\"");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class Int>
Int parse_int(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  Int v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size()) bad_value(key, raw, "an integer");
  return v;
}

inline double parse_double(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) {
    bad_value(key, raw, "a finite number");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  bad_value(key, raw, "true or false");
}

inline SizeList parse_list(const std::string& key, const std::string& raw) {
  SizeList out{};
  std::stringstream ss(raw);
  std::string item;
  std::size_t k = 0;
  while (std::getline(ss, item, ',')) {
    if (k == out.size()) bad_value(key, raw, "5 comma-separated integers");
    out[k++] = parse_int<std::size_t>(key, item);
  }
  if (k != out.size()) bad_value(key, raw, "5 comma-separated integers");
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class M>
ConfigKey key(std::string name, M ExperimentConfig::*field) {
  ConfigKey k;
  k.name = name;
  if constexpr (std::is_same_v<M, double>) {
    k.parse = [=](ExperimentConfig& c, const std::string& s) { c.*field = parse_double(name, s); };
    k.format = [=](const ExperimentConfig& c) { return format_double(c.*field); };
  } else if constexpr (std::is_same_v<M, bool>) {
    k.parse = [=](ExperimentConfig& c, const std::string& s) { c.*field = parse_bool(name, s); };
    k.format = [=](const ExperimentConfig& c) { return std::string(c.*field ? "true" : "false"); };
  } else if constexpr (std::is_same_v<M, SizeList>) {
    k.parse = [=](ExperimentConfig& c, const std::string& s) { c.*field = parse_list(name, s); };
    k.format = [=](const ExperimentConfig& c) {
      std::string out;
      for (std::size_t v : c.*field) out += (out.empty() ? "" : ",") + std::to_string(v);
      return out;
    };
  } else {
    k.parse = [=](ExperimentConfig& c, const std::string& s) { c.*field = parse_int<M>(name, s); };
    k.format = [=](const ExperimentConfig& c) { return std::to_string(c.*field); };
  }
  return k;
}

inline const std::vector<ConfigKey>& config_keys() {
  using C = ExperimentConfig;
  static const std::vector<ConfigKey> keys = {
      key("seed", &C::seed),
      key("puzzle.grid", &C::grid),
      key("puzzle.patch_len", &C::patch_len),
      key("puzzle.jitter", &C::jitter),
      key("puzzle.nps", &C::nps),
      key("puzzle.perm_pool_size", &C::perm_pool_size),
      key("puzzle.foreground_threshold", &C::foreground_threshold),
      key("puzzle.max_puzzles", &C::max_puzzles),
      key("sinkhorn.iterations", &C::iterations),
      key("sinkhorn.eval_iterations", &C::eval_iterations),
      key("sinkhorn.temperature", &C::temperature),
      key("optim.lr_puzzle", &C::lr_puzzle),
      key("optim.lr_crossmodal", &C::lr_crossmodal),
      key("optim.lr_finetune", &C::lr_finetune),
      key("optim.l2_lambda", &C::l2_lambda),
      key("optim.epochs_puzzle", &C::epochs_puzzle),
      key("optim.epochs_crossmodal", &C::epochs_crossmodal),
      key("optim.epochs_finetune", &C::epochs_finetune),
      key("optim.batch_puzzle", &C::batch_puzzle),
      key("optim.batch_crossmodal", &C::batch_crossmodal),
      key("optim.batch_finetune", &C::batch_finetune),
      key("optim.beta1_crossmodal", &C::beta1_crossmodal),
      key("init.puzzle_mean", &C::puzzle_mean),
      key("init.puzzle_std", &C::puzzle_std),
      key("init.crossmodal_mean", &C::crossmodal_mean),
      key("init.crossmodal_std", &C::crossmodal_std),
      key("init.finetune_mean", &C::finetune_mean),
      key("init.finetune_std", &C::finetune_std),
      key("crossmodal.lambda", &C::lambda),
      key("crossmodal.adversarial_weight", &C::adversarial_weight),
      key("crossmodal.base_channels", &C::base_channels),
      key("crossmodal.disc_channels", &C::disc_channels),
      key("crossmodal.source", &C::source),
      key("crossmodal.target", &C::target),
      key("crossmodal.max_pairs", &C::max_pairs),
      key("encoder.input_side", &C::input_side),
      key("encoder.channels", &C::channels),
      key("encoder.kernels", &C::kernels),
      key("encoder.strides", &C::strides),
      key("encoder.normalize", &C::normalize),
      key("data.volumes", &C::volumes),
      key("data.modalities", &C::modalities),
      key("data.depth", &C::depth),
      key("data.height", &C::height),
      key("data.width", &C::width),
      key("data.noise_sigma", &C::noise_sigma),
      key("data.shade_floor", &C::shade_floor),
      key("data.heldout_fraction", &C::heldout_fraction),
      key("data.min_foreground", &C::min_foreground),
      key("data.slice_stride", &C::slice_stride),
  };
  return keys;
}

inline const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace detail

// Applies one "section.key=value" override.
inline void set_config_value(ExperimentConfig& cfg, const std::string& name, const std::string& value) {
  const auto* k = detail::find_key(name);
  if (!k) throw ConfigError("unknown config key '" + name + "'");
  k->parse(cfg, value);
}

inline void validate_config(const ExperimentConfig& c) {
  auto require = [](bool ok, const std::string& key, const std::string& why) {
    if (!ok) throw ConfigError("config key '" + key + "': " + why);
  };
  require(c.grid >= 2, "puzzle.grid", "must be >= 2");
  require(c.nps >= 1, "puzzle.nps", "must be >= 1");
  require(c.iterations >= 1, "sinkhorn.iterations", "must be >= 1");
  require(c.eval_iterations >= 1, "sinkhorn.eval_iterations", "must be >= 1");
  require(c.temperature > 0.0, "sinkhorn.temperature", "must be > 0");
  require(c.lr_puzzle > 0.0, "optim.lr_puzzle", "must be > 0");
  require(c.lr_crossmodal > 0.0, "optim.lr_crossmodal", "must be > 0");
  require(c.lr_finetune > 0.0, "optim.lr_finetune", "must be > 0");
  require(c.l2_lambda >= 0.0, "optim.l2_lambda", "must be >= 0");
  require(c.batch_puzzle >= 1, "optim.batch_puzzle", "must be >= 1");
  require(c.batch_crossmodal >= 1, "optim.batch_crossmodal", "must be >= 1");
  require(c.batch_finetune >= 1, "optim.batch_finetune", "must be >= 1");
  require(c.beta1_crossmodal >= 0.0 && c.beta1_crossmodal < 1.0, "optim.beta1_crossmodal", "must be in [0, 1)");
  require(c.puzzle_std >= 0.0, "init.puzzle_std", "must be >= 0");
  require(c.crossmodal_std >= 0.0, "init.crossmodal_std", "must be >= 0");
  require(c.finetune_std >= 0.0, "init.finetune_std", "must be >= 0");
  require(c.lambda >= 0.0, "crossmodal.lambda", "must be >= 0");
  require(c.adversarial_weight >= 0.0, "crossmodal.adversarial_weight", "must be >= 0");
  require(c.base_channels >= 1, "crossmodal.base_channels", "must be >= 1");
  require(c.disc_channels >= 1, "crossmodal.disc_channels", "must be >= 1");
  require(c.input_side >= 1, "encoder.input_side", "must be >= 1");
  for (std::size_t i = 0; i < kEncoderDepth; ++i) {
    require(c.channels[i] >= 1, "encoder.channels", "entries must be >= 1");
    require(c.kernels[i] >= 1, "encoder.kernels", "entries must be >= 1");
    require(c.strides[i] >= 1, "encoder.strides", "entries must be >= 1");
  }
  require(c.modalities >= 1 && c.modalities <= 255, "data.modalities", "must be in 1..255");
  require(c.depth >= 1 && c.height >= 1 && c.width >= 1, "data.depth", "volume extents must be >= 1");
  require(c.heldout_fraction >= 0.0 && c.heldout_fraction < 1.0, "data.heldout_fraction", "must be in [0, 1)");
  require(c.slice_stride >= 1, "data.slice_stride", "must be >= 1");
}

inline ExperimentConfig parse_config(const std::string& ini_text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      set_config_value(cfg, name, node.data());
      continue;
    }
    for (const auto& [k, leaf] : node) set_config_value(cfg, name + "." + k, leaf.data());
  }
  validate_config(cfg);
  return cfg;
}

// Empty path: every default.
inline ExperimentConfig load_config(const std::filesystem::path& path = {}) {
  if (path.empty()) return ExperimentConfig{};
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::string to_ini(const ExperimentConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& k : detail::config_keys()) {
    const auto dot = k.name.find('.');
    if (dot == std::string::npos) {
      os << k.name << " = " << k.format(cfg) << '\n';
      continue;
    }
    const std::string s = k.name.substr(0, dot);
    if (s != section) {
      os << '\n' << '[' << s << "]\n";
      section = s;
    }
    os << k.name.substr(dot + 1) << " = " << k.format(cfg) << '\n';
  }
  return os.str();
}

// Flat "section.key" -> formatted value, in declaration order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : detail::config_keys()) out.emplace_back(k.name, k.format(cfg));
  return out;
}

// ---- projections onto the module configs ----

inline EncoderArch encoder_arch(const ExperimentConfig& c) {
  EncoderArch a;
  a.input_side = c.input_side;
  a.in_channels = 1;
  a.channels = c.channels;
  a.kernels = c.kernels;
  a.strides = c.strides;
  a.normalize = c.normalize;
  return a;
}

inline PuzzleSpec puzzle_spec(const ExperimentConfig& c, Rng rng) {
  PuzzleSpec s;
  s.grid = c.grid;
  s.patch_len = c.patch_len;
  s.jitter = c.jitter;
  s.per_slice = c.nps;
  s.foreground_threshold = c.foreground_threshold;
  if (c.perm_pool_size != 0) s.perm_pool = make_perm_pool(s.patches(), c.perm_pool_size, rng);
  return s;
}

inline SolverConfig solver_config(const ExperimentConfig& c) {
  SolverConfig s;
  s.sinkhorn_iters = c.iterations;
  s.eval_iters = c.eval_iterations;
  s.temperature = c.temperature;
  s.adam.lr = c.lr_puzzle;
  s.l2_lambda = c.l2_lambda;
  s.batch_size = c.batch_puzzle;
  return s;
}

inline PretrainConfig pretrain_config(const ExperimentConfig& c) {
  PretrainConfig p;
  p.puzzle = puzzle_spec(c, Rng(c.seed).substream(50));
  p.arch = encoder_arch(c);
  p.solver = solver_config(c);
  p.train.epochs = c.epochs_puzzle;
  p.init = {c.puzzle_mean, c.puzzle_std};
  p.max_puzzles = c.max_puzzles;
  p.heldout_fraction = c.heldout_fraction;
  return p;
}

inline TranslatorConfig translator_config(const ExperimentConfig& c) {
  TranslatorConfig t;
  t.arch = {c.base_channels, c.disc_channels};
  t.lambda = c.lambda;
  t.adversarial_weight = c.adversarial_weight;
  t.g_adam.lr = t.d_adam.lr = c.lr_crossmodal;
  t.g_adam.beta1 = t.d_adam.beta1 = c.beta1_crossmodal;
  t.epochs = c.epochs_crossmodal;
  t.batch_size = c.batch_crossmodal;
  t.init_mean = c.crossmodal_mean;
  t.init_stddev = c.crossmodal_std;
  return t;
}

inline FinetuneConfig finetune_config(const ExperimentConfig& c) {
  FinetuneConfig f;
  f.adam.lr = c.lr_finetune;
  f.epochs = c.epochs_finetune;
  f.l2_lambda = c.l2_lambda;
  f.batch_size = c.batch_finetune;
  return f;
}

inline DownstreamConfig downstream_config(const ExperimentConfig& c) {
  DownstreamConfig d;
  d.finetune = finetune_config(c);
  d.init = {c.finetune_mean, c.finetune_std};
  return d;
}

inline SweepConfig sweep_config(const ExperimentConfig& c) {
  SweepConfig s;
  s.source = c.source;
  s.target = c.target;
  s.translator = translator_config(c);
  s.max_pairs = c.max_pairs;
  s.pretrain = pretrain_config(c);
  s.downstream = downstream_config(c);
  return s;
}

inline SynthOptions synth_options(const ExperimentConfig& c) {
  SynthOptions o;
  o.noise_sigma = c.noise_sigma;
  o.shade_floor = c.shade_floor;
  return o;
}

inline Dims volume_dims(const ExperimentConfig& c) { return Dims{c.depth, c.height, c.width}; }

}  // namespace mmjigsaw
