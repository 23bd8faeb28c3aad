#pragma once

// Experiment configuration: a flat `key = value` text file.
//
//   # comment
//   [train]
//   batch_size = 4
//   train.lr_start = 1e-4      # dotted keys name their section explicitly
//
// Keys outside any section must be dotted. Unknown keys, malformed lines and
// out-of-range values are rejected with the line number and key name.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fps/eval/metrics.hpp"
#include "fps/hfsnet/config.hpp"
#include "fps/phantom/dataset.hpp"
#include "fps/training/loop.hpp"

namespace fps::cli {

struct DataConfig {
  phantom::PhantomConfig phantom;
  std::size_t n_synthetic = 200;
  std::size_t n_real = 200;
  std::size_t n_validation = 50;
  std::uint64_t seed = 1;
};

struct EvalConfig {
  eval::MaskPolicy mask = eval::MaskPolicy::full;
  double t2_lo = 0.0;
  double t2_hi = 0.3;      // s
  double adc_lo = 0.0;
  double adc_hi = 3.5e-3;  // mm^2/s
  std::size_t cohort_size = 40;
  std::uint64_t cohort_seed = 7;
};

struct ExperimentConfig {
  DataConfig data;
  phantom::DomainShiftConfig shift{1.5, 0.1, 0.01, 0.1, 2};
  hfsnet::NetworkConfig network;
  training::TrainConfig train;
  EvalConfig eval;

  /// Cross-field checks delegated to the module validators.
  void validate() const;
};

namespace detail {

enum class ValueKind { count, seed, real, boolean, word, list };

struct Key {
  std::string section;
  std::string name;
  ValueKind kind;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<bool(const ExperimentConfig&)> ok;
  const char* bound;
  std::string dotted() const { return section + "." + name; }
};

inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct TypeError {
  const char* expected;
};

inline std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) throw TypeError{"a non-negative integer"};
  return v;
}

inline double to_real(const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) throw TypeError{"a number"};
  return v;
}

inline bool to_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw TypeError{"true or false"};
}

inline std::vector<std::size_t> to_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_u64(trim(item)));
  if (out.empty()) throw TypeError{"a comma-separated list of integers"};
  return out;
}

#define FPS_COUNT(sec, nm, field, cond, msg)                                                              \
  Key{sec, nm, ValueKind::count, [](const ExperimentConfig& c) { return std::to_string(c.field); },     \
      [](ExperimentConfig& c, const std::string& v) { c.field = static_cast<std::size_t>(to_u64(v)); }, \
      []([[maybe_unused]] const ExperimentConfig& c) { return cond; }, msg}
#define FPS_SEED(sec, nm, field)                                                                      \
  Key{sec, nm, ValueKind::seed, [](const ExperimentConfig& c) { return std::to_string(c.field); }, \
      [](ExperimentConfig& c, const std::string& v) { c.field = to_u64(v); },                      \
      [](const ExperimentConfig&) { return true; }, ""}
#define FPS_REAL(sec, nm, field, cond, msg)                                                      \
  Key{sec, nm, ValueKind::real, [](const ExperimentConfig& c) { return fmt_real(c.field); }, \
      [](ExperimentConfig& c, const std::string& v) { c.field = to_real(v); },               \
      [](const ExperimentConfig& c) { return std::isfinite(c.field) && (cond); }, msg}

inline const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      FPS_COUNT("phantom", "height", data.phantom.height, c.data.phantom.height >= 16, ">= 16"),
      FPS_COUNT("phantom", "width", data.phantom.width, c.data.phantom.width >= 16, ">= 16"),
      FPS_COUNT("phantom", "n_shapes", data.phantom.n_shapes, c.data.phantom.n_shapes >= 1, ">= 1"),
      FPS_REAL("phantom", "lesion_prob", data.phantom.lesion_prob,
               c.data.phantom.lesion_prob >= 0 && c.data.phantom.lesion_prob <= 1, "in [0, 1]"),
      FPS_COUNT("phantom", "n_synthetic", data.n_synthetic, c.data.n_synthetic >= 1, ">= 1"),
      FPS_COUNT("phantom", "n_real", data.n_real, c.data.n_real >= 1, ">= 1"),
      FPS_COUNT("phantom", "n_validation", data.n_validation, c.data.n_validation >= 1, ">= 1"),
      FPS_SEED("phantom", "seed", data.seed),

      FPS_REAL("shift", "lowfreq_gain", shift.lowfreq_gain, c.shift.lowfreq_gain >= 0, ">= 0"),
      FPS_REAL("shift", "lowfreq_radius", shift.lowfreq_radius,
               c.shift.lowfreq_radius > 0 && c.shift.lowfreq_radius <= 1, "in (0, 1]"),
      FPS_REAL("shift", "noise_sigma", shift.noise_sigma, c.shift.noise_sigma >= 0, ">= 0"),
      FPS_REAL("shift", "bias_strength", shift.bias_strength,
               c.shift.bias_strength >= 0 && c.shift.bias_strength < 1, "in [0, 1)"),
      FPS_SEED("shift", "seed", shift.seed),

      FPS_COUNT("network", "scales", network.scales, c.network.scales >= 1, ">= 1"),
      FPS_COUNT("network", "in_channels", network.in_channels, c.network.in_channels >= 1, ">= 1"),
      FPS_COUNT("network", "base_channels", network.base_channels, c.network.base_channels >= 1, ">= 1"),
      FPS_COUNT("network", "out_channels", network.out_channels, c.network.out_channels >= 1, ">= 1"),
      FPS_COUNT("network", "embed_dim", network.embed_dim, c.network.embed_dim >= 1, ">= 1"),
      FPS_COUNT("network", "patch_size", network.patch_size, c.network.patch_size >= 1, ">= 1"),
      FPS_COUNT("network", "window_size", network.window_size, c.network.window_size >= 1, ">= 1"),
      FPS_COUNT("network", "attn_heads", network.attn_heads, c.network.attn_heads >= 1, ">= 1"),
      FPS_COUNT("network", "mlp_ratio", network.mlp_ratio, c.network.mlp_ratio >= 1, ">= 1"),
      FPS_COUNT("network", "fas_branches", network.fas.branches, c.network.fas.branches >= 1, ">= 1"),
      Key{"network", "fas_kernels", ValueKind::list,
          [](const ExperimentConfig& c) {
            std::string s;
            for (std::size_t i = 0; i < c.network.fas.kernel_sizes.size(); ++i)
              s += (i ? "," : "") + std::to_string(c.network.fas.kernel_sizes[i]);
            return s;
          },
          [](ExperimentConfig& c, const std::string& v) { c.network.fas.kernel_sizes = to_list(v); },
          [](const ExperimentConfig& c) {
            for (auto k : c.network.fas.kernel_sizes)
              if (k % 2 == 0) return false;
            return true;
          },
          "odd kernel sizes"},
      FPS_COUNT("network", "fas_groups", network.fas.groups, c.network.fas.groups >= 1, ">= 1"),
      FPS_COUNT("network", "fas_reduction", network.fas.fuse_reduction, c.network.fas.fuse_reduction >= 1, ">= 1"),

      FPS_COUNT("train", "batch_size", train.batch_size, c.train.batch_size >= 1, ">= 1"),
      FPS_COUNT("train", "total_iterations", train.total_iterations, true, ""),
      FPS_REAL("train", "lr_start", train.lr_start, c.train.lr_start > 0, "> 0"),
      FPS_REAL("train", "lr_end", train.lr_end, c.train.lr_end > 0, "> 0"),
      FPS_REAL("train", "lambda_freq", train.lambda_freq, c.train.lambda_freq >= 0, ">= 0"),
      FPS_REAL("train", "beta1", train.adam.beta1, c.train.adam.beta1 >= 0 && c.train.adam.beta1 < 1, "in [0, 1)"),
      FPS_REAL("train", "beta2", train.adam.beta2, c.train.adam.beta2 >= 0 && c.train.adam.beta2 < 1, "in [0, 1)"),
      FPS_REAL("train", "adam_eps", train.adam.eps, c.train.adam.eps > 0, "> 0"),
      FPS_REAL("train", "weight_decay", train.adam.weight_decay, c.train.adam.weight_decay >= 0, ">= 0"),
      Key{"train", "source_only", ValueKind::boolean,
          [](const ExperimentConfig& c) { return std::string(c.train.source_only ? "true" : "false"); },
          [](ExperimentConfig& c, const std::string& v) { c.train.source_only = to_bool(v); },
          [](const ExperimentConfig&) { return true; }, ""},
      FPS_COUNT("train", "checkpoint_every", train.checkpoint_every, true, ""),
      FPS_SEED("train", "seed", train.seed),

      Key{"perturb", "mode", ValueKind::word,
          [](const ExperimentConfig& c) {
            return std::string(c.train.perturbation.mode == kspace::PerturbationMode::full_spectrum ? "full" : "single");
          },
          [](ExperimentConfig& c, const std::string& v) {
            if (v == "full") c.train.perturbation.mode = kspace::PerturbationMode::full_spectrum;
            else if (v == "single") c.train.perturbation.mode = kspace::PerturbationMode::single_frequency;
            else throw TypeError{"full or single"};
          },
          [](const ExperimentConfig&) { return true; }, ""},
      FPS_REAL("perturb", "epsilon", train.perturbation.epsilon, c.train.perturbation.epsilon >= 0, ">= 0"),
      FPS_SEED("perturb", "seed", train.perturbation.seed),

      Key{"eval", "mask", ValueKind::word,
          [](const ExperimentConfig& c) { return std::string(eval::to_string(c.eval.mask)); },
          [](ExperimentConfig& c, const std::string& v) {
            if (v == "full") c.eval.mask = eval::MaskPolicy::full;
            else if (v == "display-range") c.eval.mask = eval::MaskPolicy::display_range;
            else throw TypeError{"full or display-range"};
          },
          [](const ExperimentConfig&) { return true; }, ""},
      FPS_REAL("eval", "t2_lo", eval.t2_lo, true, ""),
      FPS_REAL("eval", "t2_hi", eval.t2_hi, c.eval.t2_hi > c.eval.t2_lo, "> eval.t2_lo"),
      FPS_REAL("eval", "adc_lo", eval.adc_lo, true, ""),
      FPS_REAL("eval", "adc_hi", eval.adc_hi, c.eval.adc_hi > c.eval.adc_lo, "> eval.adc_lo"),
      FPS_COUNT("eval", "cohort_size", eval.cohort_size, c.eval.cohort_size >= 4, ">= 4"),
      FPS_SEED("eval", "cohort_seed", eval.cohort_seed),
  };
  return table;
}

#undef FPS_COUNT
#undef FPS_SEED
#undef FPS_REAL

inline const Key* find_key(const std::string& dotted) {
  for (const auto& k : keys())
    if (k.dotted() == dotted) return &k;
  return nullptr;
}

[[noreturn]] inline void config_error(std::size_t line, const std::string& msg) {
  fail(ErrorKind::config, "line " + std::to_string(line) + ": " + msg);
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  for (const auto& k : detail::keys())
    require(k.ok(*this), ErrorKind::config, k.dotted() + " = " + k.get(*this) + " violates bound " + k.bound);
  try {
    network.validate();
    train.validate();
    shift.validate();
    network.validate_input(data.phantom.height, data.phantom.width);
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') detail::config_error(lineno, "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& k : detail::keys()) known = known || k.section == section;
      if (!known) detail::config_error(lineno, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) detail::config_error(lineno, "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (key.empty()) detail::config_error(lineno, "missing key");
    const std::string dotted = key.find('.') != std::string::npos ? key : (section.empty() ? key : section + "." + key);
    const auto* k = detail::find_key(dotted);
    if (!k) detail::config_error(lineno, "unknown key " + dotted);
    try {
      k->set(cfg, value);
    } catch (const detail::TypeError& e) {
      detail::config_error(lineno, dotted + " expects " + e.expected + ", got '" + value + "'");
    }
    if (!k->ok(cfg))
      detail::config_error(lineno, dotted + " = " + value + " violates bound " + k->bound);
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Every key, grouped by section, in table order.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out, section;
  for (const auto& k : detail::keys()) {
    if (k.section != section) {
      if (!section.empty()) out += '\n';
      section = k.section;
      out += "[" + section + "]\n";
    }
    out += k.name + " = " + k.get(cfg) + "\n";
  }
  return out;
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : detail::keys()) out.push_back(k.dotted());
  return out;
}

}  // namespace fps::cli
