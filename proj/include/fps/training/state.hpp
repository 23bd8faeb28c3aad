#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fps/hfsnet/params.hpp"
#include "fps/io/fpsd.hpp"

namespace fps::training {

using Params = hfsnet::ParamStore<float>;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct TeacherStudentState {
  Params student;
  Params teacher;
  std::size_t iteration = 0;
  std::vector<std::vector<float>> m, v;  // per entry; empty for buffers
  std::uint64_t rng_seed = 0;

  static TeacherStudentState from(const Params& init, std::uint64_t seed) {
    TeacherStudentState s;
    s.student = init.clone(true);
    s.teacher = init.clone(false);
    s.rng_seed = seed;
    for (const auto& e : s.student.entries()) {
      const std::size_t n = e.trainable ? e.var.numel() : 0;
      s.m.emplace_back(n, 0.0f);
      s.v.emplace_back(n, 0.0f);
    }
    return s;
  }
};

/// Cosine decay from lr_start at iteration 0 to lr_end at total - 1.
inline double cosine_lr(std::size_t iteration, std::size_t total, double lr_start, double lr_end) {
  if (total <= 1) return lr_start;
  const double t = std::min(1.0, static_cast<double>(iteration) / static_cast<double>(total - 1));
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * t));
}

/// One decoupled-weight-decay Adam step on the student's trainable tensors;
/// `step` is the 1-based bias-correction count.
inline void adamw_step(TeacherStudentState& s, double lr, std::size_t step, const AdamConfig& c) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  auto& entries = s.student.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (!e.trainable) continue;
    auto& w = e.var.value();
    const auto& g = e.var.grad();
    if (g.empty()) continue;
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      m[k] = static_cast<float>(c.beta1 * m[k] + (1 - c.beta1) * gk);
      v[k] = static_cast<float>(c.beta2 * v[k] + (1 - c.beta2) * gk * gk);
      const double upd = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + c.eps) + c.weight_decay * w[k];
      w[k] = static_cast<float>(w[k] - lr * upd);
    }
  }
}

/// theta_t <- a theta_t + (1 - a) theta_s with a = 1 - 1/(iteration + 1),
/// applied to every tensor including batch-norm buffers.
template <class T>
void ema_update(hfsnet::ParamStore<T>& teacher, const hfsnet::ParamStore<T>& student, std::size_t iteration) {
  teacher.require_same_manifest(student);
  const double a = 1.0 - 1.0 / static_cast<double>(iteration + 1);
  auto& te = teacher.entries();
  const auto& se = student.entries();
  for (std::size_t i = 0; i < te.size(); ++i) {
    auto& t = te[i].var.value();
    const auto& s = se[i].var.value();
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = static_cast<T>(a * t[k] + (1.0 - a) * s[k]);
  }
}

inline void ema_update(TeacherStudentState& s) { ema_update(s.teacher, s.student, s.iteration); }

// ---------------------------------------------------------------- checkpoints

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline io::FpsdArray tensor_array(const std::vector<float>& v, const ag::Shape& shape) {
  std::vector<std::uint32_t> dims(shape.begin(), shape.end());
  return io::make_array(io::DType::float32, std::move(dims), std::vector<double>(v.begin(), v.end()));
}

inline const char* kCheckpointTensors = "checkpoint.fpsd";
inline const char* kCheckpointManifest = "checkpoint.txt";

/// Writes `dir/checkpoint.fpsd` (student, teacher, first and second moments
/// in manifest order) and `dir/checkpoint.txt`, each atomically.
inline void save_checkpoint(const TeacherStudentState& s, const std::filesystem::path& dir, std::uint64_t config_hash) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  std::vector<io::FpsdArray> arrays;
  std::ostringstream man;
  man << "format\tfps-checkpoint-1\n"
      << "iteration\t" << s.iteration << "\n"
      << "seed\t" << s.rng_seed << "\n"
      << "config_hash\t" << config_hash << "\n";
  const auto& st = s.student.entries();
  const auto& te = s.teacher.entries();
  for (std::size_t i = 0; i < st.size(); ++i) {
    man << "tensor\t" << st[i].name << "\t" << ag::shape_str(st[i].var.shape()) << "\t"
        << (st[i].trainable ? "param" : "buffer") << "\n";
    arrays.push_back(tensor_array(st[i].var.value(), st[i].var.shape()));
  }
  for (const auto& e : te) arrays.push_back(tensor_array(e.var.value(), e.var.shape()));
  for (std::size_t i = 0; i < st.size(); ++i) {
    arrays.push_back(tensor_array(s.m[i], {s.m[i].size()}));
    arrays.push_back(tensor_array(s.v[i], {s.v[i].size()}));
  }
  std::string bytes;
  for (const auto& a : arrays) io::encode(a, bytes);
  io::write_file_atomic(dir / kCheckpointTensors, bytes);
  io::write_file_atomic(dir / kCheckpointManifest, man.str());
}

struct CheckpointInfo {
  std::size_t iteration = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir) {
  std::istringstream in(io::read_file(dir / kCheckpointManifest));
  CheckpointInfo info;
  std::string key, line;
  bool ok = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    ls >> key;
    if (key == "format") ok = line.find("fps-checkpoint-1") != std::string::npos;
    else if (key == "iteration") ls >> info.iteration;
    else if (key == "seed") ls >> info.seed;
    else if (key == "config_hash") ls >> info.config_hash;
  }
  require(ok, ErrorKind::format, "checkpoint manifest " + (dir / kCheckpointManifest).string() + " is not recognized");
  return info;
}

/// Restores into `s`, whose tensor manifest must match the checkpoint's.
inline void load_checkpoint(TeacherStudentState& s, const std::filesystem::path& dir, std::uint64_t config_hash) {
  const auto info = read_checkpoint_info(dir);
  require(info.config_hash == config_hash, ErrorKind::state,
          "checkpoint config hash " + std::to_string(info.config_hash) + " does not match the current configuration " +
              std::to_string(config_hash));
  const auto arrays = io::read_stream(dir / kCheckpointTensors);
  auto& st = s.student.entries();
  auto& te = s.teacher.entries();
  require(arrays.size() == 4 * st.size(), ErrorKind::state, "checkpoint tensor count does not match the network");
  auto take = [&](std::size_t idx, std::vector<float>& dst, std::size_t expect, const std::string& name) {
    const auto& a = arrays[idx];
    require(a.dtype == io::DType::float32 && a.values.size() == expect, ErrorKind::state,
            "checkpoint tensor for '" + name + "' has the wrong size");
    dst.assign(a.values.begin(), a.values.end());
  };
  for (std::size_t i = 0; i < st.size(); ++i) {
    take(i, st[i].var.value(), st[i].var.numel(), st[i].name);
    take(st.size() + i, te[i].var.value(), te[i].var.numel(), te[i].name);
    take(2 * st.size() + 2 * i, s.m[i], s.m[i].size(), st[i].name + " (m)");
    take(2 * st.size() + 2 * i + 1, s.v[i], s.v[i].size(), st[i].name + " (v)");
  }
  s.iteration = info.iteration;
  s.rng_seed = info.seed;
}

}  // namespace fps::training
