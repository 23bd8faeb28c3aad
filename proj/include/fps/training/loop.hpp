#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "fps/hfsnet/net.hpp"
#include "fps/kspace/perturb.hpp"
#include "fps/phantom/dataset.hpp"
#include "fps/training/losses.hpp"
#include "fps/training/state.hpp"

namespace fps::training {

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t total_iterations = 1000;
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  double lambda_freq = 0.1;
  kspace::PerturbationConfig perturbation;
  AdamConfig adam;
  bool source_only = false;           // L_sup alone, no teacher or unlabeled data
  std::size_t checkpoint_every = 0;   // 0 writes only the final checkpoint
  std::uint64_t seed = 0;

  void validate() const {
    require(batch_size >= 1, ErrorKind::invalid_input, "train: batch_size must be >= 1");
    require(lr_start >= lr_end && lr_end > 0, ErrorKind::invalid_input, "train: need lr_start >= lr_end > 0");
    require(lambda_freq >= 0 && std::isfinite(lambda_freq), ErrorKind::invalid_input, "train: lambda_freq must be >= 0");
    require(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0 &&
                adam.weight_decay >= 0,
            ErrorKind::invalid_input, "train: invalid optimizer coefficients");
    perturbation.validate();
  }
};

/// Canonical text of everything that shapes a run; hashed into checkpoints.
inline std::string describe(const TrainConfig& t, const hfsnet::NetworkConfig& n) {
  std::ostringstream o;
  o.precision(17);
  o << "net " << n.scales << ' ' << n.in_channels << ' ' << n.base_channels << ' ' << n.out_channels << ' '
    << n.embed_dim << ' ' << n.patch_size << ' ' << n.window_size << ' ' << n.attn_heads << ' ' << n.mlp_ratio
    << " fas " << n.fas.branches << ' ' << n.fas.groups << ' ' << n.fas.fuse_reduction;
  for (auto k : n.fas.kernel_sizes) o << ' ' << k;
  o << " train " << t.batch_size << ' ' << t.total_iterations << ' ' << t.lr_start << ' ' << t.lr_end << ' '
    << t.lambda_freq << ' ' << static_cast<int>(t.perturbation.mode) << ' ' << t.perturbation.epsilon << ' '
    << t.perturbation.seed << ' ' << t.adam.beta1 << ' ' << t.adam.beta2 << ' ' << t.adam.eps << ' '
    << t.adam.weight_decay << ' ' << t.source_only << ' ' << t.seed;
  return o.str();
}

inline std::uint64_t config_hash(const TrainConfig& t, const hfsnet::NetworkConfig& n) {
  return fnv1a(describe(t, n));
}

// ---------------------------------------------------------------- tensors

/// Normalized complex inputs [B, 2, H, W] (real, imaginary).
inline ag::Var<float> input_tensor(const std::vector<const kspace::ComplexImage*>& imgs) {
  require(!imgs.empty(), ErrorKind::invalid_input, "input_tensor: empty batch");
  const std::size_t H = imgs[0]->height, W = imgs[0]->width, HW = H * W;
  std::vector<float> v(imgs.size() * 2 * HW);
  for (std::size_t b = 0; b < imgs.size(); ++b) {
    require(imgs[b]->height == H && imgs[b]->width == W, ErrorKind::shape, "input_tensor: mixed image sizes");
    for (std::size_t k = 0; k < HW; ++k) {
      v[(2 * b) * HW + k] = static_cast<float>(imgs[b]->re[k]);
      v[(2 * b + 1) * HW + k] = static_cast<float>(imgs[b]->im[k]);
    }
  }
  return ag::Var<float>::leaf({imgs.size(), 2, H, W}, std::move(v));
}

/// Normalized targets [B, 2, H, W] (T2, ADC).
inline ag::Var<float> target_tensor(const std::vector<const phantom::ParameterMaps*>& maps) {
  const std::size_t H = maps[0]->height, W = maps[0]->width, HW = H * W;
  std::vector<float> v(maps.size() * 2 * HW);
  for (std::size_t b = 0; b < maps.size(); ++b)
    for (std::size_t k = 0; k < HW; ++k) {
      v[(2 * b) * HW + k] = static_cast<float>(phantom::normalize_t2(maps[b]->t2[k]));
      v[(2 * b + 1) * HW + k] = static_cast<float>(phantom::normalize_adc(maps[b]->adc[k]));
    }
  return ag::Var<float>::leaf({maps.size(), 2, H, W}, std::move(v));
}

/// Prepared corpus: inputs scaled by 1/max|img|, as the network sees them.
struct Corpus {
  std::vector<kspace::ComplexImage> inputs;
  std::vector<phantom::ParameterMaps> targets;

  static Corpus from(const std::vector<phantom::SamplePair>& pairs) {
    Corpus c;
    for (const auto& p : pairs) {
      c.inputs.push_back(phantom::normalize_input(p.input));
      c.targets.push_back(p.target);
    }
    return c;
  }
  std::size_t size() const { return inputs.size(); }
};

/// Sample index for batch slot `slot` of `iteration`: epochs of size n are
/// shuffled independently, so the draw is a pure function of its arguments.
inline std::size_t batch_index(std::uint64_t seed, std::size_t iteration, std::size_t batch, std::size_t slot,
                               std::size_t n) {
  const std::size_t k = iteration * batch + slot, epoch = k / n, pos = k % n;
  thread_local std::uint64_t cached_key = ~0ull;
  thread_local std::size_t cached_n = 0;
  thread_local std::vector<std::size_t> perm;
  const std::uint64_t key = mix_seed(seed, epoch);
  if (key != cached_key || cached_n != n) {
    perm.resize(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(key);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    cached_key = key;
    cached_n = n;
  }
  return perm[pos];
}

// ---------------------------------------------------------------- steps

struct StepReport {
  std::size_t iteration = 0;
  double lr = 0;
  LossTerms terms;
};

inline hfsnet::Context teacher_context() { return hfsnet::Context::train(false); }

/// One optimization step: perturb, forward both networks, loss, AdamW on the
/// student, EMA into the teacher, iteration += 1.
inline StepReport train_step(TeacherStudentState& state, const std::vector<const kspace::ComplexImage*>& syn,
                             const std::vector<const phantom::ParameterMaps*>& targets,
                             const std::vector<const kspace::ComplexImage*>& real, const kspace::DistanceMap& dmap,
                             const TrainConfig& cfg, const hfsnet::NetworkConfig& net) {
  require(!syn.empty() && syn.size() == targets.size(), ErrorKind::invalid_input,
          "train_step: labeled batch must be non-empty with one target per input");
  require(cfg.source_only || !real.empty(), ErrorKind::invalid_input, "train_step: unlabeled batch is empty");
  const std::size_t it = state.iteration;
  const std::size_t total = std::max<std::size_t>(cfg.total_iterations, it + 1);

  state.student.zero_grad();
  const auto x_syn = input_tensor(syn);
  const auto g = target_tensor(targets);
  auto s_syn = hfsnet::hfsnet_forward(x_syn, state.student, net, hfsnet::Context::train());
  LossResult<float> loss;
  if (cfg.source_only) {
    loss = supervised_loss(s_syn, g, cfg.lambda_freq);
  } else {
    require(dmap.height == syn[0]->height && dmap.width == syn[0]->width, ErrorKind::shape,
            "train_step: distance map does not match the image size");
    auto perturb_all = [&](const std::vector<const kspace::ComplexImage*>& imgs, std::uint64_t tag) {
      std::vector<kspace::ComplexImage> out;
      for (std::size_t j = 0; j < imgs.size(); ++j) {
        kspace::PerturbationConfig pc = cfg.perturbation;
        pc.seed = mix_seed(mix_seed(cfg.perturbation.seed ^ state.rng_seed, it), tag * 1024 + j);
        out.push_back(kspace::perturb_image(*imgs[j], dmap, pc));
      }
      return out;
    };
    const auto syn_p = perturb_all(syn, 1);
    const auto real_p = perturb_all(real, 2);
    auto ptrs = [](const std::vector<kspace::ComplexImage>& v) {
      std::vector<const kspace::ComplexImage*> p;
      for (const auto& x : v) p.push_back(&x);
      return p;
    };
    auto s_real = hfsnet::hfsnet_forward(input_tensor(real), state.student, net, hfsnet::Context::train());
    auto t_syn = hfsnet::hfsnet_forward(input_tensor(ptrs(syn_p)), state.teacher, net, teacher_context());
    auto t_real = hfsnet::hfsnet_forward(input_tensor(ptrs(real_p)), state.teacher, net, teacher_context());
    loss = total_loss(s_syn, s_real, t_syn, t_real, g, std::min(it, total), total, cfg.lambda_freq);
  }
  ag::backward(loss.total);

  for (const auto& e : state.teacher.entries())
    require(e.var.grad().empty(), ErrorKind::state, "train_step: teacher tensor '" + e.name + "' received a gradient");
  for (const auto& e : state.student.entries())
    for (float v : e.var.grad())
      if (!std::isfinite(v)) fail(ErrorKind::divergence, "train_step: non-finite gradient in '" + e.name + "'");

  StepReport rep;
  rep.iteration = it;
  rep.lr = cosine_lr(it, cfg.total_iterations, cfg.lr_start, cfg.lr_end);
  rep.terms = loss.terms;
  if (cfg.source_only) rep.terms.lambda_real = lambda_real(std::min(it, total), total);
  adamw_step(state, rep.lr, it + 1, cfg.adam);
  state.student.zero_grad();
  ema_update(state);
  state.iteration += 1;
  return rep;
}

// ---------------------------------------------------------------- loop

inline constexpr const char* kLossLogHeader = "iteration\tL_con\tL_sup\tL_sup_teacher\tL_un_syn\tL_un_real\tlambda_real\tlr\tL_total";

inline std::string log_row(const StepReport& r) {
  std::ostringstream o;
  o.precision(9);
  o << r.iteration << '\t' << r.terms.con << '\t' << r.terms.sup << '\t' << r.terms.sup_teacher << '\t'
    << r.terms.un_syn << '\t' << r.terms.un_real << '\t' << r.terms.lambda_real << '\t' << r.lr << '\t'
    << r.terms.total;
  return o.str();
}

struct LoopResult {
  TeacherStudentState state;
  std::vector<StepReport> log;
};

struct LoopOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints, no log file
  bool resume = false;
  std::size_t stop_at = 0;  // 0 runs to total_iterations; otherwise stops early (for resume tests)
  std::function<void(const StepReport&)> on_step;
};

inline LoopResult train_loop(const Corpus& syn, const Corpus& real, const kspace::DistanceMap& dmap,
                             const TrainConfig& cfg, const hfsnet::NetworkConfig& net, const LoopOptions& opt = {}) {
  cfg.validate();
  net.validate();
  require(syn.size() >= 1, ErrorKind::invalid_input, "train_loop: labeled corpus is empty");
  require(cfg.source_only || real.size() >= 1, ErrorKind::invalid_input, "train_loop: unlabeled corpus is empty");
  const std::uint64_t hash = config_hash(cfg, net);

  LoopResult r;
  r.state = TeacherStudentState::from(hfsnet::init_parameters<float>(net, cfg.seed), cfg.seed);
  const bool ckpt = !opt.checkpoint_dir.empty();
  const auto log_path = opt.checkpoint_dir / "loss.tsv";
  std::vector<std::string> log_lines;
  if (opt.resume) {
    require(ckpt, ErrorKind::invalid_input, "train_loop: resume needs a checkpoint directory");
    load_checkpoint(r.state, opt.checkpoint_dir, hash);
    if (std::filesystem::exists(log_path)) {
      std::istringstream in(io::read_file(log_path));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line) && log_lines.size() < r.state.iteration) log_lines.push_back(line);
    }
  }
  auto flush = [&] {
    if (!ckpt) return;
    save_checkpoint(r.state, opt.checkpoint_dir, hash);
    std::string text = std::string(kLossLogHeader) + "\n";
    for (const auto& l : log_lines) text += l + "\n";
    io::write_file_atomic(log_path, text);
  };

  const std::size_t end = opt.stop_at ? std::min(opt.stop_at, cfg.total_iterations) : cfg.total_iterations;
  std::vector<const kspace::ComplexImage*> xs, xr;
  std::vector<const phantom::ParameterMaps*> gs;
  while (r.state.iteration < end) {
    const std::size_t it = r.state.iteration;
    xs.clear();
    xr.clear();
    gs.clear();
    for (std::size_t j = 0; j < cfg.batch_size; ++j) {
      const std::size_t a = batch_index(mix_seed(cfg.seed, 1), it, cfg.batch_size, j, syn.size());
      xs.push_back(&syn.inputs[a]);
      gs.push_back(&syn.targets[a]);
      if (!cfg.source_only) xr.push_back(&real.inputs[batch_index(mix_seed(cfg.seed, 2), it, cfg.batch_size, j, real.size())]);
    }
    auto rep = train_step(r.state, xs, gs, xr, dmap, cfg, net);
    log_lines.push_back(log_row(rep));
    if (opt.on_step) opt.on_step(rep);
    r.log.push_back(rep);
    if (cfg.checkpoint_every && r.state.iteration % cfg.checkpoint_every == 0 && r.state.iteration < end) flush();
  }
  flush();
  return r;
}

// ---------------------------------------------------------------- inference

/// Full-resolution predictions in inference mode, in physical units.
inline std::vector<phantom::ParameterMaps> predict(const Params& params, const hfsnet::NetworkConfig& net,
                                                   const std::vector<kspace::ComplexImage>& inputs,
                                                   std::size_t batch = 4) {
  std::vector<phantom::ParameterMaps> out;
  for (std::size_t i = 0; i < inputs.size(); i += batch) {
    std::vector<const kspace::ComplexImage*> b;
    for (std::size_t j = i; j < std::min(inputs.size(), i + batch); ++j) b.push_back(&inputs[j]);
    auto o = hfsnet::hfsnet_forward(input_tensor(b), params, net, hfsnet::Context::eval())[0];
    const std::size_t H = o.dim(2), W = o.dim(3), HW = H * W;
    require(o.dim(1) >= 2, ErrorKind::shape, "predict: network must emit T2 and ADC channels");
    for (std::size_t j = 0; j < b.size(); ++j) {
      phantom::ParameterMaps m;
      m.height = H;
      m.width = W;
      m.t2.resize(HW);
      m.adc.resize(HW);
      m.m0.assign(HW, 0.0);
      for (std::size_t k = 0; k < HW; ++k) {
        m.t2[k] = phantom::denormalize_t2(o.value()[(j * o.dim(1)) * HW + k]);
        m.adc[k] = phantom::denormalize_adc(o.value()[(j * o.dim(1) + 1) * HW + k]);
      }
      out.push_back(std::move(m));
    }
  }
  return out;
}

}  // namespace fps::training
