#pragma once

// Implementations behind the `fps` subcommands. Every output is a pure
// function of the configuration, the seeds and the input files.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fps/cli/config.hpp"
#include "fps/dti/tensor.hpp"
#include "fps/eval/classify.hpp"
#include "fps/eval/metrics.hpp"
#include "fps/eval/stats.hpp"
#include "fps/io/fpsd.hpp"
#include "fps/kspace/distance_map.hpp"
#include "fps/kspace/perturb.hpp"
#include "fps/phantom/dataset.hpp"
#include "fps/training/loop.hpp"

namespace fps::cli {

namespace fs = std::filesystem;

inline void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------- artifacts

/// Stream of three float64 arrays: raw [H, W], normalized [H, W], corpus sizes [2].
inline void write_distance_map(const fs::path& path, const kspace::DistanceMap& d) {
  const auto h = static_cast<std::uint32_t>(d.height), w = static_cast<std::uint32_t>(d.width);
  io::write_stream(path, {io::make_array(io::DType::float64, {h, w}, d.raw),
                          io::make_array(io::DType::float64, {h, w}, d.normalized),
                          io::make_array(io::DType::float64, {2},
                                         {static_cast<double>(d.n_syn), static_cast<double>(d.n_real)})});
}

inline kspace::DistanceMap read_distance_map(const fs::path& path) {
  const auto arrays = io::read_stream(path);
  if (arrays.size() != 3) throw FormatError(0, path.string() + ": expected 3 arrays in a distance map");
  const auto& raw = arrays[0];
  require(raw.dims.size() == 2 && arrays[1].dims == raw.dims && arrays[2].values.size() == 2, ErrorKind::format,
          path.string() + ": malformed distance map");
  kspace::DistanceMap d;
  d.height = raw.dims[0];
  d.width = raw.dims[1];
  d.raw = raw.values;
  d.normalized = arrays[1].values;
  d.n_syn = static_cast<std::size_t>(arrays[2].values[0]);
  d.n_real = static_cast<std::size_t>(arrays[2].values[1]);
  return d;
}

/// Binary 16-bit portable graymap; [lo, hi] maps linearly onto [0, 65535].
inline std::string pgm16(const std::vector<double>& v, std::size_t h, std::size_t w, double lo, double hi) {
  require(v.size() == h * w, ErrorKind::shape, "pgm16: value count does not match H x W");
  require(hi > lo, ErrorKind::invalid_input, "pgm16: window needs hi > lo");
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
  for (double x : v) {
    const double t = std::isfinite(x) ? std::clamp((x - lo) / (hi - lo), 0.0, 1.0) : 0.0;
    const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
    out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xFF));
  }
  return out;
}

inline std::vector<kspace::ComplexImage> normalized_inputs(const std::vector<phantom::SamplePair>& pairs) {
  std::vector<kspace::ComplexImage> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(phantom::normalize_input(p.input));
  return out;
}

// ---------------------------------------------------------------- gen-data

inline constexpr const char* kSynDir = "syn";
inline constexpr const char* kRealDir = "real";
inline constexpr const char* kValSynDir = "val_syn";
inline constexpr const char* kValRealDir = "val_real";

/// Training corpora plus paired validation sets: val_real holds the same
/// phantoms as val_syn passed through the domain shift.
inline void gen_data(const ExperimentConfig& cfg, const fs::path& out) {
  cfg.validate();
  make_dirs(out);
  const auto& d = cfg.data;
  using phantom::DomainTag;
  auto shift_for = [&](std::uint64_t tag) {
    auto s = cfg.shift;
    s.seed = mix_seed(cfg.shift.seed, tag);
    return s;
  };
  phantom::write_dataset(phantom::generate_pairs(d.n_synthetic, mix_seed(d.seed, 1), d.phantom, DomainTag::synthetic,
                                                 cfg.shift, "syn"),
                         out / kSynDir);
  phantom::write_dataset(
      phantom::generate_pairs(d.n_real, mix_seed(d.seed, 2), d.phantom, DomainTag::real, shift_for(2), "real"),
      out / kRealDir);
  phantom::write_dataset(phantom::generate_pairs(d.n_validation, mix_seed(d.seed, 3), d.phantom, DomainTag::synthetic,
                                                 cfg.shift, "val"),
                         out / kValSynDir);
  phantom::write_dataset(
      phantom::generate_pairs(d.n_validation, mix_seed(d.seed, 3), d.phantom, DomainTag::real, shift_for(3), "val"),
      out / kValRealDir);
  io::write_file_atomic(out / "config.cfg", serialize_config(cfg));
}

// ---------------------------------------------------------------- distmap / perturb

inline kspace::DistanceMap distmap(const fs::path& syn_dir, const fs::path& real_dir, const fs::path& out) {
  const auto d = kspace::build_distance_map(normalized_inputs(phantom::read_dataset(syn_dir)),
                                            normalized_inputs(phantom::read_dataset(real_dir)));
  write_distance_map(out, d);
  return d;
}

/// Perturbed copy of every sample; sample i uses seed mix_seed(perturb.seed, i).
inline void perturb(const ExperimentConfig& cfg, const fs::path& data, const fs::path& dmap_path, const fs::path& out) {
  auto pairs = phantom::read_dataset(data);
  const auto dmap = read_distance_map(dmap_path);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto pc = cfg.train.perturbation;
    pc.seed = mix_seed(cfg.train.perturbation.seed, i);
    pairs[i].input = kspace::perturb_image(phantom::normalize_input(pairs[i].input), dmap, pc);
  }
  phantom::write_dataset(pairs, out);
}

// ---------------------------------------------------------------- train

/// Trains on data/syn (labeled) and data/real (unlabeled). Without a
/// distance map file the map is built from the two corpora.
inline training::LoopResult train(const ExperimentConfig& cfg, const fs::path& data, const fs::path& dmap_path,
                                  const fs::path& out, bool resume) {
  cfg.validate();
  const auto syn_pairs = phantom::read_dataset(data / kSynDir);
  const auto syn = training::Corpus::from(syn_pairs);
  training::Corpus real;
  if (!cfg.train.source_only) real = training::Corpus::from(phantom::read_dataset(data / kRealDir));
  kspace::DistanceMap dmap;
  if (!dmap_path.empty()) dmap = read_distance_map(dmap_path);
  else if (!cfg.train.source_only) dmap = kspace::build_distance_map(syn.inputs, real.inputs);
  else dmap = kspace::distance_map_from_raw(std::vector<double>(syn.inputs[0].size(), 0.0), syn.inputs[0].height,
                                            syn.inputs[0].width, syn.size(), 0);
  training::LoopOptions opt;
  opt.checkpoint_dir = out;
  opt.resume = resume;
  return training::train_loop(syn, real, dmap, cfg.train, cfg.network, opt);
}

/// Teacher (or student) parameters from a checkpoint written under `cfg`'s network.
inline training::Params load_params(const ExperimentConfig& cfg, const fs::path& checkpoint, bool student = false) {
  auto state = training::TeacherStudentState::from(hfsnet::init_parameters<float>(cfg.network, cfg.train.seed),
                                                   cfg.train.seed);
  training::load_checkpoint(state, checkpoint, training::read_checkpoint_info(checkpoint).config_hash);
  return student ? std::move(state.student) : std::move(state.teacher);
}

// ---------------------------------------------------------------- eval

struct EvalSummary {
  double t2_mae = 0.0;
  double adc_mae = 0.0;
  std::size_t samples = 0;
};

inline eval::Mask metric_mask(const EvalConfig& e, bool t2) {
  if (e.mask == eval::MaskPolicy::display_range)
    return t2 ? eval::Mask::display_range(e.t2_lo, e.t2_hi) : eval::Mask::display_range(e.adc_lo, e.adc_hi);
  return eval::Mask::full();
}

/// Writes metrics.tsv, regression.tsv (per-sample tissue means, predicted
/// on reference), predictions.fpsd [N, 2, H, W], and graymaps with a
/// windows.tsv sidecar for the first `images` samples.
inline EvalSummary evaluate(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& data,
                            const fs::path& out, bool student = false, std::size_t images = 4) {
  cfg.validate();
  const auto pairs = phantom::read_dataset(data);
  require(!pairs.empty(), ErrorKind::invalid_input, "eval: dataset " + data.string() + " is empty");
  const auto params = load_params(cfg, checkpoint, student);
  const auto preds = training::predict(params, cfg.network, normalized_inputs(pairs));
  make_dirs(out);

  EvalSummary summary;
  summary.samples = pairs.size();
  std::string metrics = std::string(eval::kMetricHeader) + "\n";
  std::string windows = "file\tmap\tlo\thi\tunit\n";
  std::vector<double> ref_t2, pred_t2, ref_adc, pred_adc;
  std::vector<double> flat;
  const std::size_t h = pairs[0].target.height, w = pairs[0].target.width;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& ref = pairs[i].target;
    const auto& p = preds[i];
    const auto r2 = eval::image_metrics(p.t2, ref.t2, h, w, metric_mask(cfg.eval, true));
    const auto ra = eval::image_metrics(p.adc, ref.adc, h, w, metric_mask(cfg.eval, false));
    metrics += eval::metric_row(pairs[i].id, "t2", r2) + "\n" + eval::metric_row(pairs[i].id, "adc", ra) + "\n";
    summary.t2_mae += r2.mae / static_cast<double>(pairs.size());
    summary.adc_mae += ra.mae / static_cast<double>(pairs.size());

    double st = 0, pt = 0, sa = 0, pa = 0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < ref.size(); ++k)
      if (ref.m0[k] > 0.0) {
        st += ref.t2[k];
        pt += p.t2[k];
        sa += ref.adc[k];
        pa += p.adc[k];
        ++n;
      }
    const double dn = static_cast<double>(std::max<std::size_t>(n, 1));
    ref_t2.push_back(st / dn);
    pred_t2.push_back(pt / dn);
    ref_adc.push_back(sa / dn);
    pred_adc.push_back(pa / dn);

    flat.insert(flat.end(), p.t2.begin(), p.t2.end());
    flat.insert(flat.end(), p.adc.begin(), p.adc.end());

    if (i < images) {
      const auto& e = cfg.eval;
      const std::pair<std::string, const std::vector<double>*> planes[] = {
          {"_t2.pgm", &p.t2}, {"_t2_ref.pgm", &ref.t2}, {"_adc.pgm", &p.adc}, {"_adc_ref.pgm", &ref.adc}};
      for (const auto& [suffix, plane] : planes) {
        const bool is_t2 = suffix.find("t2") != std::string::npos;
        const double lo = is_t2 ? e.t2_lo : e.adc_lo, hi = is_t2 ? e.t2_hi : e.adc_hi;
        const std::string name = pairs[i].id + suffix;
        io::write_file_atomic(out / name, pgm16(*plane, h, w, lo, hi));
        windows += name + "\t" + (is_t2 ? "t2" : "adc") + "\t" + eval::format_value(lo) + "\t" +
                   eval::format_value(hi) + "\t" + (is_t2 ? "s" : "mm^2/s") + "\n";
      }
    }
  }
  io::write_file_atomic(out / "metrics.tsv", metrics);
  io::write_file_atomic(out / "windows.tsv", windows);
  io::write_array(out / "predictions.fpsd",
                  io::make_array(io::DType::float64,
                                 {static_cast<std::uint32_t>(pairs.size()), 2, static_cast<std::uint32_t>(h),
                                  static_cast<std::uint32_t>(w)},
                                 std::move(flat)));

  std::string reg = std::string(eval::kRegressionHeader) + "\n";
  auto reg_row = [&](const char* map, const std::vector<double>& x, const std::vector<double>& y) {
    const auto s = eval::regression_stats(x, y);
    reg += std::string("all\t") + map + "\t" + eval::format_value(s.slope) + "\t" + eval::format_value(s.intercept) +
           "\t" + eval::format_value(s.r2) + "\t" + eval::format_value(s.bias) + "\t" +
           eval::format_value(s.loa_low) + "\t" + eval::format_value(s.loa_high) + "\n";
  };
  reg_row("t2", ref_t2, pred_t2);
  reg_row("adc", ref_adc, pred_adc);
  io::write_file_atomic(out / "regression.tsv", reg);
  return summary;
}

// ---------------------------------------------------------------- classify

/// Synthetic two-class cohort -> histogram features -> logistic fit -> ROC.
inline eval::RocResult classify(const ExperimentConfig& cfg, const fs::path& out) {
  cfg.validate();
  const auto subjects =
      eval::synthetic_cohort(cfg.eval.cohort_size, cfg.eval.cohort_seed, cfg.data.phantom.height, cfg.data.phantom.width);
  const auto records = eval::cohort_records(subjects);
  const auto model = eval::fit_logistic(records);
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<double> table;
  std::string feats = "id\tlabel";
  for (const char* n : eval::kFeatureNames) feats += std::string("\t") + n;
  feats += "\tlogit\n";
  for (const auto& r : records) {
    scores.push_back(model.logit(r.features));
    labels.push_back(r.label);
    feats += r.id + "\t" + std::to_string(r.label);
    for (double v : r.features.values()) {
      feats += "\t" + eval::format_value(v);
      table.push_back(v);
    }
    feats += "\t" + eval::format_value(scores.back()) + "\n";
  }
  const auto roc = eval::roc_auc(scores, labels);
  make_dirs(out);
  io::write_file_atomic(out / "features.tsv", feats);
  io::write_array(out / "features.fpsd",
                  io::make_array(io::DType::float64,
                                 {static_cast<std::uint32_t>(records.size()), static_cast<std::uint32_t>(eval::kNumFeatures)},
                                 std::move(table)));
  std::string curve = "threshold\tfpr\ttpr\n";
  for (const auto& p : roc.curve)
    curve += eval::format_value(p.threshold) + "\t" + eval::format_value(p.fpr) + "\t" + eval::format_value(p.tpr) + "\n";
  io::write_file_atomic(out / "roc.tsv", curve);
  std::string m = "term\tweight\tmean\tscale\n";
  m += "intercept\t" + eval::format_value(model.intercept) + "\t0\t1\n";
  for (std::size_t j = 0; j < eval::kNumFeatures; ++j)
    m += std::string(eval::kFeatureNames[j]) + "\t" + eval::format_value(model.weights[j]) + "\t" +
         eval::format_value(model.mean[j]) + "\t" + eval::format_value(model.scale[j]) + "\n";
  io::write_file_atomic(out / "model.tsv", m);
  io::write_file_atomic(out / "summary.tsv", "key\tvalue\nauc\t" + eval::format_value(roc.auc) + "\nsubjects\t" +
                                                 std::to_string(records.size()) + "\n");
  return roc;
}

// ---------------------------------------------------------------- dti-fit

struct DtiArgs {
  fs::path dwi;      // FPSD [M, N] signals; empty synthesizes a field
  fs::path scheme;   // gradient table text; empty uses the standard 6-direction scheme
  std::size_t voxels = 1024;
  std::uint64_t seed = 0;
  double b = 1000.0;
};

/// Writes tensors.fpsd [N, 6], s0.fpsd [N], maps.fpsd [4, N] (FA, MD, AD, RD),
/// dti.tsv per voxel and summary.tsv. A synthesized field also writes
/// dwi.fpsd and the maximum relative tensor error.
inline double dti_fit(const DtiArgs& a, const fs::path& out) {
  const auto scheme = a.scheme.empty() ? dti::GradientScheme::standard(a.b) : dti::parse_scheme(io::read_file(a.scheme));
  scheme.validate();
  make_dirs(out);
  dti::SignalStack signals;
  std::vector<dti::DiffusionTensor> truth;
  if (a.dwi.empty()) {
    std::vector<double> s0;
    truth = dti::synthetic_tensor_field(a.voxels, a.seed, &s0);
    signals = dti::synth_dwi(truth, scheme, s0);
    std::vector<double> flat;
    for (const auto& m : signals) flat.insert(flat.end(), m.begin(), m.end());
    io::write_array(out / "dwi.fpsd", io::make_array(io::DType::float64,
                                                     {static_cast<std::uint32_t>(signals.size()),
                                                      static_cast<std::uint32_t>(a.voxels)},
                                                     std::move(flat)));
  } else {
    const auto arr = io::read_array(a.dwi);
    require(arr.dims.size() == 2 && arr.dtype != io::DType::complex64, ErrorKind::format,
            a.dwi.string() + ": expected a real [measurements, voxels] array");
    const std::size_t m = arr.dims[0], n = arr.dims[1];
    signals.assign(m, std::vector<double>(n));
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(arr.values.begin() + static_cast<std::ptrdiff_t>(i * n), n, signals[i].begin());
  }
  const auto fit = dti::fit_tensor(signals, scheme);
  const std::size_t n = fit.tensors.size();
  std::vector<double> tens, maps(4 * n);
  std::string rows = "voxel\tfitted\tfa\tmd\tad\trd\tnegative\n";
  for (std::size_t v = 0; v < n; ++v) {
    const auto vals = fit.tensors[v].values();
    tens.insert(tens.end(), vals.begin(), vals.end());
    const auto m = dti::dti_maps(dti::eig3_symmetric(fit.tensors[v]));
    maps[v] = m.fa;
    maps[n + v] = m.md;
    maps[2 * n + v] = m.ad;
    maps[3 * n + v] = m.rd;
    rows += std::to_string(v) + "\t" + std::to_string(fit.fitted[v]) + "\t" + eval::format_value(m.fa) + "\t" +
            eval::format_value(m.md) + "\t" + eval::format_value(m.ad) + "\t" + eval::format_value(m.rd) + "\t" +
            (m.negative ? "1" : "0") + "\n";
  }
  const auto n32 = static_cast<std::uint32_t>(n);
  io::write_array(out / "tensors.fpsd", io::make_array(io::DType::float64, {n32, 6}, std::move(tens)));
  io::write_array(out / "s0.fpsd", io::make_array(io::DType::float64, {n32}, fit.s0));
  io::write_array(out / "maps.fpsd", io::make_array(io::DType::float64, {4, n32}, std::move(maps)));
  io::write_file_atomic(out / "dti.tsv", rows);

  double worst = 0.0;
  std::string summary = "key\tvalue\nvoxels\t" + std::to_string(n) + "\n";
  if (!truth.empty()) {
    for (std::size_t v = 0; v < n; ++v) {
      const auto x = fit.tensors[v].values(), y = truth[v].values();
      double num = 0, den = 0;
      for (int k = 0; k < 6; ++k) {
        num += (x[k] - y[k]) * (x[k] - y[k]);
        den += y[k] * y[k];
      }
      worst = std::max(worst, std::sqrt(num / den));
    }
    summary += "max_rel_error\t" + eval::format_value(worst) + "\n";
  }
  io::write_file_atomic(out / "summary.tsv", summary);
  return worst;
}

// ---------------------------------------------------------------- report

inline std::vector<std::vector<std::string>> read_tsv(const fs::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, '\t')) cells.push_back(c);
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline double parse_cell(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::stod(s);
}

inline constexpr const char* kReportHeader = "source\ttable\tkey\tn\tmean";

/// One row per (source, table, key): metrics.tsv columns are averaged per
/// map, regression.tsv and summary.tsv values are copied.
inline std::string report(const std::vector<fs::path>& sources, const fs::path& out) {
  require(!sources.empty(), ErrorKind::invalid_input, "report: no input directories");
  std::string text = std::string(kReportHeader) + "\n";
  std::size_t tables = 0;
  for (const auto& src : sources) {
    require(fs::is_directory(src), ErrorKind::io, "report: " + src.string() + " is not a directory");
    const std::string name = src.filename().empty() ? src.parent_path().filename().string() : src.filename().string();
    if (fs::exists(src / "metrics.tsv")) {
      ++tables;
      const auto rows = read_tsv(src / "metrics.tsv");
      require(!rows.empty() && rows[0].size() == 7, ErrorKind::format, (src / "metrics.tsv").string() + ": bad header");
      std::map<std::string, std::pair<double, std::size_t>> acc;
      std::vector<std::string> order;
      for (std::size_t r = 1; r < rows.size(); ++r) {
        require(rows[r].size() == 7, ErrorKind::format,
                (src / "metrics.tsv").string() + ": line " + std::to_string(r + 1) + " needs 7 columns");
        for (std::size_t c = 3; c < 7; ++c) {
          const std::string key = rows[r][1] + "." + rows[0][c];
          if (!acc.count(key)) order.push_back(key);
          auto& [sum, n] = acc[key];
          sum += parse_cell(rows[r][c]);
          ++n;
        }
      }
      for (const auto& k : order)
        text += name + "\tmetrics\t" + k + "\t" + std::to_string(acc[k].second) + "\t" +
                eval::format_value(acc[k].first / static_cast<double>(acc[k].second)) + "\n";
    }
    if (fs::exists(src / "regression.tsv")) {
      ++tables;
      const auto rows = read_tsv(src / "regression.tsv");
      for (std::size_t r = 1; r < rows.size(); ++r)
        for (std::size_t c = 2; c < rows[r].size() && c < rows[0].size(); ++c)
          text += name + "\tregression\t" + rows[r][1] + "." + rows[0][c] + "\t1\t" + rows[r][c] + "\n";
    }
    if (fs::exists(src / "summary.tsv")) {
      ++tables;
      const auto rows = read_tsv(src / "summary.tsv");
      for (std::size_t r = 1; r < rows.size(); ++r)
        if (rows[r].size() == 2) text += name + "\tsummary\t" + rows[r][0] + "\t1\t" + rows[r][1] + "\n";
    }
  }
  require(tables > 0, ErrorKind::invalid_input, "report: no metrics.tsv, regression.tsv or summary.tsv found");
  if (!out.empty()) {
    if (out.has_parent_path()) make_dirs(out.parent_path());
    io::write_file_atomic(out, text);
  }
  return text;
}

}  // namespace fps::cli
