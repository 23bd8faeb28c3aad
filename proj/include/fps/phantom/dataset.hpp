#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fps/io/fpsd.hpp"
#include "fps/phantom/domain_shift.hpp"
#include "fps/phantom/forward.hpp"

namespace fps::phantom {

enum class DomainTag { synthetic, real };

inline const char* to_string(DomainTag t) { return t == DomainTag::synthetic ? "synthetic" : "real"; }

struct SamplePair {
  kspace::ComplexImage input;
  ParameterMaps target;
  DomainTag domain_tag = DomainTag::synthetic;
  std::string id;
};

struct PhantomConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t n_shapes = 4;
  double lesion_prob = 0.5;
};

/// n paired samples. Real-tagged samples pass through the domain shift with
/// a per-sample seed derived from shift.seed.
inline std::vector<SamplePair> generate_pairs(std::size_t n, std::uint64_t seed, const PhantomConfig& pc,
                                              DomainTag tag, const DomainShiftConfig& shift,
                                              const std::string& id_prefix,
                                              const std::vector<EchoComponent>& echoes = default_echo_scheme()) {
  std::vector<SamplePair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SamplePair sp;
    sp.target = generate_parameter_maps(mix_seed(seed, i), pc.height, pc.width, pc.n_shapes, pc.lesion_prob);
    sp.input = forward_signal(sp.target, echoes);
    if (tag == DomainTag::real) {
      DomainShiftConfig c = shift;
      c.seed = mix_seed(shift.seed, i);
      sp.input = apply_domain_shift(sp.input, c);
    }
    sp.domain_tag = tag;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05zu", i);
    sp.id = id_prefix + buf;
    out.push_back(std::move(sp));
  }
  return out;
}

inline constexpr const char* kManifestHeader = "id\tdomain_tag\tinput\ttarget";

inline io::FpsdArray input_to_array(const kspace::ComplexImage& img) {
  std::vector<double> v(img.re);
  v.insert(v.end(), img.im.begin(), img.im.end());
  return io::make_array(io::DType::float64,
                        {2, static_cast<std::uint32_t>(img.height), static_cast<std::uint32_t>(img.width)},
                        std::move(v));
}

inline io::FpsdArray target_to_array(const ParameterMaps& m) {
  std::vector<double> v(m.t2);
  v.insert(v.end(), m.adc.begin(), m.adc.end());
  v.insert(v.end(), m.m0.begin(), m.m0.end());
  return io::make_array(io::DType::float64,
                        {3, static_cast<std::uint32_t>(m.height), static_cast<std::uint32_t>(m.width)},
                        std::move(v));
}

inline std::size_t write_dataset(const std::vector<SamplePair>& pairs, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream manifest;
  manifest << kManifestHeader << '\n';
  for (const auto& sp : pairs) {
    require(sp.input.height == sp.target.height && sp.input.width == sp.target.width, ErrorKind::shape,
            "sample " + sp.id + ": input and target shapes differ");
    const std::string in_name = sp.id + "_input.fpsd", tg_name = sp.id + "_target.fpsd";
    io::write_array(dir / in_name, input_to_array(sp.input));
    io::write_array(dir / tg_name, target_to_array(sp.target));
    manifest << sp.id << '\t' << to_string(sp.domain_tag) << '\t' << in_name << '\t' << tg_name << '\n';
  }
  io::write_file_atomic(dir / "manifest.tsv", manifest.str());
  return pairs.size();
}

namespace detail {

inline void expect_planes(const io::FpsdArray& a, std::uint32_t planes, const std::string& what) {
  if (a.dtype != io::DType::float64)
    throw FormatError(6, what + ": expected float64 payload");
  if (a.dims.size() != 3 || a.dims[0] != planes)
    throw FormatError(7, what + ": expected dims [" + std::to_string(planes) + ", H, W]");
}

}  // namespace detail

inline std::vector<SamplePair> read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.tsv");
  if (!in) fail(ErrorKind::io, "cannot open " + (dir / "manifest.tsv").string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    fail(ErrorKind::format, (dir / "manifest.tsv").string() + ": missing or malformed header");
  std::vector<SamplePair> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, tag, in_name, tg_name;
    if (!std::getline(ls, id, '\t') || !std::getline(ls, tag, '\t') || !std::getline(ls, in_name, '\t') ||
        !std::getline(ls, tg_name))
      fail(ErrorKind::format, "manifest line " + std::to_string(lineno) + ": expected 4 columns");
    SamplePair sp;
    sp.id = id;
    if (tag == "synthetic") sp.domain_tag = DomainTag::synthetic;
    else if (tag == "real") sp.domain_tag = DomainTag::real;
    else fail(ErrorKind::format, "manifest line " + std::to_string(lineno) + ": unknown domain tag " + tag);

    const auto ia = io::read_array(dir / in_name);
    detail::expect_planes(ia, 2, in_name);
    const std::size_t h = ia.dims[1], w = ia.dims[2];
    sp.input = kspace::ComplexImage(h, w);
    std::copy(ia.values.begin(), ia.values.begin() + h * w, sp.input.re.begin());
    std::copy(ia.values.begin() + h * w, ia.values.end(), sp.input.im.begin());

    const auto ta = io::read_array(dir / tg_name);
    detail::expect_planes(ta, 3, tg_name);
    require(ta.dims[1] == h && ta.dims[2] == w, ErrorKind::shape, "sample " + id + ": input and target shapes differ");
    sp.target = ParameterMaps(h, w);
    const auto n = static_cast<std::ptrdiff_t>(h * w);
    std::copy(ta.values.begin(), ta.values.begin() + n, sp.target.t2.begin());
    std::copy(ta.values.begin() + n, ta.values.begin() + 2 * n, sp.target.adc.begin());
    std::copy(ta.values.begin() + 2 * n, ta.values.end(), sp.target.m0.begin());
    out.push_back(std::move(sp));
  }
  return out;
}

/// Network target scaling: t2 / 1 s clipped to [0, 2.5], adc / 3.5e-3 clipped to [0, 1].
inline constexpr double kT2Scale = 1.0;
inline constexpr double kAdcScale = 3.5e-3;

inline double normalize_t2(double t2) { return std::clamp(t2 / kT2Scale, 0.0, 2.5); }
inline double normalize_adc(double adc) { return std::clamp(adc / kAdcScale, 0.0, 1.0); }
inline double denormalize_t2(double v) { return v * kT2Scale; }
inline double denormalize_adc(double v) { return v * kAdcScale; }

/// Input scaling applied before the network: divide by max |img|.
inline kspace::ComplexImage normalize_input(const kspace::ComplexImage& img) {
  const double m = img.max_magnitude();
  kspace::ComplexImage out = img;
  if (m > 0.0)
    for (std::size_t k = 0; k < out.size(); ++k) {
      out.re[k] /= m;
      out.im[k] /= m;
    }
  return out;
}

}  // namespace fps::phantom
