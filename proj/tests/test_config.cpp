#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fps/cli/config.hpp"

using namespace fps;
using namespace fps::cli;

namespace {

std::string error_text(const std::string& text, ErrorKind kind = ErrorKind::config) {
  try {
    parse_config_text(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "expected an error for: " << text;
  return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST(Config, EmptyGivesDefaults) {
  const auto a = parse_config_text("");
  const ExperimentConfig b;
  EXPECT_EQ(serialize_config(a), serialize_config(b));
  EXPECT_EQ(a.train.batch_size, 4u);
  EXPECT_EQ(a.train.lr_start, 1e-4);
  EXPECT_EQ(a.train.lr_end, 1e-6);
  EXPECT_EQ(a.train.lambda_freq, 0.1);
  EXPECT_EQ(a.network.scales, 3u);
  EXPECT_EQ(a.network.base_channels, 32u);
  EXPECT_EQ(a.network.window_size, 4u);
  EXPECT_EQ(a.network.attn_heads, 2u);
  EXPECT_EQ(a.network.fas.branches, 2u);
  EXPECT_EQ(a.network.fas.groups, 4u);
  EXPECT_EQ(a.network.fas.kernel_sizes, (std::vector<std::size_t>{3, 5}));
}

TEST(Config, CommentsAndBlankLinesOnly) {
  EXPECT_EQ(serialize_config(parse_config_text("# nothing\n\n   \n# more\n")), serialize_config(ExperimentConfig{}));
}

TEST(Config, DottedBatchSize) {
  EXPECT_EQ(parse_config_text("train.batch_size = 4").train.batch_size, 4u);
  EXPECT_EQ(parse_config_text("train.batch_size = 7").train.batch_size, 7u);
}

TEST(Config, SectionKeys) {
  const auto c = parse_config_text(
      "[train]\nbatch_size = 2\nlr_start = 3e-3  # inline comment\nsource_only = true\n"
      "[perturb]\nepsilon = 2.5\nmode = single\n[network]\nfas_kernels = 3, 7\n[eval]\nmask = display-range\n");
  EXPECT_EQ(c.train.batch_size, 2u);
  EXPECT_EQ(c.train.lr_start, 3e-3);
  EXPECT_TRUE(c.train.source_only);
  EXPECT_EQ(c.train.perturbation.epsilon, 2.5);
  EXPECT_EQ(c.train.perturbation.mode, kspace::PerturbationMode::single_frequency);
  EXPECT_EQ(c.network.fas.kernel_sizes, (std::vector<std::size_t>{3, 7}));
  EXPECT_EQ(c.eval.mask, eval::MaskPolicy::display_range);
}

TEST(Config, DottedKeyOverridesSection) {
  const auto c = parse_config_text("[train]\nperturb.epsilon = 0.5\nbatch_size = 3\n");
  EXPECT_EQ(c.train.perturbation.epsilon, 0.5);
  EXPECT_EQ(c.train.batch_size, 3u);
}

TEST(Config, NegativeEpsilonNamesKey) {
  const auto msg = error_text("perturb.epsilon = -1");
  EXPECT_TRUE(contains(msg, "perturb.epsilon")) << msg;
  EXPECT_TRUE(contains(msg, "line 1")) << msg;
}

TEST(Config, UnknownKeyNamesKeyAndLine) {
  const auto msg = error_text("[train]\nbatch_size = 4\nbogus = 1\n");
  EXPECT_TRUE(contains(msg, "train.bogus")) << msg;
  EXPECT_TRUE(contains(msg, "line 3")) << msg;
  EXPECT_TRUE(contains(error_text("batch_size = 4"), "unknown key batch_size"));
}

TEST(Config, UnknownSection) {
  const auto msg = error_text("\n[optimizer]\n");
  EXPECT_TRUE(contains(msg, "line 2")) << msg;
  EXPECT_TRUE(contains(msg, "optimizer")) << msg;
}

TEST(Config, SyntaxErrorsCarryLine) {
  EXPECT_TRUE(contains(error_text("[train\n"), "line 1"));
  EXPECT_TRUE(contains(error_text("\n\ntrain.batch_size 4\n"), "line 3"));
  EXPECT_TRUE(contains(error_text(" = 4\n"), "line 1"));
}

TEST(Config, TypeErrorsNameKey) {
  for (const char* text : {"train.batch_size = four", "train.batch_size = -2", "train.batch_size = 2.5",
                           "train.lr_start = fast", "train.source_only = yes", "perturb.mode = half",
                           "network.fas_kernels = 3,x", "phantom.seed = "}) {
    const auto msg = error_text(text);
    const std::string key = detail::trim(std::string(text).substr(0, std::string(text).find('=')));
    EXPECT_TRUE(contains(msg, key)) << msg;
    EXPECT_TRUE(contains(msg, "expects")) << msg;
  }
}

TEST(Config, BoundsViolations) {
  for (const char* text : {"train.batch_size = 0", "shift.bias_strength = 1", "shift.lowfreq_radius = 0",
                           "phantom.lesion_prob = 1.5", "train.lr_end = 0", "train.beta1 = 1",
                           "network.fas_kernels = 3,4", "perturb.epsilon = nan", "eval.cohort_size = 2"}) {
    const auto msg = error_text(text);
    const std::string key = detail::trim(std::string(text).substr(0, std::string(text).find('=')));
    EXPECT_TRUE(contains(msg, key)) << msg;
  }
}

TEST(Config, CrossFieldValidation) {
  error_text("train.lr_start = 1e-7\n");
  error_text("[network]\nattn_heads = 3\n");
  error_text("[phantom]\nheight = 18\n");
  error_text("[eval]\nt2_lo = 1\n");
}

TEST(Config, RoundTripIsIdempotent) {
  const std::string text =
      "[phantom]\nheight = 32\nwidth = 32\nn_synthetic = 10\n[shift]\nlowfreq_gain = 0.1\n"
      "[train]\nlr_start = 0.1\nlambda_freq = 0.30000000000000004\nseed = 18446744073709551615\n"
      "[perturb]\nepsilon = 1e-300\n";
  const auto a = parse_config_text(text);
  const auto s1 = serialize_config(a);
  const auto b = parse_config_text(s1);
  EXPECT_EQ(serialize_config(b), s1);
  EXPECT_EQ(b.train.lambda_freq, 0.30000000000000004);
  EXPECT_EQ(b.train.seed, 18446744073709551615ull);
  EXPECT_EQ(b.train.perturbation.epsilon, 1e-300);
  EXPECT_EQ(b.data.phantom.height, 32u);
}

TEST(Config, SerializedDefaultsListEveryKey) {
  const auto s = serialize_config(ExperimentConfig{});
  for (const auto& k : config_keys()) {
    const auto name = k.substr(k.find('.') + 1);
    EXPECT_TRUE(contains(s, "\n" + name + " = ") || s.rfind(name + " = ", 0) == 0) << k;
  }
  for (const char* sec : {"[phantom]", "[shift]", "[network]", "[train]", "[perturb]", "[eval]"})
    EXPECT_TRUE(contains(s, sec)) << sec;
}

TEST(Config, ReadsFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "fps_config_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "c.cfg");
    out << "train.batch_size = 4\n[perturb]\nepsilon = 3\n";
  }
  const auto c = parse_config_file(dir / "c.cfg");
  EXPECT_EQ(c.train.batch_size, 4u);
  EXPECT_EQ(c.train.perturbation.epsilon, 3.0);
  try {
    parse_config_file(dir / "missing.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}
