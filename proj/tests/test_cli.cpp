#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "fps/cli/commands.hpp"

using namespace fps;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "fps_cli_test";

constexpr const char* kConfig =
    "[phantom]\nheight = 32\nwidth = 32\nn_synthetic = 6\nn_real = 6\nn_validation = 4\n"
    "[network]\nbase_channels = 8\nembed_dim = 8\npatch_size = 2\n"
    "[train]\nbatch_size = 2\ntotal_iterations = 3\nlr_start = 1e-3\nlr_end = 1e-5\n"
    "[eval]\ncohort_size = 12\n";

struct Run {
  int status = -1;
  std::string out, err;
};

Run fps_run(const std::string& args) {
  static int counter = 0;
  const auto o = kRoot / ("stdout" + std::to_string(counter) + ".txt");
  const auto e = kRoot / ("stderr" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string(FPS_CLI_PATH) + " " + args + " > " + o.string() + " 2> " + e.string();
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = io::read_file(o);
  r.err = io::read_file(e);
  return r;
}

std::string cfg_path() { return (kRoot / "c.cfg").string(); }

std::string bytes(const fs::path& p) { return io::read_file(p); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    std::ofstream(kRoot / "c.cfg") << kConfig;
    ASSERT_EQ(fps_run("gen-data --config " + cfg_path() + " --out " + (kRoot / "data").string()).status, 0);
  }
  static fs::path data() { return kRoot / "data"; }
};

}  // namespace

TEST_F(Cli, UnknownCommandPrintsUsage) {
  const auto r = fps_run("frobnicate");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(fps_run("").status, 2);
}

TEST_F(Cli, MissingOptionIsUsageError) {
  const auto r = fps_run("train --out " + (kRoot / "x").string());
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(r.err.rfind("error\ttrain\tusage\t", 0), 0u) << r.err;
}

TEST_F(Cli, ModuleErrorIsOneParsableLine) {
  const auto r = fps_run("train --data " + (kRoot / "absent").string() + " --out " + (kRoot / "x").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error\ttrain\tio\t", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(Cli, ConfigBoundErrorNamesKey) {
  std::ofstream(kRoot / "bad.cfg") << "[perturb]\nepsilon = -1\n";
  const auto r = fps_run("classify --config " + (kRoot / "bad.cfg").string() + " --out " + (kRoot / "y").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error\tclassify\tconfig\t", 0), 0u) << r.err;
  EXPECT_NE(r.err.find("perturb.epsilon"), std::string::npos);
}

TEST_F(Cli, GenDataLayout) {
  for (const char* d : {"syn", "real", "val_syn", "val_real"}) EXPECT_TRUE(fs::exists(data() / d / "manifest.tsv")) << d;
  const auto syn = phantom::read_dataset(data() / "syn");
  const auto real = phantom::read_dataset(data() / "real");
  const auto vs = phantom::read_dataset(data() / "val_syn");
  const auto vr = phantom::read_dataset(data() / "val_real");
  EXPECT_EQ(syn.size(), 6u);
  EXPECT_EQ(real.size(), 6u);
  ASSERT_EQ(vs.size(), 4u);
  EXPECT_EQ(real[0].domain_tag, phantom::DomainTag::real);
  EXPECT_EQ(vs[1].target.t2, vr[1].target.t2);
  EXPECT_NE(vs[1].input.re, vr[1].input.re);
  EXPECT_EQ(cli::serialize_config(cli::parse_config_file(data() / "config.cfg")),
            cli::serialize_config(cli::parse_config_file(cfg_path())));
}

TEST_F(Cli, DistmapOfIdenticalCorporaIsZero) {
  const auto out = kRoot / "same.fpsd";
  ASSERT_EQ(fps_run("distmap --syn " + (data() / "syn").string() + " --real " + (data() / "syn").string() +
                    " --out " + out.string())
                .status,
            0);
  const auto d = cli::read_distance_map(out);
  EXPECT_EQ(d.height, 32u);
  for (double v : d.raw) EXPECT_EQ(v, 0.0);
}

TEST_F(Cli, TrainZeroIterationsCheckpointsInitialization) {
  const auto ck = kRoot / "ck0";
  ASSERT_EQ(fps_run("train --config " + cfg_path() + " --data " + data().string() + " --iters 0 --seed 5 --out " +
                    ck.string())
                .status,
            0);
  auto cfg = cli::parse_config_file(cfg_path());
  cfg.train.seed = 5;
  const auto init = hfsnet::init_parameters<float>(cfg.network, 5);
  const auto arrays = io::read_stream(ck / training::kCheckpointTensors);
  const auto& entries = init.entries();
  ASSERT_EQ(arrays.size(), 4 * entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::vector<double> expect(entries[i].var.value().begin(), entries[i].var.value().end());
    EXPECT_EQ(arrays[i].values, expect) << entries[i].name;
    EXPECT_EQ(arrays[entries.size() + i].values, expect) << entries[i].name;
  }
  EXPECT_EQ(training::read_checkpoint_info(ck).iteration, 0u);
}

TEST_F(Cli, EveryCommandIsByteReproducible) {
  const std::string c = " --config " + cfg_path();
  const std::string d = data().string();
  for (int rep = 0; rep < 2; ++rep) {
    const auto o = kRoot / ("rep" + std::to_string(rep));
    ASSERT_EQ(fps_run("gen-data" + c + " --seed 9 --out " + (o / "data").string()).status, 0);
    ASSERT_EQ(fps_run("distmap --syn " + d + "/syn --real " + d + "/real --out " + (o / "dm.fpsd").string()).status, 0);
    ASSERT_EQ(fps_run("perturb" + c + " --data " + d + "/syn --dmap " + (o / "dm.fpsd").string() + " --out " +
                      (o / "pert").string())
                  .status,
              0);
    ASSERT_EQ(fps_run("train" + c + " --data " + d + " --dmap " + (o / "dm.fpsd").string() + " --out " +
                      (o / "ck").string())
                  .status,
              0);
    ASSERT_EQ(fps_run("eval" + c + " --checkpoint " + (o / "ck").string() + " --data " + d + "/val_real --out " +
                      (o / "ev").string())
                  .status,
              0);
    ASSERT_EQ(fps_run("classify" + c + " --out " + (o / "cls").string()).status, 0);
    ASSERT_EQ(fps_run("dti-fit --voxels 64 --seed 4 --out " + (o / "dti").string()).status, 0);
  }
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(kRoot / "rep0")) {
    if (!e.is_regular_file() || e.path().extension() != ".fpsd") continue;
    const auto twin = kRoot / "rep1" / fs::relative(e.path(), kRoot / "rep0");
    ASSERT_TRUE(fs::exists(twin)) << twin;
    EXPECT_EQ(bytes(e.path()), bytes(twin)) << e.path();
    ++compared;
  }
  EXPECT_GE(compared, 30u);
  EXPECT_EQ(bytes(kRoot / "rep0/ck/loss.tsv"), bytes(kRoot / "rep1/ck/loss.tsv"));
  EXPECT_EQ(bytes(kRoot / "rep0/ev/metrics.tsv"), bytes(kRoot / "rep1/ev/metrics.tsv"));
}

TEST_F(Cli, SeedChangesOutputs) {
  ASSERT_EQ(fps_run("gen-data --config " + cfg_path() + " --seed 10 --out " + (kRoot / "s10").string()).status, 0);
  ASSERT_EQ(fps_run("gen-data --config " + cfg_path() + " --seed 11 --out " + (kRoot / "s11").string()).status, 0);
  EXPECT_NE(bytes(kRoot / "s10/syn/syn00000_target.fpsd"), bytes(kRoot / "s11/syn/syn00000_target.fpsd"));
}

TEST_F(Cli, EvalWritesGraymapsWithWindows) {
  const auto ck = kRoot / "ck_eval";
  ASSERT_EQ(fps_run("train --config " + cfg_path() + " --data " + data().string() + " --iters 1 --out " + ck.string())
                .status,
            0);
  const auto ev = kRoot / "ev_img";
  const auto r = fps_run("eval --config " + cfg_path() + " --checkpoint " + ck.string() + " --data " +
                         (data() / "val_syn").string() + " --images 2 --out " + ev.string());
  ASSERT_EQ(r.status, 0) << r.err;
  const auto pgm = bytes(ev / "val00001_t2_ref.pgm");
  const std::string header = "P5\n32 32\n65535\n";
  ASSERT_EQ(pgm.substr(0, header.size()), header);
  EXPECT_EQ(pgm.size(), header.size() + 2 * 32 * 32);
  EXPECT_FALSE(fs::exists(ev / "val00002_t2.pgm"));
  const auto windows = cli::read_tsv(ev / "windows.tsv");
  ASSERT_EQ(windows.size(), 1u + 2 * 4);
  EXPECT_EQ(windows[0], (std::vector<std::string>{"file", "map", "lo", "hi", "unit"}));
  const auto metrics = cli::read_tsv(ev / "metrics.tsv");
  EXPECT_EQ(metrics.size(), 1u + 2 * 4);
  const auto preds = io::read_array(ev / "predictions.fpsd");
  EXPECT_EQ(preds.dims, (std::vector<std::uint32_t>{4, 2, 32, 32}));
  EXPECT_NE(r.out.find("t2_mae"), std::string::npos);
}

TEST_F(Cli, ClassifyAndDtiSummaries) {
  ASSERT_EQ(fps_run("classify --config " + cfg_path() + " --out " + (kRoot / "cls").string()).status, 0);
  const auto roc = cli::read_tsv(kRoot / "cls/roc.tsv");
  EXPECT_EQ(roc.back()[1], "1");
  EXPECT_EQ(roc.back()[2], "1");
  const auto r = fps_run("dti-fit --voxels 32 --seed 2 --out " + (kRoot / "dti").string());
  ASSERT_EQ(r.status, 0);
  const auto summary = cli::read_tsv(kRoot / "dti/summary.tsv");
  ASSERT_EQ(summary.size(), 3u);
  EXPECT_LT(std::stod(summary[2][1]), 1e-6);
  const auto refit = fps_run("dti-fit --dwi " + (kRoot / "dti/dwi.fpsd").string() + " --out " +
                             (kRoot / "dti2").string());
  ASSERT_EQ(refit.status, 0) << refit.err;
  EXPECT_EQ(bytes(kRoot / "dti/tensors.fpsd"), bytes(kRoot / "dti2/tensors.fpsd"));
}

TEST_F(Cli, ReportCollatesTables) {
  ASSERT_EQ(fps_run("classify --config " + cfg_path() + " --out " + (kRoot / "rcls").string()).status, 0);
  const auto r = fps_run("report --in " + (kRoot / "rcls").string() + " --out " + (kRoot / "rep.tsv").string());
  ASSERT_EQ(r.status, 0) << r.err;
  const auto rows = cli::read_tsv(kRoot / "rep.tsv");
  ASSERT_GE(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"source", "table", "key", "n", "mean"}));
  EXPECT_EQ(rows[1][0], "rcls");
  EXPECT_EQ(rows[1][2], "auc");
  EXPECT_EQ(fps_run("report --in " + (kRoot / "data").string() + " --out " + (kRoot / "r2.tsv").string()).status, 1);
}
