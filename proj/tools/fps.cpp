// fps: batch command-line surface over the library.
//
//   fps gen-data  [--config c] [--seed s] --out DIR
//   fps distmap   --syn DIR --real DIR --out FILE
//   fps perturb   [--config c] [--seed s] --data DIR --dmap FILE --out DIR
//   fps train     [--config c] [--seed s] --data DIR [--dmap FILE] --out DIR [--iters n] [--resume]
//   fps eval      [--config c] --checkpoint DIR --data DIR --out DIR [--student] [--images n]
//   fps classify  [--config c] [--seed s] --out DIR
//   fps dti-fit   [--seed s] [--voxels n] [--dwi FILE] [--scheme FILE] [--b b] --out DIR
//   fps report    --in DIR... --out FILE
//
// Errors print one line `error<TAB>command<TAB>kind<TAB>message` to stderr
// and exit 1; an unknown command prints usage and exits 2.

#include <cstdio>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "fps/cli/commands.hpp"

namespace {

using namespace fps;
namespace fs = std::filesystem;

const std::set<std::string> kCommands{"gen-data", "distmap", "perturb", "train",
                                      "eval",     "classify", "dti-fit", "report"};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* c, Common& o, bool with_seed = true) {
  c->add_option("--config", o.config, "experiment configuration file");
  if (with_seed) c->add_option("--seed", o.seed, "seed override");
  c->add_option("--out", o.out, "output path")->required();
}

cli::ExperimentConfig load(const Common& o) {
  return o.config.empty() ? cli::parse_config_text("") : cli::parse_config_file(o.config);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FPS quantitative-map reconstruction toolkit", "fps"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Common common;
  std::string syn, real, data, dmap, checkpoint, dwi, scheme;
  std::optional<std::size_t> iters;
  bool resume = false, student = false;
  std::size_t images = 4, voxels = 1024;
  double bvalue = 1000.0;
  std::vector<std::string> inputs;

  auto* gen = app.add_subcommand("gen-data", "synthetic and shifted corpora plus validation sets");
  add_common(gen, common);

  auto* dm = app.add_subcommand("distmap", "per-frequency Wasserstein distance map");
  dm->add_option("--syn", syn, "synthetic dataset directory")->required();
  dm->add_option("--real", real, "real dataset directory")->required();
  dm->add_option("--out", common.out, "output FPSD file")->required();

  auto* pt = app.add_subcommand("perturb", "perturbed copies of a dataset");
  add_common(pt, common);
  pt->add_option("--data", data, "dataset directory")->required();
  pt->add_option("--dmap", dmap, "distance map FPSD file")->required();

  auto* tr = app.add_subcommand("train", "mean-teacher training");
  add_common(tr, common);
  tr->add_option("--data", data, "directory holding syn/ and real/")->required();
  tr->add_option("--dmap", dmap, "distance map FPSD file (built from the data if omitted)");
  tr->add_option("--iters", iters, "total iterations override");
  tr->add_flag("--resume", resume, "continue from the checkpoint in --out");

  auto* ev = app.add_subcommand("eval", "metrics, regression and graymaps for a checkpoint");
  add_common(ev, common, false);
  ev->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_flag("--student", student, "evaluate the student instead of the teacher");
  ev->add_option("--images", images, "samples exported as graymaps");

  auto* cl = app.add_subcommand("classify", "histogram features, logistic regression and ROC");
  add_common(cl, common);

  auto* dt = app.add_subcommand("dti-fit", "log-linear tensor fit and scalar maps");
  add_common(dt, common);
  dt->add_option("--dwi", dwi, "FPSD [measurements, voxels] signals (synthesized if omitted)");
  dt->add_option("--scheme", scheme, "gradient table: one 'gx gy gz b' line per measurement");
  dt->add_option("--voxels", voxels, "voxels in the synthesized field");
  dt->add_option("--b", bvalue, "b-value of the standard scheme");

  auto* rp = app.add_subcommand("report", "collate TSV outputs into one summary table");
  rp->add_option("--in", inputs, "directories with metrics/regression/summary TSVs")->required();
  rp->add_option("--out", common.out, "output TSV file")->required();

  if (argc < 2 || !kCommands.count(argv[1])) {
    if (argc >= 2 && (std::string(argv[1]) == "--help" || std::string(argv[1]) == "-h")) {
      std::cout << app.help();
      return 0;
    }
    std::cerr << (argc < 2 ? "missing command" : "unknown command: " + std::string(argv[1])) << "\n" << app.help();
    return 2;
  }
  const std::string cmd = argv[1];
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error\t" << cmd << "\tusage\t" << e.what() << "\n";
    return 2;
  }

  try {
    if (cmd == "gen-data") {
      auto cfg = load(common);
      if (common.seed) cfg.data.seed = *common.seed;
      cli::gen_data(cfg, common.out);
    } else if (cmd == "distmap") {
      cli::distmap(syn, real, common.out);
    } else if (cmd == "perturb") {
      auto cfg = load(common);
      if (common.seed) cfg.train.perturbation.seed = *common.seed;
      cli::perturb(cfg, data, dmap, common.out);
    } else if (cmd == "train") {
      auto cfg = load(common);
      if (common.seed) cfg.train.seed = *common.seed;
      if (iters) cfg.train.total_iterations = *iters;
      const auto r = cli::train(cfg, data, dmap, common.out, resume);
      std::printf("iteration\t%zu\n", r.state.iteration);
    } else if (cmd == "eval") {
      const auto s = cli::evaluate(load(common), checkpoint, data, common.out, student, images);
      std::printf("samples\t%zu\nt2_mae\t%s\nadc_mae\t%s\n", s.samples, eval::format_value(s.t2_mae).c_str(),
                  eval::format_value(s.adc_mae).c_str());
    } else if (cmd == "classify") {
      auto cfg = load(common);
      if (common.seed) cfg.eval.cohort_seed = *common.seed;
      std::printf("auc\t%s\n", eval::format_value(cli::classify(cfg, common.out).auc).c_str());
    } else if (cmd == "dti-fit") {
      cli::DtiArgs a{dwi, scheme, voxels, common.seed.value_or(0), bvalue};
      const double err = cli::dti_fit(a, common.out);
      if (dwi.empty()) std::printf("max_rel_error\t%s\n", eval::format_value(err).c_str());
    } else if (cmd == "report") {
      std::vector<fs::path> dirs(inputs.begin(), inputs.end());
      std::cout << cli::report(dirs, common.out);
    }
  } catch (const Error& e) {
    std::cerr << "error\t" << cmd << "\t" << to_string(e.kind()) << "\t" << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error\t" << cmd << "\tinternal\t" << e.what() << "\n";
    return 1;
  }
  return 0;
}
