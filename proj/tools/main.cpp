// artifit — self-supervised articulated-object alignment by direct energy
// minimization: dataset generation, fitting, gradient certification and
// evaluation from one binary.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "artifit/cloud.hpp"
#include "artifit/energy.hpp"
#include "artifit/evalkit.hpp"
#include "artifit/fit.hpp"
#include "artifit/gradcheck.hpp"
#include "artifit/svg.hpp"
#include "artifit/synthgen.hpp"

namespace fs = std::filesystem;
using namespace artifit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitFlags = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitGradcheck = 4;

int default_threads() {
  if (const char* env = std::getenv("ARTIFIT_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

std::string resolve_manifest_path(const std::string& data) {
  if (fs::is_directory(data)) return (fs::path(data) / "manifest.json").string();
  return data;
}

void write_loss_curve(const FitLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "step,lr,object,part,regS,regD,regW,regP,regA,regJ,total\n";
  char buf[512];
  for (const StepRecord& r : log.records) {
    std::snprintf(buf, sizeof buf,
                  "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                  r.step, r.lr, r.bd.object, r.bd.part, r.bd.reg_s, r.bd.reg_d,
                  r.bd.reg_w, r.bd.reg_p, r.bd.reg_a, r.bd.reg_j, r.bd.total);
    out << buf << '\n';
  }
}

int cmd_gen(const std::string& category, int count, uint64_t seed, bool partial,
            int points, double outlier_rate, double noise_std, double max_tilt,
            double max_yaw, const std::string& out_dir) {
  const CategorySpec spec = CategorySpec::by_name(category);
  const DatasetManifest manifest = gen_dataset(spec, count, seed, partial,
                                               outlier_rate, noise_std, points,
                                               max_tilt, max_yaw, out_dir);
  std::printf("gen: category=%s count=%d points=%d partial=%d seed=%llu out=%s\n",
              category.c_str(), count, points, partial ? 1 : 0,
              static_cast<unsigned long long>(seed), out_dir.c_str());
  std::printf("gen: wrote %zu instances + manifest.json\n", manifest.instances.size());
  return kExitOk;
}

int cmd_fit(const std::string& data, const std::string& out_path,
            const std::string& resume, const std::string& curve_path,
            FitConfig config) {
  const DatasetManifest manifest = load_manifest(resolve_manifest_path(data));

  FitState state;
  if (!resume.empty()) {
    state = import_state(resume);
    const int threads = config.threads;
    const int iterations = config.iterations;
    config = state.config;  // resumed runs keep their recorded settings
    config.threads = threads;
    config.iterations = iterations;
    state.config = config;
  }
  PreprocessedDataset data_loaded =
      load_and_preprocess(manifest, config.sample_points, config.seed, false);
  if (resume.empty()) state = init_params(data_loaded.dataset, config);

  std::printf("fit: iters=%d batch=%d lr=%g seed=%llu threads=%d instances=%zu\n",
              config.iterations, config.batch, config.lr,
              static_cast<unsigned long long>(config.seed), config.threads,
              data_loaded.dataset.clouds.size());

  const std::string checkpoint = out_path + ".ckpt";
  const FitLog log = fit_run(state, data_loaded.dataset, checkpoint);
  export_state(state, out_path);
  if (!curve_path.empty()) write_loss_curve(log, curve_path);
  if (!log.records.empty()) {
    const EnergyBreakdown& bd = log.records.back().bd;
    std::printf("fit: final step=%ld total=%.6g object=%.6g part=%.6g\n",
                log.records.back().step, bd.total, bd.object, bd.part);
  }
  std::printf("fit: state written to %s\n", out_path.c_str());
  return kExitOk;
}

int cmd_gradcheck(int seeds, uint64_t seed, double step, double tolerance,
                  int points, const std::vector<std::string>& terms) {
  GradCheckOptions options;
  options.seeds = seeds;
  options.step = step;
  options.tolerance = tolerance;
  options.points = points;
  options.terms = terms;
  const GradCheckReport report = gradcheck_energy(options, seed);
  std::printf("gradcheck: seeds=%d used=%d skipped=%d h=%g\n", seeds,
              report.seeds_used, report.seeds_skipped, step);
  bool ok = true;
  for (const std::string& term : gradcheck_term_names()) {
    const auto it = report.max_rel_err.find(term);
    if (it == report.max_rel_err.end()) continue;
    const bool pass = it->second < tolerance;
    ok = ok && pass;
    std::printf("gradcheck: %-6s max_rel_err=%.3e %s\n", term.c_str(), it->second,
                pass ? "ok" : "FAIL");
  }
  return ok ? kExitOk : kExitGradcheck;
}

int cmd_eval(const std::string& data, const std::string& state_path,
             const std::string& report_path, const std::string& format,
             const std::string& split, const std::string& plot_dir,
             const std::string& curve_path, uint64_t ransac_seed) {
  const FitState state = import_state(state_path);
  const DatasetManifest manifest = load_manifest(resolve_manifest_path(data));
  const EvalOutcome outcome = evaluate_fitted_state(state, manifest, split, ransac_seed);
  const MapTable& table = outcome.table;
  emit_report(table, report_path,
              format == "json" ? ReportFormat::Json : ReportFormat::Csv);
  double mean_iou = 0;
  for (double v : outcome.test_mean_iou) mean_iou += v;
  if (!outcome.test_mean_iou.empty()) mean_iou /= outcome.test_mean_iou.size();
  std::printf("eval: test instances=%zu mean_iou=%.4f\n",
              outcome.test_indices.size(), mean_iou);
  for (const MapRow& row : table.rows)
    std::printf("eval: %-13s %-10s %7.2f\n", row.family.c_str(),
                row.threshold.c_str(), row.value);
  std::printf("eval: report written to %s\n", report_path.c_str());
  const MetricThresholds thresholds;

  if (!plot_dir.empty()) {
    fs::create_directories(plot_dir);
    // AP against the paired thresholds for the joint and part families
    std::vector<double> xs = thresholds.rot_deg;
    std::vector<std::pair<std::string, std::vector<double>>> series(2);
    series[0].first = "joint";
    series[1].first = "part";
    for (const MapRow& row : table.rows) {
      if (row.family == "joint") series[0].second.push_back(row.value);
      if (row.family == "part") series[1].second.push_back(row.value);
    }
    write_line_chart_svg((fs::path(plot_dir) / "ap_curve.svg").string(),
                         "AP vs threshold (deg / cm pairs)", xs, series);
    if (!curve_path.empty()) {
      std::ifstream curve(curve_path);
      if (curve) {
        std::string line;
        std::getline(curve, line);  // header
        std::vector<double> steps, totals;
        while (std::getline(curve, line)) {
          const auto first_comma = line.find(',');
          const auto last_comma = line.rfind(',');
          if (first_comma == std::string::npos || last_comma <= first_comma)
            continue;
          steps.push_back(std::atof(line.substr(0, first_comma).c_str()));
          totals.push_back(std::atof(line.substr(last_comma + 1).c_str()));
        }
        if (!steps.empty())
          write_line_chart_svg((fs::path(plot_dir) / "loss_curve.svg").string(),
                               "total energy", steps, {{"total", totals}});
      }
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"artifit: articulated-object alignment by direct energy minimization"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  int threads = default_threads();
  app.add_option("--threads", threads, "worker threads (ARTIFIT_THREADS)")
      ->check(CLI::PositiveNumber);

  // --- gen ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_category = "laptop2";
  int gen_count = 32;
  uint64_t gen_seed = 1;
  bool gen_partial = false;
  int gen_points = 1024;
  double gen_outlier_rate = 0.0;
  double gen_noise_std = 0.0;
  double gen_max_tilt = 180.0;
  double gen_max_yaw = 180.0;
  std::string gen_out;
  gen->add_option("--category", gen_category, "object category")
      ->check(CLI::IsMember({"laptop2", "drawer2", "basket3"}));
  gen->add_option("--count", gen_count, "instances to generate")
      ->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_flag("--partial", gen_partial, "single-view hidden-point removal");
  gen->add_option("--points", gen_points, "points per cloud")
      ->check(CLI::PositiveNumber);
  gen->add_option("--outlier-rate", gen_outlier_rate, "outlier fraction")
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--noise-std", gen_noise_std, "additive Gaussian noise std")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--max-tilt", gen_max_tilt,
                  "max global tilt in degrees (>= 180: unrestricted rotations)")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--max-yaw", gen_max_yaw,
                  "max global |yaw| in degrees (ignored for unrestricted tilt)")
      ->check(CLI::NonNegativeNumber);
  gen->add_option("--out", gen_out, "output directory")->required();

  // --- fit ---------------------------------------------------------------
  auto* fit = app.add_subcommand("fit", "fit parameters to a dataset");
  FitConfig fit_config;
  std::string fit_data, fit_out = "state.json", fit_resume, fit_curve = "loss_curve.csv";
  std::string fit_exponent = "sq";
  std::string fit_init = "sphere";
  fit->add_option("--data", fit_data, "dataset directory or manifest.json")->required();
  fit->add_option("--init", fit_init, "base-shape initialization")
      ->check(CLI::IsMember({"sphere", "instance"}));
  fit->add_option("--out", fit_out, "output state file");
  fit->add_option("--resume", fit_resume, "resume from a checkpoint state");
  fit->add_option("--curve", fit_curve, "loss-curve CSV path (empty = skip)");
  fit->add_option("--iters", fit_config.iterations, "optimization iterations")
      ->check(CLI::NonNegativeNumber);
  fit->add_option("--batch", fit_config.batch, "batch size")
      ->check(CLI::PositiveNumber);
  fit->add_option("--lr", fit_config.lr, "Adam learning rate")
      ->check(CLI::PositiveNumber);
  fit->add_option("--lr-halve-every", fit_config.lr_halve_every,
                  "halve the learning rate every k iterations")
      ->check(CLI::PositiveNumber);
  fit->add_option("--seed", fit_config.seed, "fitting seed");
  fit->add_option("--points", fit_config.sample_points, "points sampled per instance")
      ->check(CLI::PositiveNumber);
  fit->add_option("--assignment-interval", fit_config.assignment_interval,
                  "steps between assignment refreshes")
      ->check(CLI::PositiveNumber);
  fit->add_flag("--augment", fit_config.augment,
                "random rotation + Gaussian noise per draw");
  fit->add_option("--noise-var", fit_config.noise_var,
                  "augmentation noise variance per coordinate")
      ->check(CLI::NonNegativeNumber);
  fit->add_option("--checkpoint-interval", fit_config.checkpoint_interval,
                  "steps between checkpoints (0 = off)")
      ->check(CLI::NonNegativeNumber);
  fit->add_option("--lambda-o", fit_config.energy.weights.object, "object loss weight");
  fit->add_option("--lambda-p", fit_config.energy.weights.part, "part loss weight");
  fit->add_option("--lambda-regS", fit_config.energy.weights.reg_s,
                  "shape variance weight");
  fit->add_option("--lambda-regD", fit_config.energy.weights.reg_d,
                  "density regularizer weight");
  fit->add_option("--lambda-regW", fit_config.energy.weights.reg_w,
                  "segmentation mass weight");
  fit->add_option("--lambda-regP", fit_config.energy.weights.reg_p,
                  "shared-part coincidence weight");
  fit->add_option("--lambda-regA", fit_config.energy.weights.reg_a,
                  "joint state weight");
  fit->add_option("--lambda-regJ", fit_config.energy.weights.reg_j,
                  "joint pivot weight");
  fit->add_option("--alpha-l", fit_config.energy.alpha_l, "DCD temperature, input side")
      ->check(CLI::PositiveNumber);
  fit->add_option("--alpha-r", fit_config.energy.alpha_r,
                  "DCD temperature, reconstruction side")
      ->check(CLI::PositiveNumber);
  fit->add_option("--beta", fit_config.energy.beta, "segmentation mass floor")
      ->check(CLI::NonNegativeNumber);
  fit->add_option("--k-density", fit_config.energy.k_density,
                  "neighbor count of the density regularizer")
      ->check(CLI::PositiveNumber);
  fit->add_option("--dcd-exponent", fit_exponent, "DCD exponent form")
      ->check(CLI::IsMember({"sq", "l2"}));

  // --- gradcheck -----------------------------------------------------------
  auto* gradcheck = app.add_subcommand("gradcheck",
                                       "finite-difference gradient certification");
  int gc_seeds = 100;
  uint64_t gc_seed = 1;
  double gc_step = 1e-5;
  double gc_tolerance = 1e-3;
  int gc_points = 32;
  std::vector<std::string> gc_terms;
  gradcheck->add_option("--seeds", gc_seeds, "random instances")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", gc_seed, "base seed");
  gradcheck->add_option("--step", gc_step, "central-difference step")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--tolerance", gc_tolerance, "max relative error")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--points", gc_points, "points per instance")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--term", gc_terms,
                        "restrict to specific terms (repeatable)");

  // --- eval ----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "evaluate a fitted state");
  std::string eval_data, eval_state, eval_report = "report.csv";
  std::string eval_format = "csv", eval_split = "parity", eval_plots, eval_curve;
  uint64_t eval_seed = 1;
  eval->add_option("--data", eval_data, "dataset directory or manifest.json")
      ->required();
  eval->add_option("--state", eval_state, "fitted state file")->required();
  eval->add_option("--report", eval_report, "report output path");
  eval->add_option("--format", eval_format, "report format")
      ->check(CLI::IsMember({"csv", "json"}));
  eval->add_option("--split", eval_split,
                   "train/test split (parity: even=train odd=test)")
      ->check(CLI::IsMember({"parity", "all"}));
  eval->add_option("--plots", eval_plots, "directory for SVG plots (empty = skip)");
  eval->add_option("--curve", eval_curve, "loss-curve CSV to plot alongside");
  eval->add_option("--seed", eval_seed, "RANSAC seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitFlags;
  }

  try {
    if (*gen)
      return cmd_gen(gen_category, gen_count, gen_seed, gen_partial, gen_points,
                     gen_outlier_rate, gen_noise_std, gen_max_tilt, gen_max_yaw,
                     gen_out);
    if (*fit) {
      fit_config.threads = threads;
      fit_config.energy.exponent =
          fit_exponent == "sq" ? DcdExponent::Squared : DcdExponent::Euclidean;
      fit_config.init = fit_init == "instance" ? TemplateInit::FirstInstance
                                               : TemplateInit::FibonacciSphere;
      return cmd_fit(fit_data, fit_out, fit_resume, fit_curve, fit_config);
    }
    if (*gradcheck)
      return cmd_gradcheck(gc_seeds, gc_seed, gc_step, gc_tolerance, gc_points,
                           gc_terms);
    if (*eval)
      return cmd_eval(eval_data, eval_state, eval_report, eval_format, eval_split,
                      eval_plots, eval_curve, eval_seed);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitFlags;
}
