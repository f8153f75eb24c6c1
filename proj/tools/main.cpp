#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>
#include <json.hpp>

#include "cpdyn/experiments.hpp"
#include "cpdyn/io.hpp"
#include "cpdyn/probe.hpp"
#include "cpdyn/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cpdyn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitDivergence = 2;

struct CommonOpts {
  uint64_t seed = 0;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--seed", opts.seed, "Run seed (required for reproducibility)")->required();
  cmd->add_option("--out", opts.out, "Output directory")->required();
  cmd->add_flag("--force", opts.force, "Allow writing into an existing run directory");
}

fs::path prepare_out_dir(const CommonOpts& opts) {
  const fs::path dir(opts.out);
  if (fs::exists(dir / "manifest.json") && !opts.force) {
    throw CLI::ValidationError("--out", "run directory already holds a manifest (use --force)");
  }
  fs::create_directories(dir);
  return dir;
}

void write_manifest(const fs::path& dir, const std::string& command, const json& parameters,
                    const json& extra = json::object()) {
  json manifest;
  manifest["command"] = command;
  manifest["parameters"] = parameters;
  manifest["tool"] = {{"name", "cpdyn"}, {"version", "0.1.0"}};
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  write_json(dir / "manifest.json", manifest);
}

// Options shared by the completion and sensing experiment commands.
struct SyntheticOpts {
  CommonOpts common;
  std::string preset;
  std::vector<int64_t> shape;
  int64_t gt_rank = -1;
  int64_t samples = -1;  // observations or measurements
  int64_t components = -1;
  std::vector<double> init_stds;
  std::string loss;  // "squared" or "huber"
  double squared_coeff = -1.0;
  double huber_delta = -1.0;
  std::string lr_scheme;  // "adaptive" or "fixed"
  double eta = -1.0;
  double eta_base = -1.0;
  double stop_loss = -1.0;
  int64_t max_iters = -1;
  int64_t record_every = -1;
  int64_t top_k = -1;
  int64_t rip_trials = -1;
};

void add_synthetic(CLI::App* cmd, SyntheticOpts& o, bool sensing) {
  add_common(cmd, o.common);
  cmd->add_option("--preset", o.preset,
                  sensing ? "fig7-desk or fig7-paper" : "fig3/fig5/fig6 -desk or -paper");
  cmd->add_option("--shape", o.shape, "Tensor dims, comma separated")->delimiter(',');
  cmd->add_option("--gt-rank", o.gt_rank, "Ground-truth CP rank");
  cmd->add_option(sensing ? "--measurements" : "--observations", o.samples,
                  sensing ? "Number of linear measurements" : "Number of observed entries");
  cmd->add_option("--components", o.components, "Factorization components R");
  cmd->add_option("--init-std", o.init_stds, "Initialization stddev(s); one arm per value")
      ->delimiter(',');
  cmd->add_option("--loss", o.loss, "squared or huber");
  cmd->add_option("--squared-coeff", o.squared_coeff, "0.5 or 1.0");
  cmd->add_option("--huber-delta", o.huber_delta, "Huber transition point");
  cmd->add_option("--lr-scheme", o.lr_scheme, "adaptive or fixed");
  cmd->add_option("--eta", o.eta, "Fixed learning rate");
  cmd->add_option("--eta-base", o.eta_base, "Adaptive base learning rate");
  cmd->add_option("--stop-loss", o.stop_loss, "Stop when loss falls below this");
  cmd->add_option("--max-iters", o.max_iters, "Iteration cap");
  cmd->add_option("--record-every", o.record_every, "Record period");
  cmd->add_option("--top-k", o.top_k, "Record k largest norms (0 = all components)");
  if (sensing) cmd->add_option("--rip-trials", o.rip_trials, "Sampled RIP probe trials");
}

SyntheticExperimentConfig resolve_synthetic(const SyntheticOpts& o, bool sensing) {
  SyntheticExperimentConfig cfg;
  if (!o.preset.empty()) {
    cfg = synthetic_preset(o.preset, o.common.seed);
    if (cfg.sensing != sensing) {
      throw CLI::ValidationError("--preset", "preset does not match this subcommand");
    }
  } else {
    cfg.sensing = sensing;
    cfg.seed = o.common.seed;
    if (o.shape.empty()) throw CLI::ValidationError("--shape", "required without --preset");
  }
  cfg.seed = o.common.seed;
  if (!o.shape.empty()) cfg.shape = Shape(o.shape);
  if (o.gt_rank > 0) cfg.gt_rank = o.gt_rank;
  if (o.samples > 0) (sensing ? cfg.measurements : cfg.observations) = o.samples;
  if (o.components > 0) cfg.components = o.components;
  if (!o.init_stds.empty()) cfg.init_stds = o.init_stds;
  if (!o.loss.empty()) {
    if (o.loss == "squared") {
      cfg.loss = make_squared(o.squared_coeff > 0 ? o.squared_coeff : 1.0);
    } else if (o.loss == "huber") {
      if (o.huber_delta <= 0) throw CLI::ValidationError("--huber-delta", "required for huber");
      cfg.loss = make_huber(o.huber_delta);
    } else {
      throw CLI::ValidationError("--loss", "must be squared or huber");
    }
  } else if (o.squared_coeff > 0) {
    cfg.loss = make_squared(o.squared_coeff);
  } else if (o.huber_delta > 0) {
    cfg.loss = make_huber(o.huber_delta);
  }
  if (!o.lr_scheme.empty()) {
    if (o.lr_scheme == "fixed") {
      if (o.eta <= 0) throw CLI::ValidationError("--eta", "required for fixed lr");
      cfg.lr = FixedLr{o.eta};
    } else if (o.lr_scheme == "adaptive") {
      AdaptiveLr a;
      if (o.eta_base > 0) a.eta_base = o.eta_base;
      cfg.lr = a;
    } else {
      throw CLI::ValidationError("--lr-scheme", "must be adaptive or fixed");
    }
  } else if (o.eta_base > 0) {
    cfg.lr = AdaptiveLr{o.eta_base};
  }
  if (o.stop_loss >= 0) cfg.stop_loss = o.stop_loss;
  if (o.max_iters > 0) cfg.max_iters = o.max_iters;
  if (o.record_every > 0) cfg.record_every = o.record_every;
  if (o.top_k >= 0) cfg.top_k = o.top_k;
  if (o.rip_trials >= 0) cfg.rip_trials = o.rip_trials;
  if (cfg.init_stds.empty()) throw CLI::ValidationError("--init-std", "at least one value needed");
  return cfg;
}

json synthetic_config_json(const SyntheticExperimentConfig& cfg, const std::string& preset) {
  json p;
  if (!preset.empty()) p["preset"] = preset;
  p["shape"] = cfg.shape.dims;
  p["gt_rank"] = cfg.gt_rank;
  p["sensing"] = cfg.sensing;
  if (cfg.sensing) {
    p["measurements"] = cfg.measurements;
    p["rip_trials"] = cfg.rip_trials;
  } else {
    p["observations"] = cfg.observations;
  }
  p["components"] = cfg.components;
  p["init_stds"] = cfg.init_stds;
  if (const auto* s = std::get_if<SquaredLoss>(&cfg.loss)) {
    p["loss"] = {{"kind", "squared"}, {"coeff", s->coeff}};
  } else {
    p["loss"] = {{"kind", "huber"}, {"delta", std::get<HuberLoss>(cfg.loss).delta}};
  }
  if (const auto* f = std::get_if<FixedLr>(&cfg.lr)) {
    p["lr"] = {{"scheme", "fixed"}, {"eta", f->eta}};
  } else {
    const auto& a = std::get<AdaptiveLr>(cfg.lr);
    p["lr"] = {{"scheme", "adaptive"}, {"eta_base", a.eta_base}, {"beta", a.beta}, {"eps", a.eps}};
  }
  p["stop_loss"] = cfg.stop_loss;
  p["max_iters"] = cfg.max_iters;
  p["record_every"] = cfg.record_every;
  p["top_k"] = cfg.top_k;
  p["seed"] = cfg.seed;
  return p;
}

int run_synthetic_cmd(const SyntheticOpts& o, bool sensing) {
  const SyntheticExperimentConfig cfg = resolve_synthetic(o, sensing);
  const fs::path dir = prepare_out_dir(o.common);
  const SyntheticExperimentResult result = run_synthetic_experiment(cfg);
  write_synthetic_outputs(dir, result);

  json extra = json::object();
  if (result.rip) {
    extra["rip_estimate"] = {{"delta_lower_bound", result.rip->delta_lower_bound},
                             {"min_sum", result.rip->min_sum},
                             {"max_sum", result.rip->max_sum},
                             {"trials", result.rip->trials}};
  }
  write_manifest(dir, sensing ? "sense" : "complete", synthetic_config_json(cfg, o.preset), extra);

  bool diverged = false;
  for (const auto& arm : result.arms) {
    std::printf("std=%g  stop=%s  iters=%lld  loss=%.3e  recon=%.3e\n", arm.init_std,
                to_string(arm.train.stop), static_cast<long long>(arm.train.iters),
                arm.train.final_loss, arm.recon_error);
    if (arm.train.stop == StopReason::non_finite) diverged = true;
  }
  return diverged ? kExitDivergence : kExitOk;
}

struct DynamicsOpts {
  CommonOpts common;
  DynamicsExperimentConfig cfg;
  std::vector<int64_t> shape{8, 8, 8};
};

int run_dynamics_cmd(DynamicsOpts& o) {
  o.cfg.shape = Shape(o.shape);
  o.cfg.seed = o.common.seed;
  const fs::path dir = prepare_out_dir(o.common);
  const DynamicsExperimentResult result = run_dynamics_experiment(o.cfg);

  write_trajectory_csv(dir / "ode_trajectory.csv", result.ode_records);
  write_trajectory_csv(dir / "bounds_trajectory.csv", result.bounds_records);
  {
    CsvWriter csv(dir / "ode_residuals.csv");
    const std::vector<std::string> names = {"step", "residual"};
    csv.header(names);
    for (size_t i = 0; i < result.ode.residuals.size(); ++i) {
      csv.field(static_cast<int64_t>(i));
      csv.field(result.ode.residuals[i]);
      csv.end_row();
    }
  }

  json report;
  report["checks"] = json::array({dynamics_report_to_json(result.conservation),
                                  dynamics_report_to_json(result.conservation_half_lr),
                                  dynamics_report_to_json(result.ode),
                                  dynamics_report_to_json(result.bounds)});
  report["drift_ratio"] = result.drift_ratio;
  report["negative_gamma_seen"] = result.negative_gamma_seen;
  report["all_pass"] = result.all_pass();
  write_json(dir / "dynamics_report.json", report);

  json p;
  p["shape"] = o.cfg.shape.dims;
  p["gt_rank"] = o.cfg.gt_rank;
  p["observations"] = o.cfg.observations;
  p["components"] = o.cfg.components;
  p["init_std"] = o.cfg.init_std;
  p["conservation_lr"] = o.cfg.conservation_lr;
  p["conservation_steps"] = o.cfg.conservation_steps;
  p["conservation_tol"] = o.cfg.conservation_tol;
  p["ode_lr"] = o.cfg.ode_lr;
  p["ode_steps"] = o.cfg.ode_steps;
  p["ode_tol"] = o.cfg.ode_tol;
  p["sigma_floor"] = o.cfg.sigma_floor;
  p["slack_coeff"] = o.cfg.slack_coeff;
  p["epsilon_offset"] = o.cfg.epsilon_offset;
  p["force_negative_gamma"] = o.cfg.force_negative_gamma;
  p["seed"] = o.cfg.seed;
  write_manifest(dir, "dynamics", p);

  for (const auto* rep : {&result.conservation, &result.conservation_half_lr, &result.ode,
                          &result.bounds}) {
    std::printf("[%s] %s: max violation %.3e (tolerance %.3e)\n", rep->pass ? "PASS" : "FAIL",
                rep->name.c_str(), rep->max_violation, rep->tolerance);
  }
  std::printf("drift ratio (lr vs lr/2): %.2f\n", result.drift_ratio);
  return kExitOk;
}

struct RankOneOpts {
  CommonOpts common;
  RankOneStudyConfig cfg;
  std::vector<int64_t> shape{4, 4, 4};
};

int run_rank1_cmd(RankOneOpts& o) {
  o.cfg.shape = Shape(o.shape);
  o.cfg.seed = o.common.seed;
  const fs::path dir = prepare_out_dir(o.common);
  const RankOneStudyResult result = run_rank_one_study(o.cfg);

  json report;
  report["min_abs_y"] = result.min_abs_y;
  report["delta_h"] = result.delta_h;
  report["rho"] = result.rho;
  report["assumptions"] = assumption_report_to_json(result.experiment.assumptions);
  json arms = json::array();
  for (const auto& arm : result.experiment.arms) {
    char label[48];
    std::snprintf(label, sizeof(label), "trace_alpha_%g.csv", arm.alpha);
    write_trace_csv(dir / label, arm.trace);
    arms.push_back({{"alpha", arm.alpha},
                    {"crossed", arm.crossing.crossed},
                    {"t0_iter", arm.crossing.iter},
                    {"t0_time", arm.crossing.time},
                    {"leading", arm.leading},
                    {"nonleading_norm_sum_at_t0", arm.nonleading_norm_sum_at_t0},
                    {"max_distance", arm.trace.max_distance},
                    {"hit_distance_cap", arm.trace.hit_distance_cap},
                    {"trace_csv", label}});
  }
  report["arms"] = std::move(arms);
  report["corollary2"] = {{"companion_min_distances", result.corollary2.companion_min_distances},
                          {"companion_final_distances", result.corollary2.companion_final_distances},
                          {"full_run_min_distance", result.corollary2.full_run_min_distance},
                          {"full_run_final_distance", result.corollary2.full_run_final_distance},
                          {"epsilon", result.corollary2.epsilon},
                          {"converged", result.corollary2.converged}};
  write_json(dir / "rank1_report.json", report);

  json p;
  p["shape"] = o.cfg.shape.dims;
  p["delta_frac"] = o.cfg.delta_frac;
  p["rho_frac"] = o.cfg.rho_frac;
  p["alphas"] = o.cfg.alphas;
  p["base_components"] = o.cfg.base_components;
  p["nonleading_scale"] = o.cfg.nonleading_scale;
  p["lr"] = o.cfg.lr;
  p["horizon"] = o.cfg.horizon;
  p["cap_mult"] = o.cfg.cap_mult;
  p["max_escape_iters"] = o.cfg.max_escape_iters;
  p["corollary_trajectories"] = o.cfg.corollary_trajectories;
  p["corollary_eps"] = o.cfg.corollary_eps;
  p["corollary_max_iters"] = o.cfg.corollary_max_iters;
  p["seed"] = o.cfg.seed;
  write_manifest(dir, "rank1", p);

  std::printf("assumptions: %s\n",
              result.experiment.assumptions.all_ok() ? "satisfied" : "NOT satisfied");
  for (const auto& arm : result.experiment.arms) {
    std::printf("alpha=%g  T0=%.4g (iter %lld, crossed=%d)  max distance=%.4g  nonleading@T0=%.3e\n",
                arm.alpha, arm.crossing.time, static_cast<long long>(arm.crossing.iter),
                arm.crossing.crossed ? 1 : 0, arm.trace.max_distance,
                arm.nonleading_norm_sum_at_t0);
  }
  std::printf("corollary2: full-run min distance %.4g (eps %.3g, converged=%d)\n",
              result.corollary2.full_run_min_distance, result.corollary2.epsilon,
              result.corollary2.converged ? 1 : 0);
  return kExitOk;
}

struct ProbeOpts {
  CommonOpts common;
  std::string data_dir;
  std::string train_images, train_labels, test_images, test_labels;
  std::vector<int> digits;
  std::vector<std::string> variants{"original", "rand_image", "rand_label"};
  std::vector<int64_t> ranks;
  int64_t subsample_n = 0;
  int jobs = 1;
  bool ridge = true;
  double ridge_alpha = 0.5;
  AdamConfig adam;
};

ProbeVariant parse_variant(const std::string& name) {
  if (name == "original") return ProbeVariant::original;
  if (name == "rand_image") return ProbeVariant::rand_image;
  if (name == "rand_label") return ProbeVariant::rand_label;
  throw CLI::ValidationError("--variants", "unknown variant " + name);
}

int run_probe_cmd(ProbeOpts& o) {
  if (!o.data_dir.empty()) {
    o.train_images = o.data_dir + "/train-images-idx3-ubyte";
    o.train_labels = o.data_dir + "/train-labels-idx1-ubyte";
    o.test_images = o.data_dir + "/t10k-images-idx3-ubyte";
    o.test_labels = o.data_dir + "/t10k-labels-idx1-ubyte";
  }
  if (o.train_images.empty() || o.test_images.empty()) {
    throw CLI::ValidationError("--data-dir", "dataset paths are required");
  }
  for (const auto& path : {o.train_images, o.train_labels, o.test_images, o.test_labels}) {
    if (!fs::exists(path)) {
      throw CLI::ValidationError("dataset", "missing input file: " + path);
    }
  }
  if (o.digits.empty()) {
    o.digits.resize(10);
    std::iota(o.digits.begin(), o.digits.end(), 0);
  }
  if (o.ranks.empty()) {
    o.ranks.resize(15);
    std::iota(o.ranks.begin(), o.ranks.end(), 1);
  }
  o.adam.seed = o.common.seed;

  const fs::path dir = prepare_out_dir(o.common);

  ProbeData data;
  data.train = binarize(load_idx(o.train_images, o.train_labels));
  data.test = binarize(load_idx(o.test_images, o.test_labels));
  if (o.subsample_n > 0) {
    data.train = subsample(data.train, o.subsample_n, derive_seed(o.common.seed, "train_subsample"));
  }

  std::vector<ProbeVariant> variants;
  for (const auto& name : o.variants) variants.push_back(parse_variant(name));

  const std::vector<ProbeRow> rows =
      run_probe(data, variants, o.digits, o.ranks, o.adam, o.common.seed, o.jobs);

  {
    CsvWriter csv(dir / "results.csv");
    const std::vector<std::string> names = {"variant", "digit", "k", "train_mse",
                                            "test_mse_clipped", "iters"};
    csv.header(names);
    for (const auto& row : rows) {
      csv.field(std::string(to_string(row.variant)));
      csv.field(static_cast<int64_t>(row.digit));
      csv.field(row.k);
      csv.field(row.train_mse);
      csv.field(row.test_mse_clipped);
      csv.field(row.iters);
      csv.end_row();
    }
  }
  {
    // Wall times live in a sidecar file so results.csv stays byte-identical
    // across reruns of the same seed.
    CsvWriter csv(dir / "timing.csv");
    const std::vector<std::string> names = {"variant", "digit", "k", "wall_seconds"};
    csv.header(names);
    for (const auto& row : rows) {
      csv.field(std::string(to_string(row.variant)));
      csv.field(static_cast<int64_t>(row.digit));
      csv.field(row.k);
      csv.field(row.wall_seconds);
      csv.end_row();
    }
  }
  if (o.ridge) {
    CsvWriter csv(dir / "ridge.csv");
    const std::vector<std::string> names = {"variant", "digit", "train_mse", "test_mse_clipped"};
    csv.header(names);
    for (ProbeVariant v : variants) {
      const ProbeData vd = make_variant(data, v, derive_seed(o.common.seed, to_string(v)));
      const RidgeSolver solver(vd.train, o.ridge_alpha);
      for (int digit : o.digits) {
        const RidgeResult rr = solver.solve(vd, digit);
        csv.field(std::string(to_string(v)));
        csv.field(static_cast<int64_t>(digit));
        csv.field(rr.train_mse);
        csv.field(rr.test_mse_clipped);
        csv.end_row();
      }
    }
  }

  json p;
  p["train_images"] = o.train_images;
  p["train_labels"] = o.train_labels;
  p["test_images"] = o.test_images;
  p["test_labels"] = o.test_labels;
  p["digits"] = o.digits;
  p["variants"] = o.variants;
  p["ranks"] = o.ranks;
  p["subsample"] = o.subsample_n;
  p["jobs"] = o.jobs;
  p["ridge"] = o.ridge;
  p["ridge_alpha"] = o.ridge_alpha;
  p["adam"] = {{"lr", o.adam.lr},       {"beta1", o.adam.beta1},
               {"beta2", o.adam.beta2}, {"eps", o.adam.eps},
               {"batch_size", o.adam.batch_size}, {"stop_loss", o.adam.stop_loss},
               {"max_iters", o.adam.max_iters}};
  p["seed"] = o.common.seed;
  write_manifest(dir, "probe", p);

  for (const auto& row : rows) {
    if (!std::isfinite(row.train_mse)) return kExitDivergence;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CP tensor factorization training and dynamics experiments"};
  app.require_subcommand(1);
  // key=value config file with one [subcommand] section; flags win.
  app.set_config("--config", "", "Config file ([subcommand] section, key=value lines)");

  SyntheticOpts complete_opts, sense_opts;
  DynamicsOpts dyn_opts;
  RankOneOpts rank1_opts;
  ProbeOpts probe_opts;

  CLI::App* cmd_complete = app.add_subcommand("complete", "Tensor completion experiment");
  add_synthetic(cmd_complete, complete_opts, false);

  CLI::App* cmd_sense = app.add_subcommand("sense", "Tensor sensing experiment");
  add_synthetic(cmd_sense, sense_opts, true);

  CLI::App* cmd_dynamics = app.add_subcommand("dynamics", "Norm-dynamics verification run");
  add_common(cmd_dynamics, dyn_opts.common);
  cmd_dynamics->add_option("--shape", dyn_opts.shape, "Tensor dims")->delimiter(',');
  cmd_dynamics->add_option("--gt-rank", dyn_opts.cfg.gt_rank, "Ground-truth CP rank");
  cmd_dynamics->add_option("--observations", dyn_opts.cfg.observations, "Observed entries");
  cmd_dynamics->add_option("--components", dyn_opts.cfg.components, "Components R");
  cmd_dynamics->add_option("--init-std", dyn_opts.cfg.init_std, "Balanced init stddev");
  cmd_dynamics->add_option("--conservation-lr", dyn_opts.cfg.conservation_lr, "Step size");
  cmd_dynamics->add_option("--conservation-steps", dyn_opts.cfg.conservation_steps, "Steps");
  cmd_dynamics->add_option("--conservation-tol", dyn_opts.cfg.conservation_tol, "Tolerance");
  cmd_dynamics->add_option("--ode-lr", dyn_opts.cfg.ode_lr, "Step size for the ODE run");
  cmd_dynamics->add_option("--ode-steps", dyn_opts.cfg.ode_steps, "Steps for the ODE run");
  cmd_dynamics->add_option("--ode-tol", dyn_opts.cfg.ode_tol, "Relative residual tolerance");
  cmd_dynamics->add_option("--sigma-floor", dyn_opts.cfg.sigma_floor, "Component norm floor");
  cmd_dynamics->add_option("--slack-coeff", dyn_opts.cfg.slack_coeff, "Bounds slack coefficient");
  cmd_dynamics->add_option("--epsilon", dyn_opts.cfg.epsilon_offset,
                           "Injected unbalancedness for the bounds run");
  cmd_dynamics->add_flag("--negative-gamma,!--no-negative-gamma",
                         dyn_opts.cfg.force_negative_gamma,
                         "Anti-align component 0 in the bounds run");

  CLI::App* cmd_rank1 = app.add_subcommand("rank1", "Rank-one trajectory study");
  add_common(cmd_rank1, rank1_opts.common);
  cmd_rank1->add_option("--shape", rank1_opts.shape, "Tensor dims")->delimiter(',');
  cmd_rank1->add_option("--delta-frac", rank1_opts.cfg.delta_frac, "delta_h / min |y|");
  cmd_rank1->add_option("--rho-frac", rank1_opts.cfg.rho_frac, "rho / (min |y| - delta_h)");
  cmd_rank1->add_option("--alphas", rank1_opts.cfg.alphas, "Init scales, decreasing")
      ->delimiter(',');
  cmd_rank1->add_option("--base-components", rank1_opts.cfg.base_components, "Components R");
  cmd_rank1->add_option("--nonleading-scale", rank1_opts.cfg.nonleading_scale,
                        "Norm of non-leading base vectors");
  cmd_rank1->add_option("--lr", rank1_opts.cfg.lr, "Fixed step size");
  cmd_rank1->add_option("--horizon", rank1_opts.cfg.horizon, "Tracking time budget");
  cmd_rank1->add_option("--cap-mult", rank1_opts.cfg.cap_mult, "Distance cap / |W*|");
  cmd_rank1->add_option("--max-escape-iters", rank1_opts.cfg.max_escape_iters,
                        "Iteration cap for reaching the sphere");
  cmd_rank1->add_option("--k-trajectories", rank1_opts.cfg.corollary_trajectories,
                        "Random balanced rank-one runs");
  cmd_rank1->add_option("--corollary-eps", rank1_opts.cfg.corollary_eps, "Convergence radius");
  cmd_rank1->add_option("--corollary-max-iters", rank1_opts.cfg.corollary_max_iters,
                        "Iteration cap per convergence run");

  CLI::App* cmd_probe = app.add_subcommand("probe", "Dataset tensor-rank probe");
  add_common(cmd_probe, probe_opts.common);
  cmd_probe->add_option("--data-dir", probe_opts.data_dir,
                        "Directory with train/t10k IDX files");
  cmd_probe->add_option("--train-images", probe_opts.train_images, "IDX image file");
  cmd_probe->add_option("--train-labels", probe_opts.train_labels, "IDX label file");
  cmd_probe->add_option("--test-images", probe_opts.test_images, "IDX image file");
  cmd_probe->add_option("--test-labels", probe_opts.test_labels, "IDX label file");
  cmd_probe->add_option("--digits", probe_opts.digits, "Digits to fit (default all)")
      ->delimiter(',');
  cmd_probe->add_option("--variants", probe_opts.variants, "Dataset variants")->delimiter(',');
  cmd_probe->add_option("--ranks", probe_opts.ranks, "Tensor ranks k (default 1..15)")
      ->delimiter(',');
  cmd_probe->add_option("--subsample", probe_opts.subsample_n,
                        "Subsample the training split to this many examples");
  cmd_probe->add_option("--jobs", probe_opts.jobs, "Parallel fit jobs");
  cmd_probe->add_flag("--ridge,!--no-ridge", probe_opts.ridge, "Run the ridge baseline");
  cmd_probe->add_option("--ridge-alpha", probe_opts.ridge_alpha, "Ridge penalty");
  cmd_probe->add_option("--adam-lr", probe_opts.adam.lr, "Adam learning rate");
  cmd_probe->add_option("--batch-size", probe_opts.adam.batch_size, "Mini-batch size");
  cmd_probe->add_option("--adam-max-iters", probe_opts.adam.max_iters, "Adam iteration cap");
  cmd_probe->add_option("--adam-stop-loss", probe_opts.adam.stop_loss, "Adam stop threshold");

  try {
    app.parse(argc, argv);
    if (cmd_complete->parsed()) return run_synthetic_cmd(complete_opts, false);
    if (cmd_sense->parsed()) return run_synthetic_cmd(sense_opts, true);
    if (cmd_dynamics->parsed()) return run_dynamics_cmd(dyn_opts);
    if (cmd_rank1->parsed()) return run_rank1_cmd(rank1_opts);
    if (cmd_probe->parsed()) return run_probe_cmd(probe_opts);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
