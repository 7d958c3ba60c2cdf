#pragma once

#include "container.hpp"
#include "report.hpp"
#include "synthdata.hpp"
#include "training.hpp"

#include <iomanip>
#include <iostream>

namespace smsr::pipeline {

using io::json;
namespace fs = std::filesystem;

/// A stage input is absent on disk.
struct MissingDependency : Error {
  using Error::Error;
};
/// The configuration violates a module precondition.
struct ConfigError : Error {
  using Error::Error;
};

enum class Stage { Simulate, Mask, Train, Reconstruct, Analyze, Report };

inline std::vector<std::pair<Stage, char const *>> const &stageNames()
{
  static std::vector<std::pair<Stage, char const *>> const names = {
    {Stage::Simulate, "simulate"}, {Stage::Mask, "mask"},       {Stage::Train, "train"},
    {Stage::Reconstruct, "reconstruct"}, {Stage::Analyze, "analyze"}, {Stage::Report, "report"}};
  return names;
}

inline char const *name(Stage s)
{
  for (auto const &[st, n] : stageNames()) {
    if (st == s) { return n; }
  }
  return "?";
}

/// Comma-separated stage list ("all" for every stage), returned in execution order.
inline std::vector<Stage> parse_stages(std::string const &list)
{
  std::vector<bool> want(stageNames().size(), false);
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) { continue; }
    if (item == "all") {
      want.assign(want.size(), true);
      continue;
    }
    bool found = false;
    for (std::size_t i = 0; i < stageNames().size(); ++i) {
      if (item == stageNames()[i].second) {
        want[i] = true;
        found = true;
      }
    }
    if (!found) { throw ConfigError("unknown stage '" + item + "'"); }
  }
  std::vector<Stage> out;
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i]) { out.push_back(stageNames()[i].first); }
  }
  if (out.empty()) { throw ConfigError("no stages requested"); }
  return out;
}

struct RunConfig
{
  // geometry
  Index slices = 5, rows = 64, cols = 64, coils = 8;
  // acceleration: SMS factor equals the slice count; in-plane R acquired and retrospectively targeted
  Index sms = 5, r_acquired = 2, r_target = 4, acs_lines = 8;
  // multi-mask split
  int mask_k = 6;
  double mask_rho = 0.4;
  // network
  RegularizerConfig network;
  UnrollConfig unroll;
  double init_scale = 0.1;
  // training
  TrainConfig training;
  int train_frames = 4;
  // simulation
  int n_frames = 256;
  double TR = 1.0;
  double stim_freq = 0.3125;
  double response_amplitude = 0.03;
  double noise_sigma = 0.02; // per real/imaginary component of each k-space sample
  int hemo_delay_frames = 5;
  // baseline
  int baseline_cg_iterations = 30;
  // analysis
  AnalysisConfig analysis;
  std::uint64_t seed = 0;
  bool deterministic = false;

  // Independent stream per consumer, derived from the run seed.
  std::uint64_t subSeed(std::string_view what) const { return smsr::detail::splitmix64(seed ^ fnv1a(what)); }

  json toJson() const
  {
    return {
      {"seed", seed},
      {"geometry", {{"slices", slices}, {"rows", rows}, {"cols", cols}, {"coils", coils}}},
      {"acceleration", {{"sms", sms}, {"r_acquired", r_acquired}, {"r_target", r_target}, {"acs_lines", acs_lines}}},
      {"mask", {{"k", mask_k}, {"rho", mask_rho}}},
      {"network",
       {{"residual_blocks", network.n_residual_blocks},
        {"channels", network.channels},
        {"kernel_size", network.kernel_size},
        {"residual_scaling", network.residual_scaling},
        {"unrolls", unroll.n_unrolls},
        {"cg_steps", unroll.n_cg},
        {"mu_init", unroll.mu_init},
        {"mu_learnable", unroll.mu_learnable},
        {"init_scale", init_scale}}},
      {"training",
       {{"epochs", training.epochs},
        {"learning_rate", training.learning_rate},
        {"train_frames", train_frames},
        {"loss_l2_weight", training.loss.l2},
        {"loss_l1_weight", training.loss.l1},
        {"checkpoint_every", training.checkpoint_every}}},
      {"simulation",
       {{"n_frames", n_frames},
        {"tr", TR},
        {"stim_freq", stim_freq},
        {"response_amplitude", response_amplitude},
        {"noise_sigma", noise_sigma},
        {"hemo_delay_frames", hemo_delay_frames}}},
      {"baseline", {{"cg_iterations", baseline_cg_iterations}}},
      {"analysis",
       {{"roi_threshold", analysis.roi_threshold},
        {"min_cluster", analysis.min_cluster},
        {"connectivity", analysis.connectivity},
        {"hemo_shift_frames", analysis.hemo_shift_frames},
        {"coherence_window", analysis.coherence.window_frames},
        {"coherence_overlap", analysis.coherence.overlap_fraction},
        {"poly_order", analysis.poly_order},
        {"protect_stimulus", analysis.protect_stimulus},
        {"mask_fraction", analysis.mask_fraction}}},
    };
  }

  /// Overlay a (possibly partial) JSON document onto the defaults. Unknown keys are rejected.
  static RunConfig fromJson(json const &j)
  {
    RunConfig c;
    auto const ref = c.toJson();
    for (auto const &[k, v] : j.items()) {
      if (!ref.contains(k)) { throw ConfigError("unknown config key '" + k + "'"); }
      if (v.is_object()) {
        for (auto const &[k2, v2] : v.items()) {
          if (!ref[k].contains(k2)) { throw ConfigError("unknown config key '" + k + "." + k2 + "'"); }
        }
      }
    }
    auto get = [&](char const *sec, char const *key, auto &dst) {
      if (j.contains(sec) && j[sec].contains(key)) {
        try {
          j[sec][key].get_to(dst);
        } catch (json::exception const &e) {
          throw ConfigError(std::string("config ") + sec + "." + key + ": " + e.what());
        }
      }
    };
    if (j.contains("seed")) { c.seed = j["seed"].get<std::uint64_t>(); }
    get("geometry", "slices", c.slices);
    get("geometry", "rows", c.rows);
    get("geometry", "cols", c.cols);
    get("geometry", "coils", c.coils);
    get("acceleration", "sms", c.sms);
    get("acceleration", "r_acquired", c.r_acquired);
    get("acceleration", "r_target", c.r_target);
    get("acceleration", "acs_lines", c.acs_lines);
    get("mask", "k", c.mask_k);
    get("mask", "rho", c.mask_rho);
    get("network", "residual_blocks", c.network.n_residual_blocks);
    get("network", "channels", c.network.channels);
    get("network", "kernel_size", c.network.kernel_size);
    get("network", "residual_scaling", c.network.residual_scaling);
    get("network", "unrolls", c.unroll.n_unrolls);
    get("network", "cg_steps", c.unroll.n_cg);
    get("network", "mu_init", c.unroll.mu_init);
    get("network", "mu_learnable", c.unroll.mu_learnable);
    get("network", "init_scale", c.init_scale);
    get("training", "epochs", c.training.epochs);
    get("training", "learning_rate", c.training.learning_rate);
    get("training", "train_frames", c.train_frames);
    get("training", "loss_l2_weight", c.training.loss.l2);
    get("training", "loss_l1_weight", c.training.loss.l1);
    get("training", "checkpoint_every", c.training.checkpoint_every);
    get("simulation", "n_frames", c.n_frames);
    get("simulation", "tr", c.TR);
    get("simulation", "stim_freq", c.stim_freq);
    get("simulation", "response_amplitude", c.response_amplitude);
    get("simulation", "noise_sigma", c.noise_sigma);
    get("simulation", "hemo_delay_frames", c.hemo_delay_frames);
    get("baseline", "cg_iterations", c.baseline_cg_iterations);
    get("analysis", "roi_threshold", c.analysis.roi_threshold);
    get("analysis", "min_cluster", c.analysis.min_cluster);
    get("analysis", "connectivity", c.analysis.connectivity);
    get("analysis", "hemo_shift_frames", c.analysis.hemo_shift_frames);
    get("analysis", "coherence_window", c.analysis.coherence.window_frames);
    get("analysis", "coherence_overlap", c.analysis.coherence.overlap_fraction);
    get("analysis", "poly_order", c.analysis.poly_order);
    get("analysis", "protect_stimulus", c.analysis.protect_stimulus);
    get("analysis", "mask_fraction", c.analysis.mask_fraction);
    c.analysis.stim_freq = c.stim_freq;
    c.training.k_masks = c.mask_k;
    return c;
  }

  void validate() const
  {
    auto fail = [](std::string const &m) { throw ConfigError(m); };
    if (slices < 1 || rows < 4 || cols < 4 || coils < 1) { fail("geometry must be positive (rows, cols >= 4)"); }
    if (sms != slices) { fail("acceleration.sms must equal geometry.slices"); }
    if (r_acquired < 1 || r_target < r_acquired || r_target % r_acquired != 0) {
      fail("acceleration: r_target must be a multiple of r_acquired");
    }
    if (acs_lines < 0 || acs_lines >= rows) { fail("acceleration.acs_lines must be in [0, rows)"); }
    if (mask_k < 1 || !(mask_rho > 0 && mask_rho < 1)) { fail("mask: k >= 1 and rho in (0, 1)"); }
    if (train_frames < 1 || train_frames > n_frames) { fail("training.train_frames must be in [1, n_frames]"); }
    if (baseline_cg_iterations < 1) { fail("baseline.cg_iterations must be >= 1"); }
    if (!(noise_sigma >= 0)) { fail("simulation.noise_sigma must be >= 0"); }
    if (!(response_amplitude >= 0 && response_amplitude < 1)) { fail("simulation.response_amplitude must be in [0, 1)"); }
    try {
      network.validate();
      unroll.validate();
      training.validate();
      FmriSimSpec s;
      s.TR = TR;
      s.n_frames = n_frames;
      s.stim_freq = stim_freq;
      s.validate();
      smsr::detail::stimulusBin(stim_freq, TR, n_frames, "config");
    } catch (ParameterError const &e) {
      fail(e.what());
    }
    if (!(analysis.roi_threshold > 0 && analysis.roi_threshold < 1)) { fail("analysis.roi_threshold must be in (0, 1)"); }
    if (analysis.connectivity != 6 && analysis.connectivity != 18 && analysis.connectivity != 26) {
      fail("analysis.connectivity must be 6, 18 or 26");
    }
    Index const L = analysis.coherence.window_frames;
    Index const step = std::max<Index>(1, static_cast<Index>(std::llround(static_cast<double>(L) * (1 - analysis.coherence.overlap_fraction))));
    if (L < 2 || L > n_frames || (n_frames - L) / step + 1 < 2) { fail("analysis.coherence_window must give at least 2 segments"); }
  }

  std::string hash() const
  {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << fnv1a(toJson().dump());
    return s.str();
  }
};

inline RunConfig load_config(fs::path const &path)
{
  std::ifstream f(path);
  if (!f) { throw MissingDependency("config file not found: " + path.string()); }
  try {
    return RunConfig::fromJson(json::parse(f));
  } catch (json::parse_error const &e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

/// Everything on disk lives under one output directory.
class Layout
{
public:
  explicit Layout(fs::path root)
    : root_(std::move(root))
  {
  }
  fs::path const &root() const { return root_; }
  fs::path sim(std::string const &n) const { return root_ / "simulate" / n; }
  fs::path mask(int sample, int k, char const *part) const
  {
    return root_ / "mask" / ("sample" + std::to_string(sample) + "_k" + std::to_string(k) + "_" + part);
  }
  fs::path train(std::string const &n) const { return root_ / "train" / n; }
  fs::path recon(std::string const &n) const { return root_ / "reconstruct" / n; }
  fs::path analysis(std::string const &n) const { return root_ / "analyze" / n; }
  fs::path report(std::string const &n) const { return root_ / "report" / n; }

private:
  fs::path root_;
};

/// The three reconstructions compared: baseline at the acquired rate, DL and baseline at the target rate.
struct ReconKind
{
  char const *id;
  char const *label;
};
inline std::vector<ReconKind> const &reconKinds()
{
  static std::vector<ReconKind> const k = {
    {"baseline_acq", "CG-SENSE (acquired R)"}, {"dl_target", "SSDU unrolled (target R)"}, {"baseline_target", "CG-SENSE (target R)"}};
  return k;
}

inline char const *const kRuns[2] = {"ccw", "cw"};

namespace detail {

inline json stamp(RunConfig const &cfg, char const *stage, json extra = json::object())
{
  extra["config_hash"] = cfg.hash();
  extra["seed"] = cfg.seed;
  extra["provenance"] = {{"stage", stage}, {"tool", "smsr"}};
  return extra;
}

inline void writeJson(fs::path const &p, json const &j)
{
  fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) { throw DataError("cannot write " + p.string()); }
  f << j.dump(2) << '\n';
}

inline json readJson(fs::path const &p)
{
  std::ifstream f(p);
  if (!f) { throw MissingDependency("missing " + p.string()); }
  return json::parse(f);
}

inline io::Container need(fs::path const &stem, char const *producer)
{
  if (!io::exists(stem)) {
    throw MissingDependency("missing " + stem.string() + " (run the '" + std::string(producer) + "' stage first)");
  }
  return io::read(stem);
}

struct Scene
{
  SliceStack<double> phantom;
  CoilSensitivityMaps<double> maps;
  SamplingPattern omega_acq, omega_target;
  CaipiShiftSchedule shifts;
  RetinotopyLayout layout;
};

inline Scene makeScene(RunConfig const &cfg)
{
  Scene s;
  auto spec = random_phantom_spec(cfg.slices, cfg.rows, cfg.cols, cfg.subSeed("phantom"));
  s.phantom = make_phantom(spec);
  s.maps = make_coil_maps(cfg.coils, cfg.slices, cfg.rows, cfg.cols, cfg.subSeed("coils"));
  s.omega_acq = make_pattern(cfg.rows, cfg.cols, cfg.r_acquired, cfg.acs_lines, cfg.subSeed("pattern"));
  s.omega_target = retrospective_pattern(s.omega_acq, cfg.r_target);
  s.shifts = CaipiShiftSchedule::standard(cfg.slices, cfg.rows);
  s.layout = make_retinotopy_layout(s.phantom);
  return s;
}

inline FmriSimSpec runSpec(RunConfig const &cfg, Scene const &s, int run)
{
  FmriSimSpec spec;
  spec.TR = cfg.TR;
  spec.n_frames = cfg.n_frames;
  spec.stim_freq = cfg.stim_freq;
  spec.response_amplitude = cfg.response_amplitude;
  spec.roi = s.layout.roi;
  spec.phase = s.layout.phase;
  spec.noise_sigma = 0; // noise enters in k-space
  spec.hemo_delay_frames = cfg.hemo_delay_frames;
  spec.direction = run == 0 ? WedgeDirection::CounterClockwise : WedgeDirection::Clockwise;
  return spec;
}

inline std::vector<std::vector<double>> zeroMotion(int T) { return std::vector<std::vector<double>>(6, std::vector<double>(static_cast<std::size_t>(T), 0.0)); }

inline double meanNmse(std::vector<SliceStack<double>> const &x, std::vector<SliceStack<double>> const &ref)
{
  double acc = 0;
  for (std::size_t t = 0; t < x.size(); ++t) { acc += nmse(x[t], ref[t]); }
  return acc / static_cast<double>(x.size());
}

inline json roiJson(RoiMetrics const &m)
{
  json j = {{"voxel_count", m.voxel_count}, {"tsnr_mean", m.tsnr_mean}, {"tsnr_std", m.tsnr_std}};
  j["mean_abs_phase_error"] = m.mean_abs_phase_error ? json(*m.mean_abs_phase_error) : json(nullptr);
  return j;
}

} // namespace detail

/// Stage implementations. Each reads its inputs from disk, so stages can run in separate invocations.
class Runner
{
public:
  Runner(RunConfig cfg, fs::path out, std::ostream &log)
    : cfg_(std::move(cfg))
    , L_(std::move(out))
    , log_(log)
  {
  }

  void simulate()
  {
    auto const s = detail::makeScene(cfg_);
    auto const meta = [&] { return detail::stamp(cfg_, "simulate"); };
    io::write(L_.sim("phantom"), io::fromComplex(s.phantom.data, {"slice", "row", "col"}, meta()));
    io::write(L_.sim("coil_maps"), io::fromComplex(s.maps.data, {"coil", "slice", "row", "col"}, meta()));
    io::write(L_.sim("omega_acquired"), io::fromPattern(s.omega_acq, meta()));
    io::write(L_.sim("omega_target"), io::fromPattern(s.omega_target, meta()));
    io::write(L_.sim("truth_roi"), io::fromReal(s.layout.roi, {"slice", "row", "col"}, meta()));
    io::write(L_.sim("truth_phase"), io::fromReal(s.layout.phase, {"slice", "row", "col"}, meta()));
    for (int run = 0; run < 2; ++run) {
      auto const series = simulate_fmri_series(s.phantom, detail::runSpec(cfg_, s, run));
      std::mt19937_64 rng(cfg_.subSeed(std::string("noise_") + kRuns[run]));
      std::vector<SmsKSpace<double>> ks;
      ks.reserve(series.frames.size());
      for (auto const &f : series.frames) { ks.push_back(simulate_acquisition(f, s.maps, s.omega_acq, s.shifts, cfg_.noise_sigma, rng)); }
      auto m = meta();
      m["noise_sigma"] = cfg_.noise_sigma;
      m["scaling"] = {{"image", 1.0}};
      io::write(L_.sim(std::string("kspace_") + kRuns[run]), io::fromFrames(ks, {"coil", "row", "col"}, m));
    }
    json truth = detail::stamp(cfg_, "simulate");
    truth["roi_voxels"] = std::accumulate(s.layout.roi.flat().begin(), s.layout.roi.flat().end(), Index{0});
    truth["shifts"] = s.shifts.shifts;
    truth["acquired_samples"] = s.omega_acq.count();
    truth["target_samples"] = s.omega_target.count();
    detail::writeJson(L_.sim("ground_truth.json"), truth);
    log_ << "simulate: 2 runs x " << cfg_.n_frames << " frames, ROI " << truth["roi_voxels"] << " voxels\n";
  }

  void mask()
  {
    auto const omega = io::toPattern(detail::need(L_.sim("omega_target"), "simulate"));
    json report = detail::stamp(cfg_, "mask");
    report["samples"] = json::array();
    for (int n = 0; n < cfg_.train_frames; ++n) {
      SplitOptions opt;
      opt.k_masks = cfg_.mask_k;
      opt.rho = cfg_.mask_rho;
      opt.seed = cfg_.subSeed("mask_" + std::to_string(n));
      auto const split = split_masks(omega, opt);
      auto const check = validate_split(split, omega);
      if (!check.all_passed()) { throw DataError("mask: split failed validation for sample " + std::to_string(n)); }
      json fr = json::array();
      for (int k = 0; k < split.K(); ++k) {
        auto const &p = split.pairs[static_cast<std::size_t>(k)];
        auto m = detail::stamp(cfg_, "mask", {{"k", k}, {"sample", n}, {"mask_seed", opt.seed}});
        io::write(L_.mask(n, k, "theta"), io::fromPattern(p.theta, m));
        io::write(L_.mask(n, k, "lambda"), io::fromMask(p.lambda, m));
        fr.push_back(check.checks[static_cast<std::size_t>(k)].lambda_fraction);
      }
      report["samples"].push_back({{"sample", n}, {"lambda_fraction", fr}});
    }
    detail::writeJson(L_.root() / "mask" / "split_report.json", report);
    log_ << "mask: " << cfg_.train_frames << " samples x " << cfg_.mask_k << " splits\n";
  }

  std::vector<TrainingSample> trainingSamples()
  {
    auto const maps = CoilSensitivityMaps<double>(io::toComplex<4>(detail::need(L_.sim("coil_maps"), "simulate"), {"coil", "slice", "row", "col"}));
    auto const omega = io::toPattern(detail::need(L_.sim("omega_target"), "simulate"));
    auto const ks = io::toFrames<SmsKSpace<double>>(detail::need(L_.sim("kspace_ccw"), "simulate"), {"coil", "row", "col"});
    auto const shifts = CaipiShiftSchedule::standard(cfg_.slices, cfg_.rows);
    std::vector<TrainingSample> samples;
    for (int n = 0; n < cfg_.train_frames; ++n) {
      TrainingSample s{restrict_kspace(ks[static_cast<std::size_t>(n)], omega), maps, omega, shifts, {}};
      s.split.rho = cfg_.mask_rho;
      for (int k = 0; k < cfg_.mask_k; ++k) {
        auto theta = io::toPattern(detail::need(L_.mask(n, k, "theta"), "mask"));
        auto lambda = io::toMask(detail::need(L_.mask(n, k, "lambda"), "mask"));
        s.split.pairs.push_back({std::move(theta), std::move(lambda)});
      }
      samples.push_back(std::move(s));
    }
    return samples;
  }

  void train()
  {
    auto const samples = trainingSamples();
    auto init = init_params(cfg_.network, cfg_.subSeed("network"), cfg_.unroll.mu_init, cfg_.unroll.mu_learnable, cfg_.init_scale);
    auto tcfg = cfg_.training;
    tcfg.seed = cfg_.subSeed("shuffle");
    auto hook = [&](int epoch, NetworkParams const &p, bool) {
      if (epoch % tcfg.checkpoint_every == 0) {
        io::write(L_.train("checkpoint_epoch" + std::to_string(epoch)), io::fromParams(p, detail::stamp(cfg_, "train", {{"epoch", epoch}})));
      }
    };
    log_ << "train: " << count_params(init) << " trainable parameters, " << samples.size() << " samples x " << cfg_.mask_k
         << " masks, " << tcfg.epochs << " epochs\n";
    auto const res = smsr::train(samples, init, cfg_.unroll, tcfg, hook);
    io::write(L_.train("checkpoint_final"), io::fromParams(res.params, detail::stamp(cfg_, "train", {{"epoch", tcfg.epochs}})));
    json log = detail::stamp(cfg_, "train");
    log["trainable_parameters"] = count_params(res.params);
    log["final_mu"] = res.params.mu;
    log["best_loss"] = res.best_loss;
    log["epochs"] = json::array();
    for (auto const &h : res.history) { log["epochs"].push_back({{"epoch", h.epoch}, {"mean_loss", h.mean_loss}}); }
    detail::writeJson(L_.train("train_log.json"), log);
    log_ << "train: loss " << res.history.front().mean_loss << " -> " << res.history.back().mean_loss << ", mu " << res.params.mu << "\n";
  }

  void reconstruct()
  {
    auto const params = io::toParams(detail::need(L_.train("checkpoint_final"), "train"));
    auto const maps = CoilSensitivityMaps<double>(io::toComplex<4>(detail::need(L_.sim("coil_maps"), "simulate"), {"coil", "slice", "row", "col"}));
    auto const omegaAcq = io::toPattern(detail::need(L_.sim("omega_acquired"), "simulate"));
    auto const omegaTgt = io::toPattern(detail::need(L_.sim("omega_target"), "simulate"));
    auto const shifts = CaipiShiftSchedule::standard(cfg_.slices, cfg_.rows);
    auto const scene = detail::makeScene(cfg_);
    json metrics = detail::stamp(cfg_, "reconstruct");
    std::map<std::string, std::vector<double>> nmseAll;
    for (int run = 0; run < 2; ++run) {
      auto const ks = io::toFrames<SmsKSpace<double>>(detail::need(L_.sim(std::string("kspace_") + kRuns[run]), "simulate"), {"coil", "row", "col"});
      auto const truth = simulate_fmri_series(scene.phantom, detail::runSpec(cfg_, scene, run)).frames;
      std::vector<SmsKSpace<double>> target;
      for (auto const &y : ks) { target.push_back(restrict_kspace(y, omegaTgt)); }
      for (auto const &kind : reconKinds()) {
        std::vector<SliceStack<double>> rec;
        std::string const id = kind.id;
        if (id == "dl_target") {
          rec = reconstruct_series(target, maps, omegaTgt, shifts, params, cfg_.unroll);
        } else {
          auto const &src = id == "baseline_acq" ? ks : target;
          auto const &om = id == "baseline_acq" ? omegaAcq : omegaTgt;
          for (auto const &y : src) { rec.push_back(cg_sense_baseline(y, maps, om, shifts, cfg_.baseline_cg_iterations)); }
        }
        for (std::size_t t = 0; t < rec.size(); ++t) { nmseAll[id].push_back(nmse(rec[t], truth[t])); }
        auto const mag = magnitude_series(rec, cfg_.TR);
        io::write(L_.recon(id + "_" + kRuns[run] + "_magnitude"),
                  io::fromReal(mag.data, {"slice", "row", "col", "frame"}, detail::stamp(cfg_, "reconstruct", {{"tr", cfg_.TR}})));
        if (run == 0) { io::write(L_.recon(id + "_example"), io::fromComplex(rec[0].data, {"slice", "row", "col"}, detail::stamp(cfg_, "reconstruct"))); }
      }
      if (run == 0) { io::write(L_.recon("truth_example"), io::fromComplex(truth[0].data, {"slice", "row", "col"}, detail::stamp(cfg_, "reconstruct"))); }
    }
    for (auto const &kind : reconKinds()) {
      auto const &v = nmseAll[kind.id];
      metrics["nmse"][kind.id] = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    }
    detail::writeJson(L_.recon("recon_metrics.json"), metrics);
    log_ << "reconstruct: NMSE";
    for (auto const &kind : reconKinds()) { log_ << " " << kind.id << "=" << metrics["nmse"][kind.id].get<double>(); }
    log_ << "\n";
  }

  void analyze()
  {
    auto const roiTrue = io::toReal<std::uint8_t, 3>(detail::need(L_.sim("truth_roi"), "simulate"), {"slice", "row", "col"});
    auto const phaseTrue = io::toReal<double, 3>(detail::need(L_.sim("truth_phase"), "simulate"), {"slice", "row", "col"});
    auto const recon = detail::readJson(L_.recon("recon_metrics.json"));
    json metrics = detail::stamp(cfg_, "analyze");
    metrics["stim_freq"] = cfg_.stim_freq;
    metrics["true_roi_voxels"] = std::accumulate(roiTrue.flat().begin(), roiTrue.flat().end(), Index{0});
    for (auto const &kind : reconKinds()) {
      std::string const id = kind.id;
      TimeSeriesVolume runs[2];
      for (int run = 0; run < 2; ++run) {
        runs[run].data = io::toReal<double, 4>(detail::need(L_.recon(id + "_" + kRuns[run] + "_magnitude"), "reconstruct"),
                                               {"slice", "row", "col", "frame"});
        runs[run].TR = cfg_.TR;
      }
      auto const res = analyze_runs(runs[0], runs[1], detail::zeroMotion(cfg_.n_frames), detail::zeroMotion(cfg_.n_frames), cfg_.analysis);
      auto const mTrue = roi_metrics(res.map.phase, phaseTrue, res.tsnr, roiTrue);
      auto const mCoh = roi_metrics(res.map.phase, phaseTrue, res.tsnr, res.roi);
      Index hit = 0;
      for (Index v = 0; v < roiTrue.size(); ++v) { hit += roiTrue[v] && res.roi[v]; }
      json e;
      e["label"] = kind.label;
      e["nmse"] = recon["nmse"][id];
      e["roi_true"] = detail::roiJson(mTrue);
      e["roi_coherence"] = detail::roiJson(mCoh);
      e["roi_recall"] = mTrue.voxel_count ? static_cast<double>(hit) / static_cast<double>(mTrue.voxel_count) : 0.0;
      if (mCoh.voxel_count == 0) { e["warning"] = "empty coherence ROI"; }
      metrics["reconstructions"][id] = e;
      auto const meta = detail::stamp(cfg_, "analyze");
      io::write(L_.analysis(id + "_tsnr"), io::fromReal(res.tsnr, {"slice", "row", "col"}, meta));
      io::write(L_.analysis(id + "_phase"), io::fromReal(res.map.phase, {"slice", "row", "col"}, meta));
      io::write(L_.analysis(id + "_amplitude"), io::fromReal(res.map.amplitude, {"slice", "row", "col"}, meta));
      io::write(L_.analysis(id + "_coherence"), io::fromReal(res.map.coherence, {"slice", "row", "col"}, meta));
      io::write(L_.analysis(id + "_roi"), io::fromReal(res.roi, {"slice", "row", "col"}, meta));
    }
    detail::writeJson(L_.analysis("metrics.json"), metrics);
    log_ << "analyze: ROI tSNR";
    for (auto const &kind : reconKinds()) {
      log_ << " " << kind.id << "=" << metrics["reconstructions"][kind.id]["roi_true"]["tsnr_mean"].get<double>();
    }
    log_ << "\n";
  }

  void report()
  {
    auto const metrics = detail::readJson(L_.analysis("metrics.json"));
    std::vector<report::Panel> panels;
    for (auto const &kind : reconKinds()) {
      std::string const id = kind.id;
      report::Panel p;
      p.id = id;
      p.label = kind.label;
      p.tsnr = io::toReal<double, 3>(detail::need(L_.analysis(id + "_tsnr"), "analyze"), {"slice", "row", "col"});
      p.phase = io::toReal<double, 3>(detail::need(L_.analysis(id + "_phase"), "analyze"), {"slice", "row", "col"});
      p.coherence = io::toReal<double, 3>(detail::need(L_.analysis(id + "_coherence"), "analyze"), {"slice", "row", "col"});
      p.example = io::toComplex<3>(detail::need(L_.recon(id + "_example"), "reconstruct"), {"slice", "row", "col"});
      panels.push_back(std::move(p));
    }
    auto const truth = io::toComplex<3>(detail::need(L_.recon("truth_example"), "reconstruct"), {"slice", "row", "col"});
    report::RenderOptions opt;
    opt.coherence_threshold = cfg_.analysis.roi_threshold;
    auto const summary = report::render(metrics, panels, truth, L_.root() / "report", opt);
    log_ << "report: " << summary["files"].size() << " files in " << (L_.root() / "report").string() << "\n";
  }

private:
  RunConfig cfg_;
  Layout L_;
  std::ostream &log_;
};

struct PipelineOutcome
{
  int exit_code = 0;
  std::string message;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitMissingDependency = 2;
inline constexpr int kExitValidation = 3;

/// Run the requested stages in order. Exit codes: 0 success, 2 missing dependency, 3 validation
/// failure, 1 anything else.
inline PipelineOutcome run_pipeline(RunConfig const &cfg, std::vector<Stage> const &stages, fs::path const &out,
                                    std::ostream &log = std::cerr)
{
  try {
    cfg.validate();
    fs::create_directories(out);
    detail::writeJson(out / "config.json", json{{"config", cfg.toJson()}, {"config_hash", cfg.hash()}});
    Runner r(cfg, out, log);
    for (auto s : stages) {
      switch (s) {
      case Stage::Simulate: r.simulate(); break;
      case Stage::Mask: r.mask(); break;
      case Stage::Train: r.train(); break;
      case Stage::Reconstruct: r.reconstruct(); break;
      case Stage::Analyze: r.analyze(); break;
      case Stage::Report: r.report(); break;
      }
    }
  } catch (MissingDependency const &e) {
    return {kExitMissingDependency, e.what()};
  } catch (ConfigError const &e) {
    return {kExitValidation, e.what()};
  } catch (ParameterError const &e) {
    return {kExitValidation, e.what()};
  } catch (ContractViolation const &e) {
    return {kExitValidation, e.what()};
  } catch (std::exception const &e) {
    return {kExitFailure, e.what()};
  }
  return {kExitOk, "ok"};
}

} // namespace smsr::pipeline
