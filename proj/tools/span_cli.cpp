// Command-line front end: fit, train, predict, simulate, baseline, evaluate.
//
// Exit codes: 0 success, 2 usage error, 3 runtime failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "span/crowd_sim.hpp"
#include "span/episode_log.hpp"
#include "span/errors.hpp"
#include "span/predictor.hpp"
#include "span/scenario.hpp"
#include "span/sp_trajectory.hpp"

namespace fs = std::filesystem;
using namespace span;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 3;

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

/// "x0,y0;x1,y1;..." oldest first.
std::vector<Vec2> parse_window(const std::string& text) {
  std::vector<Vec2> out;
  std::stringstream ss(text);
  std::string pair;
  while (std::getline(ss, pair, ';')) {
    const auto comma = pair.find(',');
    if (comma == std::string::npos) throw CLI::ValidationError("--window", "expected x,y pairs");
    try {
      out.emplace_back(std::stod(pair.substr(0, comma)), std::stod(pair.substr(comma + 1)));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--window", "bad number in '" + pair + "'");
    }
  }
  return out;
}

std::vector<Track> to_tracks(const std::vector<ReplayTrack>& replay) {
  std::vector<Track> out;
  for (const auto& r : replay) out.push_back(r.points);
  return out;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string track;
  int m = 8;
  double gamma = 0.01;
  double lambda = 1e-4;
  double horizon = 4.0;
};

void run_fit(const FitArgs& a) {
  const BasisSpec basis = BasisSpec::evenly_spaced(a.m, a.horizon, a.gamma);
  std::cout << "agent_id,basis_index,center_s,w_x,w_y,points,rms_residual_m\n";
  for (const auto& track : load_replay_csv(a.track)) {
    std::vector<TimedPoint> pts;
    // Same frame as training targets: time and position from the first sample.
    const TimedPoint origin = track.points.front();
    for (const auto& p : track.points) {
      if (p.t - origin.t <= a.horizon + 1e-9) pts.push_back({p.t - origin.t, p.p - origin.p});
    }
    const WeightMatrix W = fit_weights(pts, basis, a.lambda);
    double sq = 0.0;
    for (const auto& p : pts) sq += (evaluate(W, basis, p.t) - p.p).squaredNorm();
    const double rms = std::sqrt(sq / static_cast<double>(pts.size()));
    for (int i = 0; i < a.m; ++i) {
      std::cout << track.id << ',' << i << ',' << format_double(basis.centers()(i)) << ','
                << format_double(W(i, 0)) << ',' << format_double(W(i, 1)) << ',' << pts.size()
                << ',' << format_double(rms) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string corpus;
  int synthetic = 0;
  std::string out;
  std::string loss_csv;
  std::uint64_t seed = 7;
  int epochs = 200;
  double lr = 1e-3;
  double momentum = 0.9;
  int batch = 64;
  double max_grad_norm = 10.0;
  int m = 8;
  double gamma = 0.01;
  int observations = 5;
  double dt = 0.1;
  double horizon = 4.0;
  double lambda = 1e-4;
  std::vector<int> hidden{100, 100, 100};
  std::string activation = "tanh";
  double train_fraction = 0.8;
  bool no_whitening = false;
};

void run_train(const TrainArgs& a) {
  std::mt19937_64 rng(a.seed);
  std::vector<Track> tracks;
  if (a.synthetic > 0) {
    SyntheticTrackConfig sc;
    sc.count = a.synthetic;
    sc.dt = a.dt;
    tracks = synthetic_tracks(sc, rng);
  } else {
    tracks = to_tracks(load_replay_csv(a.corpus));
  }
  const TrackSplit split = split_tracks(tracks, a.train_fraction, rng);
  const BasisSpec basis = BasisSpec::evenly_spaced(a.m, a.horizon, a.gamma);
  const DatasetConfig dc{a.dt, a.observations, a.horizon, a.lambda};
  const Dataset train_set = build_dataset(split.train, basis, dc);
  if (train_set.pairs.empty()) throw std::runtime_error("no training windows (tracks too short?)");
  std::cerr << "training windows: " << train_set.pairs.size()
            << " (skipped tracks: " << train_set.skipped_tracks << ")\n";

  PredictorModel model(a.observations, a.dt, basis, a.hidden,
                       a.activation == "relu" ? Activation::relu : Activation::tanh, rng);
  if (!a.no_whitening) model.set_output_frame(whitening_frame(basis, dc));
  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.momentum = a.momentum;
  tc.batch_size = a.batch;
  tc.epochs = a.epochs;
  tc.max_grad_norm = a.max_grad_norm;
  const TrainResult result = train(model, train_set.pairs, tc, rng);
  save_model(result.model, a.out);

  if (!a.loss_csv.empty()) {
    auto out = open_out(a.loss_csv);
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
      out << e + 1 << ',' << format_double(result.loss_curve[e]) << '\n';
    }
  }

  // Held-out displacement error at the horizon against persistence.
  const int H = static_cast<int>(std::lround(a.horizon / a.dt));
  double model_err = 0.0;
  double persist_err = 0.0;
  long windows = 0;
  for (const auto& track : split.test) {
    const std::vector<Vec2> s = resample(track, a.dt);
    for (std::size_t i = 0; i + a.observations + H <= s.size(); ++i) {
      const std::vector<Vec2> w(s.begin() + static_cast<long>(i),
                                s.begin() + static_cast<long>(i) + a.observations);
      const Vec2 truth = s[i + a.observations - 1 + static_cast<std::size_t>(H)];
      model_err += (predict(result.model, w).at(a.horizon).mean - truth).norm();
      persist_err += (w.back() - truth).norm();
      ++windows;
    }
  }
  if (windows > 0) {
    std::cout << "held_out_windows," << windows << "\nmodel_error_m,"
              << format_double(model_err / windows) << "\npersistence_error_m,"
              << format_double(persist_err / windows) << '\n';
  }
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string model;
  std::string window;
  int samples = 3;
  std::uint64_t seed = 0;
  double horizon = 4.0;
};

void run_predict(const PredictArgs& a) {
  const PredictorModel model = load_model(a.model);
  const std::vector<Vec2> window = parse_window(a.window);
  if (static_cast<int>(window.size()) != model.observations()) {
    throw CLI::ValidationError("--window", "needs exactly " +
                                               std::to_string(model.observations()) + " points");
  }
  const PedestrianPrediction pred = predict(model, window);
  const int steps = static_cast<int>(std::lround(a.horizon / model.dt()));
  // Printed times are rounded to 1e-9 s, as in episode logs.
  auto time_at = [&](int k) { return std::round(k * model.dt() * 1e9) / 1e9; };
  std::cout << "kind,sample,t,x,y,cov_xx,cov_xy,cov_yy\n";
  for (int k = 1; k <= steps; ++k) {
    const double t = time_at(k);
    const PointMoments pm = pred.at(t);
    std::cout << "mean,," << format_double(t) << ',' << format_double(pm.mean.x()) << ','
              << format_double(pm.mean.y()) << ',' << format_double(pm.cov(0, 0)) << ','
              << format_double(pm.cov(0, 1)) << ',' << format_double(pm.cov(1, 1)) << '\n';
  }
  std::mt19937_64 rng(a.seed);
  for (int s = 0; s < a.samples; ++s) {
    const WeightMatrix W = sample_weights(pred.params, rng);
    for (int k = 1; k <= steps; ++k) {
      const double t = time_at(k);
      const Vec2 p = evaluate(W, pred.basis, t) + pred.anchor;
      std::cout << "sample," << s << ',' << format_double(t) << ',' << format_double(p.x()) << ','
                << format_double(p.y()) << ",,,\n";
    }
  }
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string scenario;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir = ".";
  bool plot = false;
  bool timing = false;
  std::string planner = "reactive";
};

void run_simulate(const SimulateArgs& a, PlannerMode mode) {
  Scenario sc = load_scenario(a.scenario);
  if (a.seed_given) sc.seed = a.seed;
  const EpisodeLog log = simulate(sc, mode, a.timing);
  const fs::path dir(a.out_dir);
  {
    auto out = open_out(dir / "episode_log.csv");
    write_log(log, out);
  }
  const std::unique_ptr<OccupancyGrid> map =
      sc.map ? std::make_unique<OccupancyGrid>(load_grid(
                   fs::path(sc.map->file).is_absolute() ? fs::path(sc.map->file)
                                                        : sc.base_dir / sc.map->file,
                   std::nullopt, sc.map->geometry))
             : nullptr;
  const std::string metrics = metrics_json(compute_metrics(log, map.get()));
  {
    auto out = open_out(dir / "metrics.json");
    out << metrics;
  }
  if (a.plot) {
    auto out = open_out(dir / "plot.csv");
    write_plot_csv(log, out);
  }
  std::cout << metrics;
}

struct EvaluateArgs {
  std::string log;
  std::string map;
  std::string out;
};

void run_evaluate(const EvaluateArgs& a) {
  std::ifstream in(a.log, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + a.log);
  const EpisodeLog log = parse_log(in);
  std::unique_ptr<OccupancyGrid> map;
  if (!a.map.empty()) map = std::make_unique<OccupancyGrid>(load_grid(a.map));
  const std::string metrics = metrics_json(compute_metrics(log, map.get()));
  if (!a.out.empty()) {
    auto out = open_out(a.out);
    out << metrics;
  }
  std::cout << metrics;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pedestrian-aware unicycle navigation toolkit"};
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit basis weights to the first horizon of each track, relative to its first sample");
  fit_cmd->add_option("--track", fit.track, "CSV (t,agent_id,x,y) file or directory")
      ->required()
      ->check(CLI::ExistingPath);
  fit_cmd->add_option("--m", fit.m, "Basis size")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--gamma", fit.gamma, "Basis width coefficient (1/s^2)")
      ->check(CLI::PositiveNumber);
  fit_cmd->add_option("--lambda", fit.lambda, "Ridge weight")->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--horizon", fit.horizon, "Seconds fitted from each track start")
      ->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the trajectory predictor");
  auto* corpus_opt = train_cmd->add_option("--corpus", tr.corpus, "CSV corpus file or directory")
                         ->check(CLI::ExistingPath);
  auto* synth_opt = train_cmd->add_option("--synthetic", tr.synthetic,
                                          "Generate this many constant-velocity tracks instead")
                        ->check(CLI::PositiveNumber);
  corpus_opt->excludes(synth_opt);
  train_cmd->add_option("--out", tr.out, "Model file to write")->required();
  train_cmd->add_option("--loss-csv", tr.loss_csv, "Per-epoch loss curve CSV");
  train_cmd->add_option("--seed", tr.seed, "Random seed");
  train_cmd->add_option("--epochs", tr.epochs, "Passes over the training windows")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--lr", tr.lr, "Learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--momentum", tr.momentum, "Momentum coefficient")->check(CLI::Range(0.0, 0.999999));
  train_cmd->add_option("--batch", tr.batch, "Mini-batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--max-grad-norm", tr.max_grad_norm, "0 disables clipping")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--m", tr.m, "Basis size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--gamma", tr.gamma, "Basis width coefficient (1/s^2)")->check(CLI::PositiveNumber);
  train_cmd->add_option("--observations", tr.observations, "Window length in samples")->check(CLI::PositiveNumber);
  train_cmd->add_option("--dt", tr.dt, "Observation spacing (s)")->check(CLI::PositiveNumber);
  train_cmd->add_option("--horizon", tr.horizon, "Predicted future (s)")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lambda", tr.lambda, "Ridge weight for target fits")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--hidden", tr.hidden, "Hidden layer widths")->delimiter(',');
  train_cmd->add_option("--activation", tr.activation, "Hidden activation")
      ->check(CLI::IsMember({"tanh", "relu"}));
  train_cmd->add_option("--train-fraction", tr.train_fraction, "Share of tracks used for training")->check(CLI::Range(0.0, 1.0));
  train_cmd->add_flag("--no-whitening", tr.no_whitening,
                      "Emit distributions directly over basis weights");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Predict from an observation window");
  predict_cmd->add_option("--model", pr.model, "Model file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--window", pr.window, "x0,y0;x1,y1;... oldest first")->required();
  predict_cmd->add_option("--samples", pr.samples, "Sampled trajectories")->check(CLI::NonNegativeNumber);
  predict_cmd->add_option("--seed", pr.seed, "Sampling seed");
  predict_cmd->add_option("--horizon", pr.horizon, "Predicted future (s)")->check(CLI::PositiveNumber);

  SimulateArgs sim;
  auto add_sim_options = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", sim.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", sim.seed, "Override the scenario seed");
    cmd->add_option("--out-dir", sim.out_dir, "Directory for episode_log.csv, metrics.json");
    cmd->add_flag("--plot", sim.plot, "Also write plot.csv");
    cmd->add_flag("--timing", sim.timing,
                  "Record iteration wall times (makes outputs run-dependent)");
  };
  auto* simulate_cmd = app.add_subcommand("simulate", "Run the predictive controller");
  add_sim_options(simulate_cmd);
  auto* baseline_cmd = app.add_subcommand("baseline", "Run a baseline controller");
  add_sim_options(baseline_cmd);
  baseline_cmd->add_option("--planner", sim.planner, "Baseline to run (default reactive)")->check(CLI::IsMember({"reactive"}));

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Metrics for a saved episode log");
  evaluate_cmd->add_option("--log", ev.log, "Episode log CSV")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--map", ev.map, "Map for recomputing wall contact")
      ->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--out", ev.out, "Also write the JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }
  for (auto* cmd : {simulate_cmd, baseline_cmd}) {
    if (cmd->parsed()) sim.seed_given = cmd->count("--seed") > 0;
  }
  if (train_cmd->parsed() && tr.corpus.empty() && tr.synthetic == 0) {
    std::cerr << "train: give --corpus or --synthetic\n";
    return kUsageError;
  }

  try {
    if (fit_cmd->parsed()) run_fit(fit);
    if (train_cmd->parsed()) run_train(tr);
    if (predict_cmd->parsed()) run_predict(pr);
    if (simulate_cmd->parsed()) run_simulate(sim, PlannerMode::predictive);
    if (baseline_cmd->parsed()) run_simulate(sim, PlannerMode::reactive);
    if (evaluate_cmd->parsed()) run_evaluate(ev);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
