#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "uniforce/acceptance.hpp"
#include "uniforce/config.hpp"
#include "uniforce/manifest.hpp"
#include "uniforce/teleop.hpp"
#include "uniforce/ws_server.hpp"

#ifndef UNIFORCE_GOLDEN_EPISODE
#define UNIFORCE_GOLDEN_EPISODE "tests/data/golden.episode.jsonl"
#endif

namespace fs = std::filesystem;
using namespace uniforce;

namespace {

std::stop_source g_stop;

void on_signal(int) { g_stop.request_stop(); }

struct Common {
  std::uint64_t seed = 1;
  std::string config;
  std::string out;
};

struct Context {
  RunConfig cfg;
  std::vector<std::string> argv;
};

std::shared_ptr<const ForceEstimator> load_estimator(const std::string& path) {
  if (path.empty()) return nullptr;
  return std::make_shared<LearnedEstimator>(std::make_shared<RegressorModel>(load_model(path)));
}

std::vector<double> parse_levels(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "invalid force level '" + item + "'");
    }
  }
  if (out.empty()) throw Error(ErrorCode::ConfigError, "no force levels given");
  return out;
}

SceneSpec scene_preset(const std::string& name) {
  SceneSpec s;
  s.label = name;
  if (name == "free") return s;
  if (name == "wall") {
    s.env = Wall{};
    return s;
  }
  if (name == "payload") {
    s.env = Payload{};
    return s;
  }
  if (name == "latch") {
    s.env = SpringLatch{};
    return s;
  }
  throw Error(ErrorCode::ConfigError, "unknown scene '" + name + "' (free, wall, payload, latch)");
}

std::string seed_suffix(std::uint64_t seed) { return "_seed" + std::to_string(seed); }

int cmd_track_eval(const Common& c, const Context& ctx, int seeds, std::optional<int> steps, bool forces,
                   const std::string& model, bool assert_thresholds) {
  RunRecorder run("track-eval", ctx.argv, to_json(ctx.cfg), c.seed, output_dir(c.out));
  TrackEvalOptions o = ctx.cfg.track;
  if (steps) o.steps = *steps;
  if (o.steps <= 0) throw Error(ErrorCode::ConfigError, "--steps must be positive");
  o.probe = load_estimator(model);
  bool ok = true;
  for (int i = 0; i < seeds; ++i) {
    const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(i);
    const TrackEvalResult r = track_eval(seed, o);
    run.write("track_eval" + seed_suffix(seed) + ".csv", r.to_csv());
    run.write("track_eval_bins" + seed_suffix(seed) + ".csv", r.bins_csv());
    const double frac = r.fraction_within(0.01);
    std::cout << "seed " << seed << ": " << frac * 100.0 << "% of windows within 0.01 m\n";
    ok = ok && frac >= 0.95;
    if (forces) {
      TrackEvalOptions m = o;
      m.matched_forces = true;
      const TrackEvalResult rm = track_eval(seed, m);
      run.write("track_eval_matched" + seed_suffix(seed) + ".csv", rm.to_csv());
      run.write("track_eval_matched_bins" + seed_suffix(seed) + ".csv", rm.bins_csv());
      const double fm = rm.fraction_within(0.02);
      std::cout << "seed " << seed << " (matched forces): " << fm * 100.0 << "% of windows within 0.02 m\n";
      ok = ok && fm >= 0.90;
    }
  }
  std::cout << "manifest: " << run.finish().string() << '\n';
  return assert_thresholds && !ok ? 1 : 0;
}

int cmd_force_eval(const Common& c, const Context& ctx, const std::string& levels, const std::string& model,
                   bool assert_thresholds) {
  RunRecorder run("force-eval", ctx.argv, to_json(ctx.cfg), c.seed, output_dir(c.out));
  ForceEvalOptions o = ctx.cfg.force;
  if (!levels.empty()) o.levels = parse_levels(levels);
  o.probe = load_estimator(model);
  const ForceEvalResult r = force_eval(c.seed, o);
  run.write("force_eval" + seed_suffix(c.seed) + ".csv", r.to_csv());
  run.write("force_eval_summary" + seed_suffix(c.seed) + ".csv", r.summary_csv());
  std::cout << r.summary_csv();
  bool ok = true;
  for (const auto& row : r.rows) ok = ok && (row.level == 0.0 ? std::abs(row.achieved) < 0.5 : row.rel_error() < 0.05);
  std::cout << "manifest: " << run.finish().string() << '\n';
  return assert_thresholds && !ok ? 1 : 0;
}

int cmd_demo(const Common& c, const Context& ctx, const std::string& mode, const std::string& model,
             bool assert_pass) {
  RunRecorder run("demo-mode", ctx.argv, to_json(ctx.cfg), c.seed, output_dir(c.out));
  DemoOptions o;
  o.nominal = ctx.cfg.plant;
  o.controller = ctx.cfg.controller;
  o.control_estimator = load_estimator(model);
  const DemoResult r = run_demo(mode, c.seed, o);
  run.write("demo_" + mode + seed_suffix(c.seed) + ".csv", r.log.to_csv());
  run.write("demo_" + mode + "_metrics" + seed_suffix(c.seed) + ".csv", r.metrics_csv());
  std::cout << r.metrics_csv() << (r.pass ? "pass" : "FAIL") << '\n';
  std::cout << "manifest: " << run.finish().string() << '\n';
  return assert_pass && !r.pass ? 1 : 0;
}

int cmd_serve(const Common& c, const Context& ctx, const std::string& bind, std::optional<std::string> with_ui,
              const std::string& scene, const std::string& episode_dir, const std::string& model, double duration) {
  const fs::path out = output_dir(c.out);
  RunRecorder run("serve", ctx.argv, to_json(ctx.cfg), c.seed, out);
  ServerOptions so;
  so.bind = bind.empty() ? endpoint_from_env() : parse_endpoint(bind);
  if (with_ui) so.static_root = with_ui->empty() ? fs::path("ui/dist") : fs::path(*with_ui);
  LoopConfig lc;
  lc.nominal = ctx.cfg.plant;
  lc.controller = ctx.cfg.controller;
  lc.episode_dir = episode_dir.empty() ? out / "episodes" : fs::path(episode_dir);
  lc.estimator = load_estimator(model);
  fs::create_directories(lc.episode_dir);

  InboxQueue inbox;
  OutboxQueue outbox;
  ControlLoop loop(scene_preset(scene), c.seed, lc, outbox);
  WsServer server(so, inbox, outbox);
  server.start();
  std::cout << "serving on ws://" << so.bind.host << ':' << server.port() << '/';
  if (!so.static_root.empty()) std::cout << " (ui from " << so.static_root.string() << ')';
  std::cout << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto max_ticks = duration > 0.0 ? static_cast<std::uint64_t>(std::lround(duration / lc.nominal.dt)) : 0;
  const auto status = run_loop(loop, inbox, g_stop.get_token(), max_ticks);
  server.stop();
  std::cout << "manifest: " << run.finish().string() << '\n';
  return status == ControlLoop::Status::Aborted ? 1 : 0;
}

int cmd_record_expert(const Common& c, const Context& ctx, const std::string& task, int episodes, bool noise) {
  RunRecorder run("record-expert", ctx.argv, to_json(ctx.cfg), c.seed, output_dir(c.out));
  const TaskSpec spec = default_task(task_kind_from_string(task));
  ExecutionNoise n;
  if (!noise) n.position_sigma = n.force_sigma = 0.0;
  int ok = 0;
  for (int i = 0; i < episodes; ++i) {
    bool success = false;
    const auto rec = record_expert_episode(spec, c.seed + static_cast<std::uint64_t>(i), &success, n, kMaxRolloutSteps,
                                           ctx.cfg.plant, ctx.cfg.controller);
    fs::path path;
    save_episode(rec, run.out_dir(), &path);
    run.add_output(path);
    ok += success ? 1 : 0;
  }
  std::cout << task << ": " << ok << '/' << episodes << " expert episodes succeeded\n";
  std::cout << "manifest: " << run.finish().string() << '\n';
  return 0;
}

int cmd_train_estimator(const Common& c, const Context& ctx, std::optional<int> steps) {
  RunRecorder run("train-estimator", ctx.argv, to_json(ctx.cfg), c.seed, output_dir(c.out));
  EstimatorPipelineOptions o = ctx.cfg.estimator;
  if (steps) o.steps = *steps;
  const auto r = run_estimator_pipeline(c.seed, o);
  const auto model_path = run.out_dir() / ("estimator" + seed_suffix(c.seed) + ".ufnn");
  save_model(r.model, model_path.string());
  run.add_output(model_path);
  run.write("estimator_eval" + seed_suffix(c.seed) + ".csv", r.learned.to_csv());
  run.write("estimator_oracle_eval" + seed_suffix(c.seed) + ".csv", r.oracle.to_csv());
  std::cout << "learned: F_ee RMS " << r.learned.max_force_rms() << " N, x_ee RMS " << r.learned.max_position_rms()
            << " m; oracle F_ee RMS " << r.oracle.max_force_rms() << " N\n";
  std::cout << "manifest: " << run.finish().string() << '\n';
  return 0;
}

std::vector<EpisodeRecord> load_episodes(const fs::path& dir, const std::string& task,
                                         std::vector<std::string>* paths = nullptr) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > std::string(kEpisodeExtension).size() && name.ends_with(kEpisodeExtension) &&
        name.rfind(task + "-", 0) == 0)
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EpisodeRecord> out;
  for (const auto& f : files) {
    out.push_back(load_episode(f));
    if (paths) paths->push_back(f.string());
  }
  if (out.empty()) throw Error(ErrorCode::EmptyDataset, "no " + task + " episodes in " + dir.string());
  return out;
}

int cmd_train_bc(const Common& c, const Context& ctx, const std::string& task, const std::string& episodes_dir,
                 bool no_force, std::optional<int> steps) {
  RunRecorder run("train-bc", ctx.argv, to_json(ctx.cfg), c.seed, output_dir(c.out));
  std::vector<std::string> paths;
  const auto episodes = load_episodes(episodes_dir, task, &paths);
  TrainOptions t;
  t.steps = steps.value_or(ctx.cfg.ablation.steps);
  t.batch = ctx.cfg.ablation.batch;
  t.lr = ctx.cfg.ablation.lr;
  t.seed = c.seed;
  const BCDataset d = build_dataset(episodes, !no_force);
  const BCTrainResult r = train_bc(d, t);
  const std::string stem = "bc_" + task + (no_force ? "_position" : "_force") + seed_suffix(c.seed);
  const auto path = run.out_dir() / (stem + ".ufnn");
  save_model(r.policy.model, path.string());
  run.add_output(path);
  run.write(stem + ".dataset.json", dataset_manifest(paths, d).dump(2) + "\n");
  std::ostringstream os;
  os << "episodes,dataset_hash,validation_rms,position_rms_m,force_rms_N\n"
     << episodes.size() << ',' << d.hash() << ',' << r.validation_rms << ',' << r.channel_rms[0] << ','
     << r.channel_rms[1] << '\n';
  run.write(stem + ".csv", os.str());
  std::cout << os.str();
  std::cout << "manifest: " << run.finish().string() << '\n';
  return 0;
}

int cmd_ablation(const Common& c, const Context& ctx) {
  RunRecorder run("ablation", ctx.argv, to_json(ctx.cfg), c.seed, output_dir(c.out));
  const AblationResult r = run_ablation(c.seed, ctx.cfg.ablation);
  run.write("ablation" + seed_suffix(c.seed) + ".csv", ablation_csv(r.rows()));
  const std::string summary = ablation_summary(r.rows());
  run.write("ablation" + seed_suffix(c.seed) + ".txt", summary);
  std::cout << summary;
  std::cout << "manifest: " << run.finish().string() << '\n';
  return 0;
}

int cmd_replay(const Common& c, const Context& ctx, const std::string& episode, const std::string& model,
               double tolerance) {
  RunRecorder run("replay", ctx.argv, to_json(ctx.cfg), c.seed, output_dir(c.out));
  const ReplayReport r = replay(load_episode(episode), load_estimator(model));
  std::ostringstream os;
  os << std::setprecision(9) << "episode,frames,max_deviation_m,worst_frame\n"
     << fs::path(episode).filename().string() << ',' << r.frames << ',' << r.max_deviation << ',' << r.worst_frame
     << '\n';
  run.write("replay.csv", os.str());
  std::cout << os.str() << (r.flagged(tolerance) ? "DEVIATION above tolerance" : "replay ok") << '\n';
  std::cout << "manifest: " << run.finish().string() << '\n';
  return r.flagged(tolerance) ? 1 : 0;
}

int cmd_acceptance(const Common& c, const Context& ctx, const std::vector<int>& only, const std::string& golden) {
  RunRecorder run("acceptance", ctx.argv, to_json(ctx.cfg), c.seed, output_dir(c.out));
  AcceptanceOptions o;
  o.seed = c.seed;
  o.golden_episode = golden;
  o.only.insert(only.begin(), only.end());
  o.on_result = [](const CriterionResult& r) { std::cout << r.line() << std::endl; };
  const auto results = run_acceptance(o);
  std::ostringstream os;
  os << "criterion,name,pass,seconds,detail\n";
  bool ok = true;
  for (const auto& r : results) {
    os << r.id << ',' << r.name << ',' << (r.pass ? 1 : 0) << ',' << r.seconds << ",\"" << r.detail << "\"\n";
    ok = ok && r.pass;
  }
  run.write("acceptance.csv", os.str());
  std::cout << "manifest: " << run.finish().string() << '\n';
  return ok ? 0 : 1;
}

int dispatch(int argc, char** argv);

int cmd_rerun(const std::string& manifest_path, const std::string& out) {
  const RunManifest m = manifest_from_json(nlohmann::json::parse(read_file(manifest_path)));
  std::vector<std::string> args;
  for (std::size_t i = 0; i < m.argv.size(); ++i) {
    if ((m.argv[i] == "--config" || m.argv[i] == "--out") && i + 1 < m.argv.size()) {
      ++i;
      continue;
    }
    if (m.argv[i].rfind("--config=", 0) == 0 || m.argv[i].rfind("--out=", 0) == 0) continue;
    args.push_back(m.argv[i]);
  }
  args.push_back("--config");
  args.push_back(manifest_path);
  if (!out.empty()) {
    args.push_back("--out");
    args.push_back(out);
  }
  std::vector<char*> ptrs;
  for (auto& a : args) ptrs.push_back(a.data());
  return dispatch(static_cast<int>(ptrs.size()), ptrs.data());
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Unified position/force control simulation, experiments and teleoperation"};
  app.require_subcommand(1);
  Common c;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", c.seed, "Base seed")->capture_default_str();
    sub->add_option("--config", c.config, "JSON config file (or a run manifest)");
    sub->add_option("--out", c.out, std::string("Output directory (env ") + kOutDirEnv + ", default .)");
  };

  int seeds = 1;
  std::optional<int> steps;
  bool forces = false, do_assert = false, no_force = false, no_noise = false;
  std::string model, levels, mode, bind, scene = "wall", episode_dir, task = "wipe", episode, golden, out_override;
  std::optional<std::string> with_ui;
  double duration = 0.0, tolerance = 1e-9;
  int episodes = 1;
  std::vector<int> only;

  auto* track = app.add_subcommand("track-eval", "Random position-command rollouts; per-axis error CSVs");
  common(track);
  track->add_option("--steps", steps, "Rollout length in ticks (default 6000)");
  track->add_option("--seeds", seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);
  track->add_flag("--forces", forces, "Also run with disturbances and matching force commands");
  track->add_option("--model", model, "Learned estimator scored in the estimation columns");
  track->add_flag("--assert", do_assert, "Exit nonzero when acceptance thresholds are violated");

  auto* force = app.add_subcommand("force-eval", "Commanded vs achieved force sweep against a wall");
  common(force);
  force->add_option("--levels", levels, "Comma-separated force levels in N (default 0,10,...,60)");
  force->add_option("--model", model, "Learned estimator scored in the estimation columns");
  force->add_flag("--assert", do_assert, "Exit nonzero when acceptance thresholds are violated");

  auto* demo = app.add_subcommand("demo-mode", "Scripted control-mode scenario; state log CSV");
  common(demo);
  demo->add_option("--mode", mode, "Scenario")
      ->required()
      ->check(CLI::IsMember(std::vector<std::string>(kDemoModes.begin(), kDemoModes.end())));
  demo->add_option("--model", model, "Learned estimator used by the controller (default oracle)");
  demo->add_flag("--assert", do_assert, "Exit nonzero when the scenario's pass condition fails");

  auto* serve = app.add_subcommand("serve", "Teleoperation service over WebSocket");
  common(serve);
  serve->add_option("--bind", bind, std::string("host:port (env ") + kBindEnv + ", default 127.0.0.1:8765)");
  serve->add_option("--with-ui", with_ui, "Serve static UI files from this directory (default ui/dist)")
      ->expected(0, 1);
  serve->add_option("--scene", scene, "Initial scene: free, wall, payload, latch")->capture_default_str();
  serve->add_option("--episode-dir", episode_dir, "Where recordings are saved (default <out>/episodes)");
  serve->add_option("--model", model, "Learned estimator used by the controller (default oracle)");
  serve->add_option("--duration", duration, "Stop after this many simulated seconds (0: until signalled)");

  auto* record = app.add_subcommand("record-expert", "Scripted-expert demonstrations as episode files");
  common(record);
  record->add_option("--task", task, "wipe, latch or latch-occluded")->capture_default_str();
  record->add_option("--episodes", episodes, "Episodes, seeds seed..seed+N-1")->check(CLI::PositiveNumber);
  record->add_flag("--no-noise", no_noise, "Record without execution noise");

  auto* train_est = app.add_subcommand("train-estimator", "Train and evaluate the learned force estimator");
  common(train_est);
  train_est->add_option("--steps", steps, "SGD steps (default from config)");

  auto* train_bc = app.add_subcommand("train-bc", "Behaviour cloning from recorded episodes");
  common(train_bc);
  train_bc->add_option("--task", task, "Task prefix of the episode files")->capture_default_str();
  train_bc->add_option("--episodes", episode_dir, "Directory with episode files")->required();
  train_bc->add_flag("--no-force", no_force, "Position-only policy");
  train_bc->add_option("--steps", steps, "SGD steps (default from config)");

  auto* ablation = app.add_subcommand("ablation", "Force-aware vs position-only BC on all tasks");
  common(ablation);

  auto* rep = app.add_subcommand("replay", "Re-simulate an episode and report the deviation");
  common(rep);
  rep->add_option("episode", episode, "Episode file")->required()->check(CLI::ExistingFile);
  rep->add_option("--model", model, "Estimator the episode was recorded with");
  rep->add_option("--tolerance", tolerance, "Maximum deviation in m")->capture_default_str();

  auto* acc = app.add_subcommand("acceptance", "Run the acceptance criteria");
  common(acc);
  acc->add_option("--only", only, "Criterion ids to run")->delimiter(',');
  golden = UNIFORCE_GOLDEN_EPISODE;
  acc->add_option("--golden", golden, "Golden episode for the replay criterion")->capture_default_str();

  std::string manifest;
  auto* rerun = app.add_subcommand("rerun", "Repeat a run from its manifest");
  rerun->add_option("manifest", manifest, "Manifest file")->required()->check(CLI::ExistingFile);
  rerun->add_option("--out", out_override, "Output directory for the rerun");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (rerun->parsed()) return cmd_rerun(manifest, out_override);

  Context ctx;
  for (int i = 1; i < argc; ++i) ctx.argv.emplace_back(argv[i]);
  if (!c.config.empty()) ctx.cfg = load_config(c.config);

  if (track->parsed()) return cmd_track_eval(c, ctx, seeds, steps, forces, model, do_assert);
  if (force->parsed()) return cmd_force_eval(c, ctx, levels, model, do_assert);
  if (demo->parsed()) return cmd_demo(c, ctx, mode, model, do_assert);
  if (serve->parsed()) return cmd_serve(c, ctx, bind, with_ui, scene, episode_dir, model, duration);
  if (record->parsed()) return cmd_record_expert(c, ctx, task, episodes, !no_noise);
  if (train_est->parsed()) return cmd_train_estimator(c, ctx, steps);
  if (train_bc->parsed()) return cmd_train_bc(c, ctx, task, episode_dir, no_force, steps);
  if (ablation->parsed()) return cmd_ablation(c, ctx);
  if (rep->parsed()) return cmd_replay(c, ctx, episode, model, tolerance);
  if (acc->parsed()) return cmd_acceptance(c, ctx, only, golden);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
    return e.code() == ErrorCode::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
