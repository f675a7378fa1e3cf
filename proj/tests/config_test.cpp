#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdlib>
#include <fstream>

#include "uniforce/config.hpp"
#include "uniforce/manifest.hpp"

using namespace uniforce;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const nlohmann::json& patch) {
  try {
    config_from_json(patch);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "accepted " << patch.dump();
  return ErrorCode::InvalidArgument;
}

fs::path scratch_file(const std::string& name, const std::string& content) {
  const fs::path p = fs::temp_directory_path() / ("uniforce_cfg_" + std::to_string(::getpid()) + "_" + name);
  std::ofstream(p) << content;
  return p;
}

}  // namespace

TEST(Config, EmptyPatchGivesDefaults) {
  const RunConfig c = config_from_json(nlohmann::json::object());
  EXPECT_EQ(to_json(c), to_json(RunConfig{}));
  EXPECT_EQ(c.controller.impedance.K, 100.0);
  EXPECT_EQ(c.plant.dt, 0.02);
}

TEST(Config, OverlayApplies) {
  const RunConfig c = config_from_json(
      {{"controller", {{"K", 200.0}}}, {"track_eval", {{"steps", 300}}}, {"ablation", {{"tasks", {"latch"}}}}});
  EXPECT_EQ(c.controller.impedance.K, 200.0);
  EXPECT_EQ(c.controller.impedance.D, 75.0);
  EXPECT_EQ(c.track.steps, 300);
  EXPECT_EQ(c.track.controller.impedance.K, 200.0);
  ASSERT_EQ(c.ablation.tasks.size(), 1u);
  EXPECT_EQ(c.ablation.tasks[0], TaskKind::PushLatch);
  // integers are accepted where reals are expected, not the other way round
  EXPECT_EQ(config_from_json({{"controller", {{"K", 150}}}}).controller.impedance.K, 150.0);
  EXPECT_EQ(code_of({{"track_eval", {{"steps", 3.5}}}}), ErrorCode::ConfigError);
}

TEST(Config, UnknownKeyRejected) {
  EXPECT_EQ(code_of({{"controllr", {{"K", 1.0}}}}), ErrorCode::ConfigError);
  EXPECT_EQ(code_of({{"controller", {{"stiffness", 1.0}}}}), ErrorCode::ConfigError);
}

TEST(Config, WrongTypeRejected) {
  EXPECT_EQ(code_of({{"controller", {{"K", "stiff"}}}}), ErrorCode::ConfigError);
  EXPECT_EQ(code_of({{"controller", 3}}), ErrorCode::ConfigError);
  EXPECT_EQ(code_of({{"ablation", {{"tasks", {"juggle"}}}}}), ErrorCode::ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_EQ(code_of({{"controller", {{"K", -1.0}}}}), ErrorCode::ConfigError);
  EXPECT_EQ(code_of({{"plant", {{"dt", 0.0}}}}), ErrorCode::ConfigError);
  EXPECT_EQ(code_of({{"ablation", {{"trials", 0}}}}), ErrorCode::ConfigError);
}

TEST(Config, LoadFromFile) {
  const fs::path p = scratch_file("a.json", R"({"force_eval": {"levels": [5.0, 15.0]}})");
  EXPECT_EQ(load_config(p).force.levels, (std::vector<double>{5.0, 15.0}));
  fs::remove(p);
  const fs::path bad = scratch_file("b.json", "{not json");
  try {
    load_config(bad);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
  fs::remove(bad);
  EXPECT_THROW(load_config("/nonexistent/uniforce.json"), Error);
}

TEST(Manifest, RoundTripAndRerun) {
  const fs::path dir = fs::temp_directory_path() / ("uniforce_manifest_" + std::to_string(::getpid()));
  RunConfig c;
  c.controller.impedance.K = 180.0;
  RunRecorder run("track-eval", {"uniforce", "track-eval", "--seed", "4"}, to_json(c), 4, dir);
  run.write("out.csv", "a\n1\n");
  const fs::path mpath = run.finish();
  const RunManifest m = manifest_from_json(nlohmann::json::parse(read_file(mpath)));
  EXPECT_EQ(m.subcommand, "track-eval");
  EXPECT_EQ(m.seed, 4u);
  EXPECT_EQ(m.outputs, (std::vector<std::string>{"out.csv"}));
  EXPECT_EQ(m.version, kBuildVersion);
  EXPECT_GE(m.wall_clock_s, 0.0);
  // a manifest is itself a valid config file
  EXPECT_EQ(load_config(mpath).controller.impedance.K, 180.0);
  EXPECT_THROW(manifest_from_json({{"subcommand", "x"}}), Error);
  fs::remove_all(dir);
}

TEST(OutputDir, FlagThenEnvironmentThenFallback) {
  ::unsetenv(kOutDirEnv);
  EXPECT_EQ(output_dir("", "fb"), fs::path("fb"));
  ::setenv(kOutDirEnv, "/tmp/env_out", 1);
  EXPECT_EQ(output_dir("", "fb"), fs::path("/tmp/env_out"));
  EXPECT_EQ(output_dir("flag", "fb"), fs::path("flag"));
  ::setenv(kOutDirEnv, "", 1);
  EXPECT_EQ(output_dir("", "fb"), fs::path("fb"));
  ::unsetenv(kOutDirEnv);
}
