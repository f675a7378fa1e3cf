#include <gtest/gtest.h>

#include "uniforce/experiments.hpp"

using namespace uniforce;

TEST(TrackEval, CsvIsReproducible) {
  TrackEvalOptions o;
  o.steps = 500;
  const std::string a = track_eval(3, o).to_csv(), b = track_eval(3, o).to_csv();
  EXPECT_EQ(a, b);
  EXPECT_NE(a, track_eval(4, o).to_csv());
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1 + 5);
}

TEST(TrackEval, SteadyStateWithinCentimetre) {
  TrackEvalOptions o;
  o.steps = 1000;
  const TrackEvalResult r = track_eval(5, o);
  ASSERT_EQ(r.windows.size(), 10u);
  EXPECT_EQ(r.fraction_within(0.01), 1.0);
  EXPECT_EQ(r.bins_csv(), track_eval(5, o).bins_csv());
}

TEST(ForceEval, CsvIsReproducible) {
  ForceEvalOptions o;
  o.levels = {10.0, 30.0};
  o.settle = 2.0;
  o.measure = 0.5;
  const ForceEvalResult a = force_eval(2, o);
  EXPECT_EQ(a.to_csv(), force_eval(2, o).to_csv());
  EXPECT_EQ(a.summary_csv(), force_eval(2, o).summary_csv());
  for (const auto& row : a.rows) EXPECT_LT(row.rel_error(), 0.05) << row.level << " N at point " << row.point;
}

TEST(Demos, EveryModeRunsAndIsReproducible) {
  for (const char* mode : kDemoModes) {
    const DemoResult a = run_demo(mode, 1), b = run_demo(mode, 1);
    EXPECT_EQ(a.log.to_csv(), b.log.to_csv()) << mode;
    EXPECT_EQ(a.metrics_csv(), b.metrics_csv()) << mode;
    EXPECT_TRUE(a.pass) << mode << "\n" << a.metrics_csv();
  }
  EXPECT_THROW(run_demo("juggle", 1), Error);
}
