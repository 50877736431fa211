#include <gtest/gtest.h>

#include <limits>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "semprint/error.hpp"
#include "semprint/rng.hpp"

namespace semprint {
namespace {

TEST(Rng, PureFunctionOfCounters) {
  const CounterRng a(42), b(42), c(43);
  EXPECT_EQ(a.bits(1, 2, 3), b.bits(1, 2, 3));
  EXPECT_NE(a.bits(1, 2, 3), c.bits(1, 2, 3));
  EXPECT_NE(a.bits(1, 2, 3), a.bits(1, 2, 4));
  EXPECT_NE(a.bits(1, 2, 3), a.bits(2, 2, 3));
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = a.normal(5, 0, i);
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.03);
  EXPECT_NEAR(sq / n, 1.0, 0.04);
}

TEST(Actuator, DeterministicGainAndDrift) {
  const ActuatorModel noiseless{0.85, 0.01, 0.0, 1};
  EXPECT_DOUBLE_EQ(actuate(noiseless, 1e5, 3, 7), 1e5 * 0.85 * 1.03);
  const ActuatorModel noisy{0.85, 0.0, 0.05, 1};
  EXPECT_EQ(actuate(noisy, 1e5, 2, 7), actuate(noisy, 1e5, 2, 7));
  EXPECT_NE(actuate(noisy, 1e5, 2, 7), actuate(noisy, 1e5, 2, 8));
}

TEST(Estimator, ConjugateUpdate) {
  auto est = EstimatorState::from_commanded({100.0}, 0.2);
  EXPECT_DOUBLE_EQ(est.mean[0], std::log(100.0));
  EXPECT_DOUBLE_EQ(est.variance[0], 0.04);
  est.update(0, std::log(90.0), 0.2);
  EXPECT_NEAR(est.mean[0], 0.5 * (std::log(100.0) + std::log(90.0)), 1e-14);
  EXPECT_NEAR(est.variance[0], 0.02, 1e-15);
  est.update(0, std::log(80.0), 0.0);
  EXPECT_DOUBLE_EQ(est.mean[0], std::log(80.0));
  EXPECT_EQ(est.variance[0], 0.0);
  est.reset(0, 120.0);
  EXPECT_DOUBLE_EQ(est.mean[0], std::log(120.0));
  EXPECT_EQ(est.measurements[0], 0);
}

TEST(Estimator, PosteriorCoversTruth) { EXPECT_GE(testing::estimator_coverage(200), 0.99); }

TEST(PrintLoop, LayersAdvanceAndCompletionIsAnError) {
  const auto mesh = testing::loop_mesh();
  const auto part = layer_partition(mesh, 1.0);
  const MaterialField cmd(mesh.element_count(), {1e5, 0.0, 1.0, 1e-6}, Provenance::commanded);
  PrintState s = initial_print_state(part, Parameter::young, cmd);
  EXPECT_THROW(observe_and_update(s, {}, EstimatorState::from_commanded(std::vector<double>(24, 1e5), 0.2)),
               Error);
  const ActuatorModel act{0.9, 0.0, 0.0, 0};
  for (int l = 0; l < 4; ++l) s = print_layer(s, act);
  EXPECT_EQ(s.frontier, 4);
  for (int e = 0; e < mesh.element_count(); ++e) {
    EXPECT_DOUBLE_EQ(s.achieved.values[e].young, 0.9e5);
    EXPECT_EQ(s.achieved.provenance[e], Provenance::achieved);
  }
  try {
    print_layer(s, act);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::print_complete);
  }
}

TEST(Calibration, RecoversNoiselessGainAndDrift) {
  const ActuatorModel truth{0.85, 0.012, 0.0, 3};
  const auto fit = calibrate_actuator(testing::calibration_records(truth));
  EXPECT_NEAR(fit.gain, truth.gain, 1e-9);
  EXPECT_NEAR(fit.drift_rate, truth.drift_rate, 1e-9);
  EXPECT_NEAR(fit.noise_sd, 0.0, 1e-9);
}

TEST(Calibration, NoisyFitIsUsuallyClose) {
  int close = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const ActuatorModel truth{0.85, 0.01, 0.02, seed};
    const auto fit = calibrate_actuator(testing::calibration_records(truth));
    close += std::abs(fit.gain - truth.gain) <= 0.02 * truth.gain;
  }
  EXPECT_GE(close, 190);
}

TEST(Calibration, NeedsTwoRecords) {
  try {
    calibrate_actuator({{1.0, 1.0, 0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_data);
  }
}

struct LoopSetup {
  ProblemTemplate tmpl;
  LayerPartition partition;
  ControlPolicy policy;
  OptimizationResult plan;
};

LoopSetup loop_setup() {
  LoopSetup s;
  const auto mesh = testing::loop_mesh();
  s.tmpl.spec = testing::bind_spec(mesh, testing::loop_annotation());
  s.partition = layer_partition(mesh, 1.0);
  s.plan = plan_print(s.tmpl, s.partition, s.policy);
  return s;
}

TEST(Control, DecisionsNeverReadAchievedValues) {
  const auto s = loop_setup();
  ASSERT_TRUE(s.plan.feasible);
  MaterialField cmd = nominal_field(*s.tmpl.spec);
  for (int e = 0; e < cmd.size(); ++e) cmd.values[e].young = s.plan.values[e];
  PrintState state = initial_print_state(s.partition, Parameter::young, cmd);
  state = print_layer(state, {0.85, 0.0, 0.02, 1});
  auto est = EstimatorState::from_commanded(std::vector<double>(cmd.size(), 1.75e5), 0.2);
  est = observe_and_update(state, {0.01, SensorCoverage::newest_layer, 1}, est);

  const auto first = control_step(controller_view(state), s.tmpl, s.plan, s.policy);
  // Poison the ground truth; a decision that read it would change or turn NaN.
  for (auto& m : state.achieved.values) m.young = std::numeric_limits<double>::quiet_NaN();
  const auto second = control_step(controller_view(state), s.tmpl, s.plan, s.policy);
  EXPECT_EQ(first.commanded, second.commanded);
  EXPECT_EQ(first.record.objective, second.record.objective);
  EXPECT_EQ(first.abort.has_value(), second.abort.has_value());
}

TEST(Control, ClosedLoopBeatsOpenLoopAndIsDeterministic) {
  auto s = loop_setup();
  const ActuatorModel act{0.85, 0.0, 0.02, 0};
  const SensorModel sen{0.01, SensorCoverage::newest_layer, 0};
  const auto closed = run_print(s.tmpl, s.partition, s.plan, act, sen, s.policy, 42);
  EXPECT_EQ(closed.outcome, Outcome::success);
  EXPECT_EQ(closed.layers_printed, 4);
  const auto again = run_print(s.tmpl, s.partition, s.plan, act, sen, s.policy, 42);
  EXPECT_EQ(report_to_json(closed, Parameter::young, 42), report_to_json(again, Parameter::young, 42));

  s.policy.control_enabled = false;
  const auto open = run_print(s.tmpl, s.partition, s.plan, act, sen, s.policy, 42);
  EXPECT_EQ(open.outcome, Outcome::rejected);
  EXPECT_TRUE(open.history.empty());
}

TEST(Control, WarmAndFullPoliciesBothSucceed) {
  auto s = loop_setup();
  const ActuatorModel act{0.85, 0.0, 0.02, 0};
  const SensorModel sen{0.01, SensorCoverage::newest_layer, 0};
  const auto warm = run_print(s.tmpl, s.partition, s.plan, act, sen, s.policy, 7);
  s.policy.strategy = Strategy::full;
  const auto full = run_print(s.tmpl, s.partition, s.plan, act, sen, s.policy, 7);
  EXPECT_EQ(warm.outcome, Outcome::success);
  EXPECT_EQ(full.outcome, Outcome::success);
  EXPECT_LT(warm.fem_solves, full.fem_solves);
}

TEST(Control, UnreachableBoundAborts) {
  LoopSetup s;
  const auto mesh = testing::loop_mesh();
  // Reachable by the plan at full stiffness, but not once the actuator loses half of it.
  s.tmpl.spec = testing::bind_spec(mesh, testing::column_annotation(4.0, 5e4, 3e5, 100.0, 1.5e-3));
  s.partition = layer_partition(mesh, 1.0);
  s.plan = plan_print(s.tmpl, s.partition, s.policy);
  ASSERT_TRUE(s.plan.feasible);
  const auto r = run_print(s.tmpl, s.partition, s.plan, {0.5, 0.0, 0.0, 0}, {0.0, SensorCoverage::newest_layer, 0},
                           s.policy, 1);
  EXPECT_EQ(r.outcome, Outcome::aborted);
  ASSERT_TRUE(r.abort);
  EXPECT_EQ(r.abort->certificate, std::vector<std::string>{"tip"});
  EXPECT_LT(r.layers_printed, 4);
}

}  // namespace
}  // namespace semprint
