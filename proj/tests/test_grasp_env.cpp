#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>

#include "tactile/artifact.hpp"
#include "tactile/errors.hpp"
#include "tactile/grasp_env.hpp"
#include "tactile/log.hpp"

using namespace tactile;
using namespace tactile::grasp;

namespace {

sim::ModulePair baros(double b0, double b1) {
  sim::ModulePair m{};
  m[0].baro = b0;
  m[1].baro = b1;
  return m;
}

constexpr double kDeg = kPi / 180.0;

// Independent overlap oracle: slab intersection of the closing line through
// the tool point with the axis-aligned cuboid footprint, then pad overlaps.
std::array<double, 2> oracle_depths(const GraspConfig& c, double x) {
  const double yaw = std::atan2(c.object_y, x);
  const double ax = -std::sin(yaw), ay = std::cos(yaw);
  const double hx = 0.5 * c.object_size.x, hy = 0.5 * c.object_size.y;
  double lo = -1e9, hi = 1e9;
  auto slab = [&](double origin, double dir, double a, double b) {
    if (std::abs(dir) < 1e-15) {
      if (origin < a || origin > b) lo = 1e9;
      return;
    }
    double t0 = (a - origin) / dir, t1 = (b - origin) / dir;
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  };
  slab(x, ax, c.object_x - hx, c.object_x + hx);
  slab(c.object_y, ay, c.object_y - hy, c.object_y + hy);
  if (lo >= hi) return {0.0, 0.0};
  const double half = 0.5 * c.closed_gap, t = c.world.gripper.pad_thickness;
  auto ov = [](double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  };
  return {ov(-half - t, -half, lo, hi), ov(half, half + t, lo, hi)};
}

struct CaptureLog {
  std::vector<std::string> lines;
  log::Sink prev = log::set_sink([this](log::Level, const std::string& m) { lines.push_back(m); });
  ~CaptureLog() { log::set_sink(prev); }
};

}  // namespace

TEST_CASE("reward cases") {
  CHECK(compute_reward(baros(200, 200), {0, 0}, true, 50, 5 * kDeg).reward == 0.5);
  CHECK(compute_reward(baros(200, 200), {0, 0}, true, 50, 5 * kDeg).kind == RewardCase::Grasped);
  const auto one = compute_reward(baros(200, 15), {0, 0}, true, 50, 5 * kDeg);
  CHECK(one.reward == -0.1);
  CHECK(one.kind == RewardCase::OneSided);
  const auto none = compute_reward(baros(10, 10), {0, 0}, false, 50, 5 * kDeg);
  CHECK(none.reward == -0.1);
  CHECK(none.kind == RewardCase::NoContact);
  const auto hit = compute_reward(baros(200, 200), {6 * kDeg, 0}, true, 50, 5 * kDeg);
  CHECK(hit.reward == -0.1);
  CHECK(hit.kind == RewardCase::Collision);
  CHECK(compute_reward(baros(200, 200), {0, 0}, false, 50, 5 * kDeg).kind == RewardCase::Slipped);
  // Exactly at the threshold is not over it.
  CHECK(compute_reward(baros(50, 200), {0, 0}, true, 50, 5 * kDeg).kind == RewardCase::OneSided);
}

TEST_CASE("reward codomain is {-0.1, +0.5}") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> b(0, 400), t(0, 0.3);
  std::set<RewardCase> seen;
  for (int i = 0; i < 20000; ++i) {
    const auto r = compute_reward(baros(b(rng), b(rng)), {t(rng), t(rng)}, rng() % 2 == 0, 50, 5 * kDeg);
    CHECK((r.reward == -0.1 || r.reward == 0.5));
    CHECK((r.reward == 0.5) == (r.kind == RewardCase::Grasped));
    seen.insert(r.kind);
  }
  CHECK(seen.size() == 5);
}

TEST_CASE("every reward case is reachable from the environment") {
  GraspEnv env;
  std::set<RewardCase> seen;
  for (double x = -0.06; x <= 0.06; x += 0.001) seen.insert(env.attempt(x).outcome.kind);
  CHECK(seen.count(RewardCase::Grasped));
  CHECK(seen.count(RewardCase::OneSided));
  CHECK(seen.count(RewardCase::Collision));
  CHECK(seen.count(RewardCase::NoContact));
  // A pinch too weak for the object's weight slips.
  GraspConfig c;
  c.object_mass = 5.0;
  CHECK(GraspEnv(c).attempt(0.0).outcome.kind == RewardCase::Slipped);
}

TEST_CASE("no uncertainty at the true position grasps on the first attempt") {
  GraspEnv env;
  env.reset(0.0, 0.0, 11);
  CHECK(env.position() == 0.0);
  const auto r = env.step(0.0);
  CHECK(r.reward == 0.5);
  CHECK(r.done);
  CHECK(env.steps() == 1);
  CHECK_THROWS_AS(env.step(0.0), EpisodeDone);
}

TEST_CASE("reset hovers contact-free") {
  GraspEnv env;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto obs = env.reset(s);
    REQUIRE(obs.size() == kObservationWidth);
    CHECK(std::abs(obs[4] - 10.0) <= 1.0);
    CHECK(std::abs(obs[5] - 10.0) <= 1.0);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(obs[i]) < 0.05);
    for (int i = 6; i < 9; ++i) CHECK(std::abs(obs[i]) < 1e-9);
    CHECK_FALSE(env.world().modules[0].in_contact);
    CHECK_FALSE(env.world().modules[1].in_contact);
  }
}

TEST_CASE("step moves the estimate by orient * step * a") {
  GraspEnv env;
  env.reset(0.100, 0.0, 1);
  const auto r = env.step(0.5);
  CHECK(env.position() == doctest::Approx(0.1025).epsilon(1e-12));
  CHECK(r.reward == -0.1);
  env.step(0.0);
  CHECK(env.position() == doctest::Approx(0.1025).epsilon(1e-12));

  GraspConfig c;
  c.orient = -0.5;
  GraspEnv flipped(c);
  flipped.reset(0.0, 0.0, 1);
  flipped.step(1.0);
  CHECK(flipped.position() == doctest::Approx(-0.0025).epsilon(1e-12));
}

TEST_CASE("out of range actions are clamped with a warning") {
  CaptureLog cap;
  GraspEnv env;
  env.reset(0.03, 0.0, 1);
  env.step(3.0);
  CHECK(env.position() == doctest::Approx(0.035));
  REQUIRE(cap.lines.size() == 1);
  CHECK(cap.lines[0].find("ActionOutOfRange") != std::string::npos);
  CHECK_THROWS_AS(env.step(std::nan("")), InvalidArgument);
}

TEST_CASE("one-sided contact matches the overlap oracle") {
  const GraspConfig c;
  GraspEnv env(c);
  for (double e : {-0.012, -0.008, 0.006, 0.010}) {
    CAPTURE(e);
    env.reset(e, 0.0, 5);
    const auto r = env.step(0.0);
    CHECK(r.reward == -0.1);
    CHECK(r.kind == RewardCase::OneSided);
    const auto d = oracle_depths(c, e);
    const auto& tc = c.world.tactile;
    for (int i = 0; i < 2; ++i) {
      const double expect = std::min(tc.baseline + tc.pressure_gain() * d[i], tc.saturation);
      CHECK(std::abs(r.observation[4 + i] - expect) <= tc.baseline_noise + 1e-9);
    }
    // The module on the side the gripper overshot is the one pressed.
    CHECK((r.observation[4] > r.observation[5]) == (e < 0));
  }
}

TEST_CASE("closed-gap depths match the overlap oracle across offsets") {
  const GraspConfig c;
  GraspEnv env(c);
  for (double e = -0.015; e <= 0.015; e += 0.0005) {
    const auto a = env.attempt(e);
    if (a.landed) continue;
    const auto d = oracle_depths(c, e);
    CHECK(a.world.modules[0].depth == doctest::Approx(d[0]).epsilon(1e-9));
    CHECK(a.world.modules[1].depth == doctest::Approx(d[1]).epsilon(1e-9));
  }
}

TEST_CASE("success is geometrically monotone") {
  GraspEnv env;
  std::vector<double> xs;
  for (int i = -600; i <= 600; ++i) xs.push_back(i * 1e-4);
  std::vector<bool> ok;
  for (double x : xs) ok.push_back(env.attempt(x).outcome.kind == RewardCase::Grasped);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!ok[i]) continue;
    for (std::size_t j = 0; j < xs.size(); ++j) {
      if (std::abs(xs[j]) < std::abs(xs[i])) CHECK(ok[j]);
    }
  }
  CHECK(ok[600]);
}

TEST_CASE("episode length is capped") {
  GraspEnv env;
  env.reset(0.09, 0.0, 2);
  StepResult r;
  int n = 0;
  while (!env.done()) {
    r = env.step(1.0);
    ++n;
  }
  CHECK(n == 50);
  CHECK(env.steps() == 50);
  CHECK(r.done);
  CHECK(env.total_reward() == doctest::Approx(-5.0));
  CHECK(env.position() == doctest::Approx(0.12));
}

TEST_CASE("collision ends the episode only when configured") {
  GraspConfig c;
  GraspEnv env(c);
  env.reset(0.03, 0.0, 1);
  auto r = env.step(0.0);
  CHECK(r.kind == RewardCase::Collision);
  CHECK_FALSE(r.done);
  c.terminate_on_collision = true;
  GraspEnv strict(c);
  strict.reset(0.03, 0.0, 1);
  CHECK(strict.step(0.0).done);
}

TEST_CASE("reset positions follow the uncertainty model") {
  GraspEnv env;
  const int n = 10000;
  double sum = 0.0, sq = 0.0;
  int within = 0;
  for (int s = 0; s < n; ++s) {
    env.reset(static_cast<std::uint64_t>(s));
    const double p = env.initial_position();
    sum += p;
    sq += p * p;
    within += std::abs(p) <= 0.01;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  // Sampling error of the mean is 0.005/100; of the sd about 0.7%.
  CHECK(std::abs(mean) < 4 * 0.005 / 100);
  CHECK(std::abs(sd / 0.005 - 1.0) < 0.03);
  // The ±2σ band is the 0.02 m variability.
  CHECK(std::abs(within / double(n) - 0.9545) < 0.01);
}

TEST_CASE("same seed and actions reproduce the episode") {
  GraspEnv a, b;
  auto oa = a.reset(42), ob = b.reset(42);
  CHECK(oa == ob);
  for (double act : {0.3, -0.7, 0.1, 1.0}) {
    if (a.done()) break;
    auto ra = a.step(act), rb = b.step(act);
    CHECK(ra.observation == rb.observation);
    CHECK(ra.reward == rb.reward);
  }
  GraspEnv c;
  CHECK(c.reset(43) != oa);
}

TEST_CASE("grasp config is strict") {
  const GraspConfig c;
  CHECK(to_json(grasp_config_from_json(to_json(c))) == to_json(c));
  CHECK_THROWS_AS(grasp_config_from_json({{"steps", 3}}), ConfigInvalid);
  CHECK_THROWS_AS(grasp_config_from_json({{"sigma", -1.0}}), ConfigInvalid);
  CHECK_THROWS_AS(grasp_config_from_json({{"closed_gap", 0.2}}), ConfigInvalid);
  CHECK(grasp_config_from_json({{"sigma", 0.01}}).sigma == 0.01);
}

TEST_CASE("episode log csv") {
  const auto path = std::filesystem::temp_directory_path() / "tactile_grasp_log" / "episodes.csv";
  write_episode_log(path, "0123456789abcdef", {{0, 3, 0.3}, {1, 1, 0.5}});
  std::ifstream in(path);
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  CHECK(l1 == "# config_hash: 0123456789abcdef");
  CHECK(l2 == "episode,steps,total_reward");
  CHECK(l3 == "0,3,0.3");
  std::filesystem::remove_all(path.parent_path());
}

TEST_CASE("task view scales observations and passes one action") {
  GraspTask task;
  CHECK(task.observation_width() == kObservationWidth);
  CHECK_FALSE(task.action_space().discrete);
  const auto obs = task.reset(3);
  GraspEnv raw;
  const auto ref = raw.reset(3);
  const auto scale = GraspEnv::observation_scale();
  for (int i = 0; i < kObservationWidth; ++i) CHECK(obs[i] == ref[i] / scale[i]);
  const auto s = task.step({0.25});
  const auto r = raw.step(0.25);
  CHECK(s.reward == r.reward);
  CHECK(s.done == r.done);
  CHECK_THROWS_AS(task.step({0.1, 0.2}), InvalidArgument);
}
