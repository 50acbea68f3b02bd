#pragma once

// Brute-force reference for camera-frame alignment: every pressure sample is
// checked against every frame interval and every MARG sample, no pointers.

#include <limits>
#include <random>
#include <vector>

#include "tactile/sensors.hpp"

namespace oracle {

struct Assignment {
  std::size_t pressure;
  std::size_t frame;
  std::size_t marg;
  bool operator==(const Assignment&) const = default;
};

struct Triple {
  tactile::sensors::SensorStream camera, pressure, marg;
};

inline std::vector<double> random_times(std::mt19937_64& rng, int max_n, double span) {
  std::uniform_int_distribution<int> n(0, max_n);
  std::uniform_int_distribution<int> tick(-20, static_cast<int>(span * 1000));
  std::vector<double> t;
  const int k = n(rng);
  // Millisecond grid so that exact ties actually occur.
  for (int i = 0; i < k; ++i) t.push_back(tick(rng) * 1e-3);
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

inline tactile::sensors::SensorStream make_stream(tactile::sensors::Channel c,
                                                  const std::vector<double>& t, std::size_t width) {
  tactile::sensors::SensorStream s{c, 0.0, {}};
  for (std::size_t i = 0; i < t.size(); ++i) s.samples.push_back({t[i], std::vector<double>(width, 0.5 * i)});
  return s;
}

inline Triple random_triple(std::mt19937_64& rng) {
  using tactile::sensors::Channel;
  return {make_stream(Channel::CameraAngle, random_times(rng, 6, 0.2), 1),
          make_stream(Channel::Pressure, random_times(rng, 20, 0.2), 2),
          make_stream(Channel::Marg, random_times(rng, 40, 0.2), tactile::sensors::kMargWidth)};
}

inline std::vector<Assignment> brute_force(const Triple& tr) {
  const auto& cam = tr.camera.samples;
  const auto& prs = tr.pressure.samples;
  const auto& mrg = tr.marg.samples;
  std::vector<Assignment> out;
  if (cam.empty() || mrg.empty()) return out;
  for (std::size_t p = 0; p < prs.size(); ++p) {
    const double t = prs[p].t;
    for (std::size_t f = 0; f < cam.size(); ++f) {
      double hi;
      if (f + 1 < cam.size()) {
        hi = cam[f + 1].t;
      } else if (cam.size() >= 2) {
        hi = cam[f].t + (cam[f].t - cam[f - 1].t);
      } else {
        hi = std::numeric_limits<double>::infinity();
      }
      if (t >= cam[f].t && t < hi) {
        std::size_t best = 0;
        for (std::size_t m = 1; m < mrg.size(); ++m) {
          if (std::abs(mrg[m].t - t) < std::abs(mrg[best].t - t)) best = m;
        }
        out.push_back({p, f, best});
      }
    }
  }
  return out;
}

}  // namespace oracle
