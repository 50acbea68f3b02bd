#include "tactile/sensors.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "tactile/errors.hpp"
#include "tactile/json_fields.hpp"
#include "tactile/log.hpp"
#include "tactile/seed.hpp"

namespace tactile::sensors {

using nlohmann::json;

std::string to_string(Channel c) {
  switch (c) {
    case Channel::CameraAngle: return "camera_angle";
    case Channel::Pressure: return "pressure";
    case Channel::Marg: return "marg";
  }
  return "?";
}

Channel channel_from_string(const std::string& name) {
  if (name == "camera_angle") return Channel::CameraAngle;
  if (name == "pressure") return Channel::Pressure;
  if (name == "marg") return Channel::Marg;
  throw InvalidArgument("unknown channel '" + name + "'");
}

void SensorStream::validate() const {
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (!(samples[i].t > samples[i - 1].t)) {
      throw InvalidArgument(to_string(channel) + " timestamps not strictly increasing at " +
                            std::to_string(i));
    }
  }
}

json to_json(const StreamConfig& c) {
  return json{{"camera_rate", c.camera_rate},
              {"pressure_rate", c.pressure_rate},
              {"marg_rate", c.marg_rate},
              {"jitter", c.jitter},
              {"camera_noise", c.camera_noise},
              {"pressure_noise", c.pressure_noise},
              {"accel_noise", c.accel_noise},
              {"gyro_noise", c.gyro_noise},
              {"mag_noise", c.mag_noise},
              {"magnetic_field", {c.magnetic_field.x, c.magnetic_field.y, c.magnetic_field.z}}};
}

StreamConfig stream_config_from_json(const json& j) {
  namespace jf = json_fields;
  const std::string where = "streams";
  jf::reject_unknown(j,
                     {"camera_rate", "pressure_rate", "marg_rate", "jitter", "camera_noise",
                      "pressure_noise", "accel_noise", "gyro_noise", "mag_noise",
                      "magnetic_field"},
                     where);
  StreamConfig c;
  jf::read(j, "camera_rate", c.camera_rate, where);
  jf::read(j, "pressure_rate", c.pressure_rate, where);
  jf::read(j, "marg_rate", c.marg_rate, where);
  jf::read(j, "jitter", c.jitter, where);
  jf::read(j, "camera_noise", c.camera_noise, where);
  jf::read(j, "pressure_noise", c.pressure_noise, where);
  jf::read(j, "accel_noise", c.accel_noise, where);
  jf::read(j, "gyro_noise", c.gyro_noise, where);
  jf::read(j, "mag_noise", c.mag_noise, where);
  if (j.contains("magnetic_field")) {
    std::array<double, 3> b{};
    jf::read(j, "magnetic_field", b, where);
    c.magnetic_field = {b[0], b[1], b[2]};
  }
  if (!(c.camera_rate > 0 && c.pressure_rate > 0 && c.marg_rate > 0)) {
    throw ConfigInvalid("streams: rates must be positive");
  }
  if (!(c.jitter >= 0 && c.jitter < 0.5)) throw ConfigInvalid("streams.jitter must be in [0, 0.5)");
  return c;
}

// ---------------------------------------------------------------------------
// Stream simulation

namespace {

std::vector<double> jittered_times(double rate, double jitter, double duration,
                                   std::mt19937_64& rng) {
  const double period = 1.0 / rate;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> t;
  t.reserve(static_cast<std::size_t>(duration * rate) + 2);
  double now = period * u(rng);
  while (now <= duration) {
    t.push_back(now);
    now += period * (1.0 + jitter * (2.0 * u(rng) - 1.0));
  }
  return t;
}

struct Interp {
  std::size_t k = 0;
  double f = 0.0;
};

Interp locate(const sim::RotationTrial& tr, double t) {
  const double x = std::clamp(t / tr.dt, 0.0, static_cast<double>(tr.size() - 1));
  std::size_t k = static_cast<std::size_t>(x);
  if (k + 1 >= tr.size()) return {tr.size() - 2, 1.0};
  return {k, x - static_cast<double>(k)};
}

double lerp(const std::vector<double>& v, Interp p) { return v[p.k] + p.f * (v[p.k + 1] - v[p.k]); }

Vec3 lerp(const std::vector<Vec3>& v, Interp p) { return v[p.k] + (v[p.k + 1] - v[p.k]) * p.f; }

Quaternion nlerp(const std::vector<Quaternion>& v, Interp p) {
  const Quaternion& a = v[p.k];
  Quaternion b = v[p.k + 1];
  if (a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z < 0) b = {-b.w, -b.x, -b.y, -b.z};
  return Quaternion{a.w + p.f * (b.w - a.w), a.x + p.f * (b.x - a.x), a.y + p.f * (b.y - a.y),
                    a.z + p.f * (b.z - a.z)}
      .normalized();
}

}  // namespace

StreamSet simulate_streams(const sim::RotationTrial& tr, std::uint64_t seed,
                           const StreamConfig& c) {
  if (tr.size() < 2) throw InvalidArgument("rotation trial too short for sampling");
  const double duration = tr.duration();
  std::mt19937_64 rng_cam(derive_seed(seed, "camera"));
  std::mt19937_64 rng_p(derive_seed(seed, "pressure"));
  std::mt19937_64 rng_m(derive_seed(seed, "marg"));
  std::normal_distribution<double> n01(0.0, 1.0);

  StreamSet s;
  s.camera = {Channel::CameraAngle, c.camera_rate, {}};
  s.pressure = {Channel::Pressure, c.pressure_rate, {}};
  s.marg = {Channel::Marg, c.marg_rate, {}};

  for (double t : jittered_times(c.camera_rate, c.jitter, duration, rng_cam)) {
    const Interp p = locate(tr, t);
    s.camera.samples.push_back({t, {lerp(tr.angle, p) + c.camera_noise * n01(rng_cam)}});
  }
  for (double t : jittered_times(c.pressure_rate, c.jitter, duration, rng_p)) {
    const Interp p = locate(tr, t);
    std::vector<double> v(2);
    for (int i = 0; i < 2; ++i) v[i] = lerp(tr.pressure[i], p) + c.pressure_noise * n01(rng_p);
    s.pressure.samples.push_back({t, std::move(v)});
  }
  const Vec3 gravity{0.0, 0.0, 9.81};
  for (double t : jittered_times(c.marg_rate, c.jitter, duration, rng_m)) {
    const Interp p = locate(tr, t);
    const double vib = lerp(tr.vibration, p);
    std::vector<double> v;
    v.reserve(kMargWidth);
    for (int i = 0; i < 2; ++i) {
      const Quaternion q = nlerp(tr.orientation[i], p);
      const Quaternion qi = quat_inverse(q);
      const Vec3 acc = rotate(qi, gravity);
      const Vec3 gyr = lerp(tr.body_rate[i], p);
      const Vec3 mag = rotate(qi, c.magnetic_field);
      for (double a : {acc.x, acc.y, acc.z}) {
        v.push_back(a + vib * n01(rng_m) + c.accel_noise * n01(rng_m));
      }
      for (double g : {gyr.x, gyr.y, gyr.z}) v.push_back(g + c.gyro_noise * n01(rng_m));
      for (double m : {mag.x, mag.y, mag.z}) v.push_back(m + c.mag_noise * n01(rng_m));
    }
    s.marg.samples.push_back({t, std::move(v)});
  }
  return s;
}

void write_streams_jsonl(std::ostream& out, const StreamSet& s) {
  const std::array<const SensorStream*, 3> streams{&s.camera, &s.pressure, &s.marg};
  std::array<std::size_t, 3> idx{0, 0, 0};
  while (true) {
    int pick = -1;
    for (int c = 0; c < 3; ++c) {
      if (idx[c] >= streams[c]->samples.size()) continue;
      if (pick < 0 || streams[c]->samples[idx[c]].t < streams[pick]->samples[idx[pick]].t) pick = c;
    }
    if (pick < 0) break;
    const Sample& smp = streams[pick]->samples[idx[pick]++];
    out << json{{"t", smp.t}, {"channel", to_string(streams[pick]->channel)}, {"value", smp.value}}
               .dump()
        << '\n';
  }
}

StreamSet read_streams_jsonl(std::istream& in, const StreamConfig& rates) {
  StreamSet s;
  s.camera = {Channel::CameraAngle, rates.camera_rate, {}};
  s.pressure = {Channel::Pressure, rates.pressure_rate, {}};
  s.marg = {Channel::Marg, rates.marg_rate, {}};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      if (j.value("type", "") == "header") continue;  // provenance line written by simgen
      Sample smp{j.at("t").get<double>(), j.at("value").get<std::vector<double>>()};
      switch (channel_from_string(j.at("channel").get<std::string>())) {
        case Channel::CameraAngle: s.camera.samples.push_back(std::move(smp)); break;
        case Channel::Pressure: s.pressure.samples.push_back(std::move(smp)); break;
        case Channel::Marg: s.marg.samples.push_back(std::move(smp)); break;
      }
    } catch (const json::exception& e) {
      throw InvalidArgument("streams line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  s.camera.validate();
  s.pressure.validate();
  s.marg.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Alignment

std::array<double, kFeatures> AlignedSample::features() const {
  std::array<double, kFeatures> f{};
  for (int m = 0; m < 2; ++m) {
    f[10 * m] = pressure[m];
    for (int k = 0; k < 9; ++k) f[10 * m + 1 + k] = marg[9 * m + k];
  }
  return f;
}

std::vector<AlignedGroup> align_streams(const SensorStream& camera, const SensorStream& pressure,
                                        const SensorStream& marg) {
  camera.validate();
  pressure.validate();
  marg.validate();
  const auto& cam = camera.samples;
  const auto& prs = pressure.samples;
  const auto& mrg = marg.samples;
  if (cam.empty() || prs.empty() || mrg.empty()) throw EmptyOverlap("a stream is empty");

  std::vector<AlignedGroup> groups(cam.size());
  for (std::size_t i = 0; i < cam.size(); ++i) {
    groups[i].frame = i;
    groups[i].t_frame = cam[i].t;
    groups[i].angle = cam[i].value.at(0);
  }
  auto frame_end = [&](std::size_t i) {
    if (i + 1 < cam.size()) return cam[i + 1].t;
    if (cam.size() >= 2) return cam[i].t + (cam[i].t - cam[i - 1].t);
    return std::numeric_limits<double>::infinity();
  };

  std::size_t frame = 0;
  std::size_t m = 0;
  std::size_t total = 0;
  for (std::size_t p = 0; p < prs.size(); ++p) {
    const double t = prs[p].t;
    if (t < cam.front().t) continue;
    while (frame < cam.size() && t >= frame_end(frame)) ++frame;
    if (frame >= cam.size()) break;
    while (m + 1 < mrg.size() && std::abs(mrg[m + 1].t - t) < std::abs(mrg[m].t - t)) ++m;
    // Ties keep the earlier sample; a later one can only win strictly.
    AlignedSample row;
    row.frame = frame;
    row.t_frame = cam[frame].t;
    row.angle = groups[frame].angle;
    row.t_pressure = t;
    row.t_marg = mrg[m].t;
    row.pressure_index = p;
    row.marg_index = m;
    if (prs[p].value.size() != 2 || mrg[m].value.size() != kMargWidth) {
      throw ShapeMismatch("pressure samples need 2 values and MARG samples 18");
    }
    row.pressure = {prs[p].value[0], prs[p].value[1]};
    std::copy(mrg[m].value.begin(), mrg[m].value.end(), row.marg.begin());
    groups[frame].rows.push_back(row);
    ++total;
  }
  if (total == 0) throw EmptyOverlap("no pressure sample falls inside the camera frames");
  return groups;
}

// ---------------------------------------------------------------------------
// Rows, standardization, windows

RowTable flatten(const std::vector<AlignedGroup>& groups, int run) {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.rows.size();
  RowTable t;
  t.X.resize(static_cast<Eigen::Index>(n), kFeatures);
  t.angle.reserve(n);
  t.frame.reserve(n);
  t.run.reserve(n);
  t.frame_end.reserve(n);
  Eigen::Index r = 0;
  for (const auto& g : groups) {
    for (std::size_t k = 0; k < g.rows.size(); ++k) {
      const auto f = g.rows[k].features();
      for (int c = 0; c < kFeatures; ++c) t.X(r, c) = f[c];
      t.angle.push_back(g.angle);
      t.frame.push_back(g.frame);
      t.run.push_back(run);
      t.frame_end.push_back(k + 1 == g.rows.size() ? 1 : 0);
      ++r;
    }
  }
  return t;
}

void append(RowTable& t, const RowTable& more) {
  if (t.rows() > 0 && more.rows() > 0 && t.run.back() == more.run.front()) {
    throw InvalidArgument("appended rows must belong to a different run");
  }
  const Eigen::Index old = t.X.rows();
  Eigen::MatrixXd X(old + more.X.rows(), kFeatures);
  if (old > 0) X.topRows(old) = t.X;
  if (more.X.rows() > 0) X.bottomRows(more.X.rows()) = more.X;
  t.X = std::move(X);
  t.angle.insert(t.angle.end(), more.angle.begin(), more.angle.end());
  t.frame.insert(t.frame.end(), more.frame.begin(), more.frame.end());
  t.run.insert(t.run.end(), more.run.begin(), more.run.end());
  t.frame_end.insert(t.frame_end.end(), more.frame_end.begin(), more.frame_end.end());
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& X) const {
  if (X.cols() != mean.size()) throw ShapeMismatch("standardizer width mismatch");
  return (X.rowwise() - mean).array().rowwise() / stddev.array();
}

json Standardizer::to_json() const {
  return json{{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
              {"std", std::vector<double>(stddev.data(), stddev.data() + stddev.size())}};
}

Standardizer fit_standardizer(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw InvalidArgument("standardization needs at least one training row");
  const Eigen::Index d = X.cols();
  Standardizer s;
  s.mean = Eigen::RowVectorXd::Zero(d);
  s.stddev = Eigen::RowVectorXd::Zero(d);
  for (std::size_t r : rows) s.mean += X.row(static_cast<Eigen::Index>(r));
  s.mean /= static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    s.stddev += (X.row(static_cast<Eigen::Index>(r)) - s.mean).array().square().matrix();
  }
  s.stddev = (s.stddev / static_cast<double>(rows.size())).array().sqrt();
  for (Eigen::Index c = 0; c < d; ++c) {
    if (!(s.stddev[c] > 1e-12 * std::max(1.0, std::abs(s.mean[c])))) {
      log::warn("ZeroVariance: feature " + std::to_string(c) + " is constant in training data");
      s.stddev[c] = 1.0;
    }
  }
  return s;
}

Standardizer fit_standardizer(const Eigen::MatrixXd& X) {
  std::vector<std::size_t> all(static_cast<std::size_t>(X.rows()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return fit_standardizer(X, all);
}

WindowDataset build_windows(const RowTable& rows, int window, WindowTargets targets) {
  if (window < 1) throw InvalidArgument("window size must be >= 1");
  WindowDataset ds;
  ds.window = window;
  const std::size_t w = static_cast<std::size_t>(window);
  std::size_t run_start = 0;
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    if (i > 0 && rows.run[i] != rows.run[i - 1]) run_start = i;
    if (targets == WindowTargets::FrameEnds && !rows.frame_end[i]) continue;
    if (i + 1 < run_start + w) continue;
    ds.end.push_back(i);
    ds.target.push_back(rows.angle[i]);
  }
  if (ds.end.empty()) {
    throw TooShort("no window of size " + std::to_string(window) + " fits in " +
                   std::to_string(rows.rows()) + " rows");
  }
  return ds;
}

std::vector<std::size_t> rows_covered(const WindowDataset& ds, const std::vector<std::size_t>& windows) {
  std::vector<std::size_t> out;
  const std::size_t w = static_cast<std::size_t>(ds.window);
  std::size_t next = 0;  // windows are sorted by end, so rows grow monotonically
  std::vector<std::size_t> sorted = windows;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i : sorted) {
    const std::size_t e = ds.end.at(i);
    for (std::size_t r = std::max(next, e + 1 - w); r <= e; ++r) out.push_back(r);
    next = std::max(next, e + 1);
  }
  return out;
}

Eigen::MatrixXd window_matrix(const WindowDataset& ds, const Eigen::MatrixXd& Xs, std::size_t i) {
  const Eigen::Index e = static_cast<Eigen::Index>(ds.end.at(i));
  return Xs.middleRows(e - ds.window + 1, ds.window);
}

std::vector<std::size_t> FoldSplit::train(std::size_t split) const {
  if (split < 1 || split > splits()) throw InvalidArgument("split index out of range");
  std::vector<std::size_t> idx;
  for (std::size_t i = fold_begin[0]; i < fold_begin[split]; ++i) idx.push_back(i);
  return idx;
}

std::vector<std::size_t> FoldSplit::validation(std::size_t split) const {
  if (split < 1 || split > splits()) throw InvalidArgument("split index out of range");
  std::vector<std::size_t> idx;
  for (std::size_t i = fold_begin[split]; i < fold_begin[split + 1]; ++i) idx.push_back(i);
  return idx;
}

FoldSplit rolling_folds(std::size_t n, std::size_t k) {
  if (k < 2) throw InvalidArgument("rolling folds need k >= 2");
  if (n < k) throw TooShort("fewer windows than folds");
  FoldSplit f;
  for (std::size_t j = 0; j <= k; ++j) f.fold_begin.push_back(n * j / k);
  return f;
}

void write_windows_csv(std::ostream& out, const WindowDataset& ds, const RowTable& rows,
                       const Eigen::MatrixXd& Xs) {
  out << "window,run,frame,target";
  for (int r = 0; r < ds.window; ++r) {
    for (int c = 0; c < kFeatures; ++c) out << ",r" << r << "_f" << c;
  }
  out << '\n';
  const auto old_prec = out.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t e = ds.end[i];
    out << i << ',' << rows.run[e] << ',' << rows.frame[e] << ',' << ds.target[i];
    const Eigen::MatrixXd w = window_matrix(ds, Xs, i);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) out << ',' << w(r, c);
    }
    out << '\n';
  }
  out.precision(old_prec);
}

}  // namespace tactile::sensors
