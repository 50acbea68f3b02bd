#pragma once

// Multi-rate sensor streams sampled from a rotation trial, camera-frame
// alignment, standardization, sliding windows and rolling folds.
//
// Feature row layout (20 columns): for module m in {0, 1}
//   10*m + 0      pressure (counts)
//   10*m + 1..3   accelerometer (m/s², module frame)
//   10*m + 4..6   gyroscope (rad/s, module frame)
//   10*m + 7..9   magnetometer (µT, module frame)

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <json.hpp>
#include <string>
#include <vector>

#include "tactile/sim_world.hpp"

namespace tactile::sensors {

inline constexpr int kFeatures = 20;
inline constexpr int kMargWidth = 18;  // 2 modules x (accel, gyro, mag)

enum class Channel { CameraAngle, Pressure, Marg };

std::string to_string(Channel channel);
Channel channel_from_string(const std::string& name);

struct Sample {
  double t = 0.0;
  std::vector<double> value;
};

struct SensorStream {
  Channel channel = Channel::CameraAngle;
  double nominal_rate = 0.0;
  std::vector<Sample> samples;

  /// Throws InvalidArgument unless timestamps are strictly increasing.
  void validate() const;
};

struct StreamConfig {
  double camera_rate = 29.95;
  double pressure_rate = 402.19;
  double marg_rate = 973.50;
  double jitter = 0.02;          // uniform relative jitter of each sampling period
  double camera_noise = 0.001;   // rad, marker tracking noise
  double pressure_noise = 3.0;   // counts
  double accel_noise = 0.05;     // m/s²
  double gyro_noise = 0.005;     // rad/s
  double mag_noise = 0.3;        // µT
  Vec3 magnetic_field{20.0, 0.0, -42.0};  // µT, base frame
};

nlohmann::json to_json(const StreamConfig& config);
StreamConfig stream_config_from_json(const nlohmann::json& j);

struct StreamSet {
  SensorStream camera;
  SensorStream pressure;  // 2 values per sample
  SensorStream marg;      // 18 values per sample
};

StreamSet simulate_streams(const sim::RotationTrial& trial, std::uint64_t seed,
                           const StreamConfig& config = {});

/// One JSON object per line: {"t", "channel", "value"}; samples of all
/// channels interleaved in timestamp order (ties: camera, pressure, marg).
void write_streams_jsonl(std::ostream& out, const StreamSet& streams);
StreamSet read_streams_jsonl(std::istream& in, const StreamConfig& rates = {});

struct AlignedSample {
  std::size_t frame = 0;
  double t_frame = 0.0;
  double angle = 0.0;
  double t_pressure = 0.0;
  double t_marg = 0.0;
  std::size_t pressure_index = 0;
  std::size_t marg_index = 0;
  std::array<double, 2> pressure{};
  std::array<double, kMargWidth> marg{};

  std::array<double, kFeatures> features() const;
};

struct AlignedGroup {
  std::size_t frame = 0;
  double t_frame = 0.0;
  double angle = 0.0;
  std::vector<AlignedSample> rows;
};

/// Frame i collects the pressure samples with t in [t_i, t_{i+1}); the last
/// frame's interval has the length of the previous one. Each pressure sample
/// keeps its nearest MARG sample (ties go to the earlier one). Pressure before
/// the first frame is discarded. Throws EmptyOverlap when nothing aligns.
std::vector<AlignedGroup> align_streams(const SensorStream& camera, const SensorStream& pressure,
                                        const SensorStream& marg);

/// Flattened aligned rows of one or more runs, in time order.
struct RowTable {
  Eigen::MatrixXd X;                  // rows x kFeatures
  std::vector<double> angle;          // frame angle of each row
  std::vector<std::size_t> frame;     // frame index within its run
  std::vector<int> run;
  std::vector<char> frame_end;        // 1 on the last row of each frame group

  std::size_t rows() const { return angle.size(); }
};

RowTable flatten(const std::vector<AlignedGroup>& groups, int run);
/// Appends `more` below `table`; runs stay separate for windowing.
void append(RowTable& table, const RowTable& more);

struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stddev;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
  nlohmann::json to_json() const;
};

/// Statistics from the given training rows only (population σ). A feature with
/// zero variance keeps σ = 1 and emits a warning.
Standardizer fit_standardizer(const Eigen::MatrixXd& X, const std::vector<std::size_t>& train_rows);
Standardizer fit_standardizer(const Eigen::MatrixXd& X);

enum class WindowTargets { FrameEnds, EveryRow };

/// Window i covers rows end[i]-W+1 .. end[i] of one run; its target is the
/// angle of row end[i].
struct WindowDataset {
  int window = 1;
  std::vector<std::size_t> end;
  std::vector<double> target;
  Standardizer normalization;

  std::size_t size() const { return end.size(); }
};

/// Ends without W-1 rows of history in the same run are dropped. Throws
/// TooShort when no window remains and InvalidArgument for W < 1.
WindowDataset build_windows(const RowTable& rows, int window,
                            WindowTargets targets = WindowTargets::FrameEnds);

/// Rows touched by the given windows, ascending and unique.
std::vector<std::size_t> rows_covered(const WindowDataset& ds, const std::vector<std::size_t>& windows);

/// Copies window `i` (W x kFeatures) from an already standardized matrix.
Eigen::MatrixXd window_matrix(const WindowDataset& ds, const Eigen::MatrixXd& Xs, std::size_t i);

struct FoldSplit {
  std::vector<std::size_t> fold_begin;  // k+1 boundaries into the window index range

  std::size_t folds() const { return fold_begin.size() - 1; }
  std::size_t splits() const { return folds() - 1; }
  /// Split s (1-based): train on folds 1..s, validate on fold s+1.
  std::vector<std::size_t> train(std::size_t split) const;
  std::vector<std::size_t> validation(std::size_t split) const;
};

FoldSplit rolling_folds(std::size_t n_windows, std::size_t k = 4);

/// CSV: window,run,frame,target followed by W*20 standardized features.
void write_windows_csv(std::ostream& out, const WindowDataset& ds, const RowTable& rows,
                       const Eigen::MatrixXd& Xs);

}  // namespace tactile::sensors
