#include "tactile/pose.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

#include "tactile/artifact.hpp"
#include "tactile/errors.hpp"
#include "tactile/json_fields.hpp"
#include "tactile/log.hpp"
#include "tactile/seed.hpp"

namespace tactile::pose {

using nlohmann::json;

void SweepConfig::validate() const {
  if (windows.empty()) throw ConfigInvalid("sweep.windows must not be empty");
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i] < 1) throw ConfigInvalid("sweep.windows must be positive");
    if (i > 0 && windows[i] <= windows[i - 1]) throw ConfigInvalid("sweep.windows must be ascending");
  }
  if (folds < 2) throw ConfigInvalid("sweep.folds must be >= 2");
  if (seeds < 1) throw ConfigInvalid("sweep.seeds must be >= 1");
  if (diameters.empty()) throw ConfigInvalid("sweep.diameters must not be empty");
  for (double d : diameters) {
    if (!(d > 0.0)) throw ConfigInvalid("sweep.diameters must be positive");
  }
  if (runs_per_object < 1) throw ConfigInvalid("sweep.runs_per_object must be >= 1");
  if (!(run_duration > 1.0)) throw ConfigInvalid("sweep.run_duration must exceed 1 s");
  if (lstm_units.empty()) throw ConfigInvalid("sweep.lstm_units must not be empty");
  for (int u : lstm_units) {
    if (u < 1) throw ConfigInvalid("sweep.lstm_units must be positive");
  }
  for (int u : dense_units) {
    if (u < 1) throw ConfigInvalid("sweep.dense_units must be positive");
  }
  if (ridge_lambda < 0) throw ConfigInvalid("sweep.ridge_lambda must be >= 0");
  if (workers < 0) throw ConfigInvalid("sweep.workers must be >= 0");
  train.validate();
}

json to_json(const SweepConfig& c) {
  return json{{"windows", c.windows},
              {"folds", c.folds},
              {"seeds", c.seeds},
              {"last_split_only", c.last_split_only},
              {"diameters", c.diameters},
              {"runs_per_object", c.runs_per_object},
              {"run_duration", c.run_duration},
              {"seed", c.seed},
              {"lstm_units", c.lstm_units},
              {"dense_units", c.dense_units},
              {"train", nn::to_json(c.train)},
              {"ridge_lambda", c.ridge_lambda},
              {"workers", c.workers},
              {"streams", sensors::to_json(c.streams)},
              {"physics", sim::to_json(c.physics)}};
}

SweepConfig sweep_config_from_json(const json& j) {
  namespace jf = json_fields;
  const std::string w = "sweep";
  jf::reject_unknown(j, {"windows", "folds", "seeds", "last_split_only", "diameters", "runs_per_object",
                         "run_duration", "seed", "lstm_units", "dense_units", "train", "ridge_lambda",
                         "workers", "streams", "physics"},
                     w);
  SweepConfig c;
  jf::read(j, "windows", c.windows, w);
  jf::read(j, "folds", c.folds, w);
  jf::read(j, "seeds", c.seeds, w);
  jf::read(j, "last_split_only", c.last_split_only, w);
  jf::read(j, "diameters", c.diameters, w);
  jf::read(j, "runs_per_object", c.runs_per_object, w);
  jf::read(j, "run_duration", c.run_duration, w);
  jf::read(j, "seed", c.seed, w);
  jf::read(j, "lstm_units", c.lstm_units, w);
  jf::read(j, "dense_units", c.dense_units, w);
  jf::read(j, "ridge_lambda", c.ridge_lambda, w);
  jf::read(j, "workers", c.workers, w);
  if (j.contains("train")) c.train = nn::train_config_from_json(j["train"]);
  if (j.contains("streams")) c.streams = sensors::stream_config_from_json(j["streams"]);
  if (j.contains("physics")) c.physics = sim::trial_physics_from_json(j["physics"]);
  c.validate();
  return c;
}

void for_each_run_streams(const SweepConfig& c,
                          const std::function<void(int, double, const sensors::StreamSet&)>& fn) {
  c.validate();
  const std::uint64_t data_seed = derive_seed(c.seed, "data");
  int run = 0;
  for (int r = 0; r < c.runs_per_object; ++r) {
    for (double diameter : c.diameters) {
      const std::uint64_t s = derive_seed(data_seed, static_cast<std::uint64_t>(run));
      const auto obj = sim::ObjectSpec::cylinder(diameter);
      const auto profile = sim::external_rotation_profile(obj, c.run_duration, derive_seed(s, "profile"));
      const auto trial = sim::simulate_rotation_trial(obj, profile, c.physics);
      fn(run, diameter, sensors::simulate_streams(trial, derive_seed(s, "streams"), c.streams));
      ++run;
    }
  }
}

namespace {

void append_run(Dataset& d, int run, double diameter, const sensors::StreamSet& streams) {
  const auto groups = sensors::align_streams(streams.camera, streams.pressure, streams.marg);
  sensors::append(d.rows, sensors::flatten(groups, run));
  d.run_diameter.push_back(diameter);
}

}  // namespace

Dataset generate_dataset(const SweepConfig& c) {
  Dataset d;
  for_each_run_streams(c, [&](int run, double diameter, const sensors::StreamSet& s) { append_run(d, run, diameter, s); });
  return d;
}

std::vector<std::filesystem::path> write_dataset_streams(const SweepConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string hash = config_hash(to_json(c));
  std::vector<std::filesystem::path> files;
  for_each_run_streams(c, [&](int run, double diameter, const sensors::StreamSet& s) {
    const auto p = dir / ("run" + std::to_string(run) + "_d" + fmt(diameter * 1000.0) + ".jsonl");
    std::ofstream out(p);
    out << json{{"type", "header"}, {"schema", "tactile-streams"}, {"version", 1}, {"run", run},
                {"diameter", diameter}, {"config_hash", hash}}
               .dump()
        << '\n';
    sensors::write_streams_jsonl(out, s);
    if (!out) throw EnvFailure("cannot write " + p.string());
    files.push_back(p);
  });
  return files;
}

Dataset read_dataset_streams(const SweepConfig& c, const std::vector<std::filesystem::path>& files) {
  const std::string hash = config_hash(to_json(c));
  std::vector<std::pair<int, std::filesystem::path>> ordered;
  std::map<int, double> diameters;
  for (const auto& p : files) {
    std::ifstream in(p);
    std::string line;
    if (!std::getline(in, line)) throw InvalidArgument(p.string() + " is empty");
    json h;
    try {
      h = json::parse(line);
    } catch (const json::exception& e) {
      throw InvalidArgument(p.string() + ": bad header: " + e.what());
    }
    if (h.value("type", "") != "header" || h.value("schema", "") != "tactile-streams") {
      throw InvalidArgument(p.string() + " has no tactile-streams header");
    }
    if (h.value("config_hash", "") != hash) throw HashMismatch(p.string() + " was written under another config");
    const int run = h.at("run").get<int>();
    ordered.emplace_back(run, p);
    diameters[run] = h.at("diameter").get<double>();
  }
  std::sort(ordered.begin(), ordered.end());
  Dataset d;
  for (const auto& [run, p] : ordered) {
    std::ifstream in(p);
    append_run(d, run, diameters[run], sensors::read_streams_jsonl(in, c.streams));
  }
  return d;
}

SplitData prepare_split(const sensors::RowTable& rows, int window, int folds, int split) {
  SplitData d;
  d.windows = sensors::build_windows(rows, window);
  const auto f = sensors::rolling_folds(d.windows.size(), static_cast<std::size_t>(folds));
  d.train = f.train(static_cast<std::size_t>(split));
  const auto candidates = f.validation(static_cast<std::size_t>(split));
  const std::size_t last_train_row = d.windows.end[d.train.back()];
  for (std::size_t i : candidates) {
    const std::size_t first_row = d.windows.end[i] + 1 - static_cast<std::size_t>(window);
    if (first_row > last_train_row) d.validation.push_back(i);
  }
  if (d.validation.empty()) throw TooShort("no validation window after the training rows");

  const auto train_rows = sensors::rows_covered(d.windows, d.train);
  d.windows.normalization = sensors::fit_standardizer(rows.X, train_rows);
  d.Xs = d.windows.normalization.apply(rows.X);

  double sum = 0.0, sq = 0.0;
  for (std::size_t i : d.train) sum += d.windows.target[i];
  d.target_mean = sum / static_cast<double>(d.train.size());
  for (std::size_t i : d.train) sq += (d.windows.target[i] - d.target_mean) * (d.windows.target[i] - d.target_mean);
  d.target_std = std::sqrt(sq / static_cast<double>(d.train.size()));
  if (!(d.target_std > 0.0)) throw ZeroTargetVariance("training targets are constant");
  return d;
}

nn::NetworkSpec estimator_spec(const SweepConfig& c, std::uint64_t seed) {
  nn::NetworkSpec s;
  s.input_width = sensors::kFeatures;
  s.seed = seed;
  for (int u : c.lstm_units) {
    s.layers.push_back(nn::LayerSpec::lstm(u));
    s.layers.push_back(nn::LayerSpec::layernorm());
  }
  for (int u : c.dense_units) s.layers.push_back(nn::LayerSpec::dense(u, nn::Activation::Relu));
  s.layers.push_back(nn::LayerSpec::dense(1));
  return s;
}

nn::SequenceData<float> to_sequences(const SplitData& d, const std::vector<std::size_t>& idx) {
  const int W = d.windows.window;
  const auto n = static_cast<Eigen::Index>(idx.size());
  nn::SequenceData<float> out;
  out.x.assign(static_cast<std::size_t>(W), nn::Mat<float>(sensors::kFeatures, n));
  out.y.resize(1, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const std::size_t i = idx[static_cast<std::size_t>(k)];
    const auto first = static_cast<Eigen::Index>(d.windows.end[i]) - W + 1;
    for (int t = 0; t < W; ++t) out.x[static_cast<std::size_t>(t)].col(k) = d.Xs.row(first + t).transpose().cast<float>();
    out.y(0, k) = static_cast<float>((d.windows.target[i] - d.target_mean) / d.target_std);
  }
  return out;
}

Eigen::MatrixXd flatten_windows(const SplitData& d, const std::vector<std::size_t>& idx) {
  const int W = d.windows.window;
  Eigen::MatrixXd F(static_cast<Eigen::Index>(idx.size()), W * sensors::kFeatures);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto first = static_cast<Eigen::Index>(d.windows.end[idx[k]]) - W + 1;
    for (int t = 0; t < W; ++t) {
      F.block(static_cast<Eigen::Index>(k), t * sensors::kFeatures, 1, sensors::kFeatures) = d.Xs.row(first + t);
    }
  }
  return F;
}

namespace {

std::vector<double> targets_of(const SplitData& d, const std::vector<std::size_t>& idx) {
  std::vector<double> t;
  t.reserve(idx.size());
  for (std::size_t i : idx) t.push_back(d.windows.target[i]);
  return t;
}

std::uint64_t cell_seed(const SweepConfig& c, int window, int split, int seed_index) {
  std::uint64_t s = derive_seed(c.seed, "model");
  s = derive_seed(s, static_cast<std::uint64_t>(window));
  s = derive_seed(s, static_cast<std::uint64_t>(split));
  return derive_seed(s, static_cast<std::uint64_t>(seed_index));
}

}  // namespace

CellResult train_cell(const SplitData& d, const SweepConfig& c, int split, int seed_index) {
  CellResult r;
  r.window = d.windows.window;
  r.split = split;
  r.seed_index = seed_index;
  try {
    const std::uint64_t s = cell_seed(c, r.window, split, seed_index);
    nn::Network<float> net(estimator_spec(c, derive_seed(s, "init")));
    const auto train = to_sequences(d, d.train);
    const auto val = to_sequences(d, d.validation);
    nn::TrainConfig tc = c.train;
    tc.seed = derive_seed(s, "shuffle");
    const auto hist = nn::fit(net, train, &val, tc);
    if (hist.aborted) throw NaNLoss("training diverged");
    r.best_epoch = hist.best_epoch;
    const nn::Mat<float> pred = nn::predict(net, val);
    std::vector<double> p(static_cast<std::size_t>(pred.cols()));
    for (Eigen::Index k = 0; k < pred.cols(); ++k) {
      p[static_cast<std::size_t>(k)] = static_cast<double>(pred(0, k)) * d.target_std + d.target_mean;
    }
    r.metrics = nn::evaluate(p, targets_of(d, d.validation));
  } catch (const Error& e) {
    r.failed = true;
    r.error = e.what();
    log::error("pose cell W=" + std::to_string(r.window) + " split=" + std::to_string(split) +
               " seed=" + std::to_string(seed_index) + " failed: " + e.what());
  }
  return r;
}

BaselineResult compare_baselines(const SplitData& d, double lambda, int window, int split) {
  BaselineResult b;
  b.window = window;
  b.split = split;
  const Eigen::MatrixXd Ft = flatten_windows(d, d.train);
  const Eigen::MatrixXd Fv = flatten_windows(d, d.validation);
  Eigen::VectorXd y(static_cast<Eigen::Index>(d.train.size()));
  for (std::size_t k = 0; k < d.train.size(); ++k) {
    y(static_cast<Eigen::Index>(k)) = d.windows.target[d.train[k]] - d.target_mean;
  }
  const auto truth = targets_of(d, d.validation);
  auto score = [&](const Eigen::VectorXd& w) {
    const Eigen::VectorXd pv = (Fv * w).array() + d.target_mean;
    return nn::evaluate(std::vector<double>(pv.data(), pv.data() + pv.size()), truth);
  };
  b.ridge = score(nn::fit_ridge(Ft, y, lambda));
  try {
    b.linear = score(nn::fit_ridge(Ft, y, 0.0));
  } catch (const Singular& e) {
    log::warn(std::string("linear baseline skipped: ") + e.what());
  }
  return b;
}

namespace {

void run_pool(std::size_t tasks, int workers, const std::function<void(std::size_t)>& fn) {
  std::size_t n = workers > 0 ? static_cast<std::size_t>(workers)
                              : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  n = std::min(n, tasks);
  if (n <= 1) {
    for (std::size_t i = 0; i < tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < tasks; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

nn::MetricSummary summarize_cells(const std::vector<CellResult>& cells, int window, std::size_t& failed) {
  std::vector<nn::MetricsReport> ok;
  failed = 0;
  for (const auto& c : cells) {
    if (c.window != window) continue;
    if (c.failed) {
      ++failed;
    } else {
      ok.push_back(c.metrics);
    }
  }
  return nn::summarize(ok);
}

}  // namespace

SweepResult run_sweep(const SweepConfig& c) { return run_sweep(c, generate_dataset(c)); }

SweepResult run_sweep(const SweepConfig& c, const Dataset& data) {
  c.validate();
  SweepResult res;
  const int first_split = c.last_split_only ? c.folds - 1 : 1;
  for (int W : c.windows) {
    std::map<int, SplitData> splits;
    for (int s = first_split; s <= c.folds - 1; ++s) {
      try {
        splits.emplace(s, prepare_split(data.rows, W, c.folds, s));
      } catch (const Error& e) {
        for (int k = 0; k < c.seeds; ++k) {
          res.cells.push_back({W, s, k, true, e.what(), {}, -1});
        }
        log::error("pose split W=" + std::to_string(W) + " split=" + std::to_string(s) + ": " + e.what());
      }
    }
    struct Task {
      int split;
      int seed;
    };
    std::vector<Task> tasks;
    for (const auto& [s, _] : splits) {
      for (int k = 0; k < c.seeds; ++k) tasks.push_back({s, k});
    }
    std::vector<CellResult> out(tasks.size());
    run_pool(tasks.size(), c.workers, [&](std::size_t i) {
      out[i] = train_cell(splits.at(tasks[i].split), c, tasks[i].split, tasks[i].seed);
    });
    res.cells.insert(res.cells.end(), out.begin(), out.end());
    for (const auto& [s, d] : splits) res.baselines.push_back(compare_baselines(d, c.ridge_lambda, W, s));
  }
  std::sort(res.cells.begin(), res.cells.end(), [](const CellResult& a, const CellResult& b) {
    return std::tie(a.window, a.split, a.seed_index) < std::tie(b.window, b.split, b.seed_index);
  });
  for (int W : c.windows) {
    WindowRow row;
    row.window = W;
    row.lstm = summarize_cells(res.cells, W, row.failed);
    std::vector<nn::MetricsReport> ridge, linear;
    for (const auto& b : res.baselines) {
      if (b.window != W) continue;
      if (b.ridge) ridge.push_back(*b.ridge);
      if (b.linear) linear.push_back(*b.linear);
    }
    if (!ridge.empty()) row.ridge = nn::summarize(ridge);
    if (!linear.empty()) row.linear = nn::summarize(linear);
    res.table.push_back(row);
  }
  return res;
}

namespace {

json summary_json(const nn::MetricSummary& s) {
  return json{{"mean", nn::to_json(s.mean)}, {"std", nn::to_json(s.stddev)}, {"count", s.count}};
}

}  // namespace

void write_sweep(const std::filesystem::path& dir, const SweepConfig& c, const SweepResult& r) {
  std::filesystem::create_directories(dir);
  const json cj = to_json(c);
  const std::string hash = config_hash(cj);

  std::ofstream cells(dir / "cells.csv");
  cells << csv_hash_line(hash) << '\n' << "window,split,seed,status,mae,mse,r2,exp,best_epoch\n";
  for (const auto& cell : r.cells) {
    cells << cell.window << ',' << cell.split << ',' << cell.seed_index << ',' << (cell.failed ? "failed" : "ok")
          << ',' << fmt(cell.metrics.mae) << ',' << fmt(cell.metrics.mse) << ',' << fmt(cell.metrics.r2) << ','
          << fmt(cell.metrics.exp) << ',' << cell.best_epoch << '\n';
  }

  std::ofstream table(dir / "table.csv");
  table << csv_hash_line(hash) << '\n'
        << "model,window,mae,mae_std,mse,mse_std,r2,r2_std,exp,exp_std,count,failed\n";
  auto line = [&](const std::string& model, int W, const nn::MetricSummary& s, std::size_t failed) {
    table << model << ',' << W << ',' << fmt(s.mean.mae) << ',' << fmt(s.stddev.mae) << ',' << fmt(s.mean.mse)
          << ',' << fmt(s.stddev.mse) << ',' << fmt(s.mean.r2) << ',' << fmt(s.stddev.r2) << ','
          << fmt(s.mean.exp) << ',' << fmt(s.stddev.exp) << ',' << s.count << ',' << failed << '\n';
  };
  json rows = json::array();
  for (const auto& row : r.table) {
    line("lstm", row.window, row.lstm, row.failed);
    json jr{{"window", row.window}, {"lstm", summary_json(row.lstm)}, {"failed", row.failed}};
    if (row.ridge) {
      line("ridge", row.window, *row.ridge, 0);
      jr["ridge"] = summary_json(*row.ridge);
    }
    if (row.linear) {
      line("linear", row.window, *row.linear, 0);
      jr["linear"] = summary_json(*row.linear);
    }
    rows.push_back(jr);
  }
  write_json_file(dir / "summary.json",
                  json{{"config_hash", hash}, {"config", cj}, {"experiment", "pose_sweep"}, {"table", rows}});
}

}  // namespace tactile::pose
