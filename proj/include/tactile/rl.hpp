#pragma once

// PPO with a Gaussian or categorical policy, deep Q-learning with a FIFO
// replay and a periodically synchronized target network, and behaviour
// cloning from demonstrations whose dense body seeds a Q-network.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <random>
#include <string>
#include <vector>

#include "tactile/learning.hpp"

namespace tactile::rl {

struct ActionSpace {
  bool discrete = false;
  int size = 1;  // discrete: number of actions; continuous: dimensions
  double low = -1.0;
  double high = 1.0;
};

struct EnvStep {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual int observation_width() const = 0;
  virtual ActionSpace action_space() const = 0;
  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  /// Discrete spaces pass the action index in action[0].
  virtual EnvStep step(const std::vector<double>& action) = 0;
};

/// One row of a training log.
struct EpisodeRecord {
  long step = 0;       // global environment step at the end of the episode
  int episode = 0;
  double reward = 0.0;  // undiscounted return
  int steps = 0;
  double diagnostic = 0.0;  // PPO: latest clip fraction; DQN: epsilon
};

/// CSV: hash line, then step,episode,reward,steps,<diagnostic_name>.
void write_training_log(const std::filesystem::path& path, const std::string& config_hash,
                        const std::vector<EpisodeRecord>& rows, const std::string& diagnostic_name);

// ---------------------------------------------------------------------------
// PPO

struct PPOConfig {
  int steps_per_iteration = 2048;
  int minibatch = 64;
  int epochs = 10;
  double learning_rate = 3e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double entropy_coef = 0.0;
  double max_grad_norm = 0.5;
  std::vector<int> hidden{64, 64};
  double initial_log_std = 0.0;
  int max_episode_steps = 50;  // the buffer must hold at least one full episode
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const PPOConfig& c);
PPOConfig ppo_config_from_json(const nlohmann::json& j);

/// Generalized advantage estimates and returns over a rollout. `last_value`
/// bootstraps the final step when it is not terminal.
void compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                 const std::vector<bool>& dones, double last_value, double gamma, double lambda,
                 Eigen::VectorXd& advantages, Eigen::VectorXd& returns);

struct Surrogate {
  double loss = 0.0;          // -mean(min(r A, clip(r) A))
  Eigen::VectorXd d_logp;     // d(loss)/d(log pi) per sample
  double clip_fraction = 0.0;
};

Surrogate clipped_surrogate(const Eigen::VectorXd& ratio, const Eigen::VectorXd& advantages,
                            double clip);

struct RolloutBuffer {
  Eigen::MatrixXd observations;  // (width x N)
  Eigen::MatrixXd actions;       // (action dims x N); discrete: index in row 0
  Eigen::VectorXd rewards, values, log_probs;
  std::vector<bool> dones;
  double last_value = 0.0;
  Eigen::VectorXd advantages, returns;
};

struct UpdateDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  bool aborted = false;  // non-finite diagnostics; weights were restored
};

nlohmann::json to_json(const UpdateDiagnostics& d);

class PPOAgent {
 public:
  PPOAgent(int observation_width, ActionSpace space, PPOConfig config = {});

  /// Samples an action; writes its log-probability and the value estimate.
  std::vector<double> act(const std::vector<double>& obs, std::mt19937_64& rng, double* log_prob,
                          double* value);
  /// Mean action (continuous) or most probable action (discrete).
  std::vector<double> deterministic_action(const std::vector<double>& obs);
  Eigen::VectorXd action_probabilities(const std::vector<double>& obs);
  double value(const std::vector<double>& obs);

  /// Fills advantages and returns, then runs the clipped-surrogate epochs.
  UpdateDiagnostics update(RolloutBuffer& buffer);

  nn::Network<double>& policy() { return policy_; }
  nn::Network<double>& value_net() { return value_; }
  Eigen::VectorXd& log_std() { return log_std_; }
  const PPOConfig& config() const { return config_; }
  const ActionSpace& action_space() const { return space_; }

  nlohmann::json to_json(const std::string& config_hash = "") const;

 private:
  // log pi(a|s) per column, entropy per column, and d(log pi)/d(output) helpers
  void log_probs(const Eigen::MatrixXd& out, const Eigen::MatrixXd& actions, Eigen::VectorXd& logp,
                 Eigen::VectorXd& entropy) const;

  int width_;
  ActionSpace space_;
  PPOConfig config_;
  nn::Network<double> policy_;
  nn::Network<double> value_;
  Eigen::VectorXd log_std_;
  nn::Optimizer<double> policy_opt_;
  nn::Optimizer<double> value_opt_;
  Eigen::VectorXd log_std_m_, log_std_v_;
  long log_std_t_ = 0;
  std::mt19937_64 shuffle_;
};

struct PPOTrainResult {
  std::vector<EpisodeRecord> episodes;
  std::vector<UpdateDiagnostics> updates;
};

/// Each reset uses derive_seed(env_seed, episode index).
PPOTrainResult train_ppo(Environment& env, PPOAgent& agent, int iterations, std::uint64_t env_seed,
                         const std::function<void(const EpisodeRecord&)>& on_episode = {});

// ---------------------------------------------------------------------------
// Deep Q-learning

struct DQNConfig {
  int batch = 32;
  int update_every = 4;
  int target_update_every = 8;
  double gamma = 0.75;
  double epsilon_start = 0.9;
  double epsilon_end = 0.05;
  double epsilon_decay = 200.0;  // steps
  int replay_capacity = 10000;
  double learning_rate = 1e-3;
  double clip_norm = 10.0;
  std::vector<int> hidden{64, 32, 16};
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const DQNConfig& c);
DQNConfig dqn_config_from_json(const nlohmann::json& j);

double epsilon(long t, double decay_constant, double start = 0.9, double end = 0.05);

struct Transition {
  std::vector<double> obs;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_obs;
  bool done = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  /// Overwrites the oldest transition at capacity.
  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i-th oldest stored transition.
  const Transition& at(std::size_t i) const;
  /// Distinct indices (oldest-relative). Throws InvalidArgument if n > size().
  std::vector<std::size_t> sample(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> data_;
  std::size_t head_ = 0;  // next slot to overwrite once full
};

nn::NetworkSpec q_network_spec(int observation_width, int n_actions, const std::vector<int>& hidden,
                               std::uint64_t seed);

/// r + gamma * max_a' Q_target(s', a'), with no bootstrap on terminal transitions.
Eigen::VectorXd dqn_targets(const std::vector<const Transition*>& batch, nn::Network<double>& target,
                            double gamma);

class DQNAgent {
 public:
  DQNAgent(int observation_width, int n_actions, DQNConfig config = {});
  /// Starts from an existing Q-network (e.g. transferred from pretraining).
  DQNAgent(nn::Network<double> q, DQNConfig config);

  /// Epsilon-greedy with epsilon(steps()).
  int act(const std::vector<double>& obs);
  int greedy(const std::vector<double>& obs);
  Eigen::VectorXd q_values(const std::vector<double>& obs);

  /// Stores the transition, updates every update_every steps once the replay
  /// holds a batch, and syncs the target every target_update_every steps.
  void observe(Transition t);
  /// One regression step on a sampled batch; returns the loss. Throws NaNLoss.
  double update();
  void sync_target();

  long steps() const { return steps_; }
  double current_epsilon() const;
  nn::Network<double>& online() { return online_; }
  nn::Network<double>& target() { return target_; }
  const ReplayBuffer& replay() const { return replay_; }
  const DQNConfig& config() const { return config_; }

 private:
  DQNConfig config_;
  int n_actions_;
  nn::Network<double> online_;
  nn::Network<double> target_;
  nn::Optimizer<double> opt_;
  ReplayBuffer replay_;
  std::mt19937_64 rng_;
  long steps_ = 0;
};

/// Epsilon-greedy episodes; each reset uses derive_seed(env_seed, episode).
/// `max_steps` caps episodes the environment does not end itself. Training
/// ends early once `stop_when` returns true for a finished episode.
std::vector<EpisodeRecord> train_dqn(Environment& env, DQNAgent& agent, int episodes,
                                     std::uint64_t env_seed, int max_steps,
                                     const std::function<void(const EpisodeRecord&)>& on_episode = {},
                                     const std::function<bool(const EpisodeRecord&)>& stop_when = {});

// ---------------------------------------------------------------------------
// Behaviour cloning

struct DemoRecord {
  std::vector<double> observation;
  int action = 0;
};

/// {"obs": [...], "action": one-hot}
nlohmann::json to_json(const DemoRecord& d, int n_actions);
/// Throws InvalidArgument unless the action is exactly one-hot.
DemoRecord demo_record_from_json(const nlohmann::json& j);

struct PretrainConfig {
  std::vector<int> hidden{64, 32, 16};
  int epochs = 50;
  double learning_rate = 1e-3;
  int batch = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const PretrainConfig& c);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j);

struct PretrainResult {
  nn::Network<double> policy;
  std::vector<double> loss;  // full-set cross-entropy after each epoch
  double accuracy = 0.0;
};

nn::NetworkSpec policy_network_spec(int observation_width, int n_actions,
                                    const std::vector<int>& hidden, std::uint64_t seed);

/// Cross-entropy behaviour cloning. A single action class trains anyway with
/// a DegenerateDemos warning. Throws InvalidArgument for an empty set.
PretrainResult pretrain_from_demos(const std::vector<DemoRecord>& demos, int n_actions,
                                   const PretrainConfig& config);

double demo_accuracy(nn::Network<double>& policy, const std::vector<DemoRecord>& demos);

/// Q-network copied from a pretrained policy with the softmax dropped, so
/// the initial Q-values are the policy logits and the greedy action is the
/// cloned one.
nn::Network<double> q_network_from_policy(const nn::Network<double>& policy, int n_actions);

}  // namespace tactile::rl
