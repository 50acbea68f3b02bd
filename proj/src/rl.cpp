#include "tactile/rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "tactile/artifact.hpp"
#include "tactile/errors.hpp"
#include "tactile/json_fields.hpp"
#include "tactile/log.hpp"
#include "tactile/seed.hpp"

namespace tactile::rl {

using nlohmann::json;
using nn::Mat;
using nn::Network;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Eigen::MatrixXd column(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void check_hidden(const std::vector<int>& hidden, const std::string& where) {
  for (int h : hidden) {
    if (h < 1) throw ConfigInvalid(where + ".hidden entries must be >= 1");
  }
}

// Column-wise softmax of logits.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const Eigen::ArrayXd e = (z.col(j).array() - z.col(j).maxCoeff()).exp();
    p.col(j) = e / e.sum();
  }
  return p;
}

Eigen::Index draw(const Eigen::VectorXd& p, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double c = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    c += p(k);
    if (u < c) return k;
  }
  return p.size() - 1;
}

bool all_finite(const Network<double>& net) {
  for (const Mat<double>* m : net.params()) {
    if (!m->allFinite()) return false;
  }
  return true;
}

}  // namespace

void write_training_log(const std::filesystem::path& path, const std::string& config_hash,
                        const std::vector<EpisodeRecord>& rows, const std::string& diagnostic_name) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << csv_hash_line(config_hash) << '\n' << "step,episode,reward,steps," << diagnostic_name << '\n';
  for (const auto& r : rows) {
    out << r.step << ',' << r.episode << ',' << fmt(r.reward) << ',' << r.steps << ',' << fmt(r.diagnostic)
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// PPO

void PPOConfig::validate() const {
  if (steps_per_iteration < 1 || minibatch < 1 || epochs < 1) {
    throw ConfigInvalid("ppo: steps_per_iteration, minibatch and epochs must be >= 1");
  }
  if (max_episode_steps < 1 || steps_per_iteration < max_episode_steps) {
    throw ConfigInvalid("ppo.steps_per_iteration must cover max_episode_steps");
  }
  if (!(learning_rate > 0.0)) throw ConfigInvalid("ppo.learning_rate must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigInvalid("ppo.gamma must be in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigInvalid("ppo.gae_lambda must be in [0, 1]");
  if (!(clip > 0.0)) throw ConfigInvalid("ppo.clip must be > 0");
  if (!(entropy_coef >= 0.0)) throw ConfigInvalid("ppo.entropy_coef must be >= 0");
  if (!(max_grad_norm >= 0.0)) throw ConfigInvalid("ppo.max_grad_norm must be >= 0");
  if (!std::isfinite(initial_log_std)) throw ConfigInvalid("ppo.initial_log_std must be finite");
  check_hidden(hidden, "ppo");
}

json to_json(const PPOConfig& c) {
  return json{{"steps_per_iteration", c.steps_per_iteration},
              {"minibatch", c.minibatch},
              {"epochs", c.epochs},
              {"learning_rate", c.learning_rate},
              {"gamma", c.gamma},
              {"gae_lambda", c.gae_lambda},
              {"clip", c.clip},
              {"entropy_coef", c.entropy_coef},
              {"max_grad_norm", c.max_grad_norm},
              {"hidden", c.hidden},
              {"initial_log_std", c.initial_log_std},
              {"max_episode_steps", c.max_episode_steps},
              {"seed", c.seed}};
}

PPOConfig ppo_config_from_json(const json& j) {
  namespace jf = json_fields;
  const std::string w = "ppo";
  jf::reject_unknown(j,
                     {"steps_per_iteration", "minibatch", "epochs", "learning_rate", "gamma", "gae_lambda",
                      "clip", "entropy_coef", "max_grad_norm", "hidden", "initial_log_std",
                      "max_episode_steps", "seed"},
                     w);
  PPOConfig c;
  jf::read(j, "steps_per_iteration", c.steps_per_iteration, w);
  jf::read(j, "minibatch", c.minibatch, w);
  jf::read(j, "epochs", c.epochs, w);
  jf::read(j, "learning_rate", c.learning_rate, w);
  jf::read(j, "gamma", c.gamma, w);
  jf::read(j, "gae_lambda", c.gae_lambda, w);
  jf::read(j, "clip", c.clip, w);
  jf::read(j, "entropy_coef", c.entropy_coef, w);
  jf::read(j, "max_grad_norm", c.max_grad_norm, w);
  jf::read(j, "hidden", c.hidden, w);
  jf::read(j, "initial_log_std", c.initial_log_std, w);
  jf::read(j, "max_episode_steps", c.max_episode_steps, w);
  jf::read(j, "seed", c.seed, w);
  c.validate();
  return c;
}

void compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values, const std::vector<bool>& dones,
                 double last_value, double gamma, double lambda, Eigen::VectorXd& advantages,
                 Eigen::VectorXd& returns) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n) {
    throw ShapeMismatch("gae: rewards, values and dones differ in length");
  }
  advantages.resize(n);
  double gae = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const bool terminal = dones[static_cast<std::size_t>(t)];
    const double next_value = terminal ? 0.0 : (t + 1 < n ? values(t + 1) : last_value);
    const double delta = rewards(t) + gamma * next_value - values(t);
    gae = delta + (terminal ? 0.0 : gamma * lambda * gae);
    advantages(t) = gae;
  }
  returns = advantages + values;
}

Surrogate clipped_surrogate(const Eigen::VectorXd& ratio, const Eigen::VectorXd& advantages, double clip) {
  if (ratio.size() != advantages.size() || ratio.size() == 0) {
    throw ShapeMismatch("surrogate: ratio and advantages must be non-empty and equal in length");
  }
  const double n = static_cast<double>(ratio.size());
  Surrogate s;
  s.d_logp.resize(ratio.size());
  double total = 0.0, clipped = 0.0;
  for (Eigen::Index i = 0; i < ratio.size(); ++i) {
    const double r = ratio(i), a = advantages(i);
    const double rc = std::clamp(r, 1.0 - clip, 1.0 + clip);
    const double unclipped = r * a, bounded = rc * a;
    // The gradient flows through r only where the unclipped term is the minimum.
    if (unclipped <= bounded) {
      total += unclipped;
      s.d_logp(i) = -a * r / n;
    } else {
      total += bounded;
      s.d_logp(i) = 0.0;
    }
    clipped += std::abs(r - 1.0) > clip ? 1.0 : 0.0;
  }
  s.loss = -total / n;
  s.clip_fraction = clipped / n;
  return s;
}

json to_json(const UpdateDiagnostics& d) {
  return json{{"policy_loss", d.policy_loss}, {"value_loss", d.value_loss}, {"entropy", d.entropy},
              {"approx_kl", d.approx_kl},     {"clip_fraction", d.clip_fraction}, {"aborted", d.aborted}};
}

namespace {

nn::NetworkSpec mlp(int in, const std::vector<int>& hidden, int out, std::uint64_t seed) {
  nn::NetworkSpec s;
  s.input_width = in;
  s.seed = seed;
  for (int h : hidden) s.layers.push_back(nn::LayerSpec::dense(h, nn::Activation::Tanh));
  s.layers.push_back(nn::LayerSpec::dense(out));
  return s;
}

}  // namespace

PPOAgent::PPOAgent(int observation_width, ActionSpace space, PPOConfig config)
    : width_(observation_width),
      space_(space),
      config_(std::move(config)),
      policy_(mlp(observation_width, config_.hidden, space.size, derive_seed(config_.seed, "policy"))),
      value_(mlp(observation_width, config_.hidden, 1, derive_seed(config_.seed, "value"))),
      shuffle_(derive_seed(config_.seed, "minibatch")) {
  config_.validate();
  if (observation_width < 1 || space.size < 1) throw InvalidArgument("ppo: empty observation or action space");
  if (!space.discrete && !(space.low < space.high)) throw InvalidArgument("ppo: action bounds are empty");
  // Near-zero policy head: initial actions are centred with the configured spread.
  *policy_.layer(policy_.layer_count() - 1).params()[0] *= 0.01;
  log_std_ = Eigen::VectorXd::Constant(space.discrete ? 0 : space.size, config_.initial_log_std);
  log_std_m_ = Eigen::VectorXd::Zero(log_std_.size());
  log_std_v_ = Eigen::VectorXd::Zero(log_std_.size());
  nn::OptimizerConfig oc;
  oc.learning_rate = config_.learning_rate;
  oc.clip_norm = config_.max_grad_norm;
  oc.epsilon = 1e-5;
  policy_opt_ = nn::Optimizer<double>(oc);
  value_opt_ = nn::Optimizer<double>(oc);
}

void PPOAgent::log_probs(const Eigen::MatrixXd& out, const Eigen::MatrixXd& actions, Eigen::VectorXd& logp,
                         Eigen::VectorXd& entropy) const {
  const Eigen::Index n = out.cols();
  logp.resize(n);
  entropy.resize(n);
  if (space_.discrete) {
    const Eigen::MatrixXd p = softmax(out);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto a = static_cast<Eigen::Index>(actions(0, j));
      logp(j) = std::log(std::max(p(a, j), 1e-300));
      double h = 0.0;
      for (Eigen::Index k = 0; k < p.rows(); ++k) {
        if (p(k, j) > 0.0) h -= p(k, j) * std::log(p(k, j));
      }
      entropy(j) = h;
    }
    return;
  }
  const double ent = log_std_.sum() + 0.5 * (1.0 + kLog2Pi) * static_cast<double>(log_std_.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    double lp = 0.0;
    for (Eigen::Index d = 0; d < out.rows(); ++d) {
      const double z = (actions(d, j) - out(d, j)) * std::exp(-log_std_(d));
      lp += -0.5 * z * z - log_std_(d) - 0.5 * kLog2Pi;
    }
    logp(j) = lp;
    entropy(j) = ent;
  }
}

std::vector<double> PPOAgent::act(const std::vector<double>& obs, std::mt19937_64& rng, double* log_prob,
                                  double* value_out) {
  const Eigen::MatrixXd x = column(obs);
  const Eigen::MatrixXd out = policy_.forward(x);
  std::vector<double> action;
  Eigen::MatrixXd a(space_.discrete ? 1 : space_.size, 1);
  if (space_.discrete) {
    const Eigen::VectorXd p = softmax(out).col(0);
    a(0, 0) = static_cast<double>(draw(p, rng));
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int d = 0; d < space_.size; ++d) a(d, 0) = out(d, 0) + std::exp(log_std_(d)) * normal(rng);
  }
  action.assign(a.data(), a.data() + a.size());
  if (log_prob) {
    Eigen::VectorXd lp, ent;
    log_probs(out, a, lp, ent);
    *log_prob = lp(0);
  }
  if (value_out) *value_out = value_.forward(x)(0, 0);
  return action;
}

std::vector<double> PPOAgent::deterministic_action(const std::vector<double>& obs) {
  const Eigen::MatrixXd out = policy_.forward(column(obs));
  if (space_.discrete) {
    Eigen::Index k = 0;
    out.col(0).maxCoeff(&k);
    return {static_cast<double>(k)};
  }
  return {out.data(), out.data() + out.rows()};
}

Eigen::VectorXd PPOAgent::action_probabilities(const std::vector<double>& obs) {
  if (!space_.discrete) throw InvalidArgument("action probabilities need a discrete action space");
  return softmax(policy_.forward(column(obs))).col(0);
}

double PPOAgent::value(const std::vector<double>& obs) { return value_.forward(column(obs))(0, 0); }

UpdateDiagnostics PPOAgent::update(RolloutBuffer& buf) {
  const Eigen::Index n = buf.rewards.size();
  if (n == 0 || buf.observations.cols() != n || buf.actions.cols() != n || buf.log_probs.size() != n) {
    throw ShapeMismatch("ppo: rollout buffer columns are inconsistent");
  }
  compute_gae(buf.rewards, buf.values, buf.dones, buf.last_value, config_.gamma, config_.gae_lambda,
              buf.advantages, buf.returns);
  Eigen::VectorXd adv = buf.advantages;
  if (n > 1) {
    const double mean = adv.mean();
    const double sd = std::sqrt((adv.array() - mean).square().mean());
    adv = (adv.array() - mean) / (sd + 1e-8);
  }

  const auto saved_policy = policy_.flat_parameters();
  const auto saved_value = value_.flat_parameters();
  const Eigen::VectorXd saved_log_std = log_std_;

  UpdateDiagnostics diag;
  double batches = 0.0;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const Eigen::Index mb = std::min<Eigen::Index>(config_.minibatch, n);

  for (int epoch = 0; epoch < config_.epochs && !diag.aborted; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_);
    for (Eigen::Index start = 0; start < n && !diag.aborted; start += mb) {
      const Eigen::Index b = std::min(mb, n - start);
      Eigen::MatrixXd x(buf.observations.rows(), b), a(buf.actions.rows(), b);
      Eigen::VectorXd old_lp(b), A(b), R(b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const Eigen::Index i = order[static_cast<std::size_t>(start + k)];
        x.col(k) = buf.observations.col(i);
        a.col(k) = buf.actions.col(i);
        old_lp(k) = buf.log_probs(i);
        A(k) = adv(i);
        R(k) = buf.returns(i);
      }

      policy_.zero_grad();
      const Eigen::MatrixXd out = policy_.forward(x, true);
      Eigen::VectorXd lp, ent;
      log_probs(out, a, lp, ent);
      const Eigen::VectorXd log_ratio = lp - old_lp;
      const Eigen::VectorXd ratio = log_ratio.array().exp();
      const Surrogate s = clipped_surrogate(ratio, A, config_.clip);
      const double mean_ent = ent.mean();
      const double kl = ((ratio.array() - 1.0) - log_ratio.array()).mean();

      value_.zero_grad();
      const Eigen::MatrixXd v = value_.forward(x, true);
      const Eigen::RowVectorXd verr = v.row(0) - R.transpose();
      const double vloss = verr.squaredNorm() / static_cast<double>(b);

      if (!std::isfinite(s.loss) || !std::isfinite(vloss) || !std::isfinite(kl) || !std::isfinite(mean_ent)) {
        diag.aborted = true;
        break;
      }

      const double bd = static_cast<double>(b);
      Eigen::MatrixXd d_out(out.rows(), b);
      if (space_.discrete) {
        const Eigen::MatrixXd p = softmax(out);
        for (Eigen::Index j = 0; j < b; ++j) {
          const auto act = static_cast<Eigen::Index>(a(0, j));
          Eigen::VectorXd g = -p.col(j) * s.d_logp(j);
          g(act) += s.d_logp(j);
          if (config_.entropy_coef > 0.0) {
            for (Eigen::Index k = 0; k < p.rows(); ++k) {
              const double pk = p(k, j);
              const double dh = pk > 0.0 ? -pk * (std::log(pk) + ent(j)) : 0.0;
              g(k) -= config_.entropy_coef * dh / bd;
            }
          }
          d_out.col(j) = g;
        }
      } else {
        Eigen::VectorXd d_log_std = Eigen::VectorXd::Constant(log_std_.size(), -config_.entropy_coef);
        for (Eigen::Index j = 0; j < b; ++j) {
          for (Eigen::Index d = 0; d < out.rows(); ++d) {
            const double inv = std::exp(-log_std_(d));
            const double z = (a(d, j) - out(d, j)) * inv;
            d_out(d, j) = s.d_logp(j) * z * inv;
            d_log_std(d) += s.d_logp(j) * (z * z - 1.0);
          }
        }
        // Adam on the state-independent log standard deviation.
        ++log_std_t_;
        const double b1 = 0.9, b2 = 0.999;
        log_std_m_ = b1 * log_std_m_ + (1.0 - b1) * d_log_std;
        log_std_v_ = b2 * log_std_v_ + (1.0 - b2) * d_log_std.cwiseProduct(d_log_std);
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(log_std_t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(log_std_t_));
        log_std_.array() -= config_.learning_rate * (log_std_m_.array() / c1) /
                            ((log_std_v_.array() / c2).sqrt() + 1e-5);
      }
      policy_.backward(d_out);
      policy_opt_.step(policy_);
      value_.backward((2.0 / bd) * verr);
      value_opt_.step(value_);

      diag.policy_loss += s.loss;
      diag.value_loss += vloss;
      diag.entropy += mean_ent;
      diag.approx_kl += kl;
      diag.clip_fraction += s.clip_fraction;
      batches += 1.0;
    }
  }

  if (!diag.aborted && (!all_finite(policy_) || !all_finite(value_) || !log_std_.allFinite())) {
    diag.aborted = true;
  }
  if (diag.aborted) {
    log::warn("NaNLoss: ppo update produced non-finite values; weights restored");
    policy_.set_flat_parameters(saved_policy);
    value_.set_flat_parameters(saved_value);
    log_std_ = saved_log_std;
    policy_opt_.reset();
    value_opt_.reset();
    return diag;
  }
  if (batches > 0.0) {
    diag.policy_loss /= batches;
    diag.value_loss /= batches;
    diag.entropy /= batches;
    diag.approx_kl /= batches;
    diag.clip_fraction /= batches;
  }
  return diag;
}

json PPOAgent::to_json(const std::string& config_hash) const {
  json j{{"format", "tactile-ppo-agent"},
         {"version", 1},
         {"config_hash", config_hash},
         {"config", rl::to_json(config_)},
         {"action_space",
          {{"discrete", space_.discrete}, {"size", space_.size}, {"low", space_.low}, {"high", space_.high}}},
         {"policy", policy_.to_json(config_hash)},
         {"value", value_.to_json(config_hash)}};
  j["log_std"] = std::vector<double>(log_std_.data(), log_std_.data() + log_std_.size());
  return j;
}

PPOTrainResult train_ppo(Environment& env, PPOAgent& agent, int iterations, std::uint64_t env_seed,
                         const std::function<void(const EpisodeRecord&)>& on_episode) {
  if (iterations < 0) throw InvalidArgument("ppo: iterations must be >= 0");
  if (env.observation_width() < 1) throw InvalidArgument("ppo: environment has no observation");
  const PPOConfig& c = agent.config();
  const ActionSpace space = agent.action_space();
  std::mt19937_64 rng(derive_seed(c.seed, "rollout"));
  PPOTrainResult result;

  int episode = 0;
  long global = 0;
  std::vector<double> obs = env.reset(derive_seed(env_seed, static_cast<std::uint64_t>(episode)));
  double ep_return = 0.0;
  int ep_steps = 0;
  double last_clip = 0.0;

  const auto n = static_cast<Eigen::Index>(c.steps_per_iteration);
  const Eigen::Index width = env.observation_width();
  for (int it = 0; it < iterations; ++it) {
    RolloutBuffer buf;
    buf.observations.resize(width, n);
    buf.actions.resize(space.discrete ? 1 : space.size, n);
    buf.rewards.resize(n);
    buf.values.resize(n);
    buf.log_probs.resize(n);
    buf.dones.assign(static_cast<std::size_t>(n), false);
    for (Eigen::Index t = 0; t < n; ++t) {
      double lp = 0.0, v = 0.0;
      const std::vector<double> a = agent.act(obs, rng, &lp, &v);
      std::vector<double> env_action = a;
      if (!space.discrete) {
        for (double& x : env_action) x = std::clamp(x, space.low, space.high);
      }
      const EnvStep s = env.step(env_action);
      ++global;
      ++ep_steps;
      ep_return += s.reward;
      // Episodes cut by the step cap are treated as terminal.
      const bool done = s.done || ep_steps >= c.max_episode_steps;
      buf.observations.col(t) = column(obs);
      buf.actions.col(t) = column(a);
      buf.rewards(t) = s.reward;
      buf.values(t) = v;
      buf.log_probs(t) = lp;
      buf.dones[static_cast<std::size_t>(t)] = done;
      if (done) {
        EpisodeRecord rec{global, episode, ep_return, ep_steps, last_clip};
        result.episodes.push_back(rec);
        if (on_episode) on_episode(rec);
        ++episode;
        ep_return = 0.0;
        ep_steps = 0;
        obs = env.reset(derive_seed(env_seed, static_cast<std::uint64_t>(episode)));
      } else {
        obs = s.observation;
      }
    }
    buf.last_value = buf.dones.back() ? 0.0 : agent.value(obs);
    const UpdateDiagnostics d = agent.update(buf);
    last_clip = d.clip_fraction;
    result.updates.push_back(d);
  }
  return result;
}

// ---------------------------------------------------------------------------
// DQN

void DQNConfig::validate() const {
  if (batch < 1 || update_every < 1 || target_update_every < 1) {
    throw ConfigInvalid("dqn: batch, update_every and target_update_every must be >= 1");
  }
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigInvalid("dqn.gamma must be in (0, 1)");
  if (!(epsilon_decay > 0.0)) throw ConfigInvalid("dqn.epsilon_decay must be > 0");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= epsilon_start)) {
    throw ConfigInvalid("dqn: need 0 <= epsilon_end <= epsilon_start <= 1");
  }
  if (replay_capacity < batch) throw ConfigInvalid("dqn.replay_capacity must hold a batch");
  if (!(learning_rate > 0.0)) throw ConfigInvalid("dqn.learning_rate must be > 0");
  if (!(clip_norm >= 0.0)) throw ConfigInvalid("dqn.clip_norm must be >= 0");
  check_hidden(hidden, "dqn");
}

json to_json(const DQNConfig& c) {
  return json{{"batch", c.batch},
              {"update_every", c.update_every},
              {"target_update_every", c.target_update_every},
              {"gamma", c.gamma},
              {"epsilon_start", c.epsilon_start},
              {"epsilon_end", c.epsilon_end},
              {"epsilon_decay", c.epsilon_decay},
              {"replay_capacity", c.replay_capacity},
              {"learning_rate", c.learning_rate},
              {"clip_norm", c.clip_norm},
              {"hidden", c.hidden},
              {"seed", c.seed}};
}

DQNConfig dqn_config_from_json(const json& j) {
  namespace jf = json_fields;
  const std::string w = "dqn";
  jf::reject_unknown(j,
                     {"batch", "update_every", "target_update_every", "gamma", "epsilon_start", "epsilon_end",
                      "epsilon_decay", "replay_capacity", "learning_rate", "clip_norm", "hidden", "seed"},
                     w);
  DQNConfig c;
  jf::read(j, "batch", c.batch, w);
  jf::read(j, "update_every", c.update_every, w);
  jf::read(j, "target_update_every", c.target_update_every, w);
  jf::read(j, "gamma", c.gamma, w);
  jf::read(j, "epsilon_start", c.epsilon_start, w);
  jf::read(j, "epsilon_end", c.epsilon_end, w);
  jf::read(j, "epsilon_decay", c.epsilon_decay, w);
  jf::read(j, "replay_capacity", c.replay_capacity, w);
  jf::read(j, "learning_rate", c.learning_rate, w);
  jf::read(j, "clip_norm", c.clip_norm, w);
  jf::read(j, "hidden", c.hidden, w);
  jf::read(j, "seed", c.seed, w);
  c.validate();
  return c;
}

double epsilon(long t, double decay_constant, double start, double end) {
  if (t < 0) throw InvalidArgument("epsilon: t must be >= 0");
  if (!(decay_constant > 0.0)) throw InvalidArgument("epsilon: decay constant must be > 0");
  return end + (start - end) * std::exp(-static_cast<double>(t) / decay_constant);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidArgument("replay capacity must be >= 1");
  data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (!std::isfinite(t.reward)) throw InvalidArgument("transition reward must be finite");
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
    return;
  }
  data_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= data_.size()) throw InvalidArgument("replay index out of range");
  return data_[(head_ + i) % data_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  if (n > data_.size()) throw InvalidArgument("replay holds fewer transitions than the batch");
  // Floyd's algorithm: n distinct indices in O(n^2) for small n.
  std::vector<std::size_t> out;
  out.reserve(n);
  const std::size_t size = data_.size();
  for (std::size_t j = size - n; j < size; ++j) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
    if (std::find(out.begin(), out.end(), t) == out.end()) {
      out.push_back(t);
    } else {
      out.push_back(j);
    }
  }
  return out;
}

nn::NetworkSpec q_network_spec(int observation_width, int n_actions, const std::vector<int>& hidden,
                               std::uint64_t seed) {
  nn::NetworkSpec s;
  s.input_width = observation_width;
  s.seed = seed;
  for (int h : hidden) s.layers.push_back(nn::LayerSpec::dense(h, nn::Activation::Relu));
  s.layers.push_back(nn::LayerSpec::dense(n_actions));
  return s;
}

Eigen::VectorXd dqn_targets(const std::vector<const Transition*>& batch, Network<double>& target, double gamma) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  Eigen::VectorXd y(b);
  if (b == 0) return y;
  const Eigen::Index width = static_cast<Eigen::Index>(batch[0]->next_obs.size());
  Eigen::MatrixXd next(width, b);
  for (Eigen::Index j = 0; j < b; ++j) next.col(j) = column(batch[static_cast<std::size_t>(j)]->next_obs);
  const Eigen::MatrixXd q = target.forward(next);
  for (Eigen::Index j = 0; j < b; ++j) {
    const Transition& t = *batch[static_cast<std::size_t>(j)];
    y(j) = t.done ? t.reward : t.reward + gamma * q.col(j).maxCoeff();
  }
  return y;
}

DQNAgent::DQNAgent(int observation_width, int n_actions, DQNConfig config)
    : DQNAgent(Network<double>(q_network_spec(observation_width, n_actions, config.hidden,
                                              derive_seed(config.seed, "q"))),
               config) {}

DQNAgent::DQNAgent(Network<double> q, DQNConfig config)
    : config_(std::move(config)),
      n_actions_(q.spec().output_width()),
      online_(std::move(q)),
      target_(online_),
      replay_(static_cast<std::size_t>(std::max(config_.replay_capacity, 1))),
      rng_(derive_seed(config_.seed, "dqn")) {
  config_.validate();
  nn::OptimizerConfig oc;
  oc.learning_rate = config_.learning_rate;
  oc.clip_norm = config_.clip_norm;
  opt_ = nn::Optimizer<double>(oc);
}

Eigen::VectorXd DQNAgent::q_values(const std::vector<double>& obs) { return online_.forward(column(obs)).col(0); }

int DQNAgent::greedy(const std::vector<double>& obs) {
  Eigen::Index k = 0;
  q_values(obs).maxCoeff(&k);
  return static_cast<int>(k);
}

double DQNAgent::current_epsilon() const {
  return epsilon(steps_, config_.epsilon_decay, config_.epsilon_start, config_.epsilon_end);
}

int DQNAgent::act(const std::vector<double>& obs) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  if (u < current_epsilon()) return std::uniform_int_distribution<int>(0, n_actions_ - 1)(rng_);
  return greedy(obs);
}

void DQNAgent::observe(Transition t) {
  if (t.action < 0 || t.action >= n_actions_) throw InvalidArgument("dqn: action index out of range");
  replay_.push(std::move(t));
  ++steps_;
  if (replay_.size() >= static_cast<std::size_t>(config_.batch) && steps_ % config_.update_every == 0) update();
  if (steps_ % config_.target_update_every == 0) sync_target();
}

double DQNAgent::update() {
  const auto idx = replay_.sample(static_cast<std::size_t>(config_.batch), rng_);
  std::vector<const Transition*> batch;
  batch.reserve(idx.size());
  for (std::size_t i : idx) batch.push_back(&replay_.at(i));
  const Eigen::VectorXd y = dqn_targets(batch, target_, config_.gamma);

  const auto b = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd x(online_.spec().input_width, b);
  for (Eigen::Index j = 0; j < b; ++j) x.col(j) = column(batch[static_cast<std::size_t>(j)]->obs);
  online_.zero_grad();
  const Eigen::MatrixXd q = online_.forward(x, true);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(q.rows(), b);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const int a = batch[static_cast<std::size_t>(j)]->action;
    const double e = q(a, j) - y(j);
    loss += e * e;
    d(a, j) = 2.0 * e / static_cast<double>(b);
  }
  loss /= static_cast<double>(b);
  if (!std::isfinite(loss)) throw NaNLoss("dqn regression loss is not finite");
  online_.backward(d);
  opt_.step(online_);
  return loss;
}

void DQNAgent::sync_target() { target_ = online_; }

std::vector<EpisodeRecord> train_dqn(Environment& env, DQNAgent& agent, int episodes, std::uint64_t env_seed,
                                     int max_steps, const std::function<void(const EpisodeRecord&)>& on_episode,
                                     const std::function<bool(const EpisodeRecord&)>& stop_when) {
  if (!env.action_space().discrete) throw InvalidArgument("dqn needs a discrete action space");
  if (max_steps < 1) throw InvalidArgument("dqn: max_steps must be >= 1");
  std::vector<EpisodeRecord> out;
  for (int ep = 0; ep < episodes; ++ep) {
    std::vector<double> obs = env.reset(derive_seed(env_seed, static_cast<std::uint64_t>(ep)));
    EpisodeRecord rec;
    rec.episode = ep;
    bool done = false;
    while (!done && rec.steps < max_steps) {
      const int a = agent.act(obs);
      EnvStep s = env.step({static_cast<double>(a)});
      rec.reward += s.reward;
      ++rec.steps;
      done = s.done;
      agent.observe({obs, a, s.reward, s.observation, s.done});
      obs = std::move(s.observation);
    }
    rec.step = agent.steps();
    rec.diagnostic = agent.current_epsilon();
    out.push_back(rec);
    if (on_episode) on_episode(rec);
    if (stop_when && stop_when(rec)) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Behaviour cloning

json to_json(const DemoRecord& d, int n_actions) {
  if (d.action < 0 || d.action >= n_actions) throw InvalidArgument("demo action index out of range");
  std::vector<int> onehot(static_cast<std::size_t>(n_actions), 0);
  onehot[static_cast<std::size_t>(d.action)] = 1;
  return json{{"obs", d.observation}, {"action", onehot}};
}

DemoRecord demo_record_from_json(const json& j) {
  if (!j.is_object() || !j.contains("obs") || !j.contains("action")) {
    throw InvalidArgument("demo record needs obs and action");
  }
  DemoRecord d;
  try {
    d.observation = j.at("obs").get<std::vector<double>>();
    const auto onehot = j.at("action").get<std::vector<double>>();
    int hot = -1, count = 0;
    for (std::size_t k = 0; k < onehot.size(); ++k) {
      if (onehot[k] != 0.0) {
        if (onehot[k] != 1.0) throw InvalidArgument("demo action entries must be 0 or 1");
        hot = static_cast<int>(k);
        ++count;
      }
    }
    if (count != 1) throw InvalidArgument("demo action must be one-hot");
    d.action = hot;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed demo record: ") + e.what());
  }
  return d;
}

void PretrainConfig::validate() const {
  if (epochs < 1 || batch < 1) throw ConfigInvalid("pretrain: epochs and batch must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigInvalid("pretrain.learning_rate must be > 0");
  check_hidden(hidden, "pretrain");
}

json to_json(const PretrainConfig& c) {
  return json{{"hidden", c.hidden},
              {"epochs", c.epochs},
              {"learning_rate", c.learning_rate},
              {"batch", c.batch},
              {"seed", c.seed}};
}

PretrainConfig pretrain_config_from_json(const json& j) {
  namespace jf = json_fields;
  const std::string w = "pretrain";
  jf::reject_unknown(j, {"hidden", "epochs", "learning_rate", "batch", "seed"}, w);
  PretrainConfig c;
  jf::read(j, "hidden", c.hidden, w);
  jf::read(j, "epochs", c.epochs, w);
  jf::read(j, "learning_rate", c.learning_rate, w);
  jf::read(j, "batch", c.batch, w);
  jf::read(j, "seed", c.seed, w);
  c.validate();
  return c;
}

nn::NetworkSpec policy_network_spec(int observation_width, int n_actions, const std::vector<int>& hidden,
                                    std::uint64_t seed) {
  nn::NetworkSpec s = q_network_spec(observation_width, n_actions, hidden, seed);
  s.layers.push_back(nn::LayerSpec::softmax());
  return s;
}

namespace {

void demo_matrices(const std::vector<DemoRecord>& demos, int n_actions, Eigen::MatrixXd& x, Eigen::MatrixXd& y) {
  const auto n = static_cast<Eigen::Index>(demos.size());
  const auto width = static_cast<Eigen::Index>(demos.front().observation.size());
  x.resize(width, n);
  y = Eigen::MatrixXd::Zero(n_actions, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const DemoRecord& d = demos[static_cast<std::size_t>(j)];
    if (static_cast<Eigen::Index>(d.observation.size()) != width) {
      throw ShapeMismatch("demo observations differ in width");
    }
    if (d.action < 0 || d.action >= n_actions) throw InvalidArgument("demo action index out of range");
    x.col(j) = column(d.observation);
    y(d.action, j) = 1.0;
  }
}

}  // namespace

double demo_accuracy(Network<double>& policy, const std::vector<DemoRecord>& demos) {
  if (demos.empty()) throw InvalidArgument("accuracy of an empty demo set");
  Eigen::MatrixXd x, y;
  demo_matrices(demos, policy.spec().output_width(), x, y);
  const Eigen::MatrixXd p = policy.forward(x);
  double hits = 0.0;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    Eigen::Index k = 0;
    p.col(j).maxCoeff(&k);
    hits += k == demos[static_cast<std::size_t>(j)].action ? 1.0 : 0.0;
  }
  return hits / static_cast<double>(p.cols());
}

PretrainResult pretrain_from_demos(const std::vector<DemoRecord>& demos, int n_actions,
                                   const PretrainConfig& config) {
  config.validate();
  if (demos.empty()) throw InvalidArgument("pretraining needs at least one demonstration");
  if (n_actions < 2) throw InvalidArgument("pretraining needs at least two actions");
  Eigen::MatrixXd x, y;
  demo_matrices(demos, n_actions, x, y);
  const bool single = std::all_of(demos.begin(), demos.end(),
                                  [&](const DemoRecord& d) { return d.action == demos.front().action; });
  if (single) log::warn("DegenerateDemos: every demonstration uses action " + std::to_string(demos.front().action));

  PretrainResult r{Network<double>(policy_network_spec(static_cast<int>(x.rows()), n_actions, config.hidden,
                                                       derive_seed(config.seed, "init"))),
                   {},
                   0.0};
  nn::OptimizerConfig oc;
  oc.learning_rate = config.learning_rate;
  nn::Optimizer<double> opt(oc);
  const std::uint64_t shuffle_seed = derive_seed(config.seed, "shuffle");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.cols()));
  std::iota(order.begin(), order.end(), 0);
  const Eigen::Index bs = std::min<Eigen::Index>(config.batch, x.cols());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < x.cols(); start += bs) {
      const Eigen::Index b = std::min(bs, x.cols() - start);
      Eigen::MatrixXd xb(x.rows(), b), yb(y.rows(), b);
      for (Eigen::Index k = 0; k < b; ++k) {
        xb.col(k) = x.col(order[static_cast<std::size_t>(start + k)]);
        yb.col(k) = y.col(order[static_cast<std::size_t>(start + k)]);
      }
      nn::train_step(r.policy, opt, nn::Seq<double>{xb}, yb, nn::Loss::CrossEntropy);
    }
    r.loss.push_back(nn::loss_value<double>(nn::Loss::CrossEntropy, r.policy.forward(x), y, nullptr));
  }
  r.accuracy = demo_accuracy(r.policy, demos);
  return r;
}

Network<double> q_network_from_policy(const Network<double>& policy, int n_actions) {
  Network<double> src = policy;
  const nn::NetworkSpec& ps = src.spec();
  if (ps.layers.size() < 2 || ps.layers.back().kind != nn::LayerKind::Softmax) {
    throw ShapeMismatch("policy must end in a dense layer and a softmax");
  }
  std::vector<int> hidden;
  for (std::size_t i = 0; i + 1 < ps.layers.size(); ++i) {
    if (ps.layers[i].kind != nn::LayerKind::Dense) throw ShapeMismatch("policy body must be dense layers");
    if (i + 2 < ps.layers.size()) hidden.push_back(ps.layers[i].units);
  }
  if (ps.output_width() != n_actions) throw ShapeMismatch("policy width differs from the action count");
  Network<double> q(q_network_spec(ps.input_width, n_actions, hidden, 0));
  for (std::size_t i = 0; i + 1 < ps.layers.size(); ++i) {
    auto to = q.layer(i).params();
    auto from = src.layer(i).params();
    for (std::size_t k = 0; k < to.size(); ++k) *to[k] = *from[k];
  }
  return q;
}

}  // namespace tactile::rl
