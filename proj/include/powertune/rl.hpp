#pragma once

#include <limits>
#include <optional>

#include "powertune/adam.hpp"
#include "powertune/envsim.hpp"
#include "powertune/gaussian_policy.hpp"
#include "powertune/measurement.hpp"

namespace powertune {

struct RewardConfig {
    double w_tracking = 1.0;
    double w_smoothness = 0.05;
    double w_torque = 0.01;
    double lambda = 1.0;          // weight on the -predicted-current term
    double centering_rate = 0.01;
    bool centering = true;
    double center = 0.0;          // running mean, persists across a run

    double sim_sum(const SimRewardTerms& terms) const {
        return w_tracking * terms.tracking + w_smoothness * terms.action_smoothness +
               w_torque * terms.torque_magnitude;
    }
};

double center_reward(RewardConfig& config, double raw);

double scalarize(RewardConfig& config, const SimRewardTerms& terms,
                 std::optional<double> predicted_current);

struct PpoConfig {
    double clip_eps = 0.2;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    int epochs = 4;
    int minibatch_size = 256;
    int rollout_len = 400;
    int n_envs = 8;
    long total_steps = 60000;
    double learning_rate = 3e-4;
    double value_learning_rate = 1e-3;
    std::vector<double> commands = {0.5, 0.8, 1.1};
};

struct FinetuneConfig {
    double kl_bound = 0.5;  // c; infinity disables the anchor penalty
    double lambda = 1.0;
    PpoConfig ppo;
    std::uint64_t seed = 0;
};

// Per-step energy signal injected into the reward during fine-tuning. The
// value is interpreted as a predicted current-equivalent: reward adds
// lambda * (-value).
class EnergySignal {
public:
    virtual ~EnergySignal() = default;
    virtual void begin_episode(int env_index) = 0;
    virtual double step(int env_index, const Vec4& torques, const Vec4& motor_velocities) = 0;
};

class MeasuredCurrentSignal : public EnergySignal {
public:
    MeasuredCurrentSignal(const MeasurementModel& model, int n_envs);
    void begin_episode(int env_index) override;
    double step(int env_index, const Vec4& torques, const Vec4& motor_velocities) override;

private:
    std::vector<CurrentPredictor> predictors_;
};

struct ValueNet {
    MlpSpec spec;
    ParamVector params;
};

ValueNet make_value_net(int input_dim, std::uint64_t seed);

struct RolloutBatch {
    int n_envs = 0;
    int len = 0;
    std::vector<std::vector<double>> obs;
    std::vector<std::vector<double>> actions;
    std::vector<double> log_probs;
    std::vector<SimRewardTerms> terms;
    std::vector<std::optional<double>> predicted_current;
    std::vector<double> rewards;  // scalarized (and centered, when enabled)
    std::vector<double> values;
    std::vector<char> done;       // episode ended after this step
    std::vector<double> bootstrap_values;  // one per env, V(s_T)

    std::size_t size() const { return obs.size(); }
};

// Persistent vectorized rollout context so episodes continue across batches.
struct RolloutContext {
    EnvParams env;
    std::vector<EnvState> states;
    Rng rng;
    std::vector<double> commands;

    RolloutContext(const EnvParams& env_params, int n_envs, std::uint64_t seed,
                   std::vector<double> command_set);
    void reset_env(int i, EnergySignal* energy);
};

RolloutBatch collect_rollouts(RolloutContext& ctx, const GaussianPolicy& policy,
                              const ValueNet& value_net, EnergySignal* energy,
                              RewardConfig& reward, int rollout_len);

struct GaeResult {
    std::vector<double> advantages;      // normalized
    std::vector<double> raw_advantages;
    std::vector<double> returns;
};

GaeResult gae(const RolloutBatch& batch, double gamma, double gae_lambda);

struct PpoStats {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double anchor_kl = 0.0;
    double beta = 0.0;
    int epochs_run = 0;
};

// Clipped-surrogate update with an adaptive KL-to-anchor penalty. beta doubles
// when the measured anchor KL exceeds kl_bound, halves below kl_bound/2, and
// epochs stop early past 1.5 * kl_bound. anchor == nullptr disables the penalty.
PpoStats ppo_update(GaussianPolicy& policy, ValueNet& value_net,
                    const RolloutBatch& batch, const GaeResult& adv, const PpoConfig& cfg,
                    const GaussianPolicy* anchor, double kl_bound, double& beta,
                    AdamState& policy_opt, AdamState& value_opt, Rng& rng);

struct TrainStatsRow {
    long step = 0;
    double mean_sim_reward = 0.0;
    double mean_predicted_current = 0.0;
    double anchor_kl = 0.0;
    double beta = 0.0;
};

// Observations visited by the (stochastic) policy, for KL estimates.
std::vector<std::vector<double>> sample_observations(const EnvParams& env,
                                                     const GaussianPolicy& policy,
                                                     const std::vector<double>& commands,
                                                     int episodes, std::uint64_t seed);

// Fraction of steps (per command) with |v - command| <= 0.1 * command,
// deterministic mean-action rollouts.
double band_occupancy(const EnvParams& env, const GaussianPolicy& policy, double command,
                      int episodes = 3);

struct PretrainConfig {
    PpoConfig ppo;
    double min_occupancy = 0.8;
    std::uint64_t seed = 0;
};

PolicyCheckpoint pretrain(const EnvParams& env, const PretrainConfig& cfg,
                          std::vector<TrainStatsRow>* stats = nullptr);

PolicyCheckpoint finetune(const EnvParams& env, const PolicyCheckpoint& anchor,
                          EnergySignal& energy, const FinetuneConfig& cfg,
                          std::vector<TrainStatsRow>* stats = nullptr);

}  // namespace powertune
