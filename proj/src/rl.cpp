#include "powertune/rl.hpp"

#include <algorithm>
#include <cmath>

#include "powertune/adam.hpp"

namespace powertune {

double center_reward(RewardConfig& config, double raw) {
    if (config.centering_rate <= 0.0 || config.centering_rate > 1.0)
        throw RejectedInput("center_reward: centering_rate must be in (0, 1]");
    config.center += config.centering_rate * (raw - config.center);
    return raw - config.center;
}

double scalarize(RewardConfig& config, const SimRewardTerms& terms,
                 std::optional<double> predicted_current) {
    double raw = config.sim_sum(terms);
    if (predicted_current) raw += config.lambda * (-*predicted_current);
    if (!std::isfinite(raw)) throw NumericError("scalarize: non-finite reward");
    return config.centering ? center_reward(config, raw) : raw;
}

MeasuredCurrentSignal::MeasuredCurrentSignal(const MeasurementModel& model, int n_envs) {
    if (model.spec.input_dim != kMeasurementInputDim)
        throw RejectedInput("MeasuredCurrentSignal: model input dimension mismatch");
    for (int i = 0; i < n_envs; ++i) predictors_.emplace_back(model);
}

void MeasuredCurrentSignal::begin_episode(int env_index) {
    predictors_[std::size_t(env_index)].reset();
}

double MeasuredCurrentSignal::step(int env_index, const Vec4& torques,
                                   const Vec4& motor_velocities) {
    return predictors_[std::size_t(env_index)].step(torques, motor_velocities);
}

ValueNet make_value_net(int input_dim, std::uint64_t seed) {
    ValueNet net;
    net.spec = MlpSpec{input_dim, {64, 64}, 1};
    net.params = init_params(net.spec, seed);
    return net;
}

RolloutContext::RolloutContext(const EnvParams& env_params, int n_envs, std::uint64_t seed,
                               std::vector<double> command_set)
    : env(env_params), rng(seed), commands(std::move(command_set)) {
    if (n_envs < 1) throw RejectedInput("RolloutContext: need at least one env");
    if (commands.empty()) throw RejectedInput("RolloutContext: empty command set");
    for (int i = 0; i < n_envs; ++i) {
        const double cmd = commands[rng.uniform_int(commands.size())];
        states.push_back(reset(env, cmd, seed));
    }
}

void RolloutContext::reset_env(int i, EnergySignal* energy) {
    const double cmd = commands[rng.uniform_int(commands.size())];
    states[std::size_t(i)] = reset(env, cmd, 0);
    if (energy) energy->begin_episode(i);
}

RolloutBatch collect_rollouts(RolloutContext& ctx, const GaussianPolicy& policy,
                              const ValueNet& value_net, EnergySignal* energy,
                              RewardConfig& reward, int rollout_len) {
    if (policy.spec.input_dim != kObservationDim)
        throw RejectedInput("collect_rollouts: policy observation size mismatch");
    RolloutBatch batch;
    batch.n_envs = int(ctx.states.size());
    batch.len = rollout_len;
    const std::size_t total = std::size_t(batch.n_envs) * std::size_t(rollout_len);
    batch.obs.reserve(total);

    for (int t = 0; t < rollout_len; ++t) {
        for (int i = 0; i < batch.n_envs; ++i) {
            EnvState& state = ctx.states[std::size_t(i)];
            auto obs = observe(state);
            auto sample = act(policy, obs, ctx.rng);
            Vec4 action;
            for (int k = 0; k < 4; ++k) action[k] = sample.action[std::size_t(k)];

            std::optional<double> ihat;
            if (energy) {
                const Vec4 applied = clamp_action(ctx.env, action);
                ihat = energy->step(i, applied, state.motor_velocities);
            }

            auto [next, terms] = step(ctx.env, state, action);
            const double value = mlp_forward(value_net.spec, value_net.params, obs)[0];
            const double r = scalarize(reward, terms, ihat);

            batch.obs.push_back(std::move(obs));
            batch.actions.push_back(std::move(sample.action));
            batch.log_probs.push_back(sample.log_prob);
            batch.terms.push_back(terms);
            batch.predicted_current.push_back(ihat);
            batch.rewards.push_back(r);
            batch.values.push_back(value);

            const bool done = next.step_index >= ctx.env.episode_len;
            batch.done.push_back(done ? 1 : 0);
            state = next;
            if (done) ctx.reset_env(i, energy);
        }
    }
    batch.bootstrap_values.resize(std::size_t(batch.n_envs));
    for (int i = 0; i < batch.n_envs; ++i) {
        const auto obs = observe(ctx.states[std::size_t(i)]);
        batch.bootstrap_values[std::size_t(i)] =
            mlp_forward(value_net.spec, value_net.params, obs)[0];
    }
    return batch;
}

GaeResult gae(const RolloutBatch& batch, double gamma, double gae_lambda) {
    const std::size_t n = batch.size();
    GaeResult result;
    result.raw_advantages.assign(n, 0.0);
    result.returns.assign(n, 0.0);

    for (int i = 0; i < batch.n_envs; ++i) {
        double adv_next = 0.0;
        double v_next = batch.bootstrap_values[std::size_t(i)];
        for (int t = batch.len - 1; t >= 0; --t) {
            const std::size_t idx = std::size_t(t) * std::size_t(batch.n_envs) + std::size_t(i);
            const double not_done = batch.done[idx] ? 0.0 : 1.0;
            const double delta =
                batch.rewards[idx] + gamma * v_next * not_done - batch.values[idx];
            adv_next = delta + gamma * gae_lambda * not_done * adv_next;
            result.raw_advantages[idx] = adv_next;
            result.returns[idx] = adv_next + batch.values[idx];
            v_next = batch.values[idx];
        }
    }

    double mean = 0.0;
    for (double a : result.raw_advantages) mean += a;
    mean /= double(n);
    double var = 0.0;
    for (double a : result.raw_advantages) var += (a - mean) * (a - mean);
    var /= double(n);
    const double std_dev = std::sqrt(std::max(var, 1e-16));
    result.advantages.resize(n);
    for (std::size_t k = 0; k < n; ++k)
        result.advantages[k] = (result.raw_advantages[k] - mean) / std_dev;
    return result;
}

PpoStats ppo_update(GaussianPolicy& policy, ValueNet& value_net, const RolloutBatch& batch,
                    const GaeResult& adv, const PpoConfig& cfg, const GaussianPolicy* anchor,
                    double kl_bound, double& beta, AdamState& policy_opt, AdamState& value_opt,
                    Rng& rng) {
    const std::size_t n = batch.size();
    const ParamVector policy_backup = policy.params;
    const ParamVector value_backup = value_net.params;
    const bool penalize = anchor != nullptr && std::isfinite(kl_bound);

    PpoStats stats;
    stats.beta = penalize ? beta : 0.0;
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < n; ++k) order[k] = k;

    try {
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            const ParamVector epoch_snapshot = policy.params;
            shuffle_indices(order, rng);
            for (std::size_t start = 0; start < n; start += std::size_t(cfg.minibatch_size)) {
                const std::size_t end =
                    std::min(start + std::size_t(cfg.minibatch_size), n);
                const double inv = 1.0 / double(end - start);

                std::vector<std::vector<double>> mb_obs;
                if (penalize && beta > 0.0) {
                    mb_obs.reserve(end - start);
                    for (std::size_t k = start; k < end; ++k)
                        mb_obs.push_back(batch.obs[order[k]]);
                }

                auto policy_loss = [&](ad::Tape& tape) {
                    int total = -1;
                    for (std::size_t k = start; k < end; ++k) {
                        const std::size_t idx = order[k];
                        const int lp = log_prob(policy, tape, batch.obs[idx], batch.actions[idx]);
                        const int ratio =
                            tape.exp_(tape.add_scalar(lp, -batch.log_probs[idx]));
                        const double a = adv.advantages[idx];
                        const int unclipped = tape.scale(ratio, a);
                        const int clipped = tape.scale(
                            tape.clamp_const(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), a);
                        const int obj = tape.min_(unclipped, clipped);
                        total = (total < 0) ? obj : tape.add(total, obj);
                    }
                    int loss = tape.scale(total, -inv);
                    if (penalize && beta > 0.0) {
                        const int kl = kl_mean(policy, *anchor, tape, mb_obs);
                        loss = tape.add(loss, tape.scale(kl, beta));
                    }
                    return loss;
                };
                double ploss = 0.0;
                const ParamVector pg = ad::grad(policy_loss, policy.params, &ploss);
                adam_step(policy_opt, policy.params, pg.values);
                stats.policy_loss = ploss;

                auto value_loss = [&](ad::Tape& tape) {
                    int total = -1;
                    for (std::size_t k = start; k < end; ++k) {
                        const std::size_t idx = order[k];
                        const int v =
                            mlp_forward(value_net.spec, tape, tape.constant(batch.obs[idx]));
                        const int err = tape.add_scalar(v, -adv.returns[idx]);
                        const int sq = tape.mul(err, err);
                        total = (total < 0) ? sq : tape.add(total, sq);
                    }
                    return tape.scale(total, inv);
                };
                double vloss = 0.0;
                ParamVector vg(value_net.params.layout);
                {
                    ad::Tape tape(value_net.params, vg.values);
                    const int node = value_loss(tape);
                    vloss = tape.scalar(node);
                    if (!std::isfinite(vloss)) throw NumericError("ppo_update: value loss");
                    tape.backward(node);
                }
                adam_step(value_opt, value_net.params, vg.values);
                stats.value_loss = vloss;
            }

            stats.epochs_run = epoch + 1;
            if (anchor) {
                stats.anchor_kl = kl_mean(policy, *anchor, batch.obs);
                if (penalize) {
                    if (stats.anchor_kl > kl_bound)
                        beta = std::min(beta * 2.0, 1e6);
                    else if (stats.anchor_kl < 0.5 * kl_bound)
                        beta = std::max(beta * 0.5, 1e-4);
                    stats.beta = beta;
                    if (stats.anchor_kl > 1.5 * kl_bound) {
                        // undo the offending epoch so the bound holds
                        policy.params = epoch_snapshot;
                        stats.anchor_kl = kl_mean(policy, *anchor, batch.obs);
                        break;
                    }
                }
            }
        }
    } catch (const NumericError&) {
        policy.params = policy_backup;
        value_net.params = value_backup;
        throw;
    }
    return stats;
}

std::vector<std::vector<double>> sample_observations(const EnvParams& env,
                                                     const GaussianPolicy& policy,
                                                     const std::vector<double>& commands,
                                                     int episodes, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> batch;
    for (int e = 0; e < episodes; ++e) {
        const double cmd = commands[std::size_t(e) % commands.size()];
        EnvState state = reset(env, cmd, seed);
        for (int t = 0; t < env.episode_len; ++t) {
            auto obs = observe(state);
            const auto sample = act(policy, obs, rng);
            Vec4 action;
            for (int k = 0; k < 4; ++k) action[k] = sample.action[std::size_t(k)];
            batch.push_back(std::move(obs));
            state = step(env, state, action).first;
        }
    }
    return batch;
}

double band_occupancy(const EnvParams& env, const GaussianPolicy& policy, double command,
                      int episodes) {
    long in_band = 0, total = 0;
    const double band = command != 0.0 ? 0.1 * std::abs(command) : 0.05;
    for (int e = 0; e < episodes; ++e) {
        EnvState state = reset(env, command, std::uint64_t(e));
        for (int t = 0; t < env.episode_len; ++t) {
            const auto mean = policy_mean(policy, observe(state));
            Vec4 action;
            for (int k = 0; k < 4; ++k) action[k] = mean[std::size_t(k)];
            auto [next, terms] = step(env, state, action);
            state = next;
            if (std::abs(state.cart_velocity - command) <= band) ++in_band;
            ++total;
        }
    }
    return double(in_band) / double(total);
}

namespace {

PolicyCheckpoint run_ppo(const EnvParams& env, GaussianPolicy policy, const PpoConfig& ppo,
                         RewardConfig reward, EnergySignal* energy,
                         const GaussianPolicy* anchor, double kl_bound, std::uint64_t seed,
                         std::vector<TrainStatsRow>* stats_out) {
    ValueNet value_net = make_value_net(kObservationDim, seed ^ 0x76a1);
    AdamState policy_opt(policy.params.size(), ppo.learning_rate);
    AdamState value_opt(value_net.params.size(), ppo.value_learning_rate);
    RolloutContext ctx(env, ppo.n_envs, seed ^ 0xc0113c7ULL, ppo.commands);
    Rng update_rng(seed ^ 0x0bdaceULL);
    double beta = 1.0;

    long steps_done = 0;
    while (steps_done < ppo.total_steps) {
        RolloutBatch batch = collect_rollouts(ctx, policy, value_net, energy, reward,
                                              ppo.rollout_len);
        steps_done += long(batch.size());
        const GaeResult adv = gae(batch, ppo.gamma, ppo.gae_lambda);
        const PpoStats stats = ppo_update(policy, value_net, batch, adv, ppo, anchor, kl_bound,
                                          beta, policy_opt, value_opt, update_rng);
        if (stats_out) {
            TrainStatsRow row;
            row.step = steps_done;
            double sim_sum = 0.0, ihat_sum = 0.0;
            std::size_t n_ihat = 0;
            for (std::size_t k = 0; k < batch.size(); ++k) {
                sim_sum += reward.sim_sum(batch.terms[k]);
                if (batch.predicted_current[k]) {
                    ihat_sum += *batch.predicted_current[k];
                    ++n_ihat;
                }
            }
            row.mean_sim_reward = sim_sum / double(batch.size());
            row.mean_predicted_current = n_ihat ? ihat_sum / double(n_ihat) : 0.0;
            row.anchor_kl = stats.anchor_kl;
            row.beta = stats.beta;
            stats_out->push_back(row);
        }
    }

    // The per-epoch bound is enforced on rollout batches; re-check on a fresh
    // state distribution and, if the policy drifted past 1.5c, pull it back
    // along the straight line to the anchor until it complies.
    if (anchor && std::isfinite(kl_bound)) {
        const auto obs = sample_observations(env, policy, ppo.commands, 3, seed ^ 0xf4e5ULL);
        auto measure = [&](double alpha) {
            GaussianPolicy blend = policy;
            for (std::size_t k = 0; k < blend.params.size(); ++k)
                blend.params.values[k] = anchor->params.values[k] +
                                         alpha * (policy.params.values[k] -
                                                  anchor->params.values[k]);
            return std::make_pair(kl_mean(blend, *anchor, obs), std::move(blend));
        };
        if (kl_mean(policy, *anchor, obs) > 1.5 * kl_bound) {
            double lo = 0.0, hi = 1.0;
            for (int it = 0; it < 40; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (measure(mid).first <= 1.4 * kl_bound)
                    lo = mid;
                else
                    hi = mid;
            }
            policy = measure(lo).second;
        }
    }

    PolicyCheckpoint out;
    out.policy = std::move(policy);
    return out;
}

}  // namespace

PolicyCheckpoint pretrain(const EnvParams& env, const PretrainConfig& cfg,
                          std::vector<TrainStatsRow>* stats) {
    GaussianPolicy policy = make_policy(MlpSpec{kObservationDim, {64, 64}, 4}, cfg.seed);
    RewardConfig reward;
    reward.centering = false;

    PolicyCheckpoint ckpt =
        run_ppo(env, std::move(policy), cfg.ppo, reward, nullptr, nullptr,
                std::numeric_limits<double>::infinity(), cfg.seed, stats);
    ckpt.lineage = Lineage::PreTrained;
    ckpt.id = "pre-trained";

    for (double cmd : cfg.ppo.commands) {
        const double occ = band_occupancy(env, ckpt.policy, cmd);
        if (occ < cfg.min_occupancy)
            throw TrainingFailure("pretrain: band occupancy " + std::to_string(occ) +
                                  " below criterion at command " + std::to_string(cmd));
    }
    return ckpt;
}

PolicyCheckpoint finetune(const EnvParams& env, const PolicyCheckpoint& anchor,
                          EnergySignal& energy, const FinetuneConfig& cfg,
                          std::vector<TrainStatsRow>* stats) {
    RewardConfig reward;
    reward.lambda = cfg.lambda;
    reward.centering = true;

    PolicyCheckpoint ckpt = run_ppo(env, anchor.policy, cfg.ppo, reward, &energy,
                                    &anchor.policy, cfg.kl_bound, cfg.seed, stats);
    ckpt.lineage = Lineage::Candidate;
    ckpt.config_tag = ConfigTag{cfg.lambda, cfg.kl_bound, anchor.id};
    ckpt.iteration = anchor.iteration;
    return ckpt;
}

}  // namespace powertune
