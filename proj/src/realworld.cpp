#include "powertune/realworld.hpp"

#include <cmath>

namespace powertune {

void RealParams::validate() const {
    env.validate();
    for (int i = 0; i < 4; ++i) {
        if (motor_kt[i] <= 0.0 || motor_resistance[i] <= 0.0 || switching_coeff[i] <= 0.0)
            throw RejectedInput("RealParams: motor constants must be strictly positive");
    }
    if (idle_current <= 0.0) throw RejectedInput("RealParams: idle_current must be > 0");
    if (bus_voltage <= 0.0) throw RejectedInput("RealParams: bus_voltage must be > 0");
    if (regen_efficiency < 0.0 || regen_efficiency >= 1.0)
        throw RejectedInput("RealParams: regen_efficiency must be in [0, 1)");
    if (thermal_tau <= 0.0) throw RejectedInput("RealParams: thermal_tau must be > 0");
    if (battery_capacity <= 0.0) throw RejectedInput("RealParams: battery_capacity must be > 0");
}

RealParams make_real_params(const EnvParams& sim) {
    RealParams real;
    real.env = sim;
    real.env.mass = sim.mass * 1.15;
    real.env.viscous_friction = sim.viscous_friction * 1.3;
    real.env.coulomb_friction = sim.coulomb_friction * 0.8;
    return real;
}

RealState real_reset(const RealParams& params, double command, std::uint64_t seed,
                     double initial_soc) {
    params.validate();
    if (initial_soc <= 0.0 || initial_soc > 1.0)
        throw RejectedInput("real_reset: initial_soc must be in (0, 1]");
    RealState s;
    s.env_state = reset(params.env, command, seed);
    s.soc = initial_soc;
    return s;
}

double oracle_current(const RealParams& params, const Vec4& torques,
                      const Vec4& motor_velocities, const Vec4& thermal) {
    if (!all_finite(torques) || !all_finite(motor_velocities) || !all_finite(thermal))
        throw RejectedInput("oracle_current: non-finite input");
    double current = params.idle_current;
    for (int i = 0; i < 4; ++i) {
        const double mech = torques[i] * motor_velocities[i];
        const double mech_draw = mech >= 0.0 ? mech : -params.regen_efficiency * std::abs(mech);
        const double r_eff = params.motor_resistance[i] + thermal[i];
        const double joule = (r_eff / (params.motor_kt[i] * params.motor_kt[i])) *
                             torques[i] * torques[i];
        current += (mech_draw + joule) / params.bus_voltage;
        current += params.switching_coeff[i] * std::sqrt(std::abs(torques[i]));
    }
    return std::max(current, 0.0);
}

double measure_idle(const RealParams& params) {
    return oracle_current(params, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0});
}

std::tuple<RealState, CurrentSample, SimRewardTerms> real_step(const RealParams& params,
                                                               const RealState& state,
                                                               const Vec4& action) {
    const Vec4 a = clamp_action(params.env, action);
    auto [env_next, terms] = step(params.env, state.env_state, action);

    CurrentSample sample;
    sample.torques = a;
    sample.motor_velocities = state.env_state.motor_velocities;
    sample.step_index = state.env_state.step_index;
    sample.current = oracle_current(params, a, sample.motor_velocities, state.thermal);

    RealState next;
    next.env_state = env_next;
    const double alpha = params.env.dt / params.thermal_tau;
    for (int i = 0; i < 4; ++i) {
        const double target = params.thermal_gain * a[i] * a[i];
        next.thermal[i] = state.thermal[i] + alpha * (target - state.thermal[i]);
    }
    next.soc = std::clamp(
        state.soc - sample.current * params.env.dt / (3600.0 * params.battery_capacity), 0.0, 1.0);
    return {next, sample, terms};
}

std::vector<SocPoint> soc_curve(const RealParams& params, const PolicyCheckpoint& policy,
                                const std::vector<std::pair<double, double>>& command_schedule,
                                double initial_soc) {
    if (policy.policy.spec.input_dim != kObservationDim)
        throw RejectedInput("soc_curve: policy observation size mismatch");
    double total_seconds = 0.0;
    for (const auto& [cmd, dur] : command_schedule) total_seconds += dur;
    const long total_steps = std::lround(total_seconds / params.env.dt);

    RealParams run = params;
    run.env.episode_len = int(std::max<long>(total_steps, 1));
    RealState state = real_reset(run, command_schedule.empty() ? 0.0 : command_schedule[0].first,
                                 0, initial_soc);

    std::vector<SocPoint> curve{{0.0, initial_soc}};
    double distance = 0.0;
    double next_sample_at = 1.0;
    std::size_t block = 0;
    double block_end = command_schedule.empty() ? 0.0 : command_schedule[0].second;
    for (long t = 0; t < total_steps; ++t) {
        const double now = double(t) * run.env.dt;
        while (block + 1 < command_schedule.size() && now >= block_end) {
            ++block;
            block_end += command_schedule[block].second;
            state.env_state.command = command_schedule[block].first;
        }
        const auto obs = observe(state.env_state);
        const auto mean = policy_mean(policy.policy, obs);
        Vec4 action;
        for (int i = 0; i < 4; ++i) action[i] = mean[std::size_t(i)];
        auto [next, sample, terms] = real_step(run, state, action);
        (void)sample;
        (void)terms;
        distance += std::abs(next.env_state.cart_velocity) * run.env.dt;
        state = next;
        if (distance >= next_sample_at) {
            curve.push_back({distance, state.soc});
            next_sample_at = std::floor(distance) + 1.0;
        }
    }
    if (total_steps > 0) curve.push_back({distance, state.soc});
    return curve;
}

}  // namespace powertune
