#include "powertune/envsim.hpp"

#include <cmath>

namespace powertune {

void EnvParams::validate() const {
    if (mass <= 0.0) throw RejectedInput("EnvParams: mass must be > 0");
    if (dt <= 0.0) throw RejectedInput("EnvParams: dt must be > 0");
    if (torque_limit <= 0.0) throw RejectedInput("EnvParams: torque_limit must be > 0");
    if (episode_len < 1) throw RejectedInput("EnvParams: episode_len must be >= 1");
    if (tracking_sigma <= 0.0) throw RejectedInput("EnvParams: tracking_sigma must be > 0");
    for (int i = 0; i < 4; ++i) {
        if (gear_ratios[i] == 0.0) throw RejectedInput("EnvParams: gear ratios must be nonzero");
        for (int j = i + 1; j < 4; ++j)
            if (gear_ratios[i] == gear_ratios[j])
                throw RejectedInput("EnvParams: gear ratios must be pairwise distinct");
    }
}

EnvState reset(const EnvParams& params, double command, std::uint64_t /*seed*/) {
    params.validate();
    if (std::abs(command) > params.command_ceiling)
        throw RejectedInput("reset: command exceeds ceiling");
    EnvState s;
    s.command = command;
    return s;
}

std::pair<EnvState, SimRewardTerms> step(const EnvParams& params, const EnvState& state,
                                         const Vec4& action) {
    if (state.step_index >= params.episode_len)
        throw EpisodeExhausted("step: episode exhausted");
    if (!all_finite(action)) throw RejectedInput("step: non-finite action");

    const Vec4 a = clamp_action(params, action);
    double drive = 0.0;
    for (int i = 0; i < 4; ++i) drive += params.gear_ratios[i] * a[i];

    const double v = state.cart_velocity;
    double v_next;
    if (v == 0.0 && std::abs(drive) <= params.coulomb_friction) {
        v_next = 0.0;  // static friction holds the cart
    } else {
        const double dir = (v != 0.0) ? (v > 0.0 ? 1.0 : -1.0) : (drive > 0.0 ? 1.0 : -1.0);
        const double force = drive - params.viscous_friction * v - params.coulomb_friction * dir;
        v_next = v + params.dt * force / params.mass;
        // friction alone must not push the cart through zero
        if (v * v_next < 0.0 && std::abs(drive) <= params.coulomb_friction) v_next = 0.0;
    }

    EnvState next = state;
    next.cart_velocity = v_next;
    for (int i = 0; i < 4; ++i) next.motor_velocities[i] = params.gear_ratios[i] * v_next;
    next.step_index = state.step_index + 1;

    // reward terms see the new velocity but the previous action history
    EnvState scored = next;
    scored.last_action = state.last_action;
    const SimRewardTerms terms = task_reward(params, scored, a);

    next.last_action = a;
    return {next, terms};
}

SimRewardTerms task_reward(const EnvParams& params, const EnvState& state, const Vec4& action) {
    if (!all_finite(action)) throw RejectedInput("task_reward: non-finite action");
    SimRewardTerms terms;
    const double err = state.cart_velocity - state.command;
    terms.tracking = std::exp(-(err * err) / (params.tracking_sigma * params.tracking_sigma));
    double smooth = 0.0, torque = 0.0;
    for (int i = 0; i < 4; ++i) {
        const double d = action[i] - state.last_action[i];
        smooth += d * d;
        torque += action[i] * action[i];
    }
    terms.action_smoothness = -smooth;
    terms.torque_magnitude = -torque;
    return terms;
}

Observation observe(const EnvState& state) {
    Observation obs(kObservationDim);
    obs[0] = state.cart_velocity;
    obs[1] = state.command;
    obs[2] = state.command - state.cart_velocity;
    for (int i = 0; i < 4; ++i) obs[3 + i] = state.last_action[i];
    for (int i = 0; i < 4; ++i) obs[7 + i] = state.motor_velocities[i];
    return obs;
}

}  // namespace powertune
