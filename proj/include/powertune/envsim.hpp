#pragma once

#include <vector>

#include "powertune/common.hpp"

namespace powertune {

// Redundant-actuator cart: four motors with distinct gearing drive one cart
// that tracks a commanded velocity. Motor i spins at q_dot_i = gear_ratios[i] * v.
struct EnvParams {
    double mass = 5.0;                        // kg
    Vec4 gear_ratios = {8.0, 10.0, 12.5, 16.0};  // rad per m
    double viscous_friction = 3.0;            // N*s/m
    double coulomb_friction = 1.0;            // N
    double torque_limit = 1.0;                // N*m per motor
    double dt = 0.02;                         // s (50 Hz)
    int episode_len = 500;                    // steps
    double command_ceiling = 2.0;             // m/s
    double tracking_sigma = 0.25;             // m/s, width of tracking kernel

    void validate() const;
};

struct EnvState {
    double cart_velocity = 0.0;
    double command = 0.0;
    Vec4 motor_velocities = {0, 0, 0, 0};
    Vec4 last_action = {0, 0, 0, 0};
    int step_index = 0;
};

struct SimRewardTerms {
    double tracking = 0.0;          // exp(-(v - command)^2 / sigma^2)
    double action_smoothness = 0.0; // -|a - a_prev|^2
    double torque_magnitude = 0.0;  // -|a|^2
};

// Fixed layout: [v, command, command - v, last_action x4, motor_velocities x4]
inline constexpr int kObservationDim = 11;
using Observation = std::vector<double>;

EnvState reset(const EnvParams& params, double command, std::uint64_t seed);

std::pair<EnvState, SimRewardTerms> step(const EnvParams& params, const EnvState& state,
                                         const Vec4& action);

SimRewardTerms task_reward(const EnvParams& params, const EnvState& state, const Vec4& action);

Observation observe(const EnvState& state);

inline Vec4 clamp_action(const EnvParams& params, const Vec4& action) {
    Vec4 out;
    for (int i = 0; i < 4; ++i)
        out[i] = std::min(params.torque_limit, std::max(-params.torque_limit, action[i]));
    return out;
}

}  // namespace powertune
