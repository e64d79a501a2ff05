#pragma once

#include "powertune/envsim.hpp"
#include "powertune/gaussian_policy.hpp"

namespace powertune {

// Perturbed-dynamics twin of the sim cart plus a hidden electrical oracle.
// Oracle parameters must never leave this module's reports: the measurement
// model has to learn the current from data.
struct RealParams {
    EnvParams env;                               // perturbed vs the sim defaults
    Vec4 motor_kt = {0.9, 1.1, 1.0, 1.2};        // N*m/A
    Vec4 motor_resistance = {0.45, 0.20, 0.30, 0.15};  // Ohm
    Vec4 switching_coeff = {0.18, 0.06, 0.12, 0.04};   // A per sqrt(N*m)
    double thermal_tau = 4.0;                    // s
    double thermal_gain = 0.8;                   // Ohm per (N*m)^2
    double bus_voltage = 24.0;                   // V
    double idle_current = 0.5;                   // A
    double battery_capacity = 2.0;               // A*h
    double regen_efficiency = 0.2;

    void validate() const;
};

struct RealState {
    EnvState env_state;
    Vec4 thermal = {0, 0, 0, 0};  // filtered resistance increment, Ohm
    double soc = 1.0;
};

struct CurrentSample {
    double current = 0.0;  // A, >= 0
    Vec4 torques = {0, 0, 0, 0};
    Vec4 motor_velocities = {0, 0, 0, 0};
    int step_index = 0;
};

// Default sim-to-real gap applied on top of the given sim params.
RealParams make_real_params(const EnvParams& sim);

RealState real_reset(const RealParams& params, double command, std::uint64_t seed,
                     double initial_soc = 1.0);

std::tuple<RealState, CurrentSample, SimRewardTerms> real_step(const RealParams& params,
                                                               const RealState& state,
                                                               const Vec4& action);

double oracle_current(const RealParams& params, const Vec4& torques,
                      const Vec4& motor_velocities, const Vec4& thermal);

double measure_idle(const RealParams& params);

struct SocPoint {
    double distance = 0.0;  // m
    double soc = 0.0;
};

// Rolls the policy (mean actions) through a schedule of (command, duration)
// blocks in one continuous run; samples soc once per meter of travel.
std::vector<SocPoint> soc_curve(const RealParams& params, const PolicyCheckpoint& policy,
                                const std::vector<std::pair<double, double>>& command_schedule,
                                double initial_soc);

}  // namespace powertune
