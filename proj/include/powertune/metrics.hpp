#pragma once

#include "powertune/realworld.hpp"
#include "powertune/rl.hpp"

namespace powertune {

struct PowerSegment {
    int start_step = 0;
    double integrated_current = 0.0;  // A*s over the one-second window
    double mean_velocity = 0.0;
};

struct PowerReport {
    std::vector<PowerSegment> segments;
    double gross_power = 0.0;  // W: mean segment current * bus voltage
    double net_power = 0.0;    // W: gross minus idle draw
    double command = 0.0;
    double band_occupancy = 0.0;  // over the whole trace, not just kept segments
    std::string policy_id;
};

// Tiles the traces into consecutive one-second windows and keeps windows whose
// velocity samples all sit within +/-10% of the command (absolute +/-0.05 m/s
// when the command is zero).
std::vector<PowerSegment> segment_powers(const std::vector<double>& current_trace,
                                         const std::vector<double>& velocity_trace,
                                         double command, double dt);

PowerReport make_power_report(const std::vector<double>& current_trace,
                              const std::vector<double>& velocity_trace, double command,
                              double dt, double idle_current, double bus_voltage);

double delta_p(double p_pre, double p_fine);  // percent, positive = savings

// Alternates the two policies in 80-second blocks within one continuous run
// (thermal and soc state carried across blocks), then scores each policy's
// concatenated trace.
std::pair<PowerReport, PowerReport> head_to_head(const RealParams& params,
                                                 const PolicyCheckpoint& policy_a,
                                                 const PolicyCheckpoint& policy_b,
                                                 double command, double block_seconds = 80.0,
                                                 double total_seconds = 160.0,
                                                 std::uint64_t seed = 0);

double analytical_proxy_reward(const Vec4& torques, const Vec4& motor_velocities,
                               const Vec4& r_over_k2);

// Nominal sim-side motor constants for the proxy; deliberately not the
// perturbed per-motor values the hidden oracle uses.
inline Vec4 nominal_r_over_k2() { return {0.25, 0.25, 0.25, 0.25}; }

// Lets rl.finetune optimize the analytical proxy instead of a learned model:
// the signal value is the proxy cost (so reward adds lambda * proxy reward).
class AnalyticalProxySignal : public EnergySignal {
public:
    explicit AnalyticalProxySignal(const Vec4& r_over_k2) : r_over_k2_(r_over_k2) {}
    void begin_episode(int) override {}
    double step(int, const Vec4& torques, const Vec4& motor_velocities) override {
        return -analytical_proxy_reward(torques, motor_velocities, r_over_k2_);
    }

private:
    Vec4 r_over_k2_;
};

// Mean proxy cost (W) over deterministic mean-action episodes; the baseline's
// selection metric (lower is better).
double mean_proxy_power(const EnvParams& env, const GaussianPolicy& policy,
                        const Vec4& r_over_k2, double command, int episodes);

struct ProxyComparison {
    std::vector<double> predicted_reduction;
    std::vector<double> measured_reduction;
    double correlation = 0.0;
};

double proxy_correlation(const std::vector<double>& predicted,
                         const std::vector<double>& measured);

std::vector<double> normalized_power_distribution(const PowerReport& report_fine,
                                                  const std::vector<PowerReport>& reports_pre,
                                                  double idle_current, double bus_voltage,
                                                  double dt);

}  // namespace powertune
