#include "powertune/metrics.hpp"

#include <cmath>

namespace powertune {

namespace {
bool in_band(double v, double command) {
    const double band = command != 0.0 ? 0.1 * std::abs(command) : 0.05;
    return std::abs(v - command) <= band;
}
}  // namespace

std::vector<PowerSegment> segment_powers(const std::vector<double>& current_trace,
                                         const std::vector<double>& velocity_trace,
                                         double command, double dt) {
    if (current_trace.size() != velocity_trace.size())
        throw RejectedInput("segment_powers: trace length mismatch");
    if (dt <= 0.0) throw RejectedInput("segment_powers: dt must be > 0");
    const auto window = std::size_t(std::lround(1.0 / dt));
    if (window == 0) throw RejectedInput("segment_powers: dt too large for 1 s windows");

    std::vector<PowerSegment> segments;
    for (std::size_t start = 0; start + window <= current_trace.size(); start += window) {
        bool keep = true;
        double integral = 0.0, v_sum = 0.0;
        for (std::size_t k = start; k < start + window; ++k) {
            if (!in_band(velocity_trace[k], command)) {
                keep = false;
                break;
            }
            integral += current_trace[k] * dt;
            v_sum += velocity_trace[k];
        }
        if (keep)
            segments.push_back({int(start), integral, v_sum / double(window)});
    }
    return segments;
}

PowerReport make_power_report(const std::vector<double>& current_trace,
                              const std::vector<double>& velocity_trace, double command,
                              double dt, double idle_current, double bus_voltage) {
    PowerReport report;
    report.command = command;
    report.segments = segment_powers(current_trace, velocity_trace, command, dt);

    double mean_current = 0.0;
    for (const auto& seg : report.segments) mean_current += seg.integrated_current;  // per 1 s
    if (!report.segments.empty()) mean_current /= double(report.segments.size());
    report.gross_power = mean_current * bus_voltage;
    report.net_power = report.gross_power - idle_current * bus_voltage;

    std::size_t hits = 0;
    for (double v : velocity_trace)
        if (in_band(v, command)) ++hits;
    report.band_occupancy =
        velocity_trace.empty() ? 0.0 : double(hits) / double(velocity_trace.size());
    return report;
}

double delta_p(double p_pre, double p_fine) {
    if (p_pre <= 0.0) throw RejectedInput("delta_p: pre-trained power must be > 0");
    return (p_pre - p_fine) / p_pre * 100.0;
}

std::pair<PowerReport, PowerReport> head_to_head(const RealParams& params,
                                                 const PolicyCheckpoint& policy_a,
                                                 const PolicyCheckpoint& policy_b,
                                                 double command, double block_seconds,
                                                 double total_seconds, std::uint64_t seed) {
    if (policy_a.policy.spec.input_dim != kObservationDim ||
        policy_b.policy.spec.input_dim != kObservationDim)
        throw RejectedInput("head_to_head: policy observation size mismatch");

    const long block_steps = std::lround(block_seconds / params.env.dt);
    const long total_steps = std::lround(total_seconds / params.env.dt);

    RealParams run = params;
    run.env.episode_len = int(std::max<long>(total_steps, 1));
    RealState state = real_reset(run, command, seed);

    std::vector<double> current_a, vel_a, current_b, vel_b;
    for (long t = 0; t < total_steps; ++t) {
        const bool a_active = (t / block_steps) % 2 == 0;
        const auto& policy = a_active ? policy_a.policy : policy_b.policy;
        const auto mean = policy_mean(policy, observe(state.env_state));
        Vec4 action;
        for (int k = 0; k < 4; ++k) action[k] = mean[std::size_t(k)];
        auto [next, sample, terms] = real_step(run, state, action);
        (void)terms;
        if (a_active) {
            current_a.push_back(sample.current);
            vel_a.push_back(next.env_state.cart_velocity);
        } else {
            current_b.push_back(sample.current);
            vel_b.push_back(next.env_state.cart_velocity);
        }
        state = next;
    }

    const double idle = measure_idle(run);
    auto report_a = make_power_report(current_a, vel_a, command, run.env.dt, idle,
                                      run.bus_voltage);
    auto report_b = make_power_report(current_b, vel_b, command, run.env.dt, idle,
                                      run.bus_voltage);
    report_a.policy_id = policy_a.id;
    report_b.policy_id = policy_b.id;
    return {report_a, report_b};
}

double analytical_proxy_reward(const Vec4& torques, const Vec4& motor_velocities,
                               const Vec4& r_over_k2) {
    if (!all_finite(torques) || !all_finite(motor_velocities))
        throw RejectedInput("analytical_proxy_reward: non-finite input");
    double total = 0.0;
    for (int i = 0; i < 4; ++i) {
        const double p = torques[i] * motor_velocities[i] + r_over_k2[i] * torques[i] * torques[i];
        total += std::max(p, 0.0);
    }
    return -total;
}

double mean_proxy_power(const EnvParams& env, const GaussianPolicy& policy,
                        const Vec4& r_over_k2, double command, int episodes) {
    double total = 0.0;
    long n = 0;
    for (int e = 0; e < episodes; ++e) {
        EnvState state = reset(env, command, std::uint64_t(e));
        for (int t = 0; t < env.episode_len; ++t) {
            const auto mean = policy_mean(policy, observe(state));
            Vec4 action;
            for (int k = 0; k < 4; ++k) action[k] = mean[std::size_t(k)];
            const Vec4 applied = clamp_action(env, action);
            total += -analytical_proxy_reward(applied, state.motor_velocities, r_over_k2);
            ++n;
            auto [next, terms] = step(env, state, action);
            (void)terms;
            state = next;
        }
    }
    return total / double(n);
}

double proxy_correlation(const std::vector<double>& predicted,
                         const std::vector<double>& measured) {
    if (predicted.size() != measured.size() || predicted.size() < 3)
        throw RejectedInput("proxy_correlation: need >= 3 paired points");
    const double n = double(predicted.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        mx += predicted[i];
        my += measured[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double dx = predicted[i] - mx;
        const double dy = measured[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0)
        throw RejectedInput("proxy_correlation: degenerate variance");
    return sxy / std::sqrt(sxx * syy);
}

std::vector<double> normalized_power_distribution(const PowerReport& report_fine,
                                                  const std::vector<PowerReport>& reports_pre,
                                                  double idle_current, double bus_voltage,
                                                  double dt) {
    if (reports_pre.empty()) throw RejectedInput("normalized_power_distribution: no reference");
    (void)dt;
    double pre_mean = 0.0;
    std::size_t n = 0;
    for (const auto& report : reports_pre) {
        for (const auto& seg : report.segments) {
            pre_mean += seg.integrated_current * bus_voltage - idle_current * bus_voltage;
            ++n;
        }
    }
    if (n == 0 || pre_mean == 0.0)
        throw RejectedInput("normalized_power_distribution: zero pre-trained mean");
    pre_mean /= double(n);

    std::vector<double> out;
    out.reserve(report_fine.segments.size());
    for (const auto& seg : report_fine.segments)
        out.push_back((seg.integrated_current * bus_voltage - idle_current * bus_voltage) /
                      pre_mean);
    return out;
}

}  // namespace powertune
