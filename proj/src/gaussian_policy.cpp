#include "powertune/gaussian_policy.hpp"

#include <algorithm>
#include <cmath>

namespace powertune {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
}

std::string to_string(Lineage l) {
    switch (l) {
        case Lineage::PreTrained: return "pre-trained";
        case Lineage::Anchor: return "anchor";
        case Lineage::Candidate: return "candidate";
        case Lineage::Elite: return "elite";
        case Lineage::Best: return "best";
    }
    return "candidate";
}

Lineage lineage_from_string(const std::string& s) {
    if (s == "pre-trained") return Lineage::PreTrained;
    if (s == "anchor") return Lineage::Anchor;
    if (s == "candidate") return Lineage::Candidate;
    if (s == "elite") return Lineage::Elite;
    if (s == "best") return Lineage::Best;
    throw RejectedInput("unknown lineage: " + s);
}

GaussianPolicy make_policy(const MlpSpec& spec, std::uint64_t seed, double init_log_std) {
    spec.validate();
    ParamLayout layout = mlp_layout(spec);
    layout.add("log_std", std::size_t(spec.output_dim));

    GaussianPolicy policy;
    policy.spec = spec;
    policy.params = ParamVector(layout);

    const ParamVector mean_net = init_params(spec, seed, 0.01);
    std::copy(mean_net.values.begin(), mean_net.values.end(), policy.params.values.begin());
    double* ls = policy.params.slice("log_std");
    for (int i = 0; i < spec.output_dim; ++i) ls[i] = init_log_std;
    return policy;
}

std::vector<double> policy_mean(const GaussianPolicy& policy, const std::vector<double>& obs) {
    return mlp_forward(policy.spec, policy.params, obs);
}

std::vector<double> policy_sigma(const GaussianPolicy& policy) {
    const double* ls = policy.params.slice("log_std");
    std::vector<double> sigma(std::size_t(policy.action_dim()));
    for (std::size_t i = 0; i < sigma.size(); ++i)
        sigma[i] = std::exp(std::clamp(ls[i], kLogStdMin, kLogStdMax));
    return sigma;
}

ActionSample act(const GaussianPolicy& policy, const std::vector<double>& obs, Rng& rng) {
    const auto mean = policy_mean(policy, obs);
    const auto sigma = policy_sigma(policy);
    ActionSample out;
    out.action.resize(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i)
        out.action[i] = mean[i] + sigma[i] * rng.normal();
    out.log_prob = log_prob(policy, obs, out.action);
    return out;
}

double log_prob(const GaussianPolicy& policy, const std::vector<double>& obs,
                const std::vector<double>& action) {
    if (action.size() != std::size_t(policy.action_dim()))
        throw RejectedInput("log_prob: action size mismatch");
    const auto mean = policy_mean(policy, obs);
    const auto sigma = policy_sigma(policy);
    double lp = -0.5 * double(mean.size()) * kLog2Pi;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const double z = (action[i] - mean[i]) / sigma[i];
        lp -= std::log(sigma[i]) + 0.5 * z * z;
    }
    return lp;
}

int log_prob(const GaussianPolicy& policy, ad::Tape& tape, const std::vector<double>& obs,
             const std::vector<double>& action) {
    if (action.size() != std::size_t(policy.action_dim()))
        throw RejectedInput("log_prob(tape): action size mismatch");
    const int mean = mlp_forward(policy.spec, tape, tape.constant(obs));
    const int lsp = tape.clamp_const(tape.param("log_std"), kLogStdMin, kLogStdMax);
    const int sigma = tape.exp_(lsp);
    const int diff = tape.sub(tape.constant(action), mean);
    const int z2 = tape.div(tape.mul(diff, diff), tape.mul(sigma, sigma));
    const int quad = tape.scale(tape.sum(z2), -0.5);
    const int logdet = tape.scale(tape.sum(lsp), -1.0);
    return tape.add_scalar(tape.add(quad, logdet),
                           -0.5 * double(action.size()) * kLog2Pi);
}

double kl_mean(const GaussianPolicy& p, const GaussianPolicy& q,
               const std::vector<std::vector<double>>& obs_batch) {
    if (p.action_dim() != q.action_dim())
        throw RejectedInput("kl_mean: action dimension mismatch");
    if (obs_batch.empty()) throw RejectedInput("kl_mean: empty observation batch");
    const auto sp = policy_sigma(p);
    const auto sq = policy_sigma(q);
    double total = 0.0;
    for (const auto& obs : obs_batch) {
        const auto mp = policy_mean(p, obs);
        const auto mq = policy_mean(q, obs);
        double kl = 0.0;
        for (std::size_t i = 0; i < mp.size(); ++i) {
            const double dm = mp[i] - mq[i];
            kl += std::log(sq[i] / sp[i]) +
                  (sp[i] * sp[i] + dm * dm) / (2.0 * sq[i] * sq[i]) - 0.5;
        }
        total += kl;
    }
    return total / double(obs_batch.size());
}

int kl_mean(const GaussianPolicy& p, const GaussianPolicy& q, ad::Tape& tape,
            const std::vector<std::vector<double>>& obs_batch) {
    if (p.action_dim() != q.action_dim())
        throw RejectedInput("kl_mean(tape): action dimension mismatch");
    if (obs_batch.empty()) throw RejectedInput("kl_mean(tape): empty observation batch");
    const auto sq = policy_sigma(q);
    const auto d = std::size_t(p.action_dim());
    std::vector<double> inv_2q2(d), log_sq_minus_half(d);
    for (std::size_t i = 0; i < d; ++i) {
        inv_2q2[i] = 1.0 / (2.0 * sq[i] * sq[i]);
        log_sq_minus_half[i] = std::log(sq[i]) - 0.5;
    }

    const int lsp = tape.clamp_const(tape.param("log_std"), kLogStdMin, kLogStdMax);
    const int sp = tape.exp_(lsp);
    const int sp2 = tape.mul(sp, sp);

    int total = -1;
    for (const auto& obs : obs_batch) {
        const int mp = mlp_forward(p.spec, tape, tape.constant(obs));
        const auto mq = policy_mean(q, obs);
        std::vector<double> neg_mq(d);
        for (std::size_t i = 0; i < d; ++i) neg_mq[i] = -mq[i];
        const int dm = tape.add_const(mp, neg_mq);
        const int quad = tape.mul_const(tape.add(sp2, tape.mul(dm, dm)), inv_2q2);
        const int per_dim = tape.add_const(tape.sub(quad, lsp), log_sq_minus_half);
        const int kl = tape.sum(per_dim);
        total = (total < 0) ? kl : tape.add(total, kl);
    }
    return tape.scale(total, 1.0 / double(obs_batch.size()));
}

}  // namespace powertune
