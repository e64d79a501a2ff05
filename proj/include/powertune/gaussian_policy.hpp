#pragma once

#include <optional>
#include <string>

#include "powertune/nets.hpp"

namespace powertune {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

enum class Lineage { PreTrained, Anchor, Candidate, Elite, Best };

std::string to_string(Lineage l);
Lineage lineage_from_string(const std::string& s);

struct ConfigTag {
    double lambda = 0.0;
    double kl_bound = 0.0;
    std::string anchor_id;
};

// Diagonal-Gaussian policy: MLP mean head plus a state-independent log-std
// stored as the "log_std" slice of the same parameter vector.
struct GaussianPolicy {
    MlpSpec spec;
    ParamVector params;

    int action_dim() const { return spec.output_dim; }
};

struct PolicyCheckpoint {
    GaussianPolicy policy;
    Lineage lineage = Lineage::Candidate;
    int iteration = 0;
    std::optional<ConfigTag> config_tag;
    std::string id;
};

// Mean net + log_std slice, log_std filled with init_log_std.
GaussianPolicy make_policy(const MlpSpec& spec, std::uint64_t seed, double init_log_std = -1.0);

std::vector<double> policy_mean(const GaussianPolicy& policy, const std::vector<double>& obs);
std::vector<double> policy_sigma(const GaussianPolicy& policy);

struct ActionSample {
    std::vector<double> action;
    double log_prob;
};

ActionSample act(const GaussianPolicy& policy, const std::vector<double>& obs, Rng& rng);

double log_prob(const GaussianPolicy& policy, const std::vector<double>& obs,
                const std::vector<double>& action);

// Tape variant: log pi(action | obs) as a scalar node, differentiable in params.
int log_prob(const GaussianPolicy& policy, ad::Tape& tape, const std::vector<double>& obs,
             const std::vector<double>& action);

// Mean over the batch of the closed-form diagonal-Gaussian KL(p || q).
double kl_mean(const GaussianPolicy& p, const GaussianPolicy& q,
               const std::vector<std::vector<double>>& obs_batch);

// Tape variant, differentiable in p's parameters; q is frozen.
int kl_mean(const GaussianPolicy& p, const GaussianPolicy& q, ad::Tape& tape,
            const std::vector<std::vector<double>>& obs_batch);

}  // namespace powertune
