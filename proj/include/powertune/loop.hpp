#pragma once

#include <map>

#include "powertune/io.hpp"
#include "powertune/metrics.hpp"
#include "powertune/rl.hpp"

namespace powertune {

struct SweepGrid {
    std::vector<double> lambdas = {0.5, 1.0, 5.0};
    std::vector<double> kl_bounds = {0.2, 0.5, 1.0};

    void validate() const {
        if (lambdas.empty() || kl_bounds.empty())
            throw RejectedInput("SweepGrid: lambda and kl_bound sets must be nonempty");
    }
};

struct CandidateScore {
    std::string id;
    double sim_energy_score = 0.0;  // mean(-predicted current), higher is better
    double lambda = 0.0;
    double kl_bound = 0.0;
    std::string anchor_id;
    double anchor_kl = 0.0;  // measured on a fresh rollout after fine-tuning
};

struct RealEval {
    double gross_power = 0.0;
    double net_power = 0.0;
    double band_occupancy = 0.0;
    double paired_pre_gross = 0.0;
    double paired_pre_net = 0.0;
};

struct IterationRecord {
    int iteration = 0;
    std::string dataset_fingerprint;
    int model_version = 0;
    double pretrained_sim_energy_score = 0.0;  // mean(-ihat) under this model
    std::vector<CandidateScore> candidates;
    std::vector<std::string> elite_ids;
    std::map<std::string, RealEval> real_evals;
    std::string best_id;
    double best_net_power = 0.0;
    double best_delta_p_net = 0.0;  // vs pre-trained at the evaluation command
};

struct LoopConfig {
    EnvParams env;
    RealParams real;
    SweepGrid grid;
    int top_k = 6;
    int episodes_per_policy = 4;
    std::vector<double> collect_commands = {0.5, 0.8, 1.1};
    double eval_command = 0.8;
    int sim_eval_episodes = 10;
    PpoConfig finetune_ppo;
    RecurrentSpec measurement_spec{kMeasurementInputDim, 32, 1};
    MeasurementTrainConfig measurement_train;
    double head_to_head_block_seconds = 80.0;
    double head_to_head_total_seconds = 160.0;
    int iterations = 4;
    double target_delta_p = 15.0;
    // Elites below this real-world band occupancy cannot become best; power
    // savings that come from abandoning the tracking task do not count.
    double min_real_occupancy = 0.8;
    std::uint64_t seed = 0;
};

struct LoopState {
    RealDataset dataset;
    PolicyCheckpoint pretrained;
    std::vector<PolicyCheckpoint> elites;  // data-collection pool for the next iteration
    PolicyCheckpoint best;
    double best_net_power = std::numeric_limits<double>::infinity();
    double best_delta_p_net = 0.0;
    std::vector<IterationRecord> records;
};

// Derives a decorrelated sub-seed from (seed, iteration, role, index).
std::uint64_t derive_seed(std::uint64_t seed, int iteration, std::uint64_t role, int index);

std::vector<RealTrajectory> collect_real(const std::vector<PolicyCheckpoint>& policies,
                                         int episodes_per_policy,
                                         const std::vector<double>& commands,
                                         const RealParams& params, int iteration,
                                         std::uint64_t seed);

// Mean(-predicted current) over a frozen set of deterministic eval episodes.
double sim_energy_score(const EnvParams& env, const GaussianPolicy& policy,
                        const MeasurementModel& model, double command, int episodes);

std::vector<CandidateScore> select_top_k(std::vector<CandidateScore> candidates, int k);

// Argmin of net power among reports with band occupancy >= min_occupancy;
// returns "" when none qualify (the incumbent then carries over).
std::string select_best(const std::map<std::string, RealEval>& reports,
                        double min_occupancy = 0.0);

IterationRecord run_iteration(LoopState& state, const LoopConfig& config,
                              const std::filesystem::path& run_dir);

LoopState init_loop_state(const PolicyCheckpoint& pretrained);

// Chains run_iteration; stops early once best_delta_p_net >= target_delta_p.
void run(LoopState& state, const LoopConfig& config, const std::filesystem::path& run_dir,
         int iterations);

// Reloads a partially completed run (pretrained checkpoint plus every
// committed iter<i> directory) so iterate can resume.
LoopState load_loop_state(const std::filesystem::path& run_dir);

void save_record(const IterationRecord& record, const std::filesystem::path& path);
IterationRecord load_record(const std::filesystem::path& path);

}  // namespace powertune
