#pragma once

#include <filesystem>
#include <string>

#include "powertune/loop.hpp"

namespace powertune {

inline constexpr const char* kConfigSchema = "powertune.config.v1";

// Matched-budget analytical-proxy sweep (the comparison baseline). Infinite
// kl bounds are written as the string "inf" in the config file.
struct BaselineConfig {
    std::vector<double> lambdas = {5e-5, 1e-4, 5e-4, 1e-3, 5e-3};
    std::vector<double> kl_bounds = {0.1, 0.2, 0.5, 1.0, 5.0,
                                     std::numeric_limits<double>::infinity()};
    int top_k = 24;
};

// Everything a run needs, loadable from one JSON file. Unknown keys are
// rejected with the offending path in the message.
struct RunConfig {
    std::uint64_t seed = 7;
    std::string output_dir = "runs";
    double target_delta_p = 15.0;
    int iterations = 4;
    int top_k = 6;
    double eval_command = 0.8;
    std::vector<double> eval_commands = {0.5, 0.8, 1.1};
    std::vector<double> collect_commands = {0.5, 0.8, 1.1};
    int episodes_per_policy = 4;
    int sim_eval_episodes = 10;
    double head_to_head_block_seconds = 80.0;
    double head_to_head_total_seconds = 160.0;

    EnvParams env;

    // Sim-to-real dynamics gap, applied on top of env.
    double real_mass_scale = 1.15;
    double real_viscous_scale = 1.3;
    double real_coulomb_scale = 0.8;
    RealParams real_electrical;  // env sub-struct ignored; rebuilt from scales

    SweepGrid grid;
    PretrainConfig pretrain;
    PpoConfig finetune_ppo;
    int measurement_hidden_dim = 32;
    MeasurementTrainConfig measurement_train;
    BaselineConfig baseline;

    RunConfig();

    RealParams real_params() const;
    LoopConfig loop_config() const;
    void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

// Serialization listing every field at its current value; init-config writes
// the defaults through this.
std::string run_config_to_json(const RunConfig& config);

void save_run_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace powertune
