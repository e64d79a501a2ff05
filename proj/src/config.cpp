#include "powertune/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "powertune/io.hpp"

namespace powertune {

using json = nlohmann::json;

namespace {

// Tracks which keys a section consumed so leftovers can be named precisely.
class StrictReader {
public:
    StrictReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object())
            throw RejectedInput("config: " + path_ + " must be an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return obj_.contains(key);
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        if (!has(key)) return;
        try {
            out = obj_.at(key).get<T>();
        } catch (const json::exception&) {
            throw RejectedInput("config: bad value type at " + path_ + "." + key);
        }
    }

    void read_vec4(const std::string& key, Vec4& out) {
        if (!has(key)) return;
        const json& arr = obj_.at(key);
        if (!arr.is_array() || arr.size() != 4 || !arr[0].is_number())
            throw RejectedInput("config: " + path_ + "." + key + " must be 4 numbers");
        for (int i = 0; i < 4; ++i) out[std::size_t(i)] = arr[std::size_t(i)].get<double>();
    }

    // Numbers, with the string "inf" standing in for infinity.
    void read_bounds(const std::string& key, std::vector<double>& out) {
        if (!has(key)) return;
        const json& arr = obj_.at(key);
        if (!arr.is_array())
            throw RejectedInput("config: " + path_ + "." + key + " must be an array");
        out.clear();
        for (const auto& v : arr) {
            if (v.is_number())
                out.push_back(v.get<double>());
            else if (v.is_string() && v.get<std::string>() == "inf")
                out.push_back(std::numeric_limits<double>::infinity());
            else
                throw RejectedInput("config: " + path_ + "." + key +
                                    " entries must be numbers or \"inf\"");
        }
    }

    const json& child(const std::string& key) {
        seen_.insert(key);
        return obj_.at(key);
    }

    void finish() const {
        for (const auto& [key, value] : obj_.items()) {
            (void)value;
            if (!seen_.count(key))
                throw RejectedInput("config: unknown key " +
                                    (path_.empty() ? key : path_ + "." + key));
        }
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

json bounds_to_json(const std::vector<double>& bounds) {
    json arr = json::array();
    for (double b : bounds) {
        if (std::isfinite(b))
            arr.push_back(b);
        else
            arr.push_back("inf");
    }
    return arr;
}

void read_ppo(const json& obj, const std::string& path, PpoConfig& ppo) {
    StrictReader r(obj, path);
    r.read("clip_eps", ppo.clip_eps);
    r.read("gamma", ppo.gamma);
    r.read("gae_lambda", ppo.gae_lambda);
    r.read("epochs", ppo.epochs);
    r.read("minibatch_size", ppo.minibatch_size);
    r.read("rollout_len", ppo.rollout_len);
    r.read("n_envs", ppo.n_envs);
    r.read("total_steps", ppo.total_steps);
    r.read("learning_rate", ppo.learning_rate);
    r.read("value_learning_rate", ppo.value_learning_rate);
    r.read("commands", ppo.commands);
    r.finish();
}

json ppo_to_json(const PpoConfig& ppo) {
    return {{"clip_eps", ppo.clip_eps},
            {"gamma", ppo.gamma},
            {"gae_lambda", ppo.gae_lambda},
            {"epochs", ppo.epochs},
            {"minibatch_size", ppo.minibatch_size},
            {"rollout_len", ppo.rollout_len},
            {"n_envs", ppo.n_envs},
            {"total_steps", ppo.total_steps},
            {"learning_rate", ppo.learning_rate},
            {"value_learning_rate", ppo.value_learning_rate},
            {"commands", ppo.commands}};
}

}  // namespace

RunConfig::RunConfig() {
    // Trained longer with tighter exploration than a sweep candidate.
    pretrain.ppo.total_steps = 120000;
    real_electrical.env = env;
}

RealParams RunConfig::real_params() const {
    RealParams real = real_electrical;
    real.env = env;
    real.env.mass *= real_mass_scale;
    real.env.viscous_friction *= real_viscous_scale;
    real.env.coulomb_friction *= real_coulomb_scale;
    return real;
}

LoopConfig RunConfig::loop_config() const {
    LoopConfig loop;
    loop.env = env;
    loop.real = real_params();
    loop.grid = grid;
    loop.top_k = top_k;
    loop.episodes_per_policy = episodes_per_policy;
    loop.collect_commands = collect_commands;
    loop.eval_command = eval_command;
    loop.sim_eval_episodes = sim_eval_episodes;
    loop.finetune_ppo = finetune_ppo;
    loop.measurement_spec = RecurrentSpec{kMeasurementInputDim, measurement_hidden_dim, 1};
    loop.measurement_train = measurement_train;
    loop.head_to_head_block_seconds = head_to_head_block_seconds;
    loop.head_to_head_total_seconds = head_to_head_total_seconds;
    loop.iterations = iterations;
    loop.target_delta_p = target_delta_p;
    loop.min_real_occupancy = pretrain.min_occupancy;
    loop.seed = seed;
    return loop;
}

void RunConfig::validate() const {
    env.validate();
    real_params().validate();
    grid.validate();
    if (iterations < 1) throw RejectedInput("config: iterations must be >= 1");
    if (top_k < 1) throw RejectedInput("config: top_k must be >= 1");
    if (episodes_per_policy < 1)
        throw RejectedInput("config: episodes_per_policy must be >= 1");
    if (sim_eval_episodes < 1)
        throw RejectedInput("config: sim_eval_episodes must be >= 1");
    if (eval_command <= 0.0 || eval_command > env.command_ceiling)
        throw RejectedInput("config: eval_command outside (0, command_ceiling]");
    if (collect_commands.empty()) throw RejectedInput("config: collect_commands empty");
    if (eval_commands.empty()) throw RejectedInput("config: eval_commands empty");
    if (head_to_head_block_seconds <= 0.0 ||
        head_to_head_total_seconds < 2.0 * head_to_head_block_seconds)
        throw RejectedInput("config: head_to_head seconds invalid (total >= 2*block)");
    if (measurement_hidden_dim < 1)
        throw RejectedInput("config: measurement_hidden_dim must be >= 1");
    if (baseline.top_k < 1) throw RejectedInput("config: baseline.top_k must be >= 1");
    if (baseline.lambdas.empty() || baseline.kl_bounds.empty())
        throw RejectedInput("config: baseline grids must be nonempty");
    if (pretrain.min_occupancy <= 0.0 || pretrain.min_occupancy > 1.0)
        throw RejectedInput("config: pretrain.min_occupancy outside (0, 1]");
    for (double l : grid.lambdas)
        if (l <= 0.0) throw RejectedInput("config: grid.lambdas must be positive");
    for (double c : grid.kl_bounds)
        if (c <= 0.0) throw RejectedInput("config: grid.kl_bounds must be positive");
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RejectedInput("cannot open config: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw RejectedInput("config: parse error in " + path.string() + ": " + e.what());
    }

    RunConfig config;
    StrictReader root(doc, "");
    if (!root.has("schema") || doc.at("schema") != kConfigSchema)
        throw RejectedInput("config: missing or unexpected schema tag (want " +
                            std::string(kConfigSchema) + ")");
    root.read("seed", config.seed);
    root.read("output_dir", config.output_dir);
    root.read("target_delta_p", config.target_delta_p);
    root.read("iterations", config.iterations);
    root.read("top_k", config.top_k);
    root.read("eval_command", config.eval_command);
    root.read("eval_commands", config.eval_commands);
    root.read("collect_commands", config.collect_commands);
    root.read("episodes_per_policy", config.episodes_per_policy);
    root.read("sim_eval_episodes", config.sim_eval_episodes);
    root.read("head_to_head_block_seconds", config.head_to_head_block_seconds);
    root.read("head_to_head_total_seconds", config.head_to_head_total_seconds);

    if (root.has("env")) {
        StrictReader r(root.child("env"), "env");
        r.read("mass", config.env.mass);
        r.read_vec4("gear_ratios", config.env.gear_ratios);
        r.read("viscous_friction", config.env.viscous_friction);
        r.read("coulomb_friction", config.env.coulomb_friction);
        r.read("torque_limit", config.env.torque_limit);
        r.read("dt", config.env.dt);
        r.read("episode_len", config.env.episode_len);
        r.read("command_ceiling", config.env.command_ceiling);
        r.read("tracking_sigma", config.env.tracking_sigma);
        r.finish();
    }

    if (root.has("real")) {
        StrictReader r(root.child("real"), "real");
        r.read("mass_scale", config.real_mass_scale);
        r.read("viscous_scale", config.real_viscous_scale);
        r.read("coulomb_scale", config.real_coulomb_scale);
        r.read_vec4("motor_kt", config.real_electrical.motor_kt);
        r.read_vec4("motor_resistance", config.real_electrical.motor_resistance);
        r.read_vec4("switching_coeff", config.real_electrical.switching_coeff);
        r.read("thermal_tau", config.real_electrical.thermal_tau);
        r.read("thermal_gain", config.real_electrical.thermal_gain);
        r.read("bus_voltage", config.real_electrical.bus_voltage);
        r.read("idle_current", config.real_electrical.idle_current);
        r.read("battery_capacity", config.real_electrical.battery_capacity);
        r.read("regen_efficiency", config.real_electrical.regen_efficiency);
        r.finish();
    }

    if (root.has("grid")) {
        StrictReader r(root.child("grid"), "grid");
        r.read("lambdas", config.grid.lambdas);
        r.read("kl_bounds", config.grid.kl_bounds);
        r.finish();
    }

    if (root.has("pretrain")) {
        StrictReader r(root.child("pretrain"), "pretrain");
        r.read("min_occupancy", config.pretrain.min_occupancy);
        if (r.has("ppo")) read_ppo(root.child("pretrain").at("ppo"), "pretrain.ppo",
                                   config.pretrain.ppo);
        r.finish();
    }

    if (root.has("finetune_ppo"))
        read_ppo(root.child("finetune_ppo"), "finetune_ppo", config.finetune_ppo);

    if (root.has("measurement")) {
        StrictReader r(root.child("measurement"), "measurement");
        r.read("hidden_dim", config.measurement_hidden_dim);
        r.read("chunk_len", config.measurement_train.chunk_len);
        r.read("batch_chunks", config.measurement_train.batch_chunks);
        r.read("max_epochs", config.measurement_train.max_epochs);
        r.read("patience", config.measurement_train.patience);
        r.read("learning_rate", config.measurement_train.learning_rate);
        r.read("val_fraction", config.measurement_train.val_fraction);
        r.finish();
    }

    if (root.has("baseline")) {
        StrictReader r(root.child("baseline"), "baseline");
        r.read("lambdas", config.baseline.lambdas);
        r.read_bounds("kl_bounds", config.baseline.kl_bounds);
        r.read("top_k", config.baseline.top_k);
        r.finish();
    }

    root.finish();
    config.validate();
    return config;
}

std::string run_config_to_json(const RunConfig& config) {
    json doc;
    doc["schema"] = kConfigSchema;
    doc["seed"] = config.seed;
    doc["output_dir"] = config.output_dir;
    doc["target_delta_p"] = config.target_delta_p;
    doc["iterations"] = config.iterations;
    doc["top_k"] = config.top_k;
    doc["eval_command"] = config.eval_command;
    doc["eval_commands"] = config.eval_commands;
    doc["collect_commands"] = config.collect_commands;
    doc["episodes_per_policy"] = config.episodes_per_policy;
    doc["sim_eval_episodes"] = config.sim_eval_episodes;
    doc["head_to_head_block_seconds"] = config.head_to_head_block_seconds;
    doc["head_to_head_total_seconds"] = config.head_to_head_total_seconds;
    doc["env"] = {{"mass", config.env.mass},
                  {"gear_ratios", config.env.gear_ratios},
                  {"viscous_friction", config.env.viscous_friction},
                  {"coulomb_friction", config.env.coulomb_friction},
                  {"torque_limit", config.env.torque_limit},
                  {"dt", config.env.dt},
                  {"episode_len", config.env.episode_len},
                  {"command_ceiling", config.env.command_ceiling},
                  {"tracking_sigma", config.env.tracking_sigma}};
    doc["real"] = {{"mass_scale", config.real_mass_scale},
                   {"viscous_scale", config.real_viscous_scale},
                   {"coulomb_scale", config.real_coulomb_scale},
                   {"motor_kt", config.real_electrical.motor_kt},
                   {"motor_resistance", config.real_electrical.motor_resistance},
                   {"switching_coeff", config.real_electrical.switching_coeff},
                   {"thermal_tau", config.real_electrical.thermal_tau},
                   {"thermal_gain", config.real_electrical.thermal_gain},
                   {"bus_voltage", config.real_electrical.bus_voltage},
                   {"idle_current", config.real_electrical.idle_current},
                   {"battery_capacity", config.real_electrical.battery_capacity},
                   {"regen_efficiency", config.real_electrical.regen_efficiency}};
    doc["grid"] = {{"lambdas", config.grid.lambdas},
                   {"kl_bounds", config.grid.kl_bounds}};
    doc["pretrain"] = {{"min_occupancy", config.pretrain.min_occupancy},
                       {"ppo", ppo_to_json(config.pretrain.ppo)}};
    doc["finetune_ppo"] = ppo_to_json(config.finetune_ppo);
    doc["measurement"] = {{"hidden_dim", config.measurement_hidden_dim},
                          {"chunk_len", config.measurement_train.chunk_len},
                          {"batch_chunks", config.measurement_train.batch_chunks},
                          {"max_epochs", config.measurement_train.max_epochs},
                          {"patience", config.measurement_train.patience},
                          {"learning_rate", config.measurement_train.learning_rate},
                          {"val_fraction", config.measurement_train.val_fraction}};
    doc["baseline"] = {{"lambdas", config.baseline.lambdas},
                       {"kl_bounds", bounds_to_json(config.baseline.kl_bounds)},
                       {"top_k", config.baseline.top_k}};
    return doc.dump(1) + "\n";
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
    atomic_write_text(path, run_config_to_json(config));
}

}  // namespace powertune
