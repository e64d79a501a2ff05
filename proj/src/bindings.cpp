// Python bindings for the main operations: simulated cart, hidden-physics
// real world, power metrics, policy checkpoints, and run configuration.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "powertune/config.hpp"
#include "powertune/io.hpp"
#include "powertune/loop.hpp"
#include "powertune/metrics.hpp"

namespace py = pybind11;
using namespace powertune;

PYBIND11_MODULE(_powertune, m) {
    m.doc() = "power fine-tuning pipeline core";

    py::register_exception<RejectedInput>(m, "RejectedInput");
    py::register_exception<NumericError>(m, "NumericError");

    py::class_<EnvParams>(m, "EnvParams")
        .def(py::init<>())
        .def_readwrite("mass", &EnvParams::mass)
        .def_readwrite("gear_ratios", &EnvParams::gear_ratios)
        .def_readwrite("viscous_friction", &EnvParams::viscous_friction)
        .def_readwrite("coulomb_friction", &EnvParams::coulomb_friction)
        .def_readwrite("torque_limit", &EnvParams::torque_limit)
        .def_readwrite("dt", &EnvParams::dt)
        .def_readwrite("episode_len", &EnvParams::episode_len)
        .def_readwrite("command_ceiling", &EnvParams::command_ceiling)
        .def_readwrite("tracking_sigma", &EnvParams::tracking_sigma)
        .def("validate", &EnvParams::validate);

    py::class_<EnvState>(m, "EnvState")
        .def(py::init<>())
        .def_readonly("cart_velocity", &EnvState::cart_velocity)
        .def_readonly("command", &EnvState::command)
        .def_readonly("motor_velocities", &EnvState::motor_velocities)
        .def_readonly("last_action", &EnvState::last_action)
        .def_readonly("step_index", &EnvState::step_index);

    py::class_<SimRewardTerms>(m, "SimRewardTerms")
        .def_readonly("tracking", &SimRewardTerms::tracking)
        .def_readonly("action_smoothness", &SimRewardTerms::action_smoothness)
        .def_readonly("torque_magnitude", &SimRewardTerms::torque_magnitude);

    m.def("reset", &reset, py::arg("params"), py::arg("command"), py::arg("seed"));
    m.def("step", &step, py::arg("params"), py::arg("state"), py::arg("action"));
    m.def("observe", &observe, py::arg("state"));
    m.def("task_reward", &task_reward, py::arg("params"), py::arg("state"),
          py::arg("action"));

    py::class_<RealParams>(m, "RealParams")
        .def(py::init<>())
        .def_readwrite("env", &RealParams::env)
        .def_readwrite("bus_voltage", &RealParams::bus_voltage)
        .def_readwrite("idle_current", &RealParams::idle_current)
        .def_readwrite("battery_capacity", &RealParams::battery_capacity)
        .def("validate", &RealParams::validate);

    py::class_<RealState>(m, "RealState")
        .def_readonly("env_state", &RealState::env_state)
        .def_readonly("soc", &RealState::soc);

    py::class_<CurrentSample>(m, "CurrentSample")
        .def_readonly("current", &CurrentSample::current)
        .def_readonly("torques", &CurrentSample::torques)
        .def_readonly("motor_velocities", &CurrentSample::motor_velocities)
        .def_readonly("step_index", &CurrentSample::step_index);

    m.def("make_real_params", &make_real_params, py::arg("sim"));
    m.def("real_reset", &real_reset, py::arg("params"), py::arg("command"),
          py::arg("seed"), py::arg("initial_soc") = 1.0);
    m.def("real_step", &real_step, py::arg("params"), py::arg("state"), py::arg("action"));
    m.def("measure_idle", &measure_idle, py::arg("params"));

    py::class_<PolicyCheckpoint>(m, "PolicyCheckpoint")
        .def_readonly("id", &PolicyCheckpoint::id)
        .def_readonly("iteration", &PolicyCheckpoint::iteration)
        .def_property_readonly(
            "lineage", [](const PolicyCheckpoint& c) { return to_string(c.lineage); });

    m.def("load_policy", &load_policy, py::arg("path"));
    m.def(
        "policy_mean",
        [](const PolicyCheckpoint& ckpt, const std::vector<double>& obs) {
            return policy_mean(ckpt.policy, obs);
        },
        py::arg("checkpoint"), py::arg("observation"));

    py::class_<PowerSegment>(m, "PowerSegment")
        .def_readonly("start_step", &PowerSegment::start_step)
        .def_readonly("integrated_current", &PowerSegment::integrated_current)
        .def_readonly("mean_velocity", &PowerSegment::mean_velocity);

    py::class_<PowerReport>(m, "PowerReport")
        .def_readonly("segments", &PowerReport::segments)
        .def_readonly("gross_power", &PowerReport::gross_power)
        .def_readonly("net_power", &PowerReport::net_power)
        .def_readonly("command", &PowerReport::command)
        .def_readonly("band_occupancy", &PowerReport::band_occupancy);

    m.def("segment_powers", &segment_powers, py::arg("current_trace"),
          py::arg("velocity_trace"), py::arg("command"), py::arg("dt"));
    m.def("make_power_report", &make_power_report, py::arg("current_trace"),
          py::arg("velocity_trace"), py::arg("command"), py::arg("dt"),
          py::arg("idle_current"), py::arg("bus_voltage"));
    m.def("delta_p", &delta_p, py::arg("p_pre"), py::arg("p_fine"));
    m.def("head_to_head", &head_to_head, py::arg("params"), py::arg("policy_a"),
          py::arg("policy_b"), py::arg("command"), py::arg("block_seconds") = 80.0,
          py::arg("total_seconds") = 160.0, py::arg("seed") = 0);
    m.def("analytical_proxy_reward", &analytical_proxy_reward, py::arg("torques"),
          py::arg("motor_velocities"), py::arg("r_over_k2"));
    m.def("nominal_r_over_k2", &nominal_r_over_k2);
    m.def("proxy_correlation", &proxy_correlation, py::arg("predicted"),
          py::arg("measured"));

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("iterations", &RunConfig::iterations)
        .def_readwrite("top_k", &RunConfig::top_k)
        .def_readwrite("eval_command", &RunConfig::eval_command)
        .def_readwrite("target_delta_p", &RunConfig::target_delta_p)
        .def("validate", &RunConfig::validate);

    m.def("load_run_config", &load_run_config, py::arg("path"));
    m.def("save_run_config", &save_run_config, py::arg("config"), py::arg("path"));
    m.def("run_config_to_json", &run_config_to_json, py::arg("config"));

    m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("iteration"),
          py::arg("role"), py::arg("index"));
}
