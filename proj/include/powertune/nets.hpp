#pragma once

#include <string>
#include <vector>

#include "powertune/autodiff.hpp"
#include "powertune/params.hpp"

namespace powertune {

struct MlpSpec {
    int input_dim = 0;
    std::vector<int> hidden_dims;
    int output_dim = 0;
    // activation is tanh throughout

    void validate() const;
    std::size_t param_count() const;
    bool operator==(const MlpSpec&) const = default;
};

// Single update/reset-gate recurrent cell with a linear readout.
struct RecurrentSpec {
    int input_dim = 0;
    int hidden_dim = 0;
    int output_dim = 0;

    void validate() const;
    std::size_t param_count() const;
    bool operator==(const RecurrentSpec&) const = default;
};

ParamLayout mlp_layout(const MlpSpec& spec);
ParamLayout recurrent_layout(const RecurrentSpec& spec);

// Scaled-uniform fan-in init; final layer weights multiplied by final_scale.
ParamVector init_params(const MlpSpec& spec, std::uint64_t seed, double final_scale = 1.0);
ParamVector init_params(const RecurrentSpec& spec, std::uint64_t seed);

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                const std::vector<double>& input);
// Tape variant; x may be any node of size input_dim.
int mlp_forward(const MlpSpec& spec, ad::Tape& tape, int x);

struct RecurrentState {
    std::vector<double> h;
    explicit RecurrentState(int hidden_dim) : h(std::size_t(hidden_dim), 0.0) {}
};

// One cell update plus readout; advances the hidden state in place.
std::vector<double> recurrent_step(const RecurrentSpec& spec, const ParamVector& params,
                                   RecurrentState& state, const std::vector<double>& input);

std::vector<std::vector<double>> recurrent_forward(const RecurrentSpec& spec,
                                                   const ParamVector& params,
                                                   const std::vector<std::vector<double>>& seq);

// Tape variant over a whole (chunk of a) sequence; returns one node per step.
std::vector<int> recurrent_forward(const RecurrentSpec& spec, ad::Tape& tape,
                                   const std::vector<std::vector<double>>& seq);

}  // namespace powertune
