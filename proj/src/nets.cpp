#include "powertune/nets.hpp"

#include <cmath>

namespace powertune {

namespace {

std::string layer_w(int i) { return "l" + std::to_string(i) + ".W"; }
std::string layer_b(int i) { return "l" + std::to_string(i) + ".b"; }

void fill_uniform_fanin(double* data, std::size_t rows, std::size_t cols, Rng& rng,
                        double scale = 1.0) {
    const double bound = scale / std::sqrt(double(cols));
    for (std::size_t i = 0; i < rows * cols; ++i) data[i] = rng.uniform(-bound, bound);
}

}  // namespace

void MlpSpec::validate() const {
    if (input_dim < 1 || output_dim < 1) throw RejectedInput("MlpSpec: dims must be >= 1");
    for (int h : hidden_dims)
        if (h < 1) throw RejectedInput("MlpSpec: hidden dims must be >= 1");
}

std::size_t MlpSpec::param_count() const {
    std::size_t count = 0;
    int prev = input_dim;
    for (int h : hidden_dims) {
        count += std::size_t(h) * std::size_t(prev) + std::size_t(h);
        prev = h;
    }
    count += std::size_t(output_dim) * std::size_t(prev) + std::size_t(output_dim);
    return count;
}

void RecurrentSpec::validate() const {
    if (input_dim < 1 || hidden_dim < 1 || output_dim < 1)
        throw RejectedInput("RecurrentSpec: dims must be >= 1");
}

std::size_t RecurrentSpec::param_count() const {
    const std::size_t in = std::size_t(input_dim);
    const std::size_t h = std::size_t(hidden_dim);
    const std::size_t out = std::size_t(output_dim);
    // three gates/candidates, each W (h x in), U (h x h), b (h); readout W + b
    return 3 * (h * in + h * h + h) + out * h + out;
}

ParamLayout mlp_layout(const MlpSpec& spec) {
    spec.validate();
    ParamLayout layout;
    int prev = spec.input_dim;
    int layer = 0;
    for (int h : spec.hidden_dims) {
        layout.add(layer_w(layer), std::size_t(h), std::size_t(prev));
        layout.add(layer_b(layer), std::size_t(h));
        prev = h;
        ++layer;
    }
    layout.add(layer_w(layer), std::size_t(spec.output_dim), std::size_t(prev));
    layout.add(layer_b(layer), std::size_t(spec.output_dim));
    return layout;
}

ParamLayout recurrent_layout(const RecurrentSpec& spec) {
    spec.validate();
    const auto in = std::size_t(spec.input_dim);
    const auto h = std::size_t(spec.hidden_dim);
    ParamLayout layout;
    for (const char* gate : {"z", "r", "h"}) {
        layout.add(std::string("gru.W") + gate, h, in);
        layout.add(std::string("gru.U") + gate, h, h);
        layout.add(std::string("gru.b") + gate, h);
    }
    layout.add("out.W", std::size_t(spec.output_dim), h);
    layout.add("out.b", std::size_t(spec.output_dim));
    return layout;
}

ParamVector init_params(const MlpSpec& spec, std::uint64_t seed, double final_scale) {
    ParamVector p(mlp_layout(spec));
    Rng rng(seed);
    const int n_layers = int(spec.hidden_dims.size()) + 1;
    for (int i = 0; i < n_layers; ++i) {
        const auto& w = p.layout.at(layer_w(i));
        const double scale = (i == n_layers - 1) ? final_scale : 1.0;
        fill_uniform_fanin(p.values.data() + w.offset, w.rows, w.cols, rng, scale);
        // biases stay zero
    }
    return p;
}

ParamVector init_params(const RecurrentSpec& spec, std::uint64_t seed) {
    ParamVector p(recurrent_layout(spec));
    Rng rng(seed);
    for (const auto& [name, info] : p.layout.slices()) {
        if (info.cols == 1) continue;  // biases zero
        fill_uniform_fanin(p.values.data() + info.offset, info.rows, info.cols, rng);
    }
    return p;
}

std::vector<double> mlp_forward(const MlpSpec& spec, const ParamVector& params,
                                const std::vector<double>& input) {
    if (input.size() != std::size_t(spec.input_dim))
        throw RejectedInput("mlp_forward: input size mismatch");
    std::vector<double> x = input;
    const int n_layers = int(spec.hidden_dims.size()) + 1;
    for (int i = 0; i < n_layers; ++i) {
        const auto& w = params.layout.at(layer_w(i));
        const double* W = params.values.data() + w.offset;
        const double* b = params.values.data() + params.layout.at(layer_b(i)).offset;
        std::vector<double> y(w.rows);
        for (std::size_t r = 0; r < w.rows; ++r) {
            double acc = b[r];
            const double* row = W + r * w.cols;
            for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
            y[r] = (i < n_layers - 1) ? std::tanh(acc) : acc;
        }
        x = std::move(y);
    }
    return x;
}

int mlp_forward(const MlpSpec& spec, ad::Tape& tape, int x) {
    if (tape.size(x) != std::size_t(spec.input_dim))
        throw RejectedInput("mlp_forward(tape): input size mismatch");
    const int n_layers = int(spec.hidden_dims.size()) + 1;
    int node = x;
    for (int i = 0; i < n_layers; ++i) {
        node = tape.affine(layer_w(i), layer_b(i), node);
        if (i < n_layers - 1) node = tape.tanh_(node);
    }
    return node;
}

namespace {

std::vector<double> linear(const ParamVector& p, const std::string& w_name,
                           const std::vector<double>& x) {
    const auto& w = p.layout.at(w_name);
    std::vector<double> y(w.rows, 0.0);
    const double* W = p.values.data() + w.offset;
    for (std::size_t r = 0; r < w.rows; ++r) {
        double acc = 0.0;
        const double* row = W + r * w.cols;
        for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

}  // namespace

std::vector<double> recurrent_step(const RecurrentSpec& spec, const ParamVector& params,
                                   RecurrentState& state, const std::vector<double>& input) {
    if (input.size() != std::size_t(spec.input_dim))
        throw RejectedInput("recurrent_step: input size mismatch");
    const auto h_dim = std::size_t(spec.hidden_dim);
    const double* bz = params.slice("gru.bz");
    const double* br = params.slice("gru.br");
    const double* bh = params.slice("gru.bh");

    const auto wz = linear(params, "gru.Wz", input);
    const auto uz = linear(params, "gru.Uz", state.h);
    const auto wr = linear(params, "gru.Wr", input);
    const auto ur = linear(params, "gru.Ur", state.h);

    std::vector<double> z(h_dim), rh(h_dim);
    for (std::size_t i = 0; i < h_dim; ++i) {
        z[i] = 1.0 / (1.0 + std::exp(-(wz[i] + uz[i] + bz[i])));
        const double r = 1.0 / (1.0 + std::exp(-(wr[i] + ur[i] + br[i])));
        rh[i] = r * state.h[i];
    }
    const auto wh = linear(params, "gru.Wh", input);
    const auto uh = linear(params, "gru.Uh", rh);
    for (std::size_t i = 0; i < h_dim; ++i) {
        const double cand = std::tanh(wh[i] + uh[i] + bh[i]);
        state.h[i] = (1.0 - z[i]) * state.h[i] + z[i] * cand;
    }

    auto out = linear(params, "out.W", state.h);
    const double* bo = params.slice("out.b");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bo[i];
    return out;
}

std::vector<std::vector<double>> recurrent_forward(const RecurrentSpec& spec,
                                                   const ParamVector& params,
                                                   const std::vector<std::vector<double>>& seq) {
    RecurrentState state(spec.hidden_dim);
    std::vector<std::vector<double>> outputs;
    outputs.reserve(seq.size());
    for (const auto& x : seq) outputs.push_back(recurrent_step(spec, params, state, x));
    return outputs;
}

std::vector<int> recurrent_forward(const RecurrentSpec& spec, ad::Tape& tape,
                                   const std::vector<std::vector<double>>& seq) {
    std::vector<int> outputs;
    outputs.reserve(seq.size());
    int h = tape.constant(std::vector<double>(std::size_t(spec.hidden_dim), 0.0));
    for (const auto& raw_x : seq) {
        if (raw_x.size() != std::size_t(spec.input_dim))
            throw RejectedInput("recurrent_forward(tape): input size mismatch");
        const int x = tape.constant(raw_x);
        const int z = tape.sigmoid_(tape.add(
            tape.add(tape.matvec("gru.Wz", x), tape.matvec("gru.Uz", h)),
            tape.param("gru.bz")));
        const int r = tape.sigmoid_(tape.add(
            tape.add(tape.matvec("gru.Wr", x), tape.matvec("gru.Ur", h)),
            tape.param("gru.br")));
        const int rh = tape.mul(r, h);
        const int cand = tape.tanh_(tape.add(
            tape.add(tape.matvec("gru.Wh", x), tape.matvec("gru.Uh", rh)),
            tape.param("gru.bh")));
        h = tape.add(tape.mul(tape.rsub_const(1.0, z), h), tape.mul(z, cand));
        outputs.push_back(tape.affine("out.W", "out.b", h));
    }
    return outputs;
}

}  // namespace powertune
