#include "powertune/measurement.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "powertune/adam.hpp"

namespace powertune {

namespace {
constexpr double kStdFloor = 1e-6;

std::vector<double> raw_features(const TrajectoryStep& step) {
    std::vector<double> f(kMeasurementInputDim);
    for (int i = 0; i < 4; ++i) f[std::size_t(i)] = step.torques[i];
    for (int i = 0; i < 4; ++i) f[std::size_t(4 + i)] = step.motor_velocities[i];
    return f;
}
}  // namespace

std::vector<double> Normalizer::normalize(const TrajectoryStep& step) const {
    auto f = raw_features(step);
    for (int i = 0; i < kMeasurementInputDim; ++i)
        f[std::size_t(i)] = (f[std::size_t(i)] - feature_mean[std::size_t(i)]) /
                            feature_std[std::size_t(i)];
    return f;
}

Normalizer fit_normalizer(const RealDataset& dataset) {
    const std::size_t n = dataset.total_steps();
    if (n == 0) throw RejectedInput("fit_normalizer: empty dataset");

    Normalizer norm;
    std::array<double, kMeasurementInputDim> sum{}, sumsq{};
    double cur_sum = 0.0, cur_sumsq = 0.0;
    for (const auto& traj : dataset.trajectories) {
        for (const auto& step : traj.steps) {
            const auto f = raw_features(step);
            for (int i = 0; i < kMeasurementInputDim; ++i) {
                sum[std::size_t(i)] += f[std::size_t(i)];
                sumsq[std::size_t(i)] += f[std::size_t(i)] * f[std::size_t(i)];
            }
            cur_sum += step.current;
            cur_sumsq += step.current * step.current;
        }
    }
    for (int i = 0; i < kMeasurementInputDim; ++i) {
        const double mean = sum[std::size_t(i)] / double(n);
        const double var = std::max(sumsq[std::size_t(i)] / double(n) - mean * mean, 0.0);
        norm.feature_mean[std::size_t(i)] = mean;
        norm.feature_std[std::size_t(i)] = std::max(std::sqrt(var), kStdFloor);
    }
    norm.current_mean = cur_sum / double(n);
    const double cur_var = std::max(cur_sumsq / double(n) - norm.current_mean * norm.current_mean, 0.0);
    norm.current_std = std::max(std::sqrt(cur_var), kStdFloor);
    return norm;
}

std::string dataset_fingerprint(const RealDataset& dataset) {
    // FNV-1a over the raw step values
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](double x) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof(bits));
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& traj : dataset.trajectories) {
        for (const auto& step : traj.steps) {
            for (double t : step.torques) mix(t);
            for (double v : step.motor_velocities) mix(v);
            mix(step.current);
        }
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

namespace {

struct Chunk {
    std::vector<std::vector<double>> inputs;  // normalized features
    std::vector<double> targets;              // normalized currents
};

std::vector<Chunk> make_chunks(const std::vector<const RealTrajectory*>& trajs,
                               const Normalizer& norm, int chunk_len) {
    std::vector<Chunk> chunks;
    for (const auto* traj : trajs) {
        for (std::size_t start = 0; start < traj->steps.size();
             start += std::size_t(chunk_len)) {
            Chunk c;
            const std::size_t end = std::min(start + std::size_t(chunk_len), traj->steps.size());
            for (std::size_t t = start; t < end; ++t) {
                c.inputs.push_back(norm.normalize(traj->steps[t]));
                c.targets.push_back(norm.normalize_current(traj->steps[t].current));
            }
            chunks.push_back(std::move(c));
        }
    }
    return chunks;
}

double full_sequence_mse(const RecurrentSpec& spec, const ParamVector& params,
                         const std::vector<const RealTrajectory*>& trajs,
                         const Normalizer& norm) {
    double se = 0.0;
    std::size_t n = 0;
    for (const auto* traj : trajs) {
        RecurrentState state(spec.hidden_dim);
        for (const auto& step : traj->steps) {
            const auto out = recurrent_step(spec, params, state, norm.normalize(step));
            const double err = out[0] - norm.normalize_current(step.current);
            se += err * err;
            ++n;
        }
    }
    return n ? se / double(n) : 0.0;
}

}  // namespace

MeasurementModel train_measurement(const RealDataset& dataset, const RecurrentSpec& spec,
                                   const MeasurementTrainConfig& config, std::uint64_t seed,
                                   int version) {
    spec.validate();
    if (spec.input_dim != kMeasurementInputDim || spec.output_dim != 1)
        throw RejectedInput("train_measurement: spec must map 8 features to 1 current");
    if (dataset.trajectories.size() < 2)
        throw RejectedInput("train_measurement: need >= 2 trajectories for a validation split");

    MeasurementModel model;
    model.spec = spec;
    model.normalizer = fit_normalizer(dataset);
    model.version = version;
    model.dataset_fingerprint = dataset_fingerprint(dataset);

    // split by trajectory, deterministic in (dataset order, seed)
    Rng split_rng(seed ^ 0xd5a7a5e7ULL);
    std::vector<std::size_t> order(dataset.trajectories.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_indices(order, split_rng);
    const std::size_t n_val = std::max<std::size_t>(
        1, std::size_t(std::llround(config.val_fraction * double(order.size()))));
    std::vector<const RealTrajectory*> train_trajs, val_trajs;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto* t = &dataset.trajectories[order[i]];
        (i < n_val ? val_trajs : train_trajs).push_back(t);
    }

    auto chunks = make_chunks(train_trajs, model.normalizer, config.chunk_len);
    ParamVector params = init_params(spec, seed);
    AdamState opt(params.size(), config.learning_rate);
    Rng rng(seed);

    ParamVector best_params = params;
    double best_val = full_sequence_mse(spec, params, val_trajs, model.normalizer);
    int since_best = 0;

    std::vector<std::size_t> chunk_order(chunks.size());
    for (std::size_t i = 0; i < chunk_order.size(); ++i) chunk_order[i] = i;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        shuffle_indices(chunk_order, rng);
        for (std::size_t b = 0; b < chunk_order.size(); b += std::size_t(config.batch_chunks)) {
            const std::size_t b_end =
                std::min(b + std::size_t(config.batch_chunks), chunk_order.size());
            std::size_t n_steps = 0;
            for (std::size_t k = b; k < b_end; ++k)
                n_steps += chunks[chunk_order[k]].targets.size();
            if (n_steps == 0) continue;

            auto loss = [&](ad::Tape& tape) {
                int total = -1;
                for (std::size_t k = b; k < b_end; ++k) {
                    const Chunk& c = chunks[chunk_order[k]];
                    const auto outs = recurrent_forward(spec, tape, c.inputs);
                    for (std::size_t t = 0; t < outs.size(); ++t) {
                        const int err = tape.add_scalar(outs[t], -c.targets[t]);
                        const int sq = tape.mul(err, err);
                        total = (total < 0) ? sq : tape.add(total, sq);
                    }
                }
                return tape.scale(total, 1.0 / double(n_steps));
            };
            const ParamVector g = ad::grad(loss, params);
            adam_step(opt, params, g.values);
        }

        const double val = full_sequence_mse(spec, params, val_trajs, model.normalizer);
        if (val < best_val) {
            best_val = val;
            best_params = params;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }

    model.params = std::move(best_params);
    return model;
}

std::vector<double> predict_currents(const MeasurementModel& model,
                                     const std::vector<Vec4>& torque_seq,
                                     const std::vector<Vec4>& velocity_seq) {
    if (torque_seq.size() != velocity_seq.size())
        throw RejectedInput("predict_currents: sequence length mismatch");
    CurrentPredictor predictor(model);
    std::vector<double> out;
    out.reserve(torque_seq.size());
    for (std::size_t t = 0; t < torque_seq.size(); ++t)
        out.push_back(predictor.step(torque_seq[t], velocity_seq[t]));
    return out;
}

double CurrentPredictor::step(const Vec4& torques, const Vec4& motor_velocities) {
    TrajectoryStep s;
    s.torques = torques;
    s.motor_velocities = motor_velocities;
    const auto out =
        recurrent_step(model_->spec, model_->params, state_, model_->normalizer.normalize(s));
    return model_->normalizer.denormalize_current(out[0]);
}

RmseReport eval_rmse(const MeasurementModel& model, const RealDataset& heldout) {
    if (heldout.total_steps() == 0) throw RejectedInput("eval_rmse: empty dataset");
    double se = 0.0, cur_sum = 0.0;
    std::size_t n = 0;
    for (const auto& traj : heldout.trajectories) {
        CurrentPredictor predictor(model);
        for (const auto& step : traj.steps) {
            const double pred = predictor.step(step.torques, step.motor_velocities);
            const double err = pred - step.current;
            se += err * err;
            cur_sum += step.current;
            ++n;
        }
    }
    RmseReport report;
    report.rmse = std::sqrt(se / double(n));
    const double mean_current = cur_sum / double(n);
    report.relative_rmse = mean_current > 0.0 ? report.rmse / mean_current : 0.0;
    return report;
}

}  // namespace powertune
