#pragma once

#include <string>

#include "powertune/nets.hpp"
#include "powertune/realworld.hpp"

namespace powertune {

inline constexpr int kMeasurementInputDim = 8;  // 4 torques + 4 motor velocities

struct TrajectoryStep {
    Vec4 torques = {0, 0, 0, 0};
    Vec4 motor_velocities = {0, 0, 0, 0};
    double current = 0.0;
};

struct RealTrajectory {
    std::vector<TrajectoryStep> steps;
    std::string policy_id;
    double command = 0.0;
    int iteration = 0;
};

struct RealDataset {
    std::vector<RealTrajectory> trajectories;

    std::size_t total_steps() const {
        std::size_t n = 0;
        for (const auto& t : trajectories) n += t.steps.size();
        return n;
    }
    void append(std::vector<RealTrajectory> more) {
        for (auto& t : more) trajectories.push_back(std::move(t));
    }
};

struct Normalizer {
    std::array<double, kMeasurementInputDim> feature_mean{};
    std::array<double, kMeasurementInputDim> feature_std{};
    double current_mean = 0.0;
    double current_std = 1.0;

    std::vector<double> normalize(const TrajectoryStep& step) const;
    double normalize_current(double i) const { return (i - current_mean) / current_std; }
    double denormalize_current(double z) const { return z * current_std + current_mean; }
};

struct MeasurementModel {
    RecurrentSpec spec;
    ParamVector params;
    Normalizer normalizer;
    int version = 0;
    std::string dataset_fingerprint;
};

struct MeasurementTrainConfig {
    int chunk_len = 100;
    int batch_chunks = 16;
    int max_epochs = 500;
    int patience = 50;         // epochs without validation improvement
    double learning_rate = 3e-3;
    double val_fraction = 0.1;
};

// Population mean/std over every step of every trajectory; stds floored at 1e-6.
Normalizer fit_normalizer(const RealDataset& dataset);

std::string dataset_fingerprint(const RealDataset& dataset);

MeasurementModel train_measurement(const RealDataset& dataset, const RecurrentSpec& spec,
                                   const MeasurementTrainConfig& config, std::uint64_t seed,
                                   int version = 1);

std::vector<double> predict_currents(const MeasurementModel& model,
                                     const std::vector<Vec4>& torque_seq,
                                     const std::vector<Vec4>& velocity_seq);

struct RmseReport {
    double rmse = 0.0;           // A
    double relative_rmse = 0.0;  // rmse / mean measured current
};

RmseReport eval_rmse(const MeasurementModel& model, const RealDataset& heldout);

// Streaming causal predictor for in-rollout current injection.
class CurrentPredictor {
public:
    explicit CurrentPredictor(const MeasurementModel& model)
        : model_(&model), state_(model.spec.hidden_dim) {}

    void reset() { state_ = RecurrentState(model_->spec.hidden_dim); }
    double step(const Vec4& torques, const Vec4& motor_velocities);

private:
    const MeasurementModel* model_;
    RecurrentState state_;
};

}  // namespace powertune
