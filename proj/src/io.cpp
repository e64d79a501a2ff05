#include "powertune/io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace powertune {

using nlohmann::json;

namespace {

json layout_to_json(const ParamLayout& layout) {
    json arr = json::array();
    for (const auto& [name, info] : layout.slices())
        arr.push_back({name, info.offset, info.rows, info.cols});
    return arr;
}

ParamLayout layout_from_json(const json& arr) {
    ParamLayout layout;
    for (const auto& item : arr) {
        const std::string name = item.at(0).get<std::string>();
        layout.add(name, item.at(2).get<std::size_t>(), item.at(3).get<std::size_t>());
        if (layout.at(name).offset != item.at(1).get<std::size_t>())
            throw RejectedInput("checkpoint layout offsets are inconsistent");
    }
    return layout;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RejectedInput("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_checkpoint(const std::filesystem::path& path, const std::string& kind) {
    json doc = json::parse(read_file(path));
    if (doc.value("schema", "") != kCheckpointSchema)
        throw RejectedInput("unexpected checkpoint schema in " + path.string());
    if (doc.value("kind", "") != kind)
        throw RejectedInput("checkpoint " + path.string() + " is not a " + kind + " checkpoint");
    return doc;
}

}  // namespace

void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw RejectedInput("cannot write file: " + tmp.string());
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

void save_policy(const PolicyCheckpoint& ckpt, const std::filesystem::path& path) {
    json doc;
    doc["schema"] = kCheckpointSchema;
    doc["kind"] = "policy";
    doc["spec"] = {{"input_dim", ckpt.policy.spec.input_dim},
                   {"hidden_dims", ckpt.policy.spec.hidden_dims},
                   {"output_dim", ckpt.policy.spec.output_dim}};
    doc["layout"] = layout_to_json(ckpt.policy.params.layout);
    doc["values"] = ckpt.policy.params.values;
    doc["lineage"] = to_string(ckpt.lineage);
    doc["iteration"] = ckpt.iteration;
    doc["id"] = ckpt.id;
    if (ckpt.config_tag) {
        doc["config_tag"] = {{"lambda", ckpt.config_tag->lambda},
                             {"kl_bound", ckpt.config_tag->kl_bound},
                             {"anchor_id", ckpt.config_tag->anchor_id}};
    } else {
        doc["config_tag"] = nullptr;
    }
    atomic_write_text(path, doc.dump(1));
}

PolicyCheckpoint load_policy(const std::filesystem::path& path) {
    const json doc = parse_checkpoint(path, "policy");
    PolicyCheckpoint ckpt;
    ckpt.policy.spec.input_dim = doc.at("spec").at("input_dim").get<int>();
    ckpt.policy.spec.hidden_dims = doc.at("spec").at("hidden_dims").get<std::vector<int>>();
    ckpt.policy.spec.output_dim = doc.at("spec").at("output_dim").get<int>();
    ckpt.policy.params.layout = layout_from_json(doc.at("layout"));
    ckpt.policy.params.values = doc.at("values").get<std::vector<double>>();
    if (ckpt.policy.params.values.size() != ckpt.policy.params.layout.total())
        throw RejectedInput("checkpoint value count does not match layout");
    ckpt.lineage = lineage_from_string(doc.at("lineage").get<std::string>());
    ckpt.iteration = doc.at("iteration").get<int>();
    ckpt.id = doc.at("id").get<std::string>();
    if (!doc.at("config_tag").is_null()) {
        ConfigTag tag;
        tag.lambda = doc.at("config_tag").at("lambda").get<double>();
        tag.kl_bound = doc.at("config_tag").at("kl_bound").get<double>();
        tag.anchor_id = doc.at("config_tag").at("anchor_id").get<std::string>();
        ckpt.config_tag = tag;
    }
    return ckpt;
}

void save_measurement(const MeasurementModel& model, const std::filesystem::path& path) {
    json doc;
    doc["schema"] = kCheckpointSchema;
    doc["kind"] = "measurement";
    doc["spec"] = {{"input_dim", model.spec.input_dim},
                   {"hidden_dim", model.spec.hidden_dim},
                   {"output_dim", model.spec.output_dim}};
    doc["layout"] = layout_to_json(model.params.layout);
    doc["values"] = model.params.values;
    doc["normalizer"] = {{"feature_mean", model.normalizer.feature_mean},
                         {"feature_std", model.normalizer.feature_std},
                         {"current_mean", model.normalizer.current_mean},
                         {"current_std", model.normalizer.current_std}};
    doc["version"] = model.version;
    doc["dataset_fingerprint"] = model.dataset_fingerprint;
    atomic_write_text(path, doc.dump(1));
}

MeasurementModel load_measurement(const std::filesystem::path& path) {
    const json doc = parse_checkpoint(path, "measurement");
    MeasurementModel model;
    model.spec.input_dim = doc.at("spec").at("input_dim").get<int>();
    model.spec.hidden_dim = doc.at("spec").at("hidden_dim").get<int>();
    model.spec.output_dim = doc.at("spec").at("output_dim").get<int>();
    model.params.layout = layout_from_json(doc.at("layout"));
    model.params.values = doc.at("values").get<std::vector<double>>();
    const auto& norm = doc.at("normalizer");
    model.normalizer.feature_mean =
        norm.at("feature_mean").get<std::array<double, kMeasurementInputDim>>();
    model.normalizer.feature_std =
        norm.at("feature_std").get<std::array<double, kMeasurementInputDim>>();
    model.normalizer.current_mean = norm.at("current_mean").get<double>();
    model.normalizer.current_std = norm.at("current_std").get<double>();
    model.version = doc.at("version").get<int>();
    model.dataset_fingerprint = doc.at("dataset_fingerprint").get<std::string>();
    return model;
}

void save_dataset(const RealDataset& dataset, const std::filesystem::path& path) {
    std::ostringstream out;
    out << json{{"schema", kDatasetSchema}}.dump() << "\n";
    int traj_id = 0;
    for (const auto& traj : dataset.trajectories) {
        out << json{{"type", "trajectory"},
                    {"id", traj_id},
                    {"policy", traj.policy_id},
                    {"command", traj.command},
                    {"iteration", traj.iteration}}
                   .dump()
            << "\n";
        int step_idx = 0;
        for (const auto& step : traj.steps) {
            out << json{{"type", "step"},
                        {"iteration", traj.iteration},
                        {"trajectory", traj_id},
                        {"step", step_idx},
                        {"torques", step.torques},
                        {"motor_velocities", step.motor_velocities},
                        {"current", step.current}}
                       .dump()
                << "\n";
            ++step_idx;
        }
        ++traj_id;
    }
    atomic_write_text(path, out.str());
}

RealDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RejectedInput("cannot open dataset: " + path.string());
    std::string line;
    if (!std::getline(in, line) || json::parse(line).value("schema", "") != kDatasetSchema)
        throw RejectedInput("dataset schema tag missing in " + path.string());

    RealDataset dataset;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        const std::string type = rec.at("type").get<std::string>();
        if (type == "trajectory") {
            RealTrajectory traj;
            traj.policy_id = rec.at("policy").get<std::string>();
            traj.command = rec.at("command").get<double>();
            traj.iteration = rec.at("iteration").get<int>();
            dataset.trajectories.push_back(std::move(traj));
        } else if (type == "step") {
            if (dataset.trajectories.empty())
                throw RejectedInput("dataset step line before any trajectory line");
            TrajectoryStep step;
            step.torques = rec.at("torques").get<Vec4>();
            step.motor_velocities = rec.at("motor_velocities").get<Vec4>();
            step.current = rec.at("current").get<double>();
            dataset.trajectories.back().steps.push_back(step);
        } else {
            throw RejectedInput("unknown dataset record type: " + type);
        }
    }
    return dataset;
}

}  // namespace powertune
