#include "powertune/loop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace powertune {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, int iteration, std::uint64_t role, int index) {
    std::uint64_t x = seed ^ (role * 0x9e3779b97f4a7c15ULL) ^
                      (std::uint64_t(iteration) << 32) ^ std::uint64_t(index);
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

std::vector<RealTrajectory> collect_real(const std::vector<PolicyCheckpoint>& policies,
                                         int episodes_per_policy,
                                         const std::vector<double>& commands,
                                         const RealParams& params, int iteration,
                                         std::uint64_t seed) {
    if (policies.empty()) throw RejectedInput("collect_real: no policies");
    std::vector<RealTrajectory> trajectories;
    int run_index = 0;
    for (const auto& ckpt : policies) {
        if (ckpt.policy.spec.input_dim != kObservationDim)
            throw RejectedInput("collect_real: policy observation size mismatch");
        for (double command : commands) {
            for (int e = 0; e < episodes_per_policy; ++e, ++run_index) {
                Rng rng(derive_seed(seed, iteration, 0x5ea1, run_index));
                RealState state = real_reset(params, command, seed);
                RealTrajectory traj;
                traj.policy_id = ckpt.id;
                traj.command = command;
                traj.iteration = iteration;
                traj.steps.reserve(std::size_t(params.env.episode_len));
                for (int t = 0; t < params.env.episode_len; ++t) {
                    const auto sample_a = act(ckpt.policy, observe(state.env_state), rng);
                    Vec4 action;
                    for (int k = 0; k < 4; ++k) action[k] = sample_a.action[std::size_t(k)];
                    auto [next, sample, terms] = real_step(params, state, action);
                    (void)terms;
                    traj.steps.push_back(
                        {sample.torques, sample.motor_velocities, sample.current});
                    state = next;
                }
                trajectories.push_back(std::move(traj));
            }
        }
    }
    return trajectories;
}

double sim_energy_score(const EnvParams& env, const GaussianPolicy& policy,
                        const MeasurementModel& model, double command, int episodes) {
    CurrentPredictor predictor(model);
    double total = 0.0;
    long n = 0;
    for (int e = 0; e < episodes; ++e) {
        EnvState state = reset(env, command, std::uint64_t(e));
        predictor.reset();
        for (int t = 0; t < env.episode_len; ++t) {
            const auto mean = policy_mean(policy, observe(state));
            Vec4 action;
            for (int k = 0; k < 4; ++k) action[k] = mean[std::size_t(k)];
            const Vec4 applied = clamp_action(env, action);
            const double ihat = predictor.step(applied, state.motor_velocities);
            total += -ihat;
            ++n;
            auto [next, terms] = step(env, state, action);
            (void)terms;
            state = next;
        }
    }
    return total / double(n);
}

std::vector<CandidateScore> select_top_k(std::vector<CandidateScore> candidates, int k) {
    if (int(candidates.size()) < k)
        throw RejectedInput("select_top_k: fewer candidates than k");
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const CandidateScore& a, const CandidateScore& b) {
                         if (a.sim_energy_score != b.sim_energy_score)
                             return a.sim_energy_score > b.sim_energy_score;
                         if (a.lambda != b.lambda) return a.lambda < b.lambda;
                         if (a.kl_bound != b.kl_bound) return a.kl_bound < b.kl_bound;
                         if (a.anchor_id != b.anchor_id) return a.anchor_id < b.anchor_id;
                         return a.id < b.id;
                     });
    candidates.resize(std::size_t(k));
    return candidates;
}

std::string select_best(const std::map<std::string, RealEval>& reports,
                        double min_occupancy) {
    if (reports.empty()) throw RejectedInput("select_best: no reports");
    std::string best_id;
    double best_net = std::numeric_limits<double>::infinity();
    for (const auto& [id, eval] : reports) {  // map order makes ties deterministic by id
        if (eval.band_occupancy < min_occupancy) continue;
        if (eval.net_power < best_net) {
            best_net = eval.net_power;
            best_id = id;
        }
    }
    return best_id;
}

LoopState init_loop_state(const PolicyCheckpoint& pretrained) {
    LoopState state;
    state.pretrained = pretrained;
    state.elites = {pretrained};
    state.best = pretrained;
    return state;
}

namespace {

std::string format_number(double x) {
    std::ostringstream ss;
    ss << x;
    return ss.str();
}

}  // namespace

IterationRecord run_iteration(LoopState& state, const LoopConfig& config,
                              const std::filesystem::path& run_dir) {
    config.grid.validate();
    if (state.pretrained.id.empty())
        throw RejectedInput("run_iteration: loop state has no pre-trained checkpoint");
    const int i = int(state.records.size());

    IterationRecord record;
    record.iteration = i;

    // (a) real-world data collection from the current elite pool
    auto trajectories = collect_real(state.elites, config.episodes_per_policy,
                                     config.collect_commands, config.real, i,
                                     derive_seed(config.seed, i, 0xda7a, 0));
    RealDataset grown = state.dataset;
    grown.append(std::move(trajectories));

    // (b) measurement model on the full accumulated dataset
    const MeasurementModel model =
        train_measurement(grown, config.measurement_spec, config.measurement_train,
                          derive_seed(config.seed, i, 0x30de1, 0), i + 1);
    record.dataset_fingerprint = model.dataset_fingerprint;
    record.model_version = model.version;

    // (c) sweep over anchors x lambdas x kl bounds
    std::vector<PolicyCheckpoint> anchors{state.best};
    if (state.best.id != state.pretrained.id) anchors.push_back(state.pretrained);
    std::vector<PolicyCheckpoint> candidates;
    int cand_index = 0;
    for (const auto& anchor : anchors) {
        for (double lambda : config.grid.lambdas) {
            for (double c : config.grid.kl_bounds) {
                FinetuneConfig fcfg;
                fcfg.lambda = lambda;
                fcfg.kl_bound = c;
                fcfg.ppo = config.finetune_ppo;
                fcfg.seed = derive_seed(config.seed, i, 0xf17e, cand_index);
                MeasuredCurrentSignal energy(model, fcfg.ppo.n_envs);
                PolicyCheckpoint cand = finetune(config.env, anchor, energy, fcfg);
                cand.iteration = i;
                cand.id = "iter" + std::to_string(i) + "-" + anchor.id + "-l" +
                          format_number(lambda) + "-c" + format_number(c);
                candidates.push_back(std::move(cand));
                ++cand_index;
            }
        }
    }

    // (d) simulation energy scores
    std::vector<CandidateScore> scores;
    for (const auto& cand : candidates) {
        CandidateScore s;
        s.id = cand.id;
        s.lambda = cand.config_tag->lambda;
        s.kl_bound = cand.config_tag->kl_bound;
        s.anchor_id = cand.config_tag->anchor_id;
        s.sim_energy_score = sim_energy_score(config.env, cand.policy, model,
                                              config.eval_command, config.sim_eval_episodes);
        const auto obs = sample_observations(config.env, cand.policy,
                                             config.finetune_ppo.commands, 2,
                                             derive_seed(config.seed, i, 0x0b5e, int(scores.size())));
        for (const auto& anchor : anchors) {
            if (anchor.id == s.anchor_id) {
                s.anchor_kl = kl_mean(cand.policy, anchor.policy, obs);
                break;
            }
        }
        scores.push_back(std::move(s));
    }
    record.candidates = scores;
    record.pretrained_sim_energy_score =
        sim_energy_score(config.env, state.pretrained.policy, model,
                         config.eval_command, config.sim_eval_episodes);

    // (e) elite selection
    const auto elite_scores = select_top_k(scores, config.top_k);
    std::vector<PolicyCheckpoint> elites;
    for (const auto& s : elite_scores) {
        record.elite_ids.push_back(s.id);
        for (const auto& cand : candidates) {
            if (cand.id == s.id) {
                PolicyCheckpoint e = cand;
                e.lineage = Lineage::Elite;
                elites.push_back(std::move(e));
                break;
            }
        }
    }

    // (f) real-world evaluation of the elites, head-to-head vs pre-trained
    for (std::size_t k = 0; k < elites.size(); ++k) {
        auto [elite_report, pre_report] = head_to_head(
            config.real, elites[k], state.pretrained, config.eval_command,
            config.head_to_head_block_seconds, config.head_to_head_total_seconds,
            derive_seed(config.seed, i, 0xe7a1, int(k)));
        RealEval eval;
        eval.gross_power = elite_report.gross_power;
        eval.net_power = elite_report.net_power;
        eval.band_occupancy = elite_report.band_occupancy;
        eval.paired_pre_gross = pre_report.gross_power;
        eval.paired_pre_net = pre_report.net_power;
        record.real_evals[elites[k].id] = eval;
    }

    // (g) best selection with incumbent carry-over
    const std::string new_best = select_best(record.real_evals, config.min_real_occupancy);
    if (!new_best.empty() &&
        record.real_evals.at(new_best).net_power < state.best_net_power) {
        const RealEval& new_eval = record.real_evals.at(new_best);
        for (auto& e : elites) {
            if (e.id == new_best) {
                PolicyCheckpoint b = e;
                b.lineage = Lineage::Best;
                state.best = std::move(b);
                break;
            }
        }
        state.best_net_power = new_eval.net_power;
        // a percentage only makes sense against a positive reference draw
        state.best_delta_p_net =
            new_eval.paired_pre_net > 0.0
                ? delta_p(new_eval.paired_pre_net, new_eval.net_power)
                : 0.0;
    }
    record.best_id = state.best.id;
    record.best_net_power = state.best_net_power;
    record.best_delta_p_net = state.best_delta_p_net;

    // (h) persist atomically: stage into iter<i>.tmp, then rename
    const auto final_dir = run_dir / ("iter" + std::to_string(i));
    const auto stage_dir = run_dir / ("iter" + std::to_string(i) + ".stage");
    std::filesystem::remove_all(stage_dir);
    std::filesystem::create_directories(stage_dir / "candidates");
    save_dataset(grown, stage_dir / "dataset.jsonl");
    save_measurement(model, stage_dir / "model.ckpt");
    for (const auto& cand : candidates)
        save_policy(cand, stage_dir / "candidates" / (cand.id + ".ckpt"));
    save_record(record, stage_dir / "record.json");
    std::filesystem::remove_all(final_dir);
    std::filesystem::rename(stage_dir, final_dir);

    // only now commit the in-memory state transition
    state.dataset = std::move(grown);
    state.elites = std::move(elites);
    state.records.push_back(record);
    return record;
}

void run(LoopState& state, const LoopConfig& config, const std::filesystem::path& run_dir,
         int iterations) {
    if (iterations < 1) throw RejectedInput("run: iterations must be >= 1");
    for (int n = 0; n < iterations; ++n) {
        const IterationRecord record = run_iteration(state, config, run_dir);
        if (record.best_delta_p_net >= config.target_delta_p) break;
    }
}

void save_record(const IterationRecord& record, const std::filesystem::path& path) {
    json doc;
    doc["schema"] = kRecordSchema;
    doc["iteration"] = record.iteration;
    doc["dataset_fingerprint"] = record.dataset_fingerprint;
    doc["model_version"] = record.model_version;
    doc["pretrained_sim_energy_score"] = record.pretrained_sim_energy_score;
    json cands = json::array();
    for (const auto& c : record.candidates) {
        cands.push_back({{"id", c.id},
                         {"sim_energy_score", c.sim_energy_score},
                         {"lambda", c.lambda},
                         {"kl_bound", c.kl_bound},
                         {"anchor_id", c.anchor_id},
                         {"anchor_kl", c.anchor_kl}});
    }
    doc["candidates"] = cands;
    doc["elite_ids"] = record.elite_ids;
    json evals = json::object();
    for (const auto& [id, e] : record.real_evals) {
        evals[id] = {{"gross_power", e.gross_power},
                     {"net_power", e.net_power},
                     {"band_occupancy", e.band_occupancy},
                     {"paired_pre_gross", e.paired_pre_gross},
                     {"paired_pre_net", e.paired_pre_net}};
    }
    doc["real_evals"] = evals;
    doc["best_id"] = record.best_id;
    doc["best_net_power"] = record.best_net_power;
    doc["best_delta_p_net"] = record.best_delta_p_net;
    atomic_write_text(path, doc.dump(1));
}

IterationRecord load_record(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RejectedInput("cannot open record: " + path.string());
    json doc = json::parse(in);
    if (doc.value("schema", "") != kRecordSchema)
        throw RejectedInput("unexpected record schema in " + path.string());
    IterationRecord record;
    record.iteration = doc.at("iteration").get<int>();
    record.dataset_fingerprint = doc.at("dataset_fingerprint").get<std::string>();
    record.model_version = doc.at("model_version").get<int>();
    record.pretrained_sim_energy_score = doc.at("pretrained_sim_energy_score").get<double>();
    for (const auto& c : doc.at("candidates")) {
        CandidateScore s;
        s.id = c.at("id").get<std::string>();
        s.sim_energy_score = c.at("sim_energy_score").get<double>();
        s.lambda = c.at("lambda").get<double>();
        s.kl_bound = c.at("kl_bound").get<double>();
        s.anchor_id = c.at("anchor_id").get<std::string>();
        s.anchor_kl = c.at("anchor_kl").get<double>();
        record.candidates.push_back(std::move(s));
    }
    record.elite_ids = doc.at("elite_ids").get<std::vector<std::string>>();
    for (const auto& [id, e] : doc.at("real_evals").items()) {
        RealEval eval;
        eval.gross_power = e.at("gross_power").get<double>();
        eval.net_power = e.at("net_power").get<double>();
        eval.band_occupancy = e.at("band_occupancy").get<double>();
        eval.paired_pre_gross = e.at("paired_pre_gross").get<double>();
        eval.paired_pre_net = e.at("paired_pre_net").get<double>();
        record.real_evals[id] = eval;
    }
    record.best_id = doc.at("best_id").get<std::string>();
    record.best_net_power = doc.at("best_net_power").get<double>();
    record.best_delta_p_net = doc.at("best_delta_p_net").get<double>();
    return record;
}

LoopState load_loop_state(const std::filesystem::path& run_dir) {
    LoopState state = init_loop_state(load_policy(run_dir / "pre-trained.ckpt"));
    for (int i = 0;; ++i) {
        const auto iter_dir = run_dir / ("iter" + std::to_string(i));
        if (!std::filesystem::exists(iter_dir / "record.json")) break;
        IterationRecord record = load_record(iter_dir / "record.json");
        state.dataset = load_dataset(iter_dir / "dataset.jsonl");
        state.elites.clear();
        for (const auto& id : record.elite_ids) {
            PolicyCheckpoint e = load_policy(iter_dir / "candidates" / (id + ".ckpt"));
            e.lineage = Lineage::Elite;
            state.elites.push_back(std::move(e));
        }
        if (record.best_id == state.pretrained.id) {
            state.best = state.pretrained;
        } else {
            // the best may come from an earlier iteration's candidate pool
            for (int j = i; j >= 0; --j) {
                const auto p = run_dir / ("iter" + std::to_string(j)) / "candidates" /
                               (record.best_id + ".ckpt");
                if (std::filesystem::exists(p)) {
                    state.best = load_policy(p);
                    state.best.lineage = Lineage::Best;
                    break;
                }
            }
        }
        state.best_net_power = record.best_net_power;
        state.best_delta_p_net = record.best_delta_p_net;
        state.records.push_back(std::move(record));
    }
    return state;
}

}  // namespace powertune
