// powertune: batch CLI around the fine-tuning pipeline.
//
// Subcommands: init-config, pretrain, iterate, evaluate, compare-baseline,
// report. Exit codes: 0 success, 1 usage/config error, 2 runtime/training
// failure. POWERTUNE_RUN_ROOT prefixes relative run directories.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "powertune/config.hpp"
#include "powertune/io.hpp"
#include "powertune/loop.hpp"
#include "powertune/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace powertune;

namespace {

constexpr const char* kEvalSchema = "powertune.eval.v1";
constexpr const char* kSegmentsSchema = "powertune.segments.v1";
constexpr const char* kSummarySchema = "powertune.summary.v1";
constexpr const char* kBaselineSchema = "powertune.baseline.v1";
constexpr const char* kReportSchema = "powertune.report.v1";
constexpr const char* kStatsSchema = "powertune.train-stats.v1";

fs::path resolve_run_dir(const std::string& dir) {
    fs::path p(dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv("POWERTUNE_RUN_ROOT")) p = fs::path(root) / p;
    }
    return p;
}

// Single-owner discipline for a run directory.
class RunLock {
public:
    explicit RunLock(const fs::path& run_dir) : path_(run_dir / ".lock") {
        fs::create_directories(run_dir);
        std::error_code ec;
        if (fs::exists(path_))
            throw RejectedInput("run directory is locked by another process: " +
                                path_.string());
        std::ofstream out(path_);
        if (!out) throw RejectedInput("cannot create lock file: " + path_.string());
        out << "powertune.lock.v1\n";
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
};

std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

RunConfig config_for_run(const fs::path& run_dir) {
    const fs::path path = run_dir / "config.json";
    if (!fs::exists(path))
        throw RejectedInput("no config.json in run directory (run pretrain first): " +
                            run_dir.string());
    return load_run_config(path);
}

void write_train_stats(const std::vector<TrainStatsRow>& stats, const fs::path& path) {
    std::ostringstream out;
    out << "#schema\t" << kStatsSchema << "\n";
    out << "step\tmean_sim_reward\tmean_predicted_current\tanchor_kl\tbeta\n";
    for (const auto& row : stats)
        out << row.step << "\t" << num(row.mean_sim_reward) << "\t"
            << num(row.mean_predicted_current) << "\t" << num(row.anchor_kl) << "\t"
            << num(row.beta) << "\n";
    atomic_write_text(path, out.str());
}

void print_iteration_summary(const LoopState& state) {
    std::printf("iteration  best policy                              net dP %%  net power W\n");
    for (const auto& rec : state.records) {
        std::printf("%-9d  %-40s  %8.2f  %11.3f\n", rec.iteration, rec.best_id.c_str(),
                    rec.best_delta_p_net, rec.best_net_power);
    }
}

void write_summary(const LoopState& state, const fs::path& path) {
    std::ostringstream out;
    out << "#schema\t" << kSummarySchema << "\n";
    out << "iteration\tbest_id\tnet_delta_p\tbest_net_power\n";
    for (const auto& rec : state.records)
        out << rec.iteration << "\t" << rec.best_id << "\t" << num(rec.best_delta_p_net)
            << "\t" << num(rec.best_net_power) << "\n";
    atomic_write_text(path, out.str());
}

PolicyCheckpoint find_policy(const fs::path& run_dir, const std::string& policy_id) {
    const fs::path pre = run_dir / "pre-trained.ckpt";
    if (policy_id == "pre-trained") {
        if (!fs::exists(pre)) throw RejectedInput("missing pre-trained checkpoint");
        return load_policy(pre);
    }
    for (int i = 0;; ++i) {
        const fs::path dir = run_dir / ("iter" + std::to_string(i)) / "candidates";
        if (!fs::exists(dir)) break;
        const fs::path ckpt = dir / (policy_id + ".ckpt");
        if (fs::exists(ckpt)) return load_policy(ckpt);
    }
    throw RejectedInput("unknown policy id: " + policy_id);
}

int cmd_init_config(const std::string& path, bool force) {
    if (fs::exists(path) && !force)
        throw RejectedInput("refusing to overwrite existing config: " + path +
                            " (use --force)");
    save_run_config(RunConfig{}, path);
    std::printf("%s\n", path.c_str());
    return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& run_dir_arg) {
    const RunConfig config = load_run_config(config_path);
    const fs::path run_dir =
        resolve_run_dir(run_dir_arg.empty() ? config.output_dir + "/default" : run_dir_arg);
    RunLock lock(run_dir);
    save_run_config(config, run_dir / "config.json");

    PretrainConfig pcfg = config.pretrain;
    pcfg.seed = derive_seed(config.seed, 0, 0x12e7, 0);
    std::vector<TrainStatsRow> stats;
    const PolicyCheckpoint ckpt = pretrain(config.env, pcfg, &stats);
    write_train_stats(stats, run_dir / "pretrain_stats.tsv");
    const fs::path out = run_dir / "pre-trained.ckpt";
    save_policy(ckpt, out);
    std::printf("%s\n", out.c_str());
    return 0;
}

int cmd_iterate(const std::string& config_path, const std::string& run_dir_arg,
                int n_iterations) {
    const fs::path run_dir = resolve_run_dir(run_dir_arg);
    RunLock lock(run_dir);
    const RunConfig config =
        config_path.empty() ? config_for_run(run_dir) : load_run_config(config_path);
    const LoopConfig loop = config.loop_config();

    LoopState state = load_loop_state(run_dir);  // resumes from committed iters
    const int n = n_iterations > 0 ? n_iterations
                                   : std::max(0, config.iterations - int(state.records.size()));
    for (int k = 0; k < n; ++k) {
        if (!state.records.empty() && state.best_delta_p_net >= config.target_delta_p) {
            std::printf("target net dP %.2f%% reached; stopping early\n",
                        config.target_delta_p);
            break;
        }
        const IterationRecord rec = run_iteration(state, loop, run_dir);
        std::printf("iter%d: best %s, net dP %.2f%% at v=%.2f\n", rec.iteration,
                    rec.best_id.c_str(), rec.best_delta_p_net, config.eval_command);
    }
    write_summary(state, run_dir / "summary.tsv");
    print_iteration_summary(state);
    return 0;
}

int cmd_evaluate(const std::string& run_dir_arg, const std::string& policy_id,
                 std::vector<double> commands) {
    const fs::path run_dir = resolve_run_dir(run_dir_arg);
    RunLock lock(run_dir);
    const RunConfig config = config_for_run(run_dir);
    if (commands.empty()) commands = config.eval_commands;

    const PolicyCheckpoint policy = find_policy(run_dir, policy_id);
    const PolicyCheckpoint pre = find_policy(run_dir, "pre-trained");
    const RealParams real = config.real_params();

    std::ostringstream table, segments;
    table << "#schema\t" << kEvalSchema << "\n";
    table << "command\tgross_fine\tnet_fine\tgross_pre\tnet_pre\tdelta_gross\tdelta_net"
          << "\toccupancy_fine\n";
    segments << "#schema\t" << kSegmentsSchema << "\n";
    segments << "command\tpolicy\tstart_step\tintegrated_current\tmean_velocity\n";
    std::printf("policy %s vs pre-trained\n", policy.id.c_str());
    std::printf("command  gross W   net W     dP gross %%  dP net %%  occupancy\n");
    int idx = 0;
    for (double command : commands) {
        auto [fine, pre_rep] = head_to_head(real, policy, pre, command,
                                            config.head_to_head_block_seconds,
                                            config.head_to_head_total_seconds,
                                            derive_seed(config.seed, 0, 0xe0a1, idx));
        const double d_gross = delta_p(pre_rep.gross_power, fine.gross_power);
        const double d_net = delta_p(pre_rep.net_power, fine.net_power);
        table << num(command) << "\t" << num(fine.gross_power) << "\t"
              << num(fine.net_power) << "\t" << num(pre_rep.gross_power) << "\t"
              << num(pre_rep.net_power) << "\t" << num(d_gross) << "\t" << num(d_net)
              << "\t" << num(fine.band_occupancy) << "\n";
        for (const auto& seg : fine.segments)
            segments << num(command) << "\tfine\t" << seg.start_step << "\t"
                     << num(seg.integrated_current) << "\t" << num(seg.mean_velocity)
                     << "\n";
        for (const auto& seg : pre_rep.segments)
            segments << num(command) << "\tpre\t" << seg.start_step << "\t"
                     << num(seg.integrated_current) << "\t" << num(seg.mean_velocity)
                     << "\n";
        std::printf("%-7.2f  %-8.3f  %-8.3f  %-10.2f  %-8.2f  %-9.3f\n", command,
                    fine.gross_power, fine.net_power, d_gross, d_net,
                    fine.band_occupancy);
        ++idx;
    }
    atomic_write_text(run_dir / ("evaluate-" + policy_id + ".tsv"), table.str());
    atomic_write_text(run_dir / ("evaluate-" + policy_id + "-segments.tsv"),
                      segments.str());
    return 0;
}

int cmd_compare_baseline(const std::string& run_dir_arg) {
    const fs::path run_dir = resolve_run_dir(run_dir_arg);
    RunLock lock(run_dir);
    const RunConfig config = config_for_run(run_dir);
    const LoopState state = load_loop_state(run_dir);
    if (state.records.empty())
        throw RejectedInput("compare-baseline needs a completed iterate run");
    const RealParams real = config.real_params();
    const Vec4 r_over_k2 = nominal_r_over_k2();

    // Data-driven proxy: elites of the final two iterations, model-predicted
    // power reduction vs head-to-head measured net reduction.
    std::vector<double> dd_pred, dd_meas;
    json dd_pairs = json::array();
    const std::size_t first =
        state.records.size() > 2 ? state.records.size() - 2 : std::size_t(0);
    for (std::size_t r = first; r < state.records.size(); ++r) {
        const IterationRecord& rec = state.records[r];
        const double pre_pred = -rec.pretrained_sim_energy_score;
        for (const std::string& id : rec.elite_ids) {
            const auto it =
                std::find_if(rec.candidates.begin(), rec.candidates.end(),
                             [&](const CandidateScore& c) { return c.id == id; });
            if (it == rec.candidates.end() || !rec.real_evals.count(id)) continue;
            const double cand_pred = -it->sim_energy_score;
            const double predicted = (pre_pred - cand_pred) / pre_pred * 100.0;
            const RealEval& eval = rec.real_evals.at(id);
            const double measured = delta_p(eval.paired_pre_net, eval.net_power);
            dd_pred.push_back(predicted);
            dd_meas.push_back(measured);
            dd_pairs.push_back({{"id", id}, {"predicted", predicted},
                                {"measured", measured}});
        }
    }
    const double dd_corr = proxy_correlation(dd_pred, dd_meas);

    // Analytical-proxy sweep at matched simulation sample budget.
    long pipeline_steps = 0;
    for (const auto& rec : state.records)
        pipeline_steps += long(rec.candidates.size()) * config.finetune_ppo.total_steps;
    const int n_baseline =
        int(config.baseline.lambdas.size() * config.baseline.kl_bounds.size());
    const long per_candidate = std::max<long>(pipeline_steps / n_baseline, 1);
    std::printf("baseline sweep: %d candidates, %ld sim steps each\n", n_baseline,
                per_candidate);

    struct BaselineCand {
        PolicyCheckpoint ckpt;
        double proxy_power = 0.0;
        double lambda = 0.0;
        double kl_bound = 0.0;
    };
    std::vector<BaselineCand> cands;
    int idx = 0;
    for (double lambda : config.baseline.lambdas) {
        for (double c : config.baseline.kl_bounds) {
            FinetuneConfig fcfg;
            fcfg.lambda = lambda;
            fcfg.kl_bound = c;
            fcfg.ppo = config.finetune_ppo;
            fcfg.ppo.total_steps = per_candidate;
            fcfg.seed = derive_seed(config.seed, 0, 0xba5e, idx);
            AnalyticalProxySignal signal(r_over_k2);
            BaselineCand cand;
            cand.ckpt = finetune(config.env, state.pretrained, signal, fcfg);
            cand.ckpt.id = "baseline-l" + num(lambda) + "-c" +
                           (std::isfinite(c) ? num(c) : std::string("inf"));
            cand.proxy_power = mean_proxy_power(config.env, cand.ckpt.policy, r_over_k2,
                                                config.eval_command,
                                                config.sim_eval_episodes);
            cand.lambda = lambda;
            cand.kl_bound = c;
            cands.push_back(std::move(cand));
            ++idx;
        }
    }
    const double pre_proxy =
        mean_proxy_power(config.env, state.pretrained.policy, r_over_k2,
                         config.eval_command, config.sim_eval_episodes);

    std::stable_sort(cands.begin(), cands.end(),
                     [](const BaselineCand& a, const BaselineCand& b) {
                         if (a.proxy_power != b.proxy_power)
                             return a.proxy_power < b.proxy_power;
                         if (a.lambda != b.lambda) return a.lambda < b.lambda;
                         return a.kl_bound < b.kl_bound;
                     });
    if (int(cands.size()) > config.baseline.top_k)
        cands.resize(std::size_t(config.baseline.top_k));

    std::vector<double> bl_pred, bl_meas;
    json bl_pairs = json::array();
    double baseline_best_net_dp = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cands.size(); ++k) {
        auto [fine, pre_rep] = head_to_head(real, cands[k].ckpt, state.pretrained,
                                            config.eval_command,
                                            config.head_to_head_block_seconds,
                                            config.head_to_head_total_seconds,
                                            derive_seed(config.seed, 0, 0xb1e7, int(k)));
        const double predicted =
            (pre_proxy - cands[k].proxy_power) / pre_proxy * 100.0;
        const double measured = delta_p(pre_rep.net_power, fine.net_power);
        baseline_best_net_dp = std::max(baseline_best_net_dp, measured);
        bl_pred.push_back(predicted);
        bl_meas.push_back(measured);
        bl_pairs.push_back({{"id", cands[k].ckpt.id}, {"predicted", predicted},
                            {"measured", measured}});
    }
    const double bl_corr = proxy_correlation(bl_pred, bl_meas);

    json doc;
    doc["schema"] = kBaselineSchema;
    doc["data_driven"] = {{"pairs", dd_pairs}, {"correlation", dd_corr}};
    doc["analytical"] = {{"pairs", bl_pairs}, {"correlation", bl_corr},
                         {"steps_per_candidate", per_candidate}};
    doc["side_by_side"] = {{"pipeline_best_net_delta_p", state.best_delta_p_net},
                           {"baseline_best_net_delta_p", baseline_best_net_dp}};
    atomic_write_text(run_dir / "baseline_comparison.json", doc.dump(1) + "\n");

    std::printf("data-driven proxy correlation:  %+.4f over %zu pairs\n", dd_corr,
                dd_pred.size());
    std::printf("analytical proxy correlation:   %+.4f over %zu pairs\n", bl_corr,
                bl_pred.size());
    std::printf("best net dP: pipeline %.2f%%, baseline %.2f%%\n", state.best_delta_p_net,
                baseline_best_net_dp);
    return 0;
}

int cmd_report(const std::string& run_dir_arg) {
    const fs::path run_dir = resolve_run_dir(run_dir_arg);
    RunLock lock(run_dir);
    const LoopState state = load_loop_state(run_dir);
    if (state.records.empty())
        throw RejectedInput("no completed iterations in " + run_dir.string());

    json doc;
    doc["schema"] = kReportSchema;
    json iters = json::array();
    for (const auto& rec : state.records) {
        json elites = json::array();
        for (const std::string& id : rec.elite_ids) {
            json row = {{"id", id}};
            const auto it =
                std::find_if(rec.candidates.begin(), rec.candidates.end(),
                             [&](const CandidateScore& c) { return c.id == id; });
            if (it != rec.candidates.end()) {
                row["sim_energy_score"] = it->sim_energy_score;
                row["lambda"] = it->lambda;
                row["kl_bound"] = it->kl_bound;
                row["anchor_kl"] = it->anchor_kl;
            }
            if (rec.real_evals.count(id)) {
                row["net_power"] = rec.real_evals.at(id).net_power;
                row["band_occupancy"] = rec.real_evals.at(id).band_occupancy;
            }
            elites.push_back(row);
        }
        iters.push_back({{"iteration", rec.iteration},
                         {"model_version", rec.model_version},
                         {"dataset_fingerprint", rec.dataset_fingerprint},
                         {"n_candidates", rec.candidates.size()},
                         {"elites", elites},
                         {"best_id", rec.best_id},
                         {"best_net_power", rec.best_net_power},
                         {"best_delta_p_net", rec.best_delta_p_net}});
    }
    doc["iterations"] = iters;
    doc["best_id"] = state.best.id;
    atomic_write_text(run_dir / "report.json", doc.dump(1) + "\n");

    print_iteration_summary(state);
    std::printf("report written to %s\n", (run_dir / "report.json").c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"powertune: data-driven power fine-tuning pipeline"};
    app.require_subcommand(1);

    std::string config_path, run_dir, policy_id, out_path = "powertune.json";
    std::vector<double> commands;
    int n_iterations = 0;
    bool force = false;

    auto* init = app.add_subcommand("init-config", "write a config with every default");
    init->add_option("path", out_path, "output path")->capture_default_str();
    init->add_flag("--force", force, "overwrite an existing file");

    auto* pre = app.add_subcommand("pretrain", "train the velocity-tracking policy");
    pre->add_option("--config", config_path, "config file")->required();
    pre->add_option("--run-dir", run_dir, "run directory")->required();

    auto* it = app.add_subcommand("iterate", "run fine-tuning iterations");
    it->add_option("--config", config_path, "config file (default: run dir copy)");
    it->add_option("--run-dir", run_dir, "run directory")->required();
    it->add_option("-n,--iterations", n_iterations,
                   "iterations to run (default: remaining per config)");

    auto* ev = app.add_subcommand("evaluate", "head-to-head vs pre-trained");
    ev->add_option("--run-dir", run_dir, "run directory")->required();
    ev->add_option("--policy", policy_id, "policy id")->required();
    ev->add_option("--commands", commands, "velocity commands (default: config)");

    auto* cb = app.add_subcommand("compare-baseline",
                                  "matched-budget analytical-proxy sweep");
    cb->add_option("--run-dir", run_dir, "run directory")->required();

    auto* rp = app.add_subcommand("report", "summarize a run directory");
    rp->add_option("--run-dir", run_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (init->parsed()) return cmd_init_config(out_path, force);
        if (pre->parsed()) return cmd_pretrain(config_path, run_dir);
        if (it->parsed()) return cmd_iterate(config_path, run_dir, n_iterations);
        if (ev->parsed()) return cmd_evaluate(run_dir, policy_id, commands);
        if (cb->parsed()) return cmd_compare_baseline(run_dir);
        if (rp->parsed()) return cmd_report(run_dir);
    } catch (const RejectedInput& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
