#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "powertune/loop.hpp"

using namespace powertune;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
    const fs::path dir = fs::temp_directory_path() / "powertune-loop-tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Small-budget loop config that still exercises the full 3x3 grid.
LoopConfig tiny_config() {
    LoopConfig cfg;
    cfg.env.episode_len = 60;
    cfg.real = make_real_params(cfg.env);
    cfg.episodes_per_policy = 2;  // >= 2 trajectories for the validation split
    cfg.collect_commands = {0.8};
    cfg.sim_eval_episodes = 2;
    cfg.finetune_ppo.total_steps = 480;
    cfg.finetune_ppo.rollout_len = 60;
    cfg.finetune_ppo.n_envs = 4;
    cfg.finetune_ppo.minibatch_size = 120;
    cfg.measurement_spec = {kMeasurementInputDim, 8, 1};
    cfg.measurement_train.max_epochs = 5;
    cfg.measurement_train.chunk_len = 30;
    cfg.measurement_train.batch_chunks = 2;
    cfg.head_to_head_block_seconds = 4.0;
    cfg.head_to_head_total_seconds = 8.0;
    cfg.min_real_occupancy = 0.0;  // tiny-budget policies track poorly
    cfg.seed = 11;
    return cfg;
}

PolicyCheckpoint tiny_pretrained(const EnvParams& env) {
    PretrainConfig pre;
    pre.ppo.total_steps = 2400;
    pre.ppo.rollout_len = 60;
    pre.ppo.n_envs = 4;
    pre.ppo.minibatch_size = 120;
    pre.ppo.commands = {0.8};
    pre.min_occupancy = 0.0;
    pre.seed = 13;
    return pretrain(env, pre);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("derive_seed decorrelates") {
    CHECK(derive_seed(1, 0, 2, 3) == derive_seed(1, 0, 2, 3));
    CHECK(derive_seed(1, 0, 2, 3) != derive_seed(1, 0, 2, 4));
    CHECK(derive_seed(1, 0, 2, 3) != derive_seed(1, 1, 2, 3));
    CHECK(derive_seed(1, 0, 2, 3) != derive_seed(2, 0, 2, 3));
}

TEST_CASE("select_top_k ordering and ties") {
    std::vector<CandidateScore> cands;
    for (int i = 0; i < 3; ++i) {
        CandidateScore c;
        c.id = "c" + std::to_string(i);
        c.sim_energy_score = -double(i + 1);
        cands.push_back(c);
    }
    const auto top = select_top_k(cands, 2);
    REQUIRE(top.size() == 2);
    CHECK(top[0].id == "c0");
    CHECK(top[1].id == "c1");

    std::vector<CandidateScore> equal(4);
    for (int i = 0; i < 4; ++i) {
        equal[std::size_t(i)].id = "e" + std::to_string(i);
        equal[std::size_t(i)].sim_energy_score = 1.0;
        equal[std::size_t(i)].lambda = double(4 - i);  // tie-break: smaller lambda first
    }
    const auto tied = select_top_k(equal, 2);
    CHECK(tied[0].id == "e3");
    CHECK(tied[1].id == "e2");

    const auto all = select_top_k(equal, 4);
    CHECK(all.size() == 4);
    CHECK_THROWS_AS(select_top_k(equal, 5), RejectedInput);
}

TEST_CASE("select_best picks minimal net power") {
    std::map<std::string, RealEval> evals;
    evals["a"].net_power = 10.0;
    evals["b"].net_power = 8.0;
    evals["c"].net_power = 9.0;
    CHECK(select_best(evals) == "b");
    std::map<std::string, RealEval> single;
    single["only"].net_power = 4.0;
    CHECK(select_best(single) == "only");
    // gross ordering must not override net
    evals["a"].gross_power = 1.0;
    CHECK(select_best(evals) == "b");
}

TEST_CASE("select_best disqualifies low band occupancy") {
    std::map<std::string, RealEval> evals;
    evals["coaster"].net_power = -5.0;  // stopped the cart; meaningless power
    evals["coaster"].band_occupancy = 0.1;
    evals["tracker"].net_power = 9.0;
    evals["tracker"].band_occupancy = 0.92;
    CHECK(select_best(evals, 0.8) == "tracker");
    CHECK(select_best(evals, 0.0) == "coaster");
    CHECK(select_best(evals, 0.95) == "");  // nothing qualifies
}

TEST_CASE("collect_real counts and metadata") {
    EnvParams env;
    env.episode_len = 40;
    const RealParams real = make_real_params(env);
    const PolicyCheckpoint p = tiny_pretrained(env);
    const auto trajs = collect_real({p}, 2, {0.8}, real, 0, 3);
    REQUIRE(trajs.size() == 2);
    for (const auto& t : trajs) {
        CHECK(t.policy_id == p.id);
        CHECK(t.steps.size() == 40);
    }
}

TEST_CASE("iteration record round trip") {
    const fs::path dir = temp_dir("record");
    IterationRecord rec;
    rec.iteration = 1;
    rec.dataset_fingerprint = "deadbeef";
    rec.model_version = 2;
    rec.pretrained_sim_energy_score = -0.91;
    CandidateScore c;
    c.id = "x";
    c.sim_energy_score = -0.5;
    c.lambda = 1.0;
    c.kl_bound = 0.2;
    c.anchor_id = "pre-trained";
    c.anchor_kl = 0.11;
    rec.candidates = {c};
    rec.elite_ids = {"x"};
    rec.real_evals["x"] = RealEval{20.0, 8.0, 0.95, 22.0, 10.0};
    rec.best_id = "x";
    rec.best_net_power = 8.0;
    rec.best_delta_p_net = 20.0;
    save_record(rec, dir / "record.json");
    const IterationRecord back = load_record(dir / "record.json");
    CHECK(back.iteration == 1);
    CHECK(back.pretrained_sim_energy_score == rec.pretrained_sim_energy_score);
    REQUIRE(back.candidates.size() == 1);
    CHECK(back.candidates[0].anchor_kl == 0.11);
    CHECK(back.real_evals.at("x").net_power == 8.0);
    CHECK(back.best_delta_p_net == 20.0);
}

TEST_CASE("run_iteration structure, growth, and resume determinism") {
    const LoopConfig cfg = tiny_config();
    const PolicyCheckpoint pre = tiny_pretrained(cfg.env);

    const fs::path dir_a = temp_dir("iter-a");
    save_policy(pre, dir_a / "pre-trained.ckpt");
    LoopState state = init_loop_state(pre);
    const IterationRecord rec0 = run_iteration(state, cfg, dir_a);

    // i=0: 2 anchors collapse to 1 -> 9 candidates, 6 elites
    CHECK(rec0.iteration == 0);
    CHECK(rec0.candidates.size() == 9);
    CHECK(rec0.elite_ids.size() == 6);
    CHECK(rec0.model_version == 1);
    CHECK(fs::exists(dir_a / "iter0" / "dataset.jsonl"));
    CHECK(fs::exists(dir_a / "iter0" / "model.ckpt"));
    CHECK(fs::exists(dir_a / "iter0" / "record.json"));
    CHECK_FALSE(fs::exists(dir_a / "iter0.stage"));

    // best has minimal measured net power among elites
    for (const auto& [id, eval] : rec0.real_evals)
        CHECK(rec0.best_net_power <= eval.net_power);

    const std::size_t steps0 = state.dataset.total_steps();
    const IterationRecord rec1 = run_iteration(state, cfg, dir_a);
    CHECK(rec1.iteration == 1);
    // i>=1: two distinct anchors unless best == pre-trained
    const std::size_t expect =
        state.best.id == pre.id ? std::size_t(9) : std::size_t(18);
    CHECK(rec1.candidates.size() == expect);
    CHECK(rec1.model_version == 2);
    CHECK(state.dataset.total_steps() > steps0);
    CHECK(rec1.best_net_power <= rec0.best_net_power);  // incumbent carry-over

    // dataset union: every iter0 trajectory still present verbatim
    const RealDataset d1 = load_dataset(dir_a / "iter1" / "dataset.jsonl");
    const RealDataset d0 = load_dataset(dir_a / "iter0" / "dataset.jsonl");
    REQUIRE(d1.trajectories.size() > d0.trajectories.size());
    RealDataset prefix;
    prefix.trajectories.assign(d1.trajectories.begin(),
                               d1.trajectories.begin() + long(d0.trajectories.size()));
    CHECK(dataset_fingerprint(prefix) == dataset_fingerprint(d0));

    // anchor KL contract on every candidate
    for (const auto& c : rec1.candidates) CHECK(c.anchor_kl <= 1.5 * c.kl_bound + 1e-9);

    // resume from disk reproduces iteration 1 byte-for-byte
    const fs::path dir_b = temp_dir("iter-b");
    fs::create_directories(dir_b);
    fs::copy(dir_a / "pre-trained.ckpt", dir_b / "pre-trained.ckpt");
    fs::copy(dir_a / "iter0", dir_b / "iter0", fs::copy_options::recursive);
    LoopState resumed = load_loop_state(dir_b);
    CHECK(resumed.records.size() == 1);
    run_iteration(resumed, cfg, dir_b);
    CHECK(slurp(dir_b / "iter1" / "record.json") == slurp(dir_a / "iter1" / "record.json"));
}
