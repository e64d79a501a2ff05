#include <doctest.h>

#include <cmath>

#include "powertune/metrics.hpp"

using namespace powertune;

namespace {

PolicyCheckpoint constant_action_policy(const Vec4& action, const std::string& id) {
    const MlpSpec spec{kObservationDim, {}, 4};
    PolicyCheckpoint ckpt;
    ckpt.policy = make_policy(spec, 0);
    ckpt.id = id;
    for (auto& v : ckpt.policy.params.values) v = 0.0;
    double* b = ckpt.policy.params.slice("l0.b");
    for (int i = 0; i < 4; ++i) b[i] = action[i];
    return ckpt;
}

}  // namespace

TEST_CASE("segment_powers on a constant trace") {
    const double dt = 0.02;
    std::vector<double> current(150, 5.0);  // 3 s at 50 Hz
    std::vector<double> velocity(150, 0.8);
    const auto segments = segment_powers(current, velocity, 0.8, dt);
    REQUIRE(segments.size() == 3);
    for (const auto& s : segments)
        CHECK(s.integrated_current == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("one out-of-band sample excludes its whole window") {
    const double dt = 0.02;
    std::vector<double> current(150, 5.0);
    std::vector<double> velocity(150, 0.8);
    velocity[75] = 0.88 * 0.8;  // 12% below command, inside window 1
    const auto segments = segment_powers(current, velocity, 0.8, dt);
    REQUIRE(segments.size() == 2);
    CHECK(segments[0].start_step == 0);
    CHECK(segments[1].start_step == 100);

    // band edges: exactly +/-10% stays in
    velocity[75] = 0.9 * 0.8;
    CHECK(segment_powers(current, velocity, 0.8, dt).size() == 3);
}

TEST_CASE("zero command uses the absolute band") {
    const double dt = 0.02;
    std::vector<double> current(100, 1.0);
    std::vector<double> velocity(100, 0.04);
    CHECK(segment_powers(current, velocity, 0.0, dt).size() == 2);
    velocity[10] = 0.06;
    CHECK(segment_powers(current, velocity, 0.0, dt).size() == 1);
}

TEST_CASE("gross/net identity and report") {
    const double dt = 0.02;
    std::vector<double> current(100, 2.0);
    std::vector<double> velocity(100, 0.8);
    const PowerReport r = make_power_report(current, velocity, 0.8, dt, 0.5, 24.0);
    CHECK(r.gross_power == doctest::Approx(2.0 * 24.0).epsilon(1e-12));
    CHECK(r.net_power == doctest::Approx(r.gross_power - 0.5 * 24.0).epsilon(1e-12));
    CHECK(r.net_power <= r.gross_power);
    CHECK(r.band_occupancy == 1.0);
}

TEST_CASE("delta_p arithmetic") {
    CHECK(delta_p(100.0, 75.0) == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(delta_p(42.0, 42.0) == 0.0);
    CHECK(delta_p(100.0, 120.0) == doctest::Approx(-20.0).epsilon(1e-12));
    CHECK_THROWS_AS(delta_p(0.0, 1.0), RejectedInput);

    // antisymmetry under role swap: (a-b)/a = -((b-a)/b) * b/a
    const double a = 13.0, b = 7.5;
    CHECK(delta_p(a, b) == doctest::Approx(-delta_p(b, a) * b / a).epsilon(1e-12));
}

TEST_CASE("analytical proxy branches") {
    const Vec4 r = {0.1, 0.1, 0.1, 0.1};
    CHECK(analytical_proxy_reward({1, 0, 0, 0}, {2, 0, 0, 0}, r) ==
          doctest::Approx(-2.1).epsilon(1e-15));
    CHECK(analytical_proxy_reward({1, 0, 0, 0}, {-2, 0, 0, 0}, r) == 0.0);
    CHECK(analytical_proxy_reward({0, 0, 0, 0}, {0, 0, 0, 0}, r) == 0.0);
}

TEST_CASE("proxy correlation endpoints") {
    CHECK(proxy_correlation({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(proxy_correlation({1, 2, 3}, {6, 4, 2}) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK_THROWS_AS(proxy_correlation({1, 2}, {1, 2}), RejectedInput);
    CHECK_THROWS_AS(proxy_correlation({1, 1, 1}, {1, 2, 3}), RejectedInput);
}

TEST_CASE("head_to_head protocol") {
    const RealParams real = make_real_params(EnvParams{});
    // steady-state force ~3.9 N tracks v=0.8 under the perturbed dynamics
    const PolicyCheckpoint a = constant_action_policy({0.09, 0.08, 0.085, 0.083}, "a");

    SUBCASE("self-evaluation lands within the noise floor") {
        auto [ra, rb] = head_to_head(real, a, a, 0.8, 10.0, 40.0, 3);
        CHECK(std::abs(delta_p(rb.gross_power, ra.gross_power)) < 2.0);
    }
    SUBCASE("block accounting and order robustness") {
        const PolicyCheckpoint b = constant_action_policy({0.05, 0.06, 0.12, 0.0875}, "b");
        auto [ra, rb] = head_to_head(real, a, b, 0.8, 10.0, 40.0, 3);
        // each policy owns total/block/2 = 2 blocks of 10 s = 20 segments max
        CHECK(ra.segments.size() <= 20);
        CHECK(rb.segments.size() <= 20);
        auto [rb2, ra2] = head_to_head(real, b, a, 0.8, 10.0, 40.0, 3);
        CHECK(std::abs(delta_p(ra.gross_power, ra2.gross_power)) < 3.0);
        CHECK(std::abs(delta_p(rb.gross_power, rb2.gross_power)) < 3.0);
    }
}

TEST_CASE("normalized power distribution") {
    const double dt = 0.02;
    std::vector<double> c_fine(100, 1.0), c_pre(100, 2.0), vel(100, 0.8);
    const PowerReport fine = make_power_report(c_fine, vel, 0.8, dt, 0.25, 24.0);
    const PowerReport pre = make_power_report(c_pre, vel, 0.8, dt, 0.25, 24.0);
    const auto half = normalized_power_distribution(fine, {pre}, 0.25, 24.0, dt);
    REQUIRE_FALSE(half.empty());
    for (double x : half) CHECK(x == doctest::Approx(3.0 / 7.0).epsilon(1e-9));
    const auto unity = normalized_power_distribution(pre, {pre}, 0.25, 24.0, dt);
    for (double x : unity) CHECK(x == doctest::Approx(1.0).epsilon(1e-9));

    // uniform halving of net power -> all values 0.5
    std::vector<double> c_half(100, 1.125);  // net 21 W vs pre net 42 W
    const PowerReport halfp = make_power_report(c_half, vel, 0.8, dt, 0.25, 24.0);
    for (double x : normalized_power_distribution(halfp, {pre}, 0.25, 24.0, dt))
        CHECK(x == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("mean_proxy_power of a coasting policy is zero") {
    const EnvParams env;
    const PolicyCheckpoint zero = constant_action_policy({0, 0, 0, 0}, "zero");
    CHECK(mean_proxy_power(env, zero.policy, nominal_r_over_k2(), 0.8, 1) == 0.0);
}
