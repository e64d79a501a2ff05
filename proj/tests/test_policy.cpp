#include <doctest.h>

#include <cmath>
#include <numeric>

#include "powertune/gaussian_policy.hpp"

using namespace powertune;

namespace {

// Linear (no hidden layer) policy with a hand-set mean and log-std.
GaussianPolicy constant_policy(const std::vector<double>& mean,
                               const std::vector<double>& log_std) {
    const MlpSpec spec{2, {}, int(mean.size())};
    GaussianPolicy p = make_policy(spec, 0);
    for (auto& v : p.params.values) v = 0.0;
    double* b = p.params.slice("l0.b");
    for (std::size_t i = 0; i < mean.size(); ++i) b[i] = mean[i];
    double* ls = p.params.slice("log_std");
    for (std::size_t i = 0; i < log_std.size(); ++i) ls[i] = log_std[i];
    return p;
}

}  // namespace

TEST_CASE("log prob of the mean action is the Gaussian closed form") {
    const MlpSpec spec{11, {16}, 4};
    const GaussianPolicy p = make_policy(spec, 3);
    const std::vector<double> obs(11, 0.2);
    const auto mean = policy_mean(p, obs);
    const auto sigma = policy_sigma(p);
    double want = 0.0;
    for (double s : sigma) want -= std::log(s);
    want -= 0.5 * 4.0 * std::log(2.0 * M_PI);
    CHECK(log_prob(p, obs, mean) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("act/log_prob consistency and determinism") {
    const MlpSpec spec{11, {16}, 4};
    const GaussianPolicy p = make_policy(spec, 4);
    const std::vector<double> obs(11, -0.3);
    Rng rng(9);
    const ActionSample s = act(p, obs, rng);
    CHECK(log_prob(p, obs, s.action) == doctest::Approx(s.log_prob).epsilon(1e-12));

    Rng r1(17), r2(17);
    CHECK(act(p, obs, r1).action == act(p, obs, r2).action);
}

TEST_CASE("tight log_std keeps samples near the mean") {
    const GaussianPolicy p = constant_policy({0.1, -0.2, 0.3, 0.0}, {-5, -5, -5, -5});
    const std::vector<double> obs = {0.0, 0.0};
    const auto mean = policy_mean(p, obs);
    const double sigma = std::exp(-5.0);
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const ActionSample s = act(p, obs, rng);
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(std::abs(s.action[i] - mean[i]) < 5.0 * sigma);
    }
}

TEST_CASE("Gaussian symmetry and monotonic falloff") {
    const MlpSpec spec{11, {16}, 4};
    const GaussianPolicy p = make_policy(spec, 6);
    const std::vector<double> obs(11, 0.4);
    const auto mean = policy_mean(p, obs);
    std::vector<double> a = mean, b = mean;
    for (std::size_t i = 0; i < 4; ++i) {
        a[i] += 0.1 * double(i + 1);
        b[i] -= 0.1 * double(i + 1);
    }
    CHECK(log_prob(p, obs, a) == doctest::Approx(log_prob(p, obs, b)).epsilon(1e-12));

    double prev = log_prob(p, obs, mean);
    for (double d = 0.1; d < 1.0; d += 0.1) {
        std::vector<double> far = mean;
        far[0] += d;
        const double lp = log_prob(p, obs, far);
        CHECK(lp < prev);
        prev = lp;
    }
}

TEST_CASE("log_prob gradient passes finite differences") {
    const MlpSpec spec{5, {8}, 3};
    const GaussianPolicy p = make_policy(spec, 7);
    const std::vector<double> obs = {0.1, -0.2, 0.3, 0.4, -0.5};
    const std::vector<double> action = {0.2, 0.0, -0.1};
    const auto loss = [&](ad::Tape& t) { return log_prob(p, t, obs, action); };
    CHECK(ad::finite_diff_check(loss, p.params, 1e-4, 32, 8).pass);
}

TEST_CASE("kl_mean closed-form cases") {
    const GaussianPolicy p = constant_policy({1.0, 0.0}, {0, 0});
    const GaussianPolicy q = constant_policy({0.0, 0.0}, {0, 0});
    const std::vector<std::vector<double>> obs = {{0.3, -0.3}, {1.0, 2.0}};
    CHECK(kl_mean(p, p, obs) == 0.0);
    CHECK(kl_mean(p, q, obs) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(kl_mean(q, p, obs) >= 0.0);
}

TEST_CASE("kl_mean matches a Monte-Carlo estimate") {
    const MlpSpec spec{3, {8}, 2};
    const GaussianPolicy p = make_policy(spec, 31, -0.5);
    const GaussianPolicy q = make_policy(spec, 32, -0.2);
    const std::vector<std::vector<double>> obs = {{0.2, -0.1, 0.5}};
    const double closed = kl_mean(p, q, obs);

    Rng rng(33);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const ActionSample s = act(p, obs[0], rng);
        const double d = s.log_prob - log_prob(q, obs[0], s.action);
        sum += d;
        sumsq += d * d;
    }
    const double mc = sum / n;
    const double se = std::sqrt((sumsq / n - mc * mc) / n);
    CHECK(std::abs(closed - mc) < 3.0 * se + 1e-9);
}

TEST_CASE("kl_mean tape gradient passes finite differences") {
    const MlpSpec spec{3, {6}, 2};
    const GaussianPolicy p = make_policy(spec, 41, -0.5);
    const GaussianPolicy q = make_policy(spec, 42, -0.3);
    const std::vector<std::vector<double>> obs = {{0.1, 0.2, -0.4}, {-0.6, 0.0, 0.3}};
    const auto loss = [&](ad::Tape& t) {
        GaussianPolicy pt = p;  // tape reads the bound params
        return kl_mean(pt, q, t, obs);
    };
    CHECK(ad::finite_diff_check(loss, p.params, 1e-4, 32, 43).pass);
}

TEST_CASE("lineage string round trip") {
    for (Lineage l : {Lineage::PreTrained, Lineage::Anchor, Lineage::Candidate,
                      Lineage::Elite, Lineage::Best})
        CHECK(lineage_from_string(to_string(l)) == l);
    CHECK_THROWS_AS(lineage_from_string("nonsense"), RejectedInput);
}
