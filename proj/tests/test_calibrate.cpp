#include <doctest.h>

#include <cmath>
#include <cstring>

#include "helpers.hpp"
#include "odflow/calibrate.hpp"
#include "odflow/errors.hpp"
#include "odflow/synth.hpp"

using namespace odflow;
using namespace odflow::testhelp;

namespace {

FlowPrediction prediction(std::vector<double> values, int year = 2019) {
    FlowPrediction p;
    p.year = year;
    p.values = std::move(values);
    return p;
}

// Test-only model: every destination's flow equals the single parameter.
class MeanModel final : public FlowModel {
  public:
    explicit MeanModel(std::size_t n) : n_(n) {}
    std::size_t param_count() const override { return 1; }
    std::vector<std::string> param_names() const override { return {"mu"}; }
    FlowPrediction predict(const std::vector<double>& theta) const override {
        FlowPrediction p;
        p.values.assign(n_, theta[0]);
        return p;
    }
    Mat jacobian(const std::vector<double>&) const override {
        Mat j(n_, 1);
        for (std::size_t i = 0; i < n_; ++i) j(i, 0) = 1.0;
        return j;
    }

  private:
    std::size_t n_;
};

} // namespace

TEST_CASE("gaussian loss hand values") {
    CHECK(gaussian_loss(prediction({30.0, 70.0}), make_flows(2019, {30.0, 70.0}), {}, 0.0)
              .total() == 0.0);
    const LossValue half =
        gaussian_loss(prediction({1.0, 1.0}), make_flows(2019, {0.0, 0.0}), {}, 0.0);
    CHECK(half.data_term == doctest::Approx(0.5).epsilon(1e-15));
    const LossValue penalized =
        gaussian_loss(prediction({1.0, 1.0}), make_flows(2019, {0.0, 0.0}), {2.0}, 1.0);
    CHECK(penalized.total() == doctest::Approx(4.5).epsilon(1e-15));
    CHECK(penalized.penalty == doctest::Approx(4.0));
    CHECK(penalized.total() == penalized.data_term + penalized.penalty);
}

TEST_CASE("poisson loss hand values and guards") {
    const LossValue one =
        poisson_loss(prediction({1.0, 1.0}), make_flows(2019, {0.0, 0.0}), {}, 0.0);
    CHECK(one.data_term == doctest::Approx(1.0).epsilon(1e-15));
    const LossValue at_three = poisson_loss(prediction({3.0}), make_flows(2019, {3.0}), {}, 0.0);
    CHECK(at_three.data_term == doctest::Approx(3.0 - 3.0 * std::log(3.0)).epsilon(1e-12));

    CHECK_THROWS_AS(
        poisson_loss(prediction({0.0}), make_flows(2019, {2.0}), {}, 0.0),
        NonPositivePrediction);
    // zero data with an underflowed flow contributes only the floor
    const LossValue floored =
        poisson_loss(prediction({0.0}), make_flows(2019, {0.0}), {}, 0.0);
    CHECK(floored.data_term == doctest::Approx(1e-12));
}

TEST_CASE("poisson data-term gradient vanishes at a perfect fit") {
    const auto g = poisson_loss_grad_wrt_prediction(prediction({3.0, 7.0}),
                                                    make_flows(2019, {3.0, 7.0}));
    for (double v : g) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("poisson loss is invariant under a common permutation") {
    const LossValue a =
        poisson_loss(prediction({2.0, 5.0, 9.0}), make_flows(2019, {1.0, 4.0, 8.0}), {0.5}, 1.0);
    const LossValue b =
        poisson_loss(prediction({9.0, 2.0, 5.0}), make_flows(2019, {8.0, 1.0, 4.0}), {0.5}, 1.0);
    CHECK(a.total() == doctest::Approx(b.total()).epsilon(1e-15));
}

TEST_CASE("log likelihood hand values") {
    CHECK(log_likelihood(prediction({1.0}), make_flows(2019, {0.0}), LossKind::Poisson) ==
          doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(log_likelihood(prediction({1.0}), make_flows(2019, {1.0}), LossKind::Poisson) ==
          doctest::Approx(-1.0).epsilon(1e-15));
    CHECK_THROWS_AS(
        log_likelihood(prediction({3.0, 4.0}), make_flows(2019, {3.0, 4.0}), LossKind::Mse),
        DegenerateVariance);
}

TEST_CASE("analytic loss gradients match central finite differences") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        SynthConfig config;
        config.seed = seed;
        config.territory_count = 5 + static_cast<std::size_t>(seed % 5);
        const auto system = generate_system(config);
        Rng rng(seed * 7919);
        const double total = rng.uniform(50.0, 400.0);

        ModelSpec spec;
        std::vector<double> theta;
        switch (seed % 3) {
        case 0:
            spec = ModelSpec{1, ModelFamily::Gravity, LossKind::Mse, {}};
            theta = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
            break;
        case 1:
            spec = ModelSpec{4, ModelFamily::Radiation, LossKind::Poisson, {}};
            theta = {rng.uniform(0.2, 4.0), rng.uniform(0.3, 2.5)};
            break;
        default:
            spec = ModelSpec{36, ModelFamily::Retail, LossKind::Poisson,
                             {true, true, true, true, true}};
            theta = {rng.uniform(-0.03, 0.03)};
            for (int k = 0; k < 5; ++k) theta.push_back(rng.uniform(-0.8, 0.8));
            break;
        }

        FlowObservation obs = generate_flows(spec, theta, system, 2019, total,
                                             NoiseKind::Poisson, seed * 13);
        auto model = make_flow_model(spec, system, 2019, total);

        for (LossKind loss : {LossKind::Mse, LossKind::Poisson}) {
            for (double lambda : {0.0, 1.0}) {
                const auto grad = loss_gradient(*model, loss, obs, theta, lambda);
                for (std::size_t k = 0; k < theta.size(); ++k) {
                    const double h = 1e-6 * std::max(1.0, std::abs(theta[k]));
                    auto tp = theta, tm = theta;
                    tp[k] += h;
                    tm[k] -= h;
                    auto eval = [&](const std::vector<double>& t) {
                        const auto pred = model->predict(t);
                        return loss == LossKind::Poisson
                                   ? poisson_loss(pred, obs, t, lambda).total()
                                   : gaussian_loss(pred, obs, t, lambda).total();
                    };
                    const double fd = (eval(tp) - eval(tm)) / (2.0 * h);
                    CHECK(std::abs(grad[k] - fd) <=
                          1e-5 * std::max({1.0, std::abs(fd), std::abs(grad[k])}));
                }
            }
        }
    }
}

TEST_CASE("noiseless retail data is recovered with lambda=0") {
    SynthConfig config;
    config.seed = 4242;
    config.territory_count = 20;
    const auto system = generate_system(config);

    ModelSpec spec{9, ModelFamily::Retail, LossKind::Poisson,
                   {false, false, false, true, false}};
    const std::vector<double> truth = {0.014, -0.013};
    const FlowObservation obs =
        generate_flows(spec, truth, system, 2019, 2000.0, NoiseKind::None, 0);

    MinimizeOptions options;
    options.lambda = 0.0;
    const CalibrationResult result = minimize(spec, system, obs, options);
    CHECK(result.converged);
    CHECK(std::abs(result.params[0] - truth[0]) < 1e-3);
    CHECK(std::abs(result.params[1] - truth[1]) < 1e-3);
}

TEST_CASE("generating parameters are a stationary point at lambda=0") {
    SynthConfig config;
    config.seed = 31;
    config.territory_count = 12;
    const auto system = generate_system(config);

    ModelSpec gravity{2, ModelFamily::Gravity, LossKind::Poisson, {}};
    const std::vector<double> truth = {0.697, 0.368};
    auto model = make_flow_model(gravity, system, 2019, 1500.0);
    // exact self-generated data: observation equals the model prediction
    const FlowObservation obs = make_flows(2019, model->predict(truth).values);
    for (LossKind loss : {LossKind::Mse, LossKind::Poisson}) {
        const auto grad = loss_gradient(*model, loss, obs, truth, 0.0);
        CHECK(inf_norm(grad) < 1e-6);
    }
}

TEST_CASE("flat objective is detected and flagged") {
    // All destinations identical: any (b, c) yields the same split.
    const auto system = make_system(
        {1000.0, 500.0, 500.0},
        {{0.0, 10.0, 10.0}, {10.0, 0.0, 16.0}, {10.0, 16.0, 0.0}});
    ModelSpec spec{1, ModelFamily::Gravity, LossKind::Mse, {}};
    const FlowObservation obs = make_flows(2019, {20.0, 22.0});
    MinimizeOptions options;
    options.lambda = 0.0;
    const CalibrationResult result = minimize(spec, system, obs, options);
    CHECK(result.converged);
    bool flagged = false;
    for (const auto& w : result.warnings) flagged |= (w == "FlatObjective");
    CHECK(flagged);
}

TEST_CASE("minimize is bit-deterministic") {
    SynthConfig config;
    config.seed = 55;
    config.territory_count = 9;
    const auto system = generate_system(config);
    ModelSpec spec{4, ModelFamily::Radiation, LossKind::Poisson, {}};
    const FlowObservation obs =
        generate_flows(spec, {2.085, 1.038}, system, 2019, 900.0, NoiseKind::Poisson, 8);

    MinimizeOptions options;
    const CalibrationResult a = minimize(spec, system, obs, options);
    const CalibrationResult b = minimize(spec, system, obs, options);
    REQUIRE(a.params.size() == b.params.size());
    CHECK(std::memcmp(a.params.data(), b.params.data(), a.params.size() * sizeof(double)) == 0);
    CHECK(a.final_loss == b.final_loss);
    CHECK(a.iterations == b.iterations);
}

TEST_CASE("minimize throws only when every start point is unusable") {
    SynthConfig config;
    config.seed = 18;
    config.territory_count = 6;
    const auto system = generate_system(config);
    ModelSpec spec{4, ModelFamily::Radiation, LossKind::Poisson, {}};
    const FlowObservation obs =
        generate_flows(spec, {1.0, 1.0}, system, 2019, 400.0, NoiseKind::Poisson, 5);

    MinimizeOptions options;
    options.starts = {{1.0, 0.0}}; // r = 0: every absorption probability is zero
    CHECK_THROWS_AS(minimize(spec, system, obs, options), NonFiniteLoss);

    options.starts = {{1.0, 0.0}, {1.0, 1.0}}; // one bad start is just skipped
    const CalibrationResult result = minimize(spec, system, obs, options);
    CHECK(result.converged);
}

TEST_CASE("radiation parameters stay positive under the reparameterization") {
    SynthConfig config;
    config.seed = 18;
    config.territory_count = 8;
    const auto system = generate_system(config);
    ModelSpec spec{4, ModelFamily::Radiation, LossKind::Poisson, {}};
    const FlowObservation obs =
        generate_flows(spec, {0.4, 0.6}, system, 2019, 700.0, NoiseKind::Poisson, 3);
    const CalibrationResult result = minimize(spec, system, obs, MinimizeOptions{});
    CHECK(result.params[0] > 0.0);
    CHECK(result.params[1] > 0.0);
}

TEST_CASE("standard errors match the analytic Fisher value for a Poisson mean") {
    const std::vector<double> data = {2.0, 3.0, 4.0, 5.0, 6.0};
    MeanModel model(data.size());
    FlowObservation obs = make_flows(2019, data);

    MinimizeOptions options;
    options.lambda = 0.0;
    options.starts = {{1.0}, {10.0}};
    ModelSpec spec; // family irrelevant for the injected model
    const CalibrationResult fit = minimize(model, LossKind::Poisson, obs, spec, options);
    const double mu_hat = 4.0; // mean of the data
    CHECK(std::abs(fit.params[0] - mu_hat) < 1e-6);

    const auto sigma = standard_errors(model, LossKind::Poisson, obs, fit.params);
    const double expected = std::sqrt(mu_hat / static_cast<double>(data.size()));
    CHECK(std::abs(sigma[0] - expected) / expected < 1e-4);

    SUBCASE("four replicates halve the standard error") {
        std::vector<double> rep;
        for (int k = 0; k < 4; ++k) rep.insert(rep.end(), data.begin(), data.end());
        MeanModel big(rep.size());
        const auto sigma4 =
            standard_errors(big, LossKind::Poisson, make_flows(2019, rep), {mu_hat});
        CHECK(std::abs(sigma4[0] - 0.5 * sigma[0]) / sigma[0] < 1e-4);
    }
}

TEST_CASE("duplicated covariates give a singular information matrix") {
    auto system = make_system({1000.0, 300.0, 800.0, 150.0},
                              planar_distances({{0, 0}, {4, 1}, {9, 2}, {2, 8}}));
    // poisoning column duplicates the misuse column exactly
    for (auto& cov : system.covariates) cov.values[1] = cov.values[0];

    ModelSpec spec{11, ModelFamily::Retail, LossKind::Poisson,
                   {true, true, false, false, false}};
    const FlowObservation obs = make_flows(2019, {40.0, 35.0, 25.0});
    auto model = make_flow_model(spec, system, 2019, obs.total_outflow());
    CHECK_THROWS_AS(standard_errors(*model, LossKind::Poisson, obs, {0.01, 0.1, 0.1}),
                    SingularInformation);
}

TEST_CASE("standard_errors requires convergence at the spec level") {
    CalibrationResult unconverged;
    unconverged.converged = false;
    const auto system = tiny_system();
    CHECK_THROWS_AS(standard_errors(unconverged, system, make_flows(2019, {30.0, 70.0})),
                    Error);
}
