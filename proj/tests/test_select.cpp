#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "odflow/errors.hpp"
#include "odflow/select.hpp"
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

} // namespace

TEST_CASE("sorensen-dice hand values") {
    CHECK(sorensen_dice(make_flows(2019, {4.0, 6.0}), prediction({4.0, 6.0})) == 1.0);
    CHECK(sorensen_dice(make_flows(2019, {4.0, 6.0}), prediction({0.0, 0.0})) == 0.0);
    CHECK(sorensen_dice(make_flows(2019, {2.0, 3.0}), prediction({1.0, 5.0})) ==
          doctest::Approx(8.0 / 11.0).epsilon(1e-15));
    CHECK_THROWS_AS(sorensen_dice(make_flows(2019, {0.0}), prediction({0.0})), BothEmpty);
}

TEST_CASE("sorensen-dice symmetry and permutation invariance") {
    Rng rng(5150);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng.next_u64() % 8);
        std::vector<double> a(n), b(n);
        for (std::size_t j = 0; j < n; ++j) {
            a[j] = std::floor(rng.uniform(0.0, 20.0));
            b[j] = rng.uniform(0.0, 20.0);
        }
        a[0] += 1.0; // keep at least one total positive
        const double s = sorensen_dice(make_flows(1, a), prediction(b));
        // symmetric in its two arguments
        CHECK(sorensen_dice(make_flows(1, b), prediction(a)) == doctest::Approx(s).epsilon(1e-15));
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
        // common rotation of both vectors
        std::vector<double> ar(a.begin() + 1, a.end()), br(b.begin() + 1, b.end());
        ar.push_back(a[0]);
        br.push_back(b[0]);
        CHECK(sorensen_dice(make_flows(1, ar), prediction(br)) ==
              doctest::Approx(s).epsilon(1e-15));
    }
}

TEST_CASE("equal-total vectors reach S=1 only when equal") {
    CHECK(sorensen_dice(make_flows(1, {3.0, 7.0}), prediction({7.0, 3.0})) < 1.0);
    CHECK(sorensen_dice(make_flows(1, {3.0, 7.0}), prediction({3.0, 7.0})) == 1.0);
}

TEST_CASE("bic is the table form 2 log M - 2 log L") {
    CHECK(bic(1, 0.0) == 0.0);
    CHECK(bic(37, -100.0) == doctest::Approx(2.0 * std::log(37.0) + 200.0).epsilon(1e-12));
    CHECK(bic(37, -99.0) < bic(37, -100.0));
    CHECK(bic_textbook(37, 3, -100.0) ==
          doctest::Approx(3.0 * std::log(37.0) + 200.0).epsilon(1e-12));
}

TEST_CASE("log mse hand values and zero exclusion") {
    const LogMse zero = log_mse(make_flows(1, {4.0, 6.0}), prediction({4.0, 6.0}));
    CHECK(zero.mse == 0.0);
    CHECK(zero.included == 2);

    const double e = std::exp(1.0);
    const LogMse hand = log_mse(make_flows(1, {e, e * e}), prediction({1.0, 1.0}));
    CHECK(hand.mse == doctest::Approx(2.5).epsilon(1e-12));

    const LogMse excl = log_mse(make_flows(1, {0.0, e}), prediction({5.0, e}));
    CHECK(excl.mse == doctest::Approx(0.0));
    CHECK(excl.excluded == 1);
    CHECK(excl.included == 1);

    CHECK_THROWS_AS(log_mse(make_flows(1, {2.0}), prediction({0.0})), NonPositivePrediction);
}

TEST_CASE("enumerate_models matches the trained-model table") {
    const auto specs = enumerate_models();
    REQUIRE(specs.size() == 68);

    std::size_t retail_poisson = 0, retail_mse = 0;
    std::set<std::string> triples;
    for (const auto& s : specs) {
        if (s.family == ModelFamily::Retail && s.loss == LossKind::Poisson) ++retail_poisson;
        if (s.family == ModelFamily::Retail && s.loss == LossKind::Mse) ++retail_mse;
        std::string key = std::string(family_name(s.family)) + "|" + loss_name(s.loss) + "|";
        for (bool b : s.covariate_mask) key += b ? '1' : '0';
        CHECK(triples.insert(key).second); // no duplicate (family, loss, mask)
    }
    CHECK(retail_poisson == 32);
    CHECK(retail_mse == 32);

    CHECK(specs[0].family == ModelFamily::Gravity);
    CHECK(specs[0].loss == LossKind::Mse);
    CHECK(specs[1].loss == LossKind::Poisson);
    CHECK(specs[2].family == ModelFamily::Radiation);
    CHECK(specs[3].family == ModelFamily::Radiation);

    // ids are 1-based positions
    for (std::size_t i = 0; i < specs.size(); ++i)
        CHECK(specs[i].spec_id == static_cast<int>(i) + 1);

    // spec 9: retail, poisson, knife crime only
    const ModelSpec nine = spec_by_id(9);
    CHECK(nine.family == ModelFamily::Retail);
    CHECK(nine.loss == LossKind::Poisson);
    CHECK(nine.covariate_mask ==
          std::array<bool, 5>{false, false, false, true, false});

    // gravity and radiation carry all-false masks
    for (int id : {1, 2, 3, 4})
        for (bool b : spec_by_id(id).covariate_mask) CHECK_FALSE(b);

    // the two retail blocks share the same subset ordering
    for (int offset = 0; offset < 32; ++offset)
        CHECK(spec_by_id(5 + offset).covariate_mask == spec_by_id(37 + offset).covariate_mask);

    CHECK_THROWS_AS(spec_by_id(0), UnknownSpec);
    CHECK_THROWS_AS(spec_by_id(69), UnknownSpec);
}

TEST_CASE("enumerate_models is deterministic") {
    const auto a = enumerate_models();
    const auto b = enumerate_models();
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].family == b[i].family);
        CHECK(a[i].loss == b[i].loss);
        CHECK(a[i].covariate_mask == b[i].covariate_mask);
    }
}

TEST_CASE("cv mechanics: a perfect predictor scores 1 on both folds") {
    const auto obs_a = make_flows(2019, {10.0, 20.0, 5.0});
    const auto obs_b = make_flows(2020, {12.0, 18.0, 9.0});
    const auto [s_a, s_b] = detail::cv_scores(
        [](const FlowObservation&, const FlowObservation& heldout) { return heldout.counts; },
        obs_a, obs_b);
    CHECK(s_a == 1.0);
    CHECK(s_b == 1.0);
}

TEST_CASE("cross_validate: identical years give identical fold scores") {
    SynthConfig config;
    config.seed = 777;
    config.territory_count = 8;
    const auto system = generate_system(config);
    ModelSpec spec{9, ModelFamily::Retail, LossKind::Poisson,
                   {false, false, false, true, false}};
    const FlowObservation flows2019 =
        generate_flows(spec, {0.014, -0.013}, system, 2019, 600.0, NoiseKind::Poisson, 42);
    FlowObservation flows2020 = flows2019;
    flows2020.year = 2020;

    CrossValidateOptions options;
    const EvaluationReport report = cross_validate(spec, system, flows2019, flows2020, options);
    CHECK(report.s_year_a == doctest::Approx(report.s_year_b).epsilon(1e-12));
    CHECK(report.s_mean == doctest::Approx(0.5 * (report.s_year_a + report.s_year_b)));
    CHECK(report.train_year == 2019);
    CHECK(report.fit_a.training_year == 2019);
    CHECK(report.fit_b.training_year == 2020);
}

TEST_CASE("concentration share") {
    const auto system = make_system({1000.0, 10.0, 30.0, 60.0},
                                    planar_distances({{0, 0}, {1, 0}, {0, 1}, {1, 1}}));
    const auto obs = make_flows(2019, {10.0, 30.0, 60.0});
    CHECK(concentration_share(obs, system, {"T02", "T03", "T04"}) == 1.0);
    CHECK(concentration_share(obs, system, {}) == 0.0);
    CHECK(concentration_share(obs, system, {"T03", "T04"}) ==
          doctest::Approx(0.9).epsilon(1e-15));
    CHECK_THROWS_AS(concentration_share(obs, system, {"T99"}), UnknownCode);
    CHECK_THROWS_AS(concentration_share(obs, system, {"T01"}), UnknownCode); // origin
    CHECK_THROWS_AS(concentration_share(make_flows(2019, {0.0, 0.0, 0.0}), system, {"T02"}),
                    EmptyObservation);
}

TEST_CASE("rank_models ordering and tie-breaks") {
    auto make_report = [](int id, std::size_t params, double bic_value) {
        EvaluationReport r;
        r.spec.spec_id = id;
        r.spec.family = ModelFamily::Retail;
        r.spec.loss = LossKind::Poisson;
        for (std::size_t i = 0; i + 1 < params && i < kCovariateCount; ++i)
            r.spec.covariate_mask[i] = true;
        r.bic = bic_value;
        r.s_mean = 0.5;
        r.log_mse = 1.0;
        return r;
    };

    SUBCASE("single report ranks first") {
        const auto table = rank_models({make_report(7, 1, 100.0)}, RankKey::Bic);
        CHECK(table.reports[0].rank == 1);
    }
    SUBCASE("equal keys break by parameter count") {
        const auto table =
            rank_models({make_report(5, 3, 100.0), make_report(6, 1, 100.0)}, RankKey::Bic);
        CHECK(table.reports[0].spec.spec_id == 6);
        CHECK(table.reports[1].spec.spec_id == 5);
    }
    SUBCASE("distinct keys sort ascending for bic") {
        const auto table = rank_models(
            {make_report(1, 1, 300.0), make_report(2, 1, 100.0), make_report(3, 1, 200.0)},
            RankKey::Bic);
        CHECK(table.reports[0].spec.spec_id == 2);
        CHECK(table.reports[1].spec.spec_id == 3);
        CHECK(table.reports[2].spec.spec_id == 1);
    }
    SUBCASE("s_mean sorts descending and NaN keys go last") {
        auto good = make_report(1, 1, 100.0);
        good.s_mean = 0.9;
        auto bad = make_report(2, 1, 100.0);
        bad.s_mean = std::numeric_limits<double>::quiet_NaN();
        auto mid = make_report(3, 1, 100.0);
        mid.s_mean = 0.4;
        const auto table = rank_models({bad, mid, good}, RankKey::SMean);
        CHECK(table.reports[0].spec.spec_id == 1);
        CHECK(table.reports[1].spec.spec_id == 3);
        CHECK(table.reports[2].spec.spec_id == 2);
        CHECK(table.reports[2].rank == 3);
    }
}
