#include "odflow/select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "odflow/errors.hpp"
#include "odflow/util.hpp"

namespace odflow {

double sorensen_dice(const FlowObservation& observation, const FlowPrediction& prediction) {
    if (observation.counts.size() != prediction.values.size())
        throw Error("Sorensen-Dice over misaligned destination sets");
    double overlap = 0.0, sum_data = 0.0, sum_model = 0.0;
    for (std::size_t j = 0; j < observation.counts.size(); ++j) {
        overlap += std::min(observation.counts[j], prediction.values[j]);
        sum_data += observation.counts[j];
        sum_model += prediction.values[j];
    }
    if (sum_data == 0.0 && sum_model == 0.0)
        throw BothEmpty("Sorensen-Dice undefined: both vectors sum to zero");
    return 2.0 * overlap / (sum_data + sum_model);
}

double bic(std::size_t sample_size, double log_likelihood) {
    return 2.0 * std::log(static_cast<double>(sample_size)) - 2.0 * log_likelihood;
}

double bic_textbook(std::size_t sample_size, std::size_t param_count, double log_likelihood) {
    return static_cast<double>(param_count) * std::log(static_cast<double>(sample_size)) -
           2.0 * log_likelihood;
}

LogMse log_mse(const FlowObservation& observation, const FlowPrediction& prediction) {
    if (observation.counts.size() != prediction.values.size())
        throw Error("log-MSE over misaligned destination sets");
    LogMse out;
    for (std::size_t j = 0; j < observation.counts.size(); ++j) {
        const double d = observation.counts[j];
        if (d <= 0.0) {
            ++out.excluded;
            continue;
        }
        const double m = prediction.values[j];
        if (!(m > 0.0))
            throw NonPositivePrediction("log-MSE needs a positive model flow, got " +
                                        fmt_double(m) + " at destination index " +
                                        std::to_string(j));
        const double r = std::log(d) - std::log(m);
        out.sum_sq += r * r;
        ++out.included;
    }
    out.mse = out.included > 0 ? out.sum_sq / static_cast<double>(out.included) : 0.0;
    return out;
}

namespace {

// The 32 covariate subsets in trained-model-table order (covariate indices
// 0..4 = misuse, poisoning, police, knife, gdhi). The triple block is not
// lexicographic; it matches the published table row for row.
const std::vector<std::vector<int>>& mask_table() {
    static const std::vector<std::vector<int>> table = {
        {},
        {0}, {1}, {2}, {3}, {4},
        {0, 1}, {0, 2}, {0, 3}, {0, 4}, {1, 2}, {1, 3}, {1, 4}, {2, 3}, {2, 4}, {3, 4},
        {0, 1, 2}, {0, 1, 3}, {0, 1, 4}, {0, 2, 3}, {0, 2, 4},
        {1, 2, 3}, {1, 2, 4}, {2, 3, 4}, {1, 3, 4}, {0, 3, 4},
        {0, 1, 2, 3}, {0, 1, 2, 4}, {0, 1, 3, 4}, {0, 2, 3, 4}, {1, 2, 3, 4},
        {0, 1, 2, 3, 4},
    };
    return table;
}

std::array<bool, kCovariateCount> mask_from_indices(const std::vector<int>& idx) {
    std::array<bool, kCovariateCount> m{};
    for (int i : idx) m[static_cast<std::size_t>(i)] = true;
    return m;
}

} // namespace

std::vector<ModelSpec> enumerate_models() {
    std::vector<ModelSpec> specs;
    specs.reserve(68);
    int id = 1;
    specs.push_back({id++, ModelFamily::Gravity, LossKind::Mse, {}});
    specs.push_back({id++, ModelFamily::Gravity, LossKind::Poisson, {}});
    specs.push_back({id++, ModelFamily::Radiation, LossKind::Mse, {}});
    specs.push_back({id++, ModelFamily::Radiation, LossKind::Poisson, {}});
    for (const auto& subset : mask_table())
        specs.push_back({id++, ModelFamily::Retail, LossKind::Poisson, mask_from_indices(subset)});
    for (const auto& subset : mask_table())
        specs.push_back({id++, ModelFamily::Retail, LossKind::Mse, mask_from_indices(subset)});
    return specs;
}

ModelSpec spec_by_id(int spec_id) {
    static const std::vector<ModelSpec> all = enumerate_models();
    if (spec_id < 1 || spec_id > static_cast<int>(all.size()))
        throw UnknownSpec("spec id " + std::to_string(spec_id) + " outside 1.." +
                          std::to_string(all.size()));
    return all[static_cast<std::size_t>(spec_id - 1)];
}

namespace detail {

std::pair<double, double> cv_scores(const FitPredictFn& fit_predict, const FlowObservation& obs_a,
                                    const FlowObservation& obs_b) {
    FlowPrediction pred_b;
    pred_b.year = obs_b.year;
    pred_b.values = fit_predict(obs_a, obs_b);
    const double s_b = sorensen_dice(obs_b, pred_b);

    FlowPrediction pred_a;
    pred_a.year = obs_a.year;
    pred_a.values = fit_predict(obs_b, obs_a);
    const double s_a = sorensen_dice(obs_a, pred_a);
    return {s_a, s_b};
}

} // namespace detail

namespace {

FlowPrediction predict_spec(const ModelSpec& spec, const std::vector<double>& params,
                            const TerritorySystem& system, int year, double total) {
    auto model = make_flow_model(spec, system, year, total);
    FlowPrediction p = model->predict(params);
    p.year = year;
    return p;
}

} // namespace

EvaluationReport cross_validate(const ModelSpec& spec, const TerritorySystem& system,
                                const FlowObservation& obs_a_in, const FlowObservation& obs_b_in,
                                const CrossValidateOptions& options) {
    const FlowObservation& obs_a = obs_a_in.year <= obs_b_in.year ? obs_a_in : obs_b_in;
    const FlowObservation& obs_b = obs_a_in.year <= obs_b_in.year ? obs_b_in : obs_a_in;
    if (obs_a.year == obs_b.year)
        throw Error("cross-validation needs two distinct yearly observations");

    MinimizeOptions mopt = options.minimize;
    mopt.lambda = options.lambda;

    EvaluationReport report;
    report.spec = spec;
    report.year_a = obs_a.year;
    report.year_b = obs_b.year;

    report.fit_a = minimize(spec, system, obs_a, mopt);
    report.fit_b = minimize(spec, system, obs_b, mopt);

    // Validation score on the held-out year, held-out total as constraint.
    const FlowPrediction pred_b =
        predict_spec(spec, report.fit_a.params, system, obs_b.year, obs_b.total_outflow());
    const FlowPrediction pred_a =
        predict_spec(spec, report.fit_b.params, system, obs_a.year, obs_a.total_outflow());
    report.s_year_b = sorensen_dice(obs_b, pred_b);
    report.s_year_a = sorensen_dice(obs_a, pred_a);
    report.s_mean = 0.5 * (report.s_year_a + report.s_year_b);

    const std::size_t n = system.destination_count();
    report.bic_fold_a = bic(n, report.fit_a.log_likelihood);
    report.bic_fold_b = bic(n, report.fit_b.log_likelihood);

    report.train_year = options.report_train_year != 0 ? options.report_train_year : obs_a.year;
    if (report.train_year != obs_a.year && report.train_year != obs_b.year)
        throw Error("report_train_year " + std::to_string(report.train_year) +
                    " is not one of the fold years");
    const CalibrationResult& fit =
        report.train_year == obs_a.year ? report.fit_a : report.fit_b;

    // Pooled metrics: both years scored with the reporting fold's
    // parameters, M = combined destination count.
    const FlowPrediction pool_a =
        predict_spec(spec, fit.params, system, obs_a.year, obs_a.total_outflow());
    const FlowPrediction pool_b =
        predict_spec(spec, fit.params, system, obs_b.year, obs_b.total_outflow());

    FlowPrediction pooled_pred;
    FlowObservation pooled_obs;
    pooled_pred.values = pool_a.values;
    pooled_pred.values.insert(pooled_pred.values.end(), pool_b.values.begin(),
                              pool_b.values.end());
    pooled_obs.counts = obs_a.counts;
    pooled_obs.counts.insert(pooled_obs.counts.end(), obs_b.counts.begin(), obs_b.counts.end());

    const std::size_t m = pooled_obs.counts.size();
    try {
        const double pooled_ll = log_likelihood(pooled_pred, pooled_obs, spec.loss);
        report.bic = bic(m, pooled_ll);
        report.bic_textbook = bic_textbook(m, spec.param_count(), pooled_ll);
    } catch (const DegenerateVariance&) {
        report.bic = std::numeric_limits<double>::quiet_NaN();
        report.bic_textbook = std::numeric_limits<double>::quiet_NaN();
    }

    const LogMse mse_a = log_mse(obs_a, pool_a);
    const LogMse mse_b = log_mse(obs_b, pool_b);
    const std::size_t included = mse_a.included + mse_b.included;
    report.log_mse = included > 0 ? (mse_a.sum_sq + mse_b.sum_sq) / static_cast<double>(included)
                                  : 0.0;
    report.log_mse_excluded = mse_a.excluded + mse_b.excluded;
    return report;
}

double concentration_share(const FlowObservation& observation, const TerritorySystem& system,
                           const std::set<std::string>& subset_codes) {
    if (observation.counts.size() != system.destination_count())
        throw Error("observation does not match the system's destination count");

    double total = 0.0;
    for (double c : observation.counts) total += c;
    if (total == 0.0) throw EmptyObservation("total observed flow is zero");

    // Validate the subset against destination codes.
    std::set<std::string> dest_codes;
    for (std::size_t j = 0; j < system.destination_count(); ++j)
        dest_codes.insert(system.territories[system.territory_of_destination(j)].code);
    for (const auto& code : subset_codes)
        if (!dest_codes.count(code))
            throw UnknownCode("code " + code + " is not a destination territory");

    double in_subset = 0.0;
    for (std::size_t j = 0; j < system.destination_count(); ++j) {
        const auto& code = system.territories[system.territory_of_destination(j)].code;
        if (subset_codes.count(code)) in_subset += observation.counts[j];
    }
    return in_subset / total;
}

namespace {

double rank_key_value(const EvaluationReport& r, RankKey key) {
    switch (key) {
    case RankKey::Bic: return r.bic;
    case RankKey::SMean: return r.s_mean;
    case RankKey::LogMse: return r.log_mse;
    }
    return 0.0;
}

} // namespace

RankingTable rank_models(std::vector<EvaluationReport> reports, RankKey key) {
    const bool descending = key == RankKey::SMean;
    std::sort(reports.begin(), reports.end(),
              [&](const EvaluationReport& a, const EvaluationReport& b) {
                  const double ka = rank_key_value(a, key);
                  const double kb = rank_key_value(b, key);
                  const bool na = std::isnan(ka) || !a.error.empty();
                  const bool nb = std::isnan(kb) || !b.error.empty();
                  if (na != nb) return nb; // defined keys first
                  if (!na && ka != kb) return descending ? ka > kb : ka < kb;
                  const std::size_t pa = a.spec.param_count();
                  const std::size_t pb = b.spec.param_count();
                  if (pa != pb) return pa < pb;
                  return a.spec.spec_id < b.spec.spec_id;
              });
    for (std::size_t i = 0; i < reports.size(); ++i) reports[i].rank = static_cast<int>(i + 1);
    return {key, std::move(reports)};
}

} // namespace odflow
