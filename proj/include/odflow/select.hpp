#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "odflow/calibrate.hpp"
#include "odflow/domain.hpp"
#include "odflow/models.hpp"

namespace odflow {

// Sorensen-Dice overlap S = 2 sum_j min(data_j, model_j) / (sum data + sum model).
// Throws BothEmpty when both totals are zero.
double sorensen_dice(const FlowObservation& observation, const FlowPrediction& prediction);

// BIC exactly as used in the comparison pipeline: 2 log M - 2 log L.
double bic(std::size_t sample_size, double log_likelihood);

// Textbook variant k log M - 2 log L, reported alongside for sensitivity,
// never silently substituted for bic().
double bic_textbook(std::size_t sample_size, std::size_t param_count, double log_likelihood);

struct LogMse {
    double mse = 0.0;          // mean over included destinations
    double sum_sq = 0.0;       // sum of squared log residuals (for pooling)
    std::size_t included = 0;  // destinations with a positive observed count
    std::size_t excluded = 0;  // zero-count destinations left out of the mean
};

// Mean squared error of the log flows, (1/N') sum (log data - log model)^2,
// averaged over destinations with data > 0 only. Throws NonPositivePrediction
// when the model is not strictly positive at an included destination.
LogMse log_mse(const FlowObservation& observation, const FlowPrediction& prediction);

// The 68 trained-model configurations in table order: 1-2 gravity
// (mse, poisson), 3-4 radiation (mse, poisson), 5-36 retail x poisson over
// the 32 covariate subsets, 37-68 retail x mse over the same subsets.
std::vector<ModelSpec> enumerate_models();

// Spec by id (1..68); throws UnknownSpec.
ModelSpec spec_by_id(int spec_id);

struct CrossValidateOptions {
    double lambda = 1.0;
    int report_train_year = 0; // 0 selects the earlier year
    MinimizeOptions minimize;
};

// 2-fold year-wise cross-validation: train on each year, score
// Sorensen-Dice on the held-out year (held-out total outflow as the
// constraint), then pooled BIC and log-MSE over both years with the
// reporting fold's parameters.
EvaluationReport cross_validate(const ModelSpec& spec, const TerritorySystem& system,
                                const FlowObservation& obs_a, const FlowObservation& obs_b,
                                const CrossValidateOptions& options);

// Share of observed flow landing in the given territory subset.
// Throws EmptyObservation on a zero total and UnknownCode for codes outside
// the destination set.
double concentration_share(const FlowObservation& observation, const TerritorySystem& system,
                           const std::set<std::string>& subset_codes);

enum class RankKey { Bic, SMean, LogMse };

struct RankingTable {
    RankKey key;
    std::vector<EvaluationReport> reports; // ranked, rank fields assigned 1..n
};

// Ascending by bic/log_mse or descending by s_mean; ties broken by fewer
// free parameters, then spec_id. NaN keys order last.
RankingTable rank_models(std::vector<EvaluationReport> reports, RankKey key);

namespace detail {

// Core of the fold mechanics, parameterized over the fitted predictor so
// tests can inject an oracle: fit_predict(train, heldout) returns predicted
// flows for the held-out observation.
using FitPredictFn =
    std::function<std::vector<double>(const FlowObservation& train, const FlowObservation& heldout)>;

// Returns (S scored on a, S scored on b).
std::pair<double, double> cv_scores(const FitPredictFn& fit_predict, const FlowObservation& obs_a,
                                    const FlowObservation& obs_b);

} // namespace detail

} // namespace odflow
