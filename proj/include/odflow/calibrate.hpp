#pragma once

#include <vector>

#include "odflow/domain.hpp"
#include "odflow/models.hpp"

namespace odflow {

// Loss = data term + lambda * ||theta||^2, split out for reporting.
struct LossValue {
    double data_term = 0.0;
    double penalty = 0.0;
    double lambda = 1.0;

    double total() const { return data_term + penalty; }
};

// Floor applied to near-zero predicted flows inside the Poisson loss and
// likelihood; predictions at or below it with a positive observed count
// raise NonPositivePrediction.
inline constexpr double kPredictionFloor = 1e-12;

// Mean-square loss from a Gaussian likelihood:
// data_term = (1/2N) sum_j (data_j - model_j)^2.
LossValue gaussian_loss(const FlowPrediction& prediction, const FlowObservation& observation,
                        const std::vector<double>& params, double lambda);

// Poisson-likelihood loss:
// data_term = (1/N) sum_j (model_j - data_j * log model_j).
LossValue poisson_loss(const FlowPrediction& prediction, const FlowObservation& observation,
                       const std::vector<double>& params, double lambda);

// Gradient of the data term w.r.t. the predicted flows (length N).
std::vector<double> gaussian_loss_grad_wrt_prediction(const FlowPrediction& prediction,
                                                      const FlowObservation& observation);
std::vector<double> poisson_loss_grad_wrt_prediction(const FlowPrediction& prediction,
                                                     const FlowObservation& observation);

// Maximized log-likelihood at the given prediction. Poisson uses the exact
// count likelihood (log-gamma factorials); the Gaussian case profiles the
// variance, sigma^2 = mean squared residual, and throws DegenerateVariance
// when every residual is zero.
double log_likelihood(const FlowPrediction& prediction, const FlowObservation& observation,
                      LossKind loss);

struct MinimizeOptions {
    double tolerance = 1e-8;   // gradient infinity-norm, optimizer coordinates
    int max_iter = 10000;
    double lambda = 1.0;       // L2 strength on all free parameters
    // Natural-parameter start points; empty selects the per-family grid:
    // gravity (b,c) in {0.5,1,2}^2, radiation (rho,r) in {0.5,1,2}^2,
    // retail beta in {0.001,0.01,0.1} with masked alphas at 0.
    std::vector<std::vector<double>> starts;
};

// Gradient of the total loss w.r.t. the natural parameters, chained through
// the model Jacobian.
std::vector<double> loss_gradient(const FlowModel& model, LossKind loss,
                                  const FlowObservation& observation,
                                  const std::vector<double>& theta, double lambda);

std::vector<std::vector<double>> default_starts(const ModelSpec& spec);

// Quasi-Newton (BFGS) minimization of the chosen loss over the multi-start
// grid, on the model's unconstrained reparameterization. Deterministic for
// identical inputs and options. Non-convergence is flagged on the result,
// not thrown; NonFiniteLoss is thrown only when every start is unusable.
CalibrationResult minimize(const FlowModel& model, LossKind loss,
                           const FlowObservation& observation, const ModelSpec& spec,
                           const MinimizeOptions& options);

CalibrationResult minimize(const ModelSpec& spec, const TerritorySystem& system,
                           const FlowObservation& observation, const MinimizeOptions& options);

// Fisher/observed-information standard errors: sqrt of diagonal of the
// inverse Hessian of N * data_term, Hessian by central finite differences
// of the analytic gradient with step 1e-5 * max(1, |theta_k|). Throws
// SingularInformation when the Hessian is not invertible.
std::vector<double> standard_errors(const FlowModel& model, LossKind loss,
                                    const FlowObservation& observation,
                                    const std::vector<double>& theta);

std::vector<double> standard_errors(const CalibrationResult& result,
                                    const TerritorySystem& system,
                                    const FlowObservation& observation);

} // namespace odflow
