#include "odflow/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "odflow/errors.hpp"
#include "odflow/util.hpp"

namespace odflow {

namespace {

void check_aligned(const FlowPrediction& prediction, const FlowObservation& observation) {
    if (prediction.values.size() != observation.counts.size())
        throw Error("prediction has " + std::to_string(prediction.values.size()) +
                    " destinations, observation has " + std::to_string(observation.counts.size()));
}

double l2_penalty(const std::vector<double>& params, double lambda) {
    double s = 0.0;
    for (double t : params) s += t * t;
    return lambda * s;
}

} // namespace

LossValue gaussian_loss(const FlowPrediction& prediction, const FlowObservation& observation,
                        const std::vector<double>& params, double lambda) {
    check_aligned(prediction, observation);
    const std::size_t n = observation.counts.size();
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double r = observation.counts[j] - prediction.values[j];
        s += r * r;
    }
    LossValue out;
    out.data_term = s / (2.0 * static_cast<double>(n));
    out.penalty = l2_penalty(params, lambda);
    out.lambda = lambda;
    return out;
}

LossValue poisson_loss(const FlowPrediction& prediction, const FlowObservation& observation,
                       const std::vector<double>& params, double lambda) {
    check_aligned(prediction, observation);
    const std::size_t n = observation.counts.size();
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double d = observation.counts[j];
        const double m = prediction.values[j];
        if (m <= kPredictionFloor) {
            if (d > 0.0)
                throw NonPositivePrediction("model flow " + fmt_double(m) +
                                            " at destination index " + std::to_string(j) +
                                            " with observed count " + fmt_double(d));
            s += kPredictionFloor; // zero-count destination, floored contribution
            continue;
        }
        s += m - d * std::log(m);
    }
    LossValue out;
    out.data_term = s / static_cast<double>(n);
    out.penalty = l2_penalty(params, lambda);
    out.lambda = lambda;
    return out;
}

std::vector<double> gaussian_loss_grad_wrt_prediction(const FlowPrediction& prediction,
                                                      const FlowObservation& observation) {
    check_aligned(prediction, observation);
    const std::size_t n = observation.counts.size();
    std::vector<double> g(n);
    for (std::size_t j = 0; j < n; ++j)
        g[j] = (prediction.values[j] - observation.counts[j]) / static_cast<double>(n);
    return g;
}

std::vector<double> poisson_loss_grad_wrt_prediction(const FlowPrediction& prediction,
                                                     const FlowObservation& observation) {
    check_aligned(prediction, observation);
    const std::size_t n = observation.counts.size();
    std::vector<double> g(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double d = observation.counts[j];
        const double m = prediction.values[j];
        if (m <= kPredictionFloor) {
            if (d > 0.0)
                throw NonPositivePrediction("model flow " + fmt_double(m) +
                                            " at destination index " + std::to_string(j) +
                                            " with observed count " + fmt_double(d));
            g[j] = 0.0; // inside the floored region
            continue;
        }
        g[j] = (1.0 - d / m) / static_cast<double>(n);
    }
    return g;
}

double log_likelihood(const FlowPrediction& prediction, const FlowObservation& observation,
                      LossKind loss) {
    check_aligned(prediction, observation);
    const std::size_t n = observation.counts.size();
    if (loss == LossKind::Poisson) {
        double ll = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = observation.counts[j];
            double m = prediction.values[j];
            if (m <= kPredictionFloor) {
                if (d > 0.0)
                    throw NonPositivePrediction("model flow " + fmt_double(m) +
                                                " at destination index " + std::to_string(j) +
                                                " with observed count " + fmt_double(d));
                m = kPredictionFloor;
            }
            ll += d * std::log(m) - m - std::lgamma(d + 1.0);
        }
        return ll;
    }
    // Gaussian with the profile variance estimate sigma^2 = mean squared
    // residual: log L = -(N/2) (log 2 pi sigma^2 + 1).
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double r = observation.counts[j] - prediction.values[j];
        ss += r * r;
    }
    const double sigma2 = ss / static_cast<double>(n);
    if (!(sigma2 > 0.0))
        throw DegenerateVariance("all residuals are zero; profile variance undefined");
    return -0.5 * static_cast<double>(n) * (std::log(2.0 * M_PI * sigma2) + 1.0);
}

std::vector<std::vector<double>> default_starts(const ModelSpec& spec) {
    std::vector<std::vector<double>> starts;
    switch (spec.family) {
    case ModelFamily::Gravity:
    case ModelFamily::Radiation:
        for (double a : {0.5, 1.0, 2.0})
            for (double b : {0.5, 1.0, 2.0}) starts.push_back({a, b});
        break;
    case ModelFamily::Retail: {
        const std::size_t p = spec.param_count();
        for (double beta : {0.001, 0.01, 0.1}) {
            std::vector<double> s(p, 0.0);
            s[0] = beta;
            starts.push_back(std::move(s));
        }
        break;
    }
    }
    return starts;
}

namespace {

struct Eval {
    double value;
    std::vector<double> grad; // w.r.t. internal coordinates
};

LossValue eval_loss(const FlowModel& model, LossKind loss, const FlowObservation& observation,
                    const std::vector<double>& theta, double lambda) {
    const FlowPrediction pred = model.predict(theta);
    return loss == LossKind::Poisson ? poisson_loss(pred, observation, theta, lambda)
                                     : gaussian_loss(pred, observation, theta, lambda);
}

} // namespace

std::vector<double> loss_gradient(const FlowModel& model, LossKind loss,
                                  const FlowObservation& observation,
                                  const std::vector<double>& theta, double lambda) {
    const FlowPrediction pred = model.predict(theta);
    const std::vector<double> dldm = loss == LossKind::Poisson
                                         ? poisson_loss_grad_wrt_prediction(pred, observation)
                                         : gaussian_loss_grad_wrt_prediction(pred, observation);
    const Mat jac = model.jacobian(theta);
    std::vector<double> g(theta.size(), 0.0);
    for (std::size_t j = 0; j < dldm.size(); ++j)
        for (std::size_t k = 0; k < theta.size(); ++k) g[k] += dldm[j] * jac(j, k);
    for (std::size_t k = 0; k < theta.size(); ++k) g[k] += 2.0 * lambda * theta[k];
    return g;
}

namespace {

// Objective in internal (unconstrained) coordinates; nullopt marks an
// infeasible point (non-finite loss or a guarded prediction).
std::optional<Eval> evaluate_internal(const FlowModel& model, LossKind loss,
                                      const FlowObservation& observation,
                                      const std::vector<double>& x, double lambda) {
    try {
        const std::vector<double> theta = model.natural_from_internal(x);
        const double value = eval_loss(model, loss, observation, theta, lambda).total();
        if (!std::isfinite(value)) return std::nullopt;
        std::vector<double> g = loss_gradient(model, loss, observation, theta, lambda);
        const std::vector<double> scale = model.natural_gradient_scale(x);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] *= scale[k];
        for (double v : g)
            if (!std::isfinite(v)) return std::nullopt;
        return Eval{value, std::move(g)};
    } catch (const Error&) {
        return std::nullopt;
    }
}

struct BfgsOutcome {
    std::vector<double> x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
    bool converged_at_start = false;
    double grad_inf_norm = 0.0;
};

std::optional<BfgsOutcome> bfgs_from_start(const FlowModel& model, LossKind loss,
                                           const FlowObservation& observation,
                                           std::vector<double> x, double lambda, double tol,
                                           int max_iter) {
    const std::size_t p = x.size();
    auto evopt = evaluate_internal(model, loss, observation, x, lambda);
    if (!evopt) return std::nullopt;
    Eval ev = *evopt;

    BfgsOutcome out;
    out.grad_inf_norm = inf_norm(ev.grad);
    if (out.grad_inf_norm < tol) {
        out.x = x;
        out.value = ev.value;
        out.converged = true;
        out.converged_at_start = true;
        return out;
    }

    // Inverse Hessian approximation.
    Mat h(p, p);
    for (std::size_t i = 0; i < p; ++i) h(i, i) = 1.0;
    bool first_update = true;

    int iter = 0;
    for (; iter < max_iter; ++iter) {
        std::vector<double> dir(p, 0.0);
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < p; ++j) dir[i] -= h(i, j) * ev.grad[j];
        double slope = dot(dir, ev.grad);
        if (!(slope < 0.0)) {
            // Not a descent direction; reset to steepest descent.
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < p; ++j) h(i, j) = (i == j) ? 1.0 : 0.0;
                dir[i] = -ev.grad[i];
            }
            slope = dot(dir, ev.grad);
            first_update = true;
        }

        // Backtracking Armijo line search.
        constexpr double kArmijo = 1e-4;
        double step = 1.0;
        std::optional<Eval> next;
        std::vector<double> x_next(p);
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t i = 0; i < p; ++i) x_next[i] = x[i] + step * dir[i];
            next = evaluate_internal(model, loss, observation, x_next, lambda);
            if (next && next->value <= ev.value + kArmijo * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break; // stuck; report state as is

        std::vector<double> s(p), y(p);
        for (std::size_t i = 0; i < p; ++i) {
            s[i] = x_next[i] - x[i];
            y[i] = next->grad[i] - ev.grad[i];
        }
        const double prev_value = ev.value;
        x = x_next;
        ev = *next;
        out.grad_inf_norm = inf_norm(ev.grad);

        if (out.grad_inf_norm < tol) {
            out.converged = true;
            ++iter;
            break;
        }
        if (std::abs(prev_value - ev.value) < 1e-12 * std::max(1.0, std::abs(prev_value))) {
            out.converged = true;
            ++iter;
            break;
        }

        const double sy = dot(s, y);
        if (sy > 1e-12 * std::sqrt(dot(s, s) * dot(y, y))) {
            if (first_update) {
                const double scale = sy / dot(y, y);
                for (std::size_t i = 0; i < p; ++i)
                    for (std::size_t j = 0; j < p; ++j) h(i, j) = (i == j) ? scale : 0.0;
                first_update = false;
            }
            // H <- (I - s y'/sy) H (I - y s'/sy) + s s'/sy
            std::vector<double> hy(p, 0.0);
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < p; ++j) hy[i] += h(i, j) * y[j];
            const double yhy = dot(y, hy);
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < p; ++j) {
                    h(i, j) += (sy + yhy) * s[i] * s[j] / (sy * sy) -
                               (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
    }

    out.x = x;
    out.value = ev.value;
    out.iterations = iter;
    return out;
}

} // namespace

CalibrationResult minimize(const FlowModel& model, LossKind loss,
                           const FlowObservation& observation, const ModelSpec& spec,
                           const MinimizeOptions& options) {
    const auto starts = options.starts.empty() ? default_starts(spec) : options.starts;

    std::optional<BfgsOutcome> best;
    std::size_t usable = 0;
    std::size_t at_start = 0;
    double min_value = std::numeric_limits<double>::infinity();
    double max_value = -std::numeric_limits<double>::infinity();
    for (const auto& start : starts) {
        auto outcome = bfgs_from_start(model, loss, observation,
                                       model.internal_from_natural(start), options.lambda,
                                       options.tolerance, options.max_iter);
        if (!outcome) continue;
        ++usable;
        if (outcome->converged_at_start) ++at_start;
        min_value = std::min(min_value, outcome->value);
        max_value = std::max(max_value, outcome->value);
        if (!best || outcome->value < best->value) best = std::move(outcome);
    }
    if (!best)
        throw NonFiniteLoss("objective non-finite at every start point (" +
                            std::to_string(starts.size()) + " tried)");

    CalibrationResult result;
    result.spec = spec;
    result.training_year = observation.year;
    result.params = model.natural_from_internal(best->x);
    result.final_loss = best->value;
    result.iterations = best->iterations;
    result.converged = best->converged;
    result.grad_inf_norm = best->grad_inf_norm;
    if (!best->converged) result.warnings.push_back("DidNotConverge");
    if (usable >= 2 && at_start == usable &&
        max_value - min_value <= 1e-12 * std::max(1.0, std::abs(min_value)))
        result.warnings.push_back("FlatObjective");

    try {
        result.log_likelihood = log_likelihood(model.predict(result.params), observation, loss);
    } catch (const DegenerateVariance&) {
        result.log_likelihood = std::numeric_limits<double>::quiet_NaN();
        result.warnings.push_back("DegenerateVariance");
    } catch (const Error&) {
        result.log_likelihood = std::numeric_limits<double>::quiet_NaN();
        result.warnings.push_back("LogLikelihoodUnavailable");
    }

    if (result.converged) {
        try {
            result.std_errors = standard_errors(model, loss, observation, result.params);
        } catch (const SingularInformation&) {
            result.std_errors.assign(result.params.size(),
                                     std::numeric_limits<double>::quiet_NaN());
            result.warnings.push_back("SingularInformation");
        } catch (const Error&) {
            // finite-difference probes can leave the feasible region near a
            // parameter-space boundary
            result.std_errors.assign(result.params.size(),
                                     std::numeric_limits<double>::quiet_NaN());
            result.warnings.push_back("StdErrorsUnavailable");
        }
    } else {
        result.std_errors.assign(result.params.size(), std::numeric_limits<double>::quiet_NaN());
    }
    return result;
}

CalibrationResult minimize(const ModelSpec& spec, const TerritorySystem& system,
                           const FlowObservation& observation, const MinimizeOptions& options) {
    auto model = make_flow_model(spec, system, observation.year, observation.total_outflow());
    return minimize(*model, spec.loss, observation, spec, options);
}

std::vector<double> standard_errors(const FlowModel& model, LossKind loss,
                                    const FlowObservation& observation,
                                    const std::vector<double>& theta) {
    const std::size_t p = theta.size();
    const double n = static_cast<double>(observation.counts.size());

    // Gradient of N * data_term in natural parameters.
    auto info_grad = [&](const std::vector<double>& t) {
        std::vector<double> g = loss_gradient(model, loss, observation, t, 0.0);
        for (double& v : g) v *= n;
        return g;
    };

    Mat hess(p, p);
    for (std::size_t k = 0; k < p; ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(theta[k]));
        std::vector<double> tp = theta, tm = theta;
        tp[k] += h;
        tm[k] -= h;
        const std::vector<double> gp = info_grad(tp);
        const std::vector<double> gm = info_grad(tm);
        for (std::size_t l = 0; l < p; ++l) hess(k, l) = (gp[l] - gm[l]) / (2.0 * h);
    }
    for (std::size_t k = 0; k < p; ++k)
        for (std::size_t l = k + 1; l < p; ++l) {
            const double v = 0.5 * (hess(k, l) + hess(l, k));
            hess(k, l) = v;
            hess(l, k) = v;
        }

    const auto inv = cholesky_inverse(hess);
    if (!inv) throw SingularInformation("observed information matrix is not invertible");
    std::vector<double> sigma(p);
    for (std::size_t k = 0; k < p; ++k) sigma[k] = std::sqrt((*inv)(k, k));
    return sigma;
}

std::vector<double> standard_errors(const CalibrationResult& result,
                                    const TerritorySystem& system,
                                    const FlowObservation& observation) {
    if (!result.converged) throw Error("standard_errors requires a converged calibration");
    auto model = make_flow_model(result.spec, system, observation.year,
                                 observation.total_outflow());
    return standard_errors(*model, result.spec.loss, observation, result.params);
}

} // namespace odflow
