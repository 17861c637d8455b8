#pragma once

#include <memory>
#include <string>
#include <vector>

#include "odflow/domain.hpp"

namespace odflow {

// Expected flows from the origin to every destination, aligned with the
// destination ordering. Always sums to the outflow constraint.
struct FlowPrediction {
    int year = 0;
    ModelFamily family = ModelFamily::Gravity;
    std::vector<double> values;

    double total() const {
        double t = 0.0;
        for (double v : values) t += v;
        return t;
    }
};

struct GravityParams {
    double b = 0.0; // destination-population exponent
    double c = 0.0; // distance-decay exponent
};

struct RadiationParams {
    double rho = 1.0; // opportunities per inhabitant, n = rho * p
    double r = 1.0;   // absorption exponent
};

struct RetailParams {
    double beta = 0.0;                          // travel-time cost weight
    std::array<double, kCovariateCount> alpha{}; // log-benefit weights; only masked entries used
    std::array<bool, kCovariateCount> mask{};
};

// T_Lj = T_L * (m_j^b / d_Lj^c) / sum_k (m_k^b / d_Lk^c), computed through
// log weights with a max shift. Throws NonFiniteWeight when an exponent is
// not finite.
FlowPrediction gravity_flows(const GravityParams& params, const TerritorySystem& system,
                             double total_outflow);

// Total population of territories strictly closer to the origin than the
// destination, by the distance matrix; excludes both endpoints, ties
// excluded.
double intervening_population(std::size_t origin, std::size_t dest,
                              const TerritorySystem& system);

// Absorption probability P(1 | n_i, n_j, n_ij) of the finite-size radiation
// model; in [0, 1) for valid inputs.
double radiation_probability(double n_i, double n_j, double n_ij, double r);

// T_Lj = T_L * P_j / sum_k P_k with n = rho * population for all three
// opportunity terms. Throws DegenerateDenominator when sum_k P_k == 0.
FlowPrediction radiation_flows(const RadiationParams& params, const TerritorySystem& system,
                               double total_outflow);

// T_Lj = T_L * softmax_j( sum_n alpha_n log w_j^(n) - beta c_Lj ), the sum
// over masked-in covariates only; max-shifted for overflow safety.
FlowPrediction retail_flows(const RetailParams& params, const TerritorySystem& system,
                            int covariate_year, double total_outflow);

// A calibratable flow model: predictions and their parameter Jacobian over
// a fixed system/year/outflow, plus the unconstrained reparameterization
// the optimizer works in (identity except where positivity must hold).
class FlowModel {
  public:
    virtual ~FlowModel() = default;

    virtual std::size_t param_count() const = 0;
    virtual std::vector<std::string> param_names() const = 0;

    // Natural-parameter prediction and Jacobian d T_j / d theta_k.
    virtual FlowPrediction predict(const std::vector<double>& theta) const = 0;
    virtual Mat jacobian(const std::vector<double>& theta) const = 0;

    virtual std::vector<double> internal_from_natural(std::vector<double> theta) const {
        return theta;
    }
    virtual std::vector<double> natural_from_internal(std::vector<double> x) const { return x; }
    // Diagonal of d(natural)/d(internal), for chain-ruling gradients.
    virtual std::vector<double> natural_gradient_scale(const std::vector<double>& internal) const {
        return std::vector<double>(internal.size(), 1.0);
    }
};

std::unique_ptr<FlowModel> make_flow_model(const ModelSpec& spec, const TerritorySystem& system,
                                           int year, double total_outflow);

} // namespace odflow
