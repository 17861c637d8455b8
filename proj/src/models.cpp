#include "odflow/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "odflow/errors.hpp"
#include "odflow/util.hpp"

namespace odflow {

namespace {

// Shared softmax core: T_j = T * exp(e_j - max) / sum_k exp(e_k - max).
std::vector<double> softmax_flows(const std::vector<double>& exponents, double total) {
    double m = -std::numeric_limits<double>::infinity();
    for (double e : exponents) {
        if (!std::isfinite(e)) throw NonFiniteWeight("non-finite destination weight exponent " + fmt_double(e));
        m = std::max(m, e);
    }
    std::vector<double> w(exponents.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < exponents.size(); ++j) {
        w[j] = std::exp(exponents[j] - m);
        sum += w[j];
    }
    for (double& v : w) v = total * v / sum;
    return w;
}

// Jacobian of softmax flows given d e_j / d theta_k.
// dT_j/dtheta = T_j * (de_j - sum_k s_k de_k) with shares s_k = T_k / T.
Mat softmax_jacobian(const std::vector<double>& flows, double total, const Mat& dexp) {
    const std::size_t n = flows.size();
    const std::size_t p = dexp.cols;
    std::vector<double> mean(p, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double s = flows[j] / total;
        for (std::size_t k = 0; k < p; ++k) mean[k] += s * dexp(j, k);
    }
    Mat jac(n, p);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < p; ++k) jac(j, k) = flows[j] * (dexp(j, k) - mean[k]);
    return jac;
}

std::vector<double> gravity_exponents(const GravityParams& params, const TerritorySystem& system) {
    const std::size_t nd = system.destination_count();
    std::vector<double> e(nd);
    for (std::size_t j = 0; j < nd; ++j) {
        const std::size_t tj = system.territory_of_destination(j);
        const double log_m = std::log(system.territories[tj].population);
        const double log_d = std::log(system.costs.distance(system.origin_index, tj));
        e[j] = params.b * log_m - params.c * log_d;
    }
    return e;
}

std::vector<double> retail_exponents(const RetailParams& params, const TerritorySystem& system,
                                     const CovariateSet& cov) {
    const std::size_t nd = system.destination_count();
    std::vector<double> e(nd);
    for (std::size_t j = 0; j < nd; ++j) {
        const std::size_t tj = system.territory_of_destination(j);
        double s = -params.beta * system.costs.travel_time(system.origin_index, tj);
        for (std::size_t n = 0; n < kCovariateCount; ++n) {
            if (!params.mask[n]) continue;
            const double w = cov.values[n][tj];
            if (!(w > 0.0))
                throw NonPositiveCovariate(std::string(covariate_name(static_cast<Covariate>(n))) +
                                           " is " + fmt_double(w) + " for territory " +
                                           system.territories[tj].code);
            s += params.alpha[n] * std::log(w);
        }
        e[j] = s;
    }
    return e;
}

// Radiation absorption probability with partial derivatives w.r.t. rho and
// r, for fixed population sums a >= bb >= c > 0 (n = rho * population).
struct RadiationTerm {
    double p;
    double dp_drho;
    double dp_dr;
};

RadiationTerm radiation_term(double a, double bb, double c, double rho, double r) {
    const double A = rho * a;
    const double B = rho * bb;
    const double C = rho * c;
    const double X = std::pow(A, r);
    const double Y = std::pow(B, r);
    const double Z = std::pow(C, r);

    // A^r - B^r written as B^r expm1(r log(A/B)); cancellation-free for
    // small r, where the direct difference underflows to zero.
    const double log_ratio = std::log(A / B);
    const double diff = Y * std::expm1(r * log_ratio);

    const double num = diff * (Z + 1.0);
    const double den = (Y + 1.0) * (X + 1.0);

    const double dX_drho = r * X / rho;
    const double dY_drho = r * Y / rho;
    const double dZ_drho = r * Z / rho;
    const double dX_dr = X * std::log(A);
    const double dY_dr = Y * std::log(B);
    const double dZ_dr = Z * std::log(C);
    const double ddiff_drho = r * diff / rho;
    const double ddiff_dr = diff * std::log(A) + Y * log_ratio;

    const double dnum_drho = ddiff_drho * (Z + 1.0) + diff * dZ_drho;
    const double dden_drho = dY_drho * (X + 1.0) + (Y + 1.0) * dX_drho;
    const double dnum_dr = ddiff_dr * (Z + 1.0) + diff * dZ_dr;
    const double dden_dr = dY_dr * (X + 1.0) + (Y + 1.0) * dX_dr;

    RadiationTerm t;
    t.p = num / den;
    t.dp_drho = (dnum_drho * den - num * dden_drho) / (den * den);
    t.dp_dr = (dnum_dr * den - num * dden_dr) / (den * den);
    return t;
}

} // namespace

FlowPrediction gravity_flows(const GravityParams& params, const TerritorySystem& system,
                             double total_outflow) {
    FlowPrediction out;
    out.family = ModelFamily::Gravity;
    out.values = softmax_flows(gravity_exponents(params, system), total_outflow);
    return out;
}

double intervening_population(std::size_t origin, std::size_t dest,
                              const TerritorySystem& system) {
    const double d_dest = system.costs.distance(origin, dest);
    double sum = 0.0;
    for (std::size_t k = 0; k < system.size(); ++k) {
        if (k == origin || k == dest) continue;
        if (system.costs.distance(origin, k) < d_dest) sum += system.territories[k].population;
    }
    return sum;
}

double radiation_probability(double n_i, double n_j, double n_ij, double r) {
    const double a = n_i + n_j + n_ij;
    const double b = n_i + n_ij;
    // a^r - b^r as b^r expm1(r log(a/b)), exact at n_j = 0 and stable for
    // small r where the direct difference cancels.
    const double diff = std::pow(b, r) * std::expm1(r * std::log(a / b));
    const double num = diff * (std::pow(n_i, r) + 1.0);
    const double den = (std::pow(b, r) + 1.0) * (std::pow(a, r) + 1.0);
    return num / den;
}

FlowPrediction radiation_flows(const RadiationParams& params, const TerritorySystem& system,
                               double total_outflow) {
    const std::size_t nd = system.destination_count();
    const std::size_t L = system.origin_index;
    const double p_L = system.territories[L].population;

    std::vector<double> probs(nd);
    for (std::size_t j = 0; j < nd; ++j) {
        const std::size_t tj = system.territory_of_destination(j);
        const double n_i = params.rho * p_L;
        const double n_j = params.rho * system.territories[tj].population;
        const double n_ij = params.rho * intervening_population(L, tj, system);
        probs[j] = radiation_probability(n_i, n_j, n_ij, params.r);
    }
    double sum = 0.0;
    for (double p : probs) sum += p;
    if (!(sum > 0.0))
        throw DegenerateDenominator("all radiation absorption probabilities are zero");

    FlowPrediction out;
    out.family = ModelFamily::Radiation;
    out.values.resize(nd);
    for (std::size_t j = 0; j < nd; ++j) out.values[j] = total_outflow * probs[j] / sum;
    return out;
}

FlowPrediction retail_flows(const RetailParams& params, const TerritorySystem& system,
                            int covariate_year, double total_outflow) {
    const CovariateSet* cov = system.covariates_for(covariate_year);
    if (!cov) throw Error("no covariates for year " + std::to_string(covariate_year));
    FlowPrediction out;
    out.year = covariate_year;
    out.family = ModelFamily::Retail;
    out.values = softmax_flows(retail_exponents(params, system, *cov), total_outflow);
    return out;
}

namespace {

class GravityModel final : public FlowModel {
  public:
    GravityModel(const TerritorySystem& system, int year, double total)
        : system_(system), year_(year), total_(total) {
        const std::size_t nd = system.destination_count();
        log_m_.resize(nd);
        log_d_.resize(nd);
        for (std::size_t j = 0; j < nd; ++j) {
            const std::size_t tj = system.territory_of_destination(j);
            log_m_[j] = std::log(system.territories[tj].population);
            log_d_[j] = std::log(system.costs.distance(system.origin_index, tj));
        }
    }

    std::size_t param_count() const override { return 2; }
    std::vector<std::string> param_names() const override { return {"b", "c"}; }

    FlowPrediction predict(const std::vector<double>& theta) const override {
        FlowPrediction p = gravity_flows({theta[0], theta[1]}, system_, total_);
        p.year = year_;
        return p;
    }

    Mat jacobian(const std::vector<double>& theta) const override {
        const FlowPrediction p = predict(theta);
        Mat dexp(p.values.size(), 2);
        for (std::size_t j = 0; j < p.values.size(); ++j) {
            dexp(j, 0) = log_m_[j];
            dexp(j, 1) = -log_d_[j];
        }
        return softmax_jacobian(p.values, total_, dexp);
    }

  private:
    const TerritorySystem& system_;
    int year_;
    double total_;
    std::vector<double> log_m_, log_d_;
};

class RadiationModel final : public FlowModel {
  public:
    RadiationModel(const TerritorySystem& system, int year, double total)
        : system_(system), year_(year), total_(total) {
        const std::size_t nd = system.destination_count();
        const std::size_t L = system.origin_index;
        p_origin_ = system.territories[L].population;
        p_dest_.resize(nd);
        p_between_.resize(nd);
        for (std::size_t j = 0; j < nd; ++j) {
            const std::size_t tj = system.territory_of_destination(j);
            p_dest_[j] = system.territories[tj].population;
            p_between_[j] = intervening_population(L, tj, system);
        }
    }

    std::size_t param_count() const override { return 2; }
    std::vector<std::string> param_names() const override { return {"rho", "r"}; }

    FlowPrediction predict(const std::vector<double>& theta) const override {
        FlowPrediction p = radiation_flows({theta[0], theta[1]}, system_, total_);
        p.year = year_;
        return p;
    }

    Mat jacobian(const std::vector<double>& theta) const override {
        const double rho = theta[0];
        const double r = theta[1];
        const std::size_t nd = p_dest_.size();

        std::vector<RadiationTerm> terms(nd);
        double sum = 0.0, dsum_drho = 0.0, dsum_dr = 0.0;
        for (std::size_t j = 0; j < nd; ++j) {
            terms[j] = radiation_term(p_origin_ + p_dest_[j] + p_between_[j],
                                      p_origin_ + p_between_[j], p_origin_, rho, r);
            sum += terms[j].p;
            dsum_drho += terms[j].dp_drho;
            dsum_dr += terms[j].dp_dr;
        }
        if (!(sum > 0.0))
            throw DegenerateDenominator("all radiation absorption probabilities are zero");

        // T_j = T * P_j / S  =>  dT_j = T (dP_j S - P_j dS) / S^2
        Mat jac(nd, 2);
        for (std::size_t j = 0; j < nd; ++j) {
            jac(j, 0) = total_ * (terms[j].dp_drho * sum - terms[j].p * dsum_drho) / (sum * sum);
            jac(j, 1) = total_ * (terms[j].dp_dr * sum - terms[j].p * dsum_dr) / (sum * sum);
        }
        return jac;
    }

    // rho and r stay positive through a log reparameterization.
    std::vector<double> internal_from_natural(std::vector<double> theta) const override {
        for (double& t : theta) t = std::log(t);
        return theta;
    }
    std::vector<double> natural_from_internal(std::vector<double> x) const override {
        for (double& t : x) t = std::exp(t);
        return x;
    }
    std::vector<double> natural_gradient_scale(const std::vector<double>& internal) const override {
        std::vector<double> s(internal.size());
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::exp(internal[i]);
        return s;
    }

  private:
    const TerritorySystem& system_;
    int year_;
    double total_;
    double p_origin_ = 0.0;
    std::vector<double> p_dest_, p_between_;
};

class RetailModel final : public FlowModel {
  public:
    RetailModel(const TerritorySystem& system, int year, double total,
                const std::array<bool, kCovariateCount>& mask)
        : system_(system), year_(year), total_(total), mask_(mask) {
        const CovariateSet* cov = system.covariates_for(year);
        if (!cov) throw Error("no covariates for year " + std::to_string(year));
        const std::size_t nd = system.destination_count();
        cost_.resize(nd);
        for (std::size_t n = 0; n < kCovariateCount; ++n)
            if (mask_[n]) masked_.push_back(n);
        log_w_.assign(masked_.size(), std::vector<double>(nd));
        for (std::size_t j = 0; j < nd; ++j) {
            const std::size_t tj = system.territory_of_destination(j);
            cost_[j] = system.costs.travel_time(system.origin_index, tj);
            for (std::size_t k = 0; k < masked_.size(); ++k)
                log_w_[k][j] = std::log(cov->values[masked_[k]][tj]);
        }
    }

    std::size_t param_count() const override { return 1 + masked_.size(); }

    std::vector<std::string> param_names() const override {
        std::vector<std::string> names = {"beta"};
        for (std::size_t n : masked_)
            names.push_back(std::string("alpha_") + covariate_name(static_cast<Covariate>(n)));
        return names;
    }

    FlowPrediction predict(const std::vector<double>& theta) const override {
        RetailParams p;
        p.beta = theta[0];
        p.mask = mask_;
        for (std::size_t k = 0; k < masked_.size(); ++k) p.alpha[masked_[k]] = theta[1 + k];
        FlowPrediction out = retail_flows(p, system_, year_, total_);
        return out;
    }

    Mat jacobian(const std::vector<double>& theta) const override {
        const FlowPrediction p = predict(theta);
        const std::size_t nd = p.values.size();
        Mat dexp(nd, param_count());
        for (std::size_t j = 0; j < nd; ++j) {
            dexp(j, 0) = -cost_[j];
            for (std::size_t k = 0; k < masked_.size(); ++k) dexp(j, 1 + k) = log_w_[k][j];
        }
        return softmax_jacobian(p.values, total_, dexp);
    }

  private:
    const TerritorySystem& system_;
    int year_;
    double total_;
    std::array<bool, kCovariateCount> mask_;
    std::vector<std::size_t> masked_;
    std::vector<double> cost_;
    std::vector<std::vector<double>> log_w_; // [masked covariate][destination]
};

} // namespace

std::unique_ptr<FlowModel> make_flow_model(const ModelSpec& spec, const TerritorySystem& system,
                                           int year, double total_outflow) {
    switch (spec.family) {
    case ModelFamily::Gravity:
        return std::make_unique<GravityModel>(system, year, total_outflow);
    case ModelFamily::Radiation:
        return std::make_unique<RadiationModel>(system, year, total_outflow);
    case ModelFamily::Retail:
        return std::make_unique<RetailModel>(system, year, total_outflow, spec.covariate_mask);
    }
    throw Error("unknown model family");
}

} // namespace odflow
