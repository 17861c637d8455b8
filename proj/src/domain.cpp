#include "odflow/domain.hpp"

#include <set>

#include "odflow/util.hpp"

namespace odflow {

namespace {
constexpr const char* kCovariateNames[kCovariateCount] = {
    "misuse_admissions", "poisoning_admissions", "police_workforce", "knife_crime", "gdhi",
};
}

const char* covariate_name(Covariate c) { return kCovariateNames[static_cast<int>(c)]; }

std::optional<Covariate> covariate_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kCovariateCount; ++i)
        if (name == kCovariateNames[i]) return static_cast<Covariate>(i);
    return std::nullopt;
}

const CovariateSet* TerritorySystem::covariates_for(int year) const {
    for (const auto& c : covariates)
        if (c.year == year) return &c;
    return nullptr;
}

std::vector<double> TerritorySystem::populations() const {
    std::vector<double> p;
    p.reserve(territories.size());
    for (const auto& t : territories) p.push_back(t.population);
    return p;
}

const char* family_name(ModelFamily f) {
    switch (f) {
    case ModelFamily::Gravity: return "gravity";
    case ModelFamily::Radiation: return "radiation";
    case ModelFamily::Retail: return "retail";
    }
    return "?";
}

const char* loss_name(LossKind l) { return l == LossKind::Mse ? "mse" : "poisson"; }

std::size_t ModelSpec::param_count() const {
    if (family != ModelFamily::Retail) return 2;
    std::size_t n = 1; // beta
    for (bool b : covariate_mask) n += b ? 1 : 0;
    return n;
}

std::vector<std::string> ModelSpec::param_names() const {
    switch (family) {
    case ModelFamily::Gravity: return {"b", "c"};
    case ModelFamily::Radiation: return {"rho", "r"};
    case ModelFamily::Retail: {
        std::vector<std::string> names = {"beta"};
        for (std::size_t i = 0; i < kCovariateCount; ++i)
            if (covariate_mask[i]) names.push_back(std::string("alpha_") + kCovariateNames[i]);
        return names;
    }
    }
    return {};
}

std::string ModelSpec::mask_string() const {
    std::string out;
    for (std::size_t i = 0; i < kCovariateCount; ++i) {
        if (!covariate_mask[i]) continue;
        if (!out.empty()) out += '+';
        out += kCovariateNames[i];
    }
    return out.empty() ? "-" : out;
}

const char* issue_kind_name(ValidationIssue::Kind k) {
    using K = ValidationIssue::Kind;
    switch (k) {
    case K::NonPositiveCovariate: return "NonPositiveCovariate";
    case K::DimensionMismatch: return "DimensionMismatch";
    case K::UnknownYear: return "UnknownYear";
    case K::NegativeCount: return "NegativeCount";
    case K::NonPositivePopulation: return "NonPositivePopulation";
    case K::DuplicateCode: return "DuplicateCode";
    case K::InvalidOrigin: return "InvalidOrigin";
    case K::NonPositiveCost: return "NonPositiveCost";
    case K::NonZeroDiagonal: return "NonZeroDiagonal";
    }
    return "?";
}

std::vector<ValidationIssue> validate_system(const TerritorySystem& system,
                                             const std::vector<FlowObservation>& flows) {
    using K = ValidationIssue::Kind;
    std::vector<ValidationIssue> issues;
    const std::size_t n = system.size();

    std::set<std::string> seen;
    for (const auto& t : system.territories) {
        if (!(t.population > 0.0))
            issues.push_back({K::NonPositivePopulation, t.code, "",
                              "population " + fmt_double(t.population)});
        if (!seen.insert(t.code).second)
            issues.push_back({K::DuplicateCode, t.code, "", "territory code appears twice"});
    }

    if (system.origin_index >= n)
        issues.push_back({K::InvalidOrigin, "", "",
                          "origin_index " + std::to_string(system.origin_index) + " out of range"});

    for (const Mat* m : {&system.costs.travel_time, &system.costs.distance}) {
        const char* which = (m == &system.costs.travel_time) ? "travel_time" : "distance";
        if (m->rows != n || m->cols != n) {
            issues.push_back({K::DimensionMismatch, "", "",
                              std::string(which) + " matrix is " + std::to_string(m->rows) + "x" +
                                  std::to_string(m->cols) + " for " + std::to_string(n) +
                                  " territories"});
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double v = (*m)(i, j);
                if (i == j && v != 0.0)
                    issues.push_back({K::NonZeroDiagonal, system.territories[i].code, "",
                                      std::string(which) + " diagonal entry " + fmt_double(v)});
                if (i != j && !(v > 0.0))
                    issues.push_back({K::NonPositiveCost, system.territories[i].code, "",
                                      std::string(which) + "[" + system.territories[i].code + "," +
                                          system.territories[j].code + "] = " + fmt_double(v)});
            }
        }
    }

    for (const auto& cov : system.covariates) {
        for (std::size_t c = 0; c < kCovariateCount; ++c) {
            const auto& vals = cov.values[c];
            if (vals.size() != n) {
                issues.push_back({K::DimensionMismatch, "", kCovariateNames[c],
                                  "covariate vector has " + std::to_string(vals.size()) +
                                      " entries for " + std::to_string(n) + " territories (year " +
                                      std::to_string(cov.year) + ")"});
                continue;
            }
            for (std::size_t i = 0; i < n; ++i) {
                if (!(vals[i] > 0.0))
                    issues.push_back({K::NonPositiveCovariate, system.territories[i].code,
                                      kCovariateNames[c],
                                      "value " + fmt_double(vals[i]) + " in year " +
                                          std::to_string(cov.year)});
            }
        }
    }

    for (const auto& f : flows) {
        if (!system.covariates_for(f.year))
            issues.push_back({K::UnknownYear, "", "",
                              "flow year " + std::to_string(f.year) + " has no covariates"});
        if (f.counts.size() != system.destination_count()) {
            issues.push_back({K::DimensionMismatch, "", "",
                              "flow vector for year " + std::to_string(f.year) + " has " +
                                  std::to_string(f.counts.size()) + " entries for " +
                                  std::to_string(system.destination_count()) + " destinations"});
            continue;
        }
        for (std::size_t j = 0; j < f.counts.size(); ++j) {
            if (f.counts[j] < 0.0) {
                const std::size_t ti = system.territory_of_destination(j);
                issues.push_back({K::NegativeCount,
                                  ti < n ? system.territories[ti].code : std::to_string(j), "",
                                  "count " + fmt_double(f.counts[j]) + " in year " +
                                      std::to_string(f.year)});
            }
        }
    }

    return issues;
}

} // namespace odflow
