#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "odflow/numerics.hpp"

namespace odflow {

// The five destination covariates of the retail model, in the index order
// used throughout (alpha_1..alpha_5 in reported tables map to these in
// order). Outputs always carry names, never bare indices.
enum class Covariate : int {
    MisuseAdmissions = 0,   // hospital admissions by misuse of drugs, per 100k, bed-adjusted
    PoisoningAdmissions = 1, // hospital admissions by poisoning of drugs, per 100k, bed-adjusted
    PoliceWorkforce = 2,    // full-time police officers per 100k
    KnifeCrime = 3,         // knife crime events per 100k
    Gdhi = 4,               // gross disposable household income per head
};

inline constexpr std::size_t kCovariateCount = 5;

const char* covariate_name(Covariate c);
std::optional<Covariate> covariate_from_name(const std::string& name);

struct Territory {
    std::string code;  // short unique identifier
    std::string name;
    double population = 0.0; // persons, > 0
    double lon = 0.0;        // representative point: most populous place
    double lat = 0.0;
};

// Per-territory covariate values for one year, aligned with the
// TerritorySystem territory ordering. All values strictly positive
// (their logarithms enter the retail exponent).
struct CovariateSet {
    int year = 0;
    std::array<std::vector<double>, kCovariateCount> values;
};

// Square matrices aligned with the territory ordering. travel_time in
// minutes, distance in kilometres; diagonals zero, off-diagonals positive.
struct CostMatrices {
    Mat travel_time;
    Mat distance;
};

struct TerritorySystem {
    std::vector<Territory> territories; // sorted lexicographically by code
    std::vector<CovariateSet> covariates; // sorted by year
    CostMatrices costs;
    std::size_t origin_index = 0;

    std::size_t size() const { return territories.size(); }
    std::size_t destination_count() const { return territories.empty() ? 0 : territories.size() - 1; }

    // Destinations are the territories minus the origin, in system order.
    std::size_t territory_of_destination(std::size_t dest) const {
        return dest < origin_index ? dest : dest + 1;
    }

    const CovariateSet* covariates_for(int year) const;
    std::vector<double> populations() const;
};

// Observed line counts from the origin to each destination, aligned with
// the destination ordering. Ingested data is integral; synthetic noiseless
// data may carry real-valued pseudo-counts.
struct FlowObservation {
    int year = 0;
    std::vector<double> counts;

    double total_outflow() const {
        double t = 0.0;
        for (double c : counts) t += c;
        return t;
    }
};

enum class ModelFamily { Gravity, Radiation, Retail };
enum class LossKind { Mse, Poisson }; // Mse is the Gaussian-likelihood loss

const char* family_name(ModelFamily f);
const char* loss_name(LossKind l);

// One of the 68 enumerated model configurations.
struct ModelSpec {
    int spec_id = 0; // 1..68, trained-model table order
    ModelFamily family = ModelFamily::Gravity;
    LossKind loss = LossKind::Mse;
    std::array<bool, kCovariateCount> covariate_mask{}; // retail only; all false otherwise

    std::size_t param_count() const;
    std::vector<std::string> param_names() const;
    std::string mask_string() const; // "misuse_admissions+knife_crime", "-" when empty
};

struct CalibrationResult {
    ModelSpec spec;
    int training_year = 0;
    std::vector<double> params;       // ordered as spec.param_names()
    std::vector<double> std_errors;   // NaN where undefined
    double final_loss = 0.0;          // data term + penalty
    double log_likelihood = 0.0;      // NaN when degenerate
    int iterations = 0;
    bool converged = false;
    double grad_inf_norm = 0.0;       // in optimization coordinates, recorded
    std::vector<std::string> warnings;
};

struct EvaluationReport {
    ModelSpec spec;
    int year_a = 0; // the two fold years, ascending
    int year_b = 0;
    double s_year_a = 0.0; // Sorensen-Dice scored on year_a (trained on year_b)
    double s_year_b = 0.0;
    double s_mean = 0.0;
    double bic = 0.0;          // pooled, trained-model-table form 2 log M - 2 log L
    double bic_textbook = 0.0; // k log M - 2 log L, reported alongside, never substituted
    double log_mse = 0.0;
    std::size_t log_mse_excluded = 0; // zero-count destinations left out of log_mse
    int train_year = 0;               // fold whose parameters feed pooled metrics
    CalibrationResult fit_a;          // trained on year_a
    CalibrationResult fit_b;          // trained on year_b
    double bic_fold_a = 0.0;          // training-year-only BIC per fold
    double bic_fold_b = 0.0;
    int rank = 0;
    std::string error; // empty on success; failure reason otherwise
};

// Machine-readable validation finding.
struct ValidationIssue {
    enum class Kind {
        NonPositiveCovariate,
        DimensionMismatch,
        UnknownYear,
        NegativeCount,
        NonPositivePopulation,
        DuplicateCode,
        InvalidOrigin,
        NonPositiveCost,
        NonZeroDiagonal,
    };
    Kind kind;
    std::string territory; // code, when applicable
    std::string covariate; // name, when applicable
    std::string detail;
};

const char* issue_kind_name(ValidationIssue::Kind k);

// Checks every structural invariant of the dataset and reports all
// violations found, not just the first. Empty result means valid.
// Pure and idempotent.
std::vector<ValidationIssue> validate_system(const TerritorySystem& system,
                                             const std::vector<FlowObservation>& flows);

} // namespace odflow
