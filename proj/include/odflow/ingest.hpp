#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "odflow/domain.hpp"
#include "odflow/errors.hpp"

namespace odflow {

// ---- normalization transforms ----

// count per 100 000 inhabitants
double per_capita_100k(double count, double population);

// admission rate divided by daytime hospital beds per capita
double bed_adjust(double admission_rate, double beds_per_capita);

// population-weighted average of member-county values
double aggregate_weighted(const std::vector<double>& values,
                          const std::vector<double>& populations);

// exact sum of member-county counts
double aggregate_sum(const std::vector<double>& counts);

// ---- raw (pre-normalization) records ----

// Raw covariates for one territory-year: the four additive counts in
// covariate index order, the gdhi currency total, and the bed density.
struct RawCovariates {
    std::array<double, 4> counts{}; // misuse, poisoning, police fte, knife crimes
    double gdhi_total = 0.0;
    double beds_per_capita = 0.0;
};

struct RawTerritory {
    std::string code;
    std::string name;
    double lon = 0.0;
    double lat = 0.0;
    double population = 0.0;
    std::map<int, RawCovariates> by_year;
    // Original code whose cost-matrix rows this territory uses (differs
    // from `code` after a merge: the more populous member's entries).
    std::string cost_source_code;
};

// Merge two territories into one (the origin merge): populations and
// additive covariates summed, bed density population-weighted, the
// representative point and cost rows taken from the more populous member.
RawTerritory merge_origin(const RawTerritory& a, const RawTerritory& b,
                          const std::string& merged_code, const std::string& merged_name);

// ---- dataset loading ----

struct IngestIssue {
    std::string kind; // ParseError, MissingColumn, DuplicateTerritory, UnmappedCounty, ...
    std::string file;
    long line = 0;   // 1-based, 0 when not tied to a line
    long column = 0; // 1-based field index, 0 when not applicable
    std::string message;
};

class IngestFailure : public Error {
  public:
    explicit IngestFailure(std::vector<IngestIssue> issues);
    const std::vector<IngestIssue>& issues() const { return issues_; }

  private:
    std::vector<IngestIssue> issues_;
};

struct IngestPaths {
    std::string territories;
    std::string covariates;
    std::string costs;
    std::string flows;
    std::string mapping; // optional; empty means no county mapping
};

enum class BedAdjustMode { Both, MisuseOnly, None };

struct IngestConfig {
    std::string origin_code; // required; the post-merge origin territory
    // Optional origin merge: two source codes collapsed into one territory.
    struct Merge {
        std::string code_a;
        std::string code_b;
        std::string merged_code;
        std::string merged_name;
    };
    std::optional<Merge> merge;
    BedAdjustMode bed_adjust = BedAdjustMode::Both;
};

struct Dataset {
    TerritorySystem system;
    std::vector<FlowObservation> flows; // sorted by year
    // Machine-readable reasons for every row excluded during assembly.
    std::vector<IngestIssue> notes;
};

// Reads the raw tables, applies the normalization/aggregation scheme and
// the origin merge, and returns a validated dataset. Deterministic for
// identical file bytes; collects every problem found and throws
// IngestFailure listing all of them.
Dataset load_dataset(const IngestPaths& paths, const IngestConfig& config);

// ---- bundle (normalized dataset on disk) ----

void write_bundle(const Dataset& dataset, const std::string& directory);
Dataset read_bundle(const std::string& directory);

} // namespace odflow
