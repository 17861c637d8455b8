#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "odflow/ingest.hpp"
#include "odflow/models.hpp"
#include "odflow/select.hpp"

namespace odflow {

// One parsed row of results.csv, enough to rebuild the fitted prediction.
struct ResultRow {
    ModelSpec spec;
    int train_year = 0;
    std::vector<double> params; // in spec.param_names() order
};

// Finds the row for spec_id in a results.csv produced by the run command.
// Throws UnknownSpec when absent or when the row recorded a failure.
ResultRow load_result_row(const std::string& results_csv_path, int spec_id);

// Modelled flows for the given year (that year's observed total as the
// constraint) from a fitted row.
FlowPrediction prediction_for_row(const ResultRow& row, const Dataset& dataset, int year);

// Feature collection keyed by territory code: each destination feature
// carries {code, name, observed, modelled, diff, excluded_from_logmse} and
// the geometry taken from the boundaries file. Throws MissingBoundaries
// when a destination has no boundary feature. A non-null manifest is
// embedded as a foreign top-level member.
void export_geojson(const Dataset& dataset, int year, const FlowPrediction& prediction,
                    const std::string& boundaries_path, const std::string& out_path,
                    const std::string& code_property = "code",
                    const nlohmann::json* manifest = nullptr);

// code,observed,modelled rows sorted descending by observed count. A
// non-null manifest is written beside the file as <out_path>.manifest.json.
void export_dispersion(const Dataset& dataset, int year, const FlowPrediction& prediction,
                       const std::string& out_path, const nlohmann::json* manifest = nullptr);

} // namespace odflow
