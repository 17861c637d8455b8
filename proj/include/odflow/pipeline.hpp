#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "odflow/ingest.hpp"
#include "odflow/select.hpp"

namespace odflow {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunOptions {
    std::vector<int> spec_ids; // empty = all 68
    double lambda = 1.0;
    int train_year = 0; // reporting fold; 0 = earlier year
    RankKey rank_key = RankKey::Bic;
    int jobs = 1;
    bool keep_going = false;
    MinimizeOptions minimize;
};

struct RunOutput {
    std::vector<EvaluationReport> reports; // ordered by spec_id, ranks assigned
    std::size_t failures = 0;
    int year_a = 0;
    int year_b = 0;
};

// Calibrates the requested specs with 2-fold cross-validation. Per-spec
// failures are recorded on the report, never dropped. Deterministic:
// identical inputs and options give identical output for any job count.
RunOutput run_specs(const Dataset& dataset, const RunOptions& options);

// results.csv serialization (byte-deterministic).
std::string results_csv(const RunOutput& output);

// Per-spec artifact with full fold diagnostics.
nlohmann::json report_to_json(const EvaluationReport& report);

// Writes results.csv, per-spec artifacts and the manifest under out_dir.
void write_run_outputs(const RunOutput& output, const nlohmann::json& manifest,
                       const std::string& out_dir);

// Run manifest: tool version, config hash, input digests, timestamp (taken
// from SOURCE_DATE_EPOCH when set, empty otherwise, keeping outputs
// byte-identical across runs), and the resolved options.
nlohmann::json make_manifest(const std::vector<std::string>& input_files,
                             const nlohmann::json& resolved_options);

} // namespace odflow
