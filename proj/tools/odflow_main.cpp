// odflow: calibration and model selection for single-origin
// origin-destination flow data.
//
// Commands: ingest, run, export, share, synth. Every command is a pure
// function of its input files and flags; repeated runs produce
// byte-identical outputs. Exit codes: 0 success, 2 validation failure,
// 3 calibration failure, 4 usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "odflow/export.hpp"
#include "odflow/ingest.hpp"
#include "odflow/pipeline.hpp"
#include "odflow/select.hpp"
#include "odflow/synth.hpp"
#include "odflow/util.hpp"

namespace {

using namespace odflow;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitCalibration = 3;
constexpr int kExitUsage = 4;

// Plain key=value configuration file; '#' starts a comment.
std::map<std::string, std::string> read_config(const std::string& path) {
    std::map<std::string, std::string> config;
    if (path.empty()) return config;
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        if (!key.empty()) config[key] = value;
    }
    return config;
}

// flags > config file > built-in default
std::string resolve(const CLI::Option* flag, const std::string& flag_value,
                    const std::map<std::string, std::string>& config, const std::string& key,
                    const std::string& fallback) {
    if (flag && flag->count() > 0) return flag_value;
    if (auto it = config.find(key); it != config.end()) return it->second;
    return fallback;
}

void print_issues(const std::vector<IngestIssue>& issues, bool as_json) {
    for (const auto& issue : issues) {
        if (as_json) {
            nlohmann::json j{{"kind", issue.kind},
                             {"file", issue.file},
                             {"line", issue.line},
                             {"column", issue.column},
                             {"message", issue.message}};
            std::cerr << j.dump() << '\n';
        } else {
            std::cerr << "error: " << issue.kind;
            if (!issue.file.empty()) {
                std::cerr << " [" << issue.file;
                if (issue.line > 0) std::cerr << ':' << issue.line;
                if (issue.column > 0) std::cerr << ':' << issue.column;
                std::cerr << ']';
            }
            std::cerr << ' ' << issue.message << '\n';
        }
    }
}

std::optional<IngestConfig::Merge> parse_merge(const std::string& text) {
    // "MET+COL=LON:London"
    if (text.empty()) return std::nullopt;
    const auto plus = text.find('+');
    const auto eq = text.find('=');
    if (plus == std::string::npos || eq == std::string::npos || eq < plus)
        throw Error("merge must look like CODEA+CODEB=MERGED:Name, got '" + text + "'");
    IngestConfig::Merge merge;
    merge.code_a = text.substr(0, plus);
    merge.code_b = text.substr(plus + 1, eq - plus - 1);
    const std::string rest = text.substr(eq + 1);
    const auto colon = rest.find(':');
    merge.merged_code = colon == std::string::npos ? rest : rest.substr(0, colon);
    merge.merged_name = colon == std::string::npos ? merge.merged_code : rest.substr(colon + 1);
    return merge;
}

std::vector<int> parse_spec_list(const std::string& text) {
    if (text == "all" || text.empty()) return {};
    std::vector<int> ids;
    for (const auto& part : split(text, ',')) {
        const auto dash = part.find('-');
        long long lo = 0, hi = 0;
        if (dash != std::string::npos && dash > 0) {
            if (!parse_int(part.substr(0, dash), lo) || !parse_int(part.substr(dash + 1), hi) ||
                lo > hi)
                throw Error("bad spec range '" + part + "'");
        } else {
            if (!parse_int(part, lo)) throw Error("bad spec id '" + part + "'");
            hi = lo;
        }
        for (long long id = lo; id <= hi; ++id) ids.push_back(static_cast<int>(id));
    }
    return ids;
}

int default_jobs() {
    if (const char* env = std::getenv("ODFLOW_JOBS")) {
        long long jobs = 0;
        if (parse_int(env, jobs) && jobs >= 1) return static_cast<int>(jobs);
    }
    return 1;
}

int cmd_ingest(const std::string& territories, const std::string& covariates,
               const std::string& costs, const std::string& flows, const std::string& mapping,
               const std::string& out_dir, const IngestConfig& config, bool as_json,
               const nlohmann::json& resolved_options) {
    try {
        IngestPaths paths{territories, covariates, costs, flows, mapping};
        Dataset dataset = load_dataset(paths, config);
        print_issues(dataset.notes, as_json);
        write_bundle(dataset, out_dir);
        std::vector<std::string> inputs{territories, covariates, costs, flows};
        if (!mapping.empty()) inputs.push_back(mapping);
        {
            std::ofstream out(std::filesystem::path(out_dir) / "manifest.json");
            out << make_manifest(inputs, resolved_options).dump(2) << '\n';
        }
        std::cout << "bundle written to " << out_dir << " (" << dataset.system.size()
                  << " territories, " << dataset.flows.size() << " flow years)\n";
        return kExitOk;
    } catch (const IngestFailure& failure) {
        print_issues(failure.issues(), as_json);
        return kExitValidation;
    }
}

int cmd_run(const std::string& bundle_dir, const std::string& out_dir, const RunOptions& options,
            const nlohmann::json& resolved_options) {
    Dataset dataset;
    try {
        dataset = read_bundle(bundle_dir);
    } catch (const IngestFailure& failure) {
        print_issues(failure.issues(), false);
        return kExitValidation;
    }

    const RunOutput output = run_specs(dataset, options);
    std::vector<std::string> inputs{
        (std::filesystem::path(bundle_dir) / "system.json").string(),
        (std::filesystem::path(bundle_dir) / "flows.json").string()};
    write_run_outputs(output, make_manifest(inputs, resolved_options), out_dir);

    std::cout << "wrote " << (std::filesystem::path(out_dir) / "results.csv").string() << " ("
              << output.reports.size() << " specs";
    if (output.failures > 0) std::cout << ", " << output.failures << " failed";
    std::cout << ")\n";
    for (const auto& r : output.reports)
        if (!r.error.empty())
            std::cerr << "error: spec " << r.spec.spec_id << " failed: " << r.error << '\n';
    if (output.failures > 0 && !options.keep_going) return kExitCalibration;
    return kExitOk;
}

int cmd_export(const std::string& bundle_dir, const std::string& results_path, int spec_id,
               int year, const std::string& geojson_path, const std::string& dispersion_path,
               const std::string& boundaries_path, const std::string& boundaries_key) {
    const Dataset dataset = read_bundle(bundle_dir);
    const ResultRow row = load_result_row(results_path, spec_id);
    const FlowPrediction prediction = prediction_for_row(row, dataset, year);

    std::vector<std::string> inputs{
        (std::filesystem::path(bundle_dir) / "system.json").string(), results_path};
    if (!boundaries_path.empty()) inputs.push_back(boundaries_path);
    const nlohmann::json manifest = make_manifest(
        inputs, nlohmann::json{{"command", "export"}, {"spec", spec_id}, {"year", year}});

    if (!geojson_path.empty()) {
        if (boundaries_path.empty())
            throw MissingBoundaries("geojson export needs --boundaries");
        export_geojson(dataset, year, prediction, boundaries_path, geojson_path, boundaries_key,
                       &manifest);
        std::cout << "wrote " << geojson_path << '\n';
    }
    if (!dispersion_path.empty()) {
        export_dispersion(dataset, year, prediction, dispersion_path, &manifest);
        std::cout << "wrote " << dispersion_path << '\n';
    }
    return kExitOk;
}

int cmd_share(const std::string& bundle_dir, const std::string& subset_path) {
    const Dataset dataset = read_bundle(bundle_dir);
    std::ifstream in(subset_path);
    if (!in) throw Error("cannot open subset file " + subset_path);
    std::set<std::string> subset;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string code(trim(line));
        if (!code.empty()) subset.insert(code);
    }
    for (const auto& obs : dataset.flows) {
        const double share = concentration_share(obs, dataset.system, subset);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", share * 100.0);
        std::cout << obs.year << ' ' << buf << '\n';
    }
    return kExitOk;
}

int cmd_synth(std::size_t territories, std::uint64_t seed, const std::string& years_text,
              const std::string& family_text, const std::string& truth_text, double total_outflow,
              const std::string& noise_text, const std::string& out_dir) {
    SynthConfig config;
    config.territory_count = territories;
    config.seed = seed;
    config.years.clear();
    for (const auto& part : split(years_text, ',')) {
        long long y = 0;
        if (!parse_int(part, y)) throw Error("bad year '" + part + "'");
        config.years.push_back(static_cast<int>(y));
    }

    ModelSpec spec;
    if (family_text == "gravity") spec.family = ModelFamily::Gravity;
    else if (family_text == "radiation") spec.family = ModelFamily::Radiation;
    else if (family_text == "retail") spec.family = ModelFamily::Retail;
    else throw Error("family must be gravity, radiation or retail");

    // name=value list, e.g. "b=0.697;c=0.368" or "beta=0.014;alpha_knife_crime=-0.013"
    std::map<std::string, double> truth;
    for (const auto& part : split(truth_text, ';')) {
        if (trim(part).empty()) continue;
        const auto eq = part.find('=');
        double v = 0.0;
        if (eq == std::string::npos || !parse_double(part.substr(eq + 1), v))
            throw Error("bad truth entry '" + part + "'");
        truth[std::string(trim(part.substr(0, eq)))] = v;
    }
    if (spec.family == ModelFamily::Retail) {
        for (const auto& [name, _] : truth) {
            if (name.rfind("alpha_", 0) != 0) continue;
            auto cov = covariate_from_name(name.substr(6));
            if (!cov) throw Error("unknown covariate in '" + name + "'");
            spec.covariate_mask[static_cast<std::size_t>(*cov)] = true;
        }
    }
    std::vector<double> params;
    for (const auto& name : spec.param_names()) {
        auto it = truth.find(name);
        if (it == truth.end()) throw Error("truth is missing parameter " + name);
        params.push_back(it->second);
    }
    if (truth.size() != params.size()) throw Error("truth lists a parameter the family lacks");

    NoiseKind noise;
    if (noise_text == "none") noise = NoiseKind::None;
    else if (noise_text == "poisson") noise = NoiseKind::Poisson;
    else throw Error("noise must be none or poisson");

    const TerritorySystem system = generate_system(config);
    std::vector<FlowObservation> flows;
    for (int year : config.years)
        flows.push_back(generate_flows(spec, params, system, year, total_outflow, noise,
                                       Rng::derive_seed(seed, static_cast<std::uint64_t>(year))));
    dump_dataset_csv(system, flows, out_dir);
    {
        const nlohmann::json manifest =
            make_manifest({}, nlohmann::json{{"command", "synth"},
                                             {"territories", territories},
                                             {"seed", seed},
                                             {"years", years_text},
                                             {"family", family_text},
                                             {"truth", truth_text},
                                             {"total_outflow", total_outflow},
                                             {"noise", noise_text}});
        std::ofstream out(std::filesystem::path(out_dir) / "manifest.json");
        out << manifest.dump(2) << '\n';
    }
    std::cout << "synthetic dataset written to " << out_dir << '\n';
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"calibration and model selection for single-origin origin-destination flows"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    // ---- ingest ----
    auto* ingest = app.add_subcommand("ingest", "normalize raw tables into a dataset bundle");
    std::string territories, covariates, costs, flows, mapping, out_dir = "bundle";
    std::string config_path, origin_flag, merge_flag, bed_flag;
    bool json_errors = false;
    ingest->add_option("--territories", territories)->required();
    ingest->add_option("--covariates", covariates)->required();
    ingest->add_option("--costs", costs)->required();
    ingest->add_option("--flows", flows)->required();
    ingest->add_option("--mapping", mapping, "county-to-territory mapping csv");
    ingest->add_option("--out", out_dir, "bundle directory");
    ingest->add_option("--config", config_path, "key=value config file");
    auto* origin_opt = ingest->add_option("--origin", origin_flag, "origin territory code");
    auto* merge_opt =
        ingest->add_option("--merge", merge_flag, "origin merge, CODEA+CODEB=MERGED:Name");
    auto* bed_opt = ingest->add_option("--bed-adjust", bed_flag,
                                       "bed adjustment: both | misuse_only | none");
    ingest->add_flag("--json", json_errors, "machine-readable errors, one object per line");

    // ---- run ----
    auto* run = app.add_subcommand("run", "calibrate specs with 2-fold cross-validation");
    std::string bundle_dir, run_out = "results", specs_flag, lambda_flag, train_year_flag;
    std::string rank_flag, jobs_flag, run_config_path;
    bool keep_going = false;
    run->add_option("--bundle", bundle_dir)->required();
    run->add_option("--out", run_out, "output directory");
    run->add_option("--config", run_config_path, "key=value config file");
    auto* specs_opt = run->add_option("--specs", specs_flag, "all or id list like 1,2,5-10");
    auto* lambda_opt = run->add_option("--lambda", lambda_flag, "L2 strength (default 1)");
    auto* train_opt = run->add_option("--train-year", train_year_flag,
                                      "reporting fold (default: earlier year)");
    auto* rank_opt = run->add_option("--rank-key", rank_flag, "bic | s_mean | log_mse");
    auto* jobs_opt = run->add_option("--jobs", jobs_flag, "parallel specs (env ODFLOW_JOBS)");
    run->add_flag("--keep-going", keep_going, "exit 0 even when some specs fail");

    // ---- export ----
    auto* exp = app.add_subcommand("export", "map and plot data for one fitted spec");
    std::string exp_bundle, exp_results, geojson_path, dispersion_path, boundaries_path;
    std::string boundaries_key = "code";
    int exp_spec = 0, exp_year = 0;
    exp->add_option("--bundle", exp_bundle)->required();
    exp->add_option("--results", exp_results, "results.csv from run")->required();
    exp->add_option("--spec", exp_spec)->required();
    exp->add_option("--year", exp_year)->required();
    exp->add_option("--geojson", geojson_path, "feature collection output path");
    exp->add_option("--dispersion", dispersion_path, "code,observed,modelled csv path");
    exp->add_option("--boundaries", boundaries_path, "boundary feature collection");
    exp->add_option("--boundaries-key", boundaries_key, "property carrying the territory code");

    // ---- share ----
    auto* share = app.add_subcommand("share", "observed flow share of a territory subset");
    std::string share_bundle, subset_path;
    share->add_option("--bundle", share_bundle)->required();
    share->add_option("--subset-file", subset_path, "one territory code per line")->required();

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset in ingest format");
    std::size_t synth_territories = 10;
    std::uint64_t synth_seed = 1;
    std::string synth_years = "2019,2020", synth_family = "retail";
    std::string synth_truth = "beta=0.014;alpha_knife_crime=-0.013";
    std::string synth_noise = "poisson", synth_out = "synth";
    double synth_total = 2000.0;
    synth->add_option("--territories", synth_territories);
    synth->add_option("--seed", synth_seed);
    synth->add_option("--years", synth_years);
    synth->add_option("--family", synth_family, "gravity | radiation | retail");
    synth->add_option("--truth", synth_truth, "true parameters, name=value;name=value");
    synth->add_option("--total-outflow", synth_total);
    synth->add_option("--noise", synth_noise, "none | poisson");
    synth->add_option("--out", synth_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*ingest) {
            const auto config = read_config(config_path);
            IngestConfig ic;
            ic.origin_code = resolve(origin_opt, origin_flag, config, "origin", "");
            if (ic.origin_code.empty()) {
                std::cerr << "error: --origin (or config key 'origin') is required\n";
                return kExitUsage;
            }
            ic.merge = parse_merge(resolve(merge_opt, merge_flag, config, "merge", ""));
            const std::string bed = resolve(bed_opt, bed_flag, config, "bed_adjust", "both");
            if (bed == "both") ic.bed_adjust = BedAdjustMode::Both;
            else if (bed == "misuse_only") ic.bed_adjust = BedAdjustMode::MisuseOnly;
            else if (bed == "none") ic.bed_adjust = BedAdjustMode::None;
            else throw Error("bed_adjust must be both, misuse_only or none");

            nlohmann::json resolved{{"command", "ingest"},
                                    {"origin", ic.origin_code},
                                    {"merge", merge_flag},
                                    {"bed_adjust", bed}};
            return cmd_ingest(territories, covariates, costs, flows, mapping, out_dir, ic,
                              json_errors, resolved);
        }
        if (*run) {
            const auto config = read_config(run_config_path);
            RunOptions options;
            options.spec_ids =
                parse_spec_list(resolve(specs_opt, specs_flag, config, "specs", "all"));
            const std::string lambda_text = resolve(lambda_opt, lambda_flag, config, "lambda", "1");
            if (!parse_double(lambda_text, options.lambda) || options.lambda < 0.0)
                throw Error("bad lambda '" + lambda_text + "'");
            const std::string train_text =
                resolve(train_opt, train_year_flag, config, "train_year", "0");
            long long train_year = 0;
            if (!parse_int(train_text, train_year)) throw Error("bad train year");
            options.train_year = static_cast<int>(train_year);
            const std::string rank_text = resolve(rank_opt, rank_flag, config, "rank_key", "bic");
            if (rank_text == "bic") options.rank_key = RankKey::Bic;
            else if (rank_text == "s_mean") options.rank_key = RankKey::SMean;
            else if (rank_text == "log_mse") options.rank_key = RankKey::LogMse;
            else throw Error("rank_key must be bic, s_mean or log_mse");
            const std::string jobs_text = resolve(jobs_opt, jobs_flag, config, "jobs",
                                                  std::to_string(default_jobs()));
            long long jobs = 1;
            if (!parse_int(jobs_text, jobs) || jobs < 1) throw Error("bad jobs value");
            options.jobs = static_cast<int>(jobs);
            options.keep_going = keep_going;

            nlohmann::json resolved{{"command", "run"},
                                    {"specs", specs_flag.empty() ? "all" : specs_flag},
                                    {"lambda", options.lambda},
                                    {"train_year", options.train_year},
                                    {"rank_key", rank_text},
                                    {"keep_going", options.keep_going}};
            return cmd_run(bundle_dir, run_out, options, resolved);
        }
        if (*exp)
            return cmd_export(exp_bundle, exp_results, exp_spec, exp_year, geojson_path,
                              dispersion_path, boundaries_path, boundaries_key);
        if (*share) return cmd_share(share_bundle, subset_path);
        if (*synth)
            return cmd_synth(synth_territories, synth_seed, synth_years, synth_family,
                             synth_truth, synth_total, synth_noise, synth_out);
    } catch (const IngestFailure& failure) {
        print_issues(failure.issues(), false);
        return kExitValidation;
    } catch (const UnknownSpec& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NonFiniteLoss& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCalibration;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    }
    return kExitUsage;
}
