#include "odflow/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <thread>

#include "odflow/util.hpp"

namespace odflow {

namespace {

std::string join_named(const std::vector<std::string>& names, const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i) out += ';';
        out += names[i];
        out += '=';
        out += i < values.size() ? fmt_double(values[i]) : "nan";
    }
    return out;
}

} // namespace

RunOutput run_specs(const Dataset& dataset, const RunOptions& options) {
    if (dataset.flows.size() != 2)
        throw Error("the 2-fold pipeline needs exactly two yearly observations, found " +
                    std::to_string(dataset.flows.size()));
    const FlowObservation& obs_a =
        dataset.flows[0].year <= dataset.flows[1].year ? dataset.flows[0] : dataset.flows[1];
    const FlowObservation& obs_b =
        dataset.flows[0].year <= dataset.flows[1].year ? dataset.flows[1] : dataset.flows[0];

    std::vector<ModelSpec> specs;
    if (options.spec_ids.empty()) {
        specs = enumerate_models();
    } else {
        for (int id : options.spec_ids) specs.push_back(spec_by_id(id));
    }

    CrossValidateOptions cv;
    cv.lambda = options.lambda;
    cv.report_train_year = options.train_year;
    cv.minimize = options.minimize;

    std::vector<EvaluationReport> reports(specs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) return;
            try {
                reports[i] = cross_validate(specs[i], dataset.system, obs_a, obs_b, cv);
            } catch (const std::exception& e) {
                EvaluationReport failed;
                failed.spec = specs[i];
                failed.year_a = obs_a.year;
                failed.year_b = obs_b.year;
                failed.s_year_a = failed.s_year_b = failed.s_mean =
                    std::numeric_limits<double>::quiet_NaN();
                failed.bic = failed.bic_textbook = failed.log_mse =
                    std::numeric_limits<double>::quiet_NaN();
                failed.error = e.what();
                reports[i] = std::move(failed);
            }
        }
    };

    const int jobs = std::max(1, options.jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // Ranks come from the comparison ordering; rows stay in spec_id order.
    const RankingTable table = rank_models(reports, options.rank_key);
    for (const auto& ranked : table.reports)
        for (auto& r : reports)
            if (r.spec.spec_id == ranked.spec.spec_id) r.rank = ranked.rank;

    RunOutput out;
    out.reports = std::move(reports);
    out.year_a = obs_a.year;
    out.year_b = obs_b.year;
    for (const auto& r : out.reports)
        if (!r.error.empty()) ++out.failures;
    return out;
}

std::string results_csv(const RunOutput& output) {
    std::string csv = "spec_id,family,loss,mask,train_year,params,std_errs,S_" +
                      std::to_string(output.year_a) + ",S_" + std::to_string(output.year_b) +
                      ",S_mean,BIC,BIC_textbook,log_MSE,rank,error\n";
    for (const auto& r : output.reports) {
        const auto names = r.spec.param_names();
        const CalibrationResult& fit = r.train_year == r.year_b ? r.fit_b : r.fit_a;
        csv += std::to_string(r.spec.spec_id);
        csv += ',';
        csv += family_name(r.spec.family);
        csv += ',';
        csv += loss_name(r.spec.loss);
        csv += ',';
        csv += r.spec.mask_string();
        csv += ',';
        csv += r.error.empty() ? std::to_string(r.train_year) : "";
        csv += ',';
        csv += r.error.empty() ? join_named(names, fit.params) : "";
        csv += ',';
        csv += r.error.empty() ? join_named(names, fit.std_errors) : "";
        csv += ',';
        csv += fmt_double(r.s_year_a);
        csv += ',';
        csv += fmt_double(r.s_year_b);
        csv += ',';
        csv += fmt_double(r.s_mean);
        csv += ',';
        csv += fmt_double(r.bic);
        csv += ',';
        csv += fmt_double(r.bic_textbook);
        csv += ',';
        csv += fmt_double(r.log_mse);
        csv += ',';
        csv += std::to_string(r.rank);
        csv += ',';
        std::string err = r.error; // free text; keep the row well-formed
        for (auto& ch : err)
            if (ch == ',' || ch == '\r' || ch == '\n') ch = ' ';
        csv += err;
        csv += '\n';
    }
    return csv;
}

namespace {

nlohmann::json fit_to_json(const CalibrationResult& fit, const std::vector<std::string>& names) {
    nlohmann::json params = nlohmann::json::object();
    nlohmann::json errs = nlohmann::json::object();
    for (std::size_t i = 0; i < names.size(); ++i) {
        params[names[i]] = i < fit.params.size() ? fit.params[i]
                                                 : std::numeric_limits<double>::quiet_NaN();
        errs[names[i]] = i < fit.std_errors.size() ? fit.std_errors[i]
                                                   : std::numeric_limits<double>::quiet_NaN();
    }
    return nlohmann::json{{"training_year", fit.training_year},
                          {"params", std::move(params)},
                          {"std_errors", std::move(errs)},
                          {"final_loss", fit.final_loss},
                          {"log_likelihood", fit.log_likelihood},
                          {"iterations", fit.iterations},
                          {"converged", fit.converged},
                          {"grad_inf_norm", fit.grad_inf_norm},
                          {"warnings", fit.warnings}};
}

} // namespace

nlohmann::json report_to_json(const EvaluationReport& r) {
    const auto names = r.spec.param_names();
    nlohmann::json j{{"spec_id", r.spec.spec_id},
                     {"family", family_name(r.spec.family)},
                     {"loss", loss_name(r.spec.loss)},
                     {"mask", r.spec.mask_string()},
                     {"rank", r.rank}};
    if (!r.error.empty()) {
        j["error"] = r.error;
        return j;
    }
    j["s"] = {{"S_" + std::to_string(r.year_a), r.s_year_a},
              {"S_" + std::to_string(r.year_b), r.s_year_b},
              {"mean", r.s_mean}};
    j["pooled"] = {{"train_year", r.train_year},
                   {"bic", r.bic},
                   {"bic_textbook", r.bic_textbook},
                   {"log_mse", r.log_mse},
                   {"log_mse_excluded_destinations", r.log_mse_excluded}};
    j["folds"] = {fit_to_json(r.fit_a, names), fit_to_json(r.fit_b, names)};
    j["bic_per_fold"] = {{"train_" + std::to_string(r.year_a), r.bic_fold_a},
                         {"train_" + std::to_string(r.year_b), r.bic_fold_b}};
    return j;
}

void write_run_outputs(const RunOutput& output, const nlohmann::json& manifest,
                       const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "specs");
    {
        std::ofstream out(fs::path(out_dir) / "results.csv", std::ios::binary);
        out << results_csv(output);
    }
    for (const auto& r : output.reports) {
        char name[32];
        std::snprintf(name, sizeof(name), "spec_%03d.json", r.spec.spec_id);
        std::ofstream out(fs::path(out_dir) / "specs" / name);
        out << report_to_json(r).dump(2) << '\n';
    }
    {
        std::ofstream out(fs::path(out_dir) / "manifest.json");
        out << manifest.dump(2) << '\n';
    }
}

nlohmann::json make_manifest(const std::vector<std::string>& input_files,
                             const nlohmann::json& resolved_options) {
    nlohmann::json inputs = nlohmann::json::object();
    for (const auto& path : input_files) {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        inputs[path] = in.good() || !bytes.empty() ? fnv1a64_hex(bytes) : "unreadable";
    }
    const char* epoch = std::getenv("SOURCE_DATE_EPOCH");
    return nlohmann::json{{"tool_version", kToolVersion},
                          {"config_hash", fnv1a64_hex(resolved_options.dump())},
                          {"inputs", std::move(inputs)},
                          {"timestamp", epoch ? epoch : ""},
                          {"options", resolved_options}};
}

} // namespace odflow
