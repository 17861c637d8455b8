#include "odflow/export.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "odflow/util.hpp"

namespace odflow {

namespace {

const FlowObservation& observation_for_year(const Dataset& dataset, int year) {
    for (const auto& f : dataset.flows)
        if (f.year == year) return f;
    throw Error("no observation for year " + std::to_string(year));
}

} // namespace

ResultRow load_result_row(const std::string& results_csv_path, int spec_id) {
    std::ifstream in(results_csv_path);
    if (!in) throw Error("cannot open " + results_csv_path);
    std::string line;
    if (!std::getline(in, line)) throw Error(results_csv_path + " is empty");

    const std::vector<std::string> header = split(line, ',');
    auto column = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw Error(results_csv_path + " has no column " + name);
    };
    const std::size_t col_id = column("spec_id");
    const std::size_t col_year = column("train_year");
    const std::size_t col_params = column("params");
    const std::size_t col_error = column("error");

    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> fields = split(line, ',');
        long long id = 0;
        if (!parse_int(fields[col_id], id) || id != spec_id) continue;
        if (!fields[col_error].empty())
            throw UnknownSpec("spec " + std::to_string(spec_id) +
                              " failed during the run: " + fields[col_error]);

        ResultRow row;
        row.spec = spec_by_id(spec_id);
        long long year = 0;
        if (!parse_int(fields[col_year], year))
            throw Error("bad train_year for spec " + std::to_string(spec_id));
        row.train_year = static_cast<int>(year);

        const auto names = row.spec.param_names();
        std::map<std::string, double> by_name;
        for (const auto& part : split(fields[col_params], ';')) {
            const auto eq = part.find('=');
            if (eq == std::string::npos) continue;
            double v = 0.0;
            if (!parse_double(part.substr(eq + 1), v))
                throw Error("bad parameter value in results row for spec " +
                            std::to_string(spec_id));
            by_name[part.substr(0, eq)] = v;
        }
        for (const auto& name : names) {
            auto it = by_name.find(name);
            if (it == by_name.end())
                throw Error("results row for spec " + std::to_string(spec_id) +
                            " is missing parameter " + name);
            row.params.push_back(it->second);
        }
        return row;
    }
    throw UnknownSpec("spec " + std::to_string(spec_id) + " not found in " + results_csv_path);
}

FlowPrediction prediction_for_row(const ResultRow& row, const Dataset& dataset, int year) {
    const FlowObservation& obs = observation_for_year(dataset, year);
    auto model = make_flow_model(row.spec, dataset.system, year, obs.total_outflow());
    FlowPrediction pred = model->predict(row.params);
    pred.year = year;
    return pred;
}

void export_geojson(const Dataset& dataset, int year, const FlowPrediction& prediction,
                    const std::string& boundaries_path, const std::string& out_path,
                    const std::string& code_property, const nlohmann::json* manifest) {
    using nlohmann::json;
    std::ifstream in(boundaries_path);
    if (!in) throw MissingBoundaries("cannot open boundaries file " + boundaries_path);
    json boundaries = json::parse(in);
    if (!boundaries.contains("features"))
        throw MissingBoundaries(boundaries_path + " is not a feature collection");

    std::map<std::string, const json*> geometry_by_code;
    for (const auto& feature : boundaries.at("features")) {
        if (!feature.contains("properties")) continue;
        const auto& props = feature.at("properties");
        if (!props.contains(code_property)) continue;
        geometry_by_code[props.at(code_property).get<std::string>()] = &feature.at("geometry");
    }

    const FlowObservation& obs = observation_for_year(dataset, year);
    const TerritorySystem& system = dataset.system;

    json features = json::array();
    for (std::size_t j = 0; j < system.destination_count(); ++j) {
        const Territory& t = system.territories[system.territory_of_destination(j)];
        auto geom = geometry_by_code.find(t.code);
        if (geom == geometry_by_code.end())
            throw MissingBoundaries("no boundary feature for territory " + t.code);
        const double observed = obs.counts[j];
        const double modelled = prediction.values[j];
        features.push_back({{"type", "Feature"},
                            {"geometry", *geom->second},
                            {"properties",
                             {{"code", t.code},
                              {"name", t.name},
                              {"observed", observed},
                              {"modelled", modelled},
                              {"diff", modelled - observed},
                              {"excluded_from_logmse", observed <= 0.0}}}});
    }

    json collection{{"type", "FeatureCollection"}, {"features", std::move(features)}};
    if (manifest) collection["manifest"] = *manifest;
    std::ofstream out(out_path, std::ios::binary);
    out << collection.dump(2) << '\n';
}

void export_dispersion(const Dataset& dataset, int year, const FlowPrediction& prediction,
                       const std::string& out_path, const nlohmann::json* manifest) {
    const FlowObservation& obs = observation_for_year(dataset, year);
    const TerritorySystem& system = dataset.system;

    struct Row {
        std::string code;
        double observed;
        double modelled;
    };
    std::vector<Row> rows;
    for (std::size_t j = 0; j < system.destination_count(); ++j)
        rows.push_back({system.territories[system.territory_of_destination(j)].code,
                        obs.counts[j], prediction.values[j]});
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.observed != b.observed) return a.observed > b.observed;
        return a.code < b.code;
    });

    std::ofstream out(out_path, std::ios::binary);
    out << "code,observed,modelled\n";
    for (const auto& r : rows)
        out << r.code << ',' << fmt_double(r.observed) << ',' << fmt_double(r.modelled) << '\n';
    if (manifest) {
        std::ofstream side(out_path + ".manifest.json", std::ios::binary);
        side << manifest->dump(2) << '\n';
    }
}

} // namespace odflow
