#include "odflow/ingest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "odflow/util.hpp"

namespace odflow {

double per_capita_100k(double count, double population) {
    return count / population * 100000.0;
}

double bed_adjust(double admission_rate, double beds_per_capita) {
    if (!(beds_per_capita > 0.0))
        throw ZeroBeds("beds per capita must be positive, got " + fmt_double(beds_per_capita));
    return admission_rate / beds_per_capita;
}

double aggregate_weighted(const std::vector<double>& values,
                          const std::vector<double>& populations) {
    if (values.empty() || values.size() != populations.size())
        throw EmptyGroup("weighted aggregation over an empty or misaligned group");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        num += values[i] * populations[i];
        den += populations[i];
    }
    return num / den;
}

double aggregate_sum(const std::vector<double>& counts) {
    double s = 0.0;
    for (double c : counts) s += c;
    return s;
}

RawTerritory merge_origin(const RawTerritory& a, const RawTerritory& b,
                          const std::string& merged_code, const std::string& merged_name) {
    const RawTerritory& major = a.population >= b.population ? a : b;
    RawTerritory out;
    out.code = merged_code;
    out.name = merged_name;
    out.population = a.population + b.population;
    out.lon = major.lon;
    out.lat = major.lat;
    out.cost_source_code = major.cost_source_code.empty() ? major.code : major.cost_source_code;

    for (const auto& [year, ca] : a.by_year) {
        auto itb = b.by_year.find(year);
        if (itb == b.by_year.end())
            throw MissingTerritory("merge partner " + b.code + " has no covariates for year " +
                                   std::to_string(year));
        RawCovariates merged;
        for (std::size_t c = 0; c < merged.counts.size(); ++c)
            merged.counts[c] = ca.counts[c] + itb->second.counts[c];
        merged.gdhi_total = ca.gdhi_total + itb->second.gdhi_total;
        merged.beds_per_capita = aggregate_weighted(
            {ca.beds_per_capita, itb->second.beds_per_capita}, {a.population, b.population});
        out.by_year[year] = merged;
    }
    return out;
}

IngestFailure::IngestFailure(std::vector<IngestIssue> issues)
    : Error(issues.empty() ? "ingest failed"
                           : "ingest failed: " + issues.front().kind + ": " +
                                 issues.front().message +
                                 (issues.size() > 1
                                      ? " (+" + std::to_string(issues.size() - 1) + " more)"
                                      : "")),
      issues_(std::move(issues)) {}

namespace {

struct CsvRow {
    long line = 0;
    std::vector<std::string> fields;
};

struct CsvTable {
    std::string file;
    std::vector<std::string> header;
    std::vector<CsvRow> rows;

    long column_of(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<long>(i);
        return -1;
    }
};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    fields.push_back(cur);
    for (auto& f : fields) f = std::string(trim(f));
    return fields;
}

std::optional<CsvTable> read_csv(const std::string& path,
                                 const std::vector<std::string>& required_columns,
                                 std::vector<IngestIssue>& issues) {
    std::ifstream in(path);
    if (!in) {
        issues.push_back({"ParseError", path, 0, 0, "cannot open file"});
        return std::nullopt;
    }
    CsvTable table;
    table.file = path;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (table.header.empty()) {
            table.header = split_csv_line(line);
            continue;
        }
        CsvRow row;
        row.line = lineno;
        row.fields = split_csv_line(line);
        if (row.fields.size() != table.header.size()) {
            issues.push_back({"ParseError", path, lineno, 0,
                              "expected " + std::to_string(table.header.size()) +
                                  " fields, found " + std::to_string(row.fields.size())});
            continue;
        }
        table.rows.push_back(std::move(row));
    }
    if (table.header.empty()) {
        issues.push_back({"ParseError", path, 0, 0, "missing header row"});
        return std::nullopt;
    }
    bool columns_ok = true;
    for (const auto& col : required_columns) {
        if (table.column_of(col) < 0) {
            issues.push_back({"MissingColumn", path, 1, 0, "column '" + col + "' not found"});
            columns_ok = false;
        }
    }
    if (!columns_ok) return std::nullopt;
    return table;
}

struct FieldReader {
    const CsvTable& table;
    std::vector<IngestIssue>& issues;

    std::string str(const CsvRow& row, const char* col) const {
        return row.fields[static_cast<std::size_t>(table.column_of(col))];
    }

    std::optional<double> num(const CsvRow& row, const char* col) const {
        const long c = table.column_of(col);
        double v = 0.0;
        if (!parse_double(row.fields[static_cast<std::size_t>(c)], v)) {
            issues.push_back({"ParseError", table.file, row.line, c + 1,
                              "cannot parse '" + row.fields[static_cast<std::size_t>(c)] +
                                  "' as a number in column " + col});
            return std::nullopt;
        }
        return v;
    }

    std::optional<long long> integer(const CsvRow& row, const char* col) const {
        const long c = table.column_of(col);
        long long v = 0;
        if (!parse_int(row.fields[static_cast<std::size_t>(c)], v)) {
            issues.push_back({"ParseError", table.file, row.line, c + 1,
                              "cannot parse '" + row.fields[static_cast<std::size_t>(c)] +
                                  "' as an integer in column " + col});
            return std::nullopt;
        }
        return v;
    }
};

} // namespace

Dataset load_dataset(const IngestPaths& paths, const IngestConfig& config) {
    std::vector<IngestIssue> issues;
    Dataset dataset;

    auto territories_csv =
        read_csv(paths.territories, {"code", "name", "lon", "lat", "population", "year"}, issues);
    auto covariates_csv = read_csv(paths.covariates,
                                   {"code", "year", "misuse_admissions", "poisoning_admissions",
                                    "police_fte", "knife_crimes", "gdhi_total", "beds_per_capita"},
                                   issues);
    auto costs_csv =
        read_csv(paths.costs, {"origin_code", "dest_code", "travel_time_min", "distance_km"},
                 issues);
    auto flows_csv = read_csv(paths.flows, {"year", "dest_code", "lines"}, issues);

    std::map<std::string, std::string> county_to_territory;
    if (!paths.mapping.empty()) {
        auto mapping_csv = read_csv(paths.mapping, {"county_code", "police_code"}, issues);
        if (mapping_csv) {
            FieldReader rd{*mapping_csv, issues};
            for (const auto& row : mapping_csv->rows) {
                const std::string county = rd.str(row, "county_code");
                const std::string police = rd.str(row, "police_code");
                auto [it, inserted] = county_to_territory.emplace(county, police);
                if (!inserted && it->second != police)
                    issues.push_back({"ParseError", mapping_csv->file, row.line, 0,
                                      "county " + county + " mapped to both " + it->second +
                                          " and " + police});
            }
        }
    }

    if (!territories_csv || !covariates_csv || !costs_csv || !flows_csv)
        throw IngestFailure(std::move(issues));

    // -- territories: one logical territory per code; repeated year rows
    //    must agree field for field.
    std::map<std::string, RawTerritory> raw;
    {
        FieldReader rd{*territories_csv, issues};
        std::set<std::pair<std::string, long long>> seen;
        for (const auto& row : territories_csv->rows) {
            const std::string code = rd.str(row, "code");
            const auto lon = rd.num(row, "lon");
            const auto lat = rd.num(row, "lat");
            const auto pop = rd.num(row, "population");
            const auto year = rd.integer(row, "year");
            if (!lon || !lat || !pop || !year) continue;
            if (!seen.insert({code, *year}).second) {
                issues.push_back({"DuplicateTerritory", territories_csv->file, row.line, 0,
                                  "territory " + code + " listed twice for year " +
                                      std::to_string(*year)});
                continue;
            }
            if (!(*pop > 0.0)) {
                issues.push_back({"NonPositivePopulation", territories_csv->file, row.line, 0,
                                  "territory " + code + " population " + fmt_double(*pop)});
                continue;
            }
            auto it = raw.find(code);
            if (it == raw.end()) {
                RawTerritory t;
                t.code = code;
                t.name = rd.str(row, "name");
                t.lon = *lon;
                t.lat = *lat;
                t.population = *pop;
                t.cost_source_code = code;
                raw.emplace(code, std::move(t));
            } else if (it->second.name != rd.str(row, "name") || it->second.lon != *lon ||
                       it->second.lat != *lat || it->second.population != *pop) {
                issues.push_back({"InconsistentTerritory", territories_csv->file, row.line, 0,
                                  "territory " + code +
                                      " differs between year rows; populations and points are a "
                                      "single vintage"});
            }
        }
    }

    // -- covariates: resolve county codes, aggregate additively to
    //    territory level; bed density must be uniform within a group.
    {
        FieldReader rd{*covariates_csv, issues};
        std::map<std::pair<std::string, int>, std::string> beds_origin; // first contributing code
        for (const auto& row : covariates_csv->rows) {
            const std::string code = rd.str(row, "code");
            const auto year = rd.integer(row, "year");
            const auto misuse = rd.num(row, "misuse_admissions");
            const auto poisoning = rd.num(row, "poisoning_admissions");
            const auto police = rd.num(row, "police_fte");
            const auto knife = rd.num(row, "knife_crimes");
            const auto gdhi = rd.num(row, "gdhi_total");
            const auto beds = rd.num(row, "beds_per_capita");
            if (!year || !misuse || !poisoning || !police || !knife || !gdhi || !beds) continue;

            std::string territory = code;
            if (auto it = county_to_territory.find(code); it != county_to_territory.end())
                territory = it->second;
            auto traw = raw.find(territory);
            if (traw == raw.end()) {
                issues.push_back({"UnmappedCounty", covariates_csv->file, row.line, 0,
                                  "code " + code + " resolves to no known territory"});
                continue;
            }

            bool negative = false;
            for (double v : {*misuse, *poisoning, *police, *knife, *gdhi}) {
                if (v < 0.0) negative = true;
            }
            if (negative) {
                issues.push_back({"ParseError", covariates_csv->file, row.line, 0,
                                  "negative raw covariate value for " + code});
                continue;
            }

            auto& slot = traw->second.by_year[static_cast<int>(*year)];
            slot.counts[0] += *misuse;
            slot.counts[1] += *poisoning;
            slot.counts[2] += *police;
            slot.counts[3] += *knife;
            slot.gdhi_total += *gdhi;

            auto key = std::make_pair(territory, static_cast<int>(*year));
            if (auto first = beds_origin.find(key); first == beds_origin.end()) {
                slot.beds_per_capita = *beds;
                beds_origin.emplace(key, code);
            } else if (slot.beds_per_capita != *beds) {
                issues.push_back({"InconsistentValue", covariates_csv->file, row.line, 0,
                                  "beds_per_capita for " + territory + " year " +
                                      std::to_string(*year) + " differs between " + first->second +
                                      " and " + code +
                                      "; bed density is a territory-level statistic"});
            }
        }
    }

    // -- origin merge
    if (config.merge) {
        const auto& m = *config.merge;
        auto ita = raw.find(m.code_a);
        auto itb = raw.find(m.code_b);
        if (ita == raw.end() || itb == raw.end()) {
            issues.push_back({"MissingTerritory", paths.territories, 0, 0,
                              "merge members " + m.code_a + "+" + m.code_b +
                                  " not both present"});
        } else if (raw.count(m.merged_code) && m.merged_code != m.code_a &&
                   m.merged_code != m.code_b) {
            issues.push_back({"DuplicateTerritory", paths.territories, 0, 0,
                              "merged code " + m.merged_code + " already exists"});
        } else {
            try {
                RawTerritory merged = merge_origin(ita->second, itb->second, m.merged_code,
                                                   m.merged_name);
                raw.erase(m.code_a);
                raw.erase(m.code_b);
                raw.emplace(merged.code, std::move(merged));
            } catch (const Error& e) {
                issues.push_back({"MissingTerritory", paths.covariates, 0, 0, e.what()});
            }
        }
    }

    if (!raw.count(config.origin_code))
        issues.push_back({"UnknownOrigin", paths.territories, 0, 0,
                          "origin territory " + config.origin_code + " not found"});

    // -- flows: integral nonnegative counts per (year, destination)
    std::map<int, std::map<std::string, double>> flows_by_year;
    {
        FieldReader rd{*flows_csv, issues};
        std::set<std::pair<long long, std::string>> seen;
        for (const auto& row : flows_csv->rows) {
            const auto year = rd.integer(row, "year");
            const std::string dest = rd.str(row, "dest_code");
            const auto lines = rd.integer(row, "lines");
            if (!year || !lines) continue;
            if (*lines < 0) {
                issues.push_back({"NegativeCount", flows_csv->file, row.line, 0,
                                  "negative line count for " + dest});
                continue;
            }
            if (!raw.count(dest)) {
                issues.push_back({"UnmappedCounty", flows_csv->file, row.line, 0,
                                  "flow destination " + dest + " is not a known territory"});
                continue;
            }
            if (dest == config.origin_code) {
                issues.push_back({"OriginAsDestination", flows_csv->file, row.line, 0,
                                  "flow destination equals the origin " + dest});
                continue;
            }
            if (!seen.insert({*year, dest}).second) {
                issues.push_back({"DuplicateFlowRow", flows_csv->file, row.line, 0,
                                  "flow for " + dest + " in year " + std::to_string(*year) +
                                      " listed twice"});
                continue;
            }
            flows_by_year[static_cast<int>(*year)][dest] = static_cast<double>(*lines);
        }
    }

    // -- covariate year completeness: flow years are mandatory everywhere;
    //    other years are kept only when complete.
    std::set<int> flow_years;
    for (const auto& [year, _] : flows_by_year) flow_years.insert(year);
    std::set<int> all_years;
    for (const auto& [_, t] : raw)
        for (const auto& [year, __] : t.by_year) all_years.insert(year);
    std::set<int> kept_years;
    for (int year : all_years) {
        bool complete = true;
        for (const auto& [code, t] : raw) {
            if (!t.by_year.count(year)) {
                complete = false;
                if (flow_years.count(year))
                    issues.push_back({"MissingCovariate", paths.covariates, 0, 0,
                                      "territory " + code + " has no covariates for flow year " +
                                          std::to_string(year)});
            }
        }
        if (complete) {
            kept_years.insert(year);
        } else if (!flow_years.count(year)) {
            dataset.notes.push_back({"ExcludedYear", paths.covariates, 0, 0,
                                     "year " + std::to_string(year) +
                                         " dropped: covariates incomplete and no flows use it"});
        }
    }
    for (int year : flow_years)
        if (!all_years.count(year))
            issues.push_back({"MissingCovariate", paths.covariates, 0, 0,
                              "no covariates at all for flow year " + std::to_string(year)});

    if (!issues.empty()) throw IngestFailure(std::move(issues));

    // -- assemble the system (codes sorted lexicographically by std::map)
    TerritorySystem& system = dataset.system;
    std::map<std::string, std::size_t> index_of;
    for (const auto& [code, t] : raw) {
        index_of.emplace(code, system.territories.size());
        system.territories.push_back({t.code, t.name, t.population, t.lon, t.lat});
    }
    system.origin_index = index_of.at(config.origin_code);

    // cost matrices, read through each territory's cost source code
    {
        FieldReader rd{*costs_csv, issues};
        std::map<std::pair<std::string, std::string>, std::pair<double, double>> pairs;
        std::set<std::string> sources;
        for (const auto& [code, t] : raw) sources.insert(t.cost_source_code);
        for (const auto& row : costs_csv->rows) {
            const std::string a = rd.str(row, "origin_code");
            const std::string b = rd.str(row, "dest_code");
            const auto tt = rd.num(row, "travel_time_min");
            const auto d = rd.num(row, "distance_km");
            if (!tt || !d) continue;
            if (!sources.count(a) || !sources.count(b)) {
                dataset.notes.push_back({"ExcludedCostRow", costs_csv->file, row.line, 0,
                                         "pair " + a + "->" + b +
                                             " references no retained territory"});
                continue;
            }
            if (a == b) {
                dataset.notes.push_back({"ExcludedCostRow", costs_csv->file, row.line, 0,
                                         "diagonal pair " + a + " ignored"});
                continue;
            }
            if (!pairs.emplace(std::make_pair(a, b), std::make_pair(*tt, *d)).second)
                issues.push_back({"ParseError", costs_csv->file, row.line, 0,
                                  "cost pair " + a + "->" + b + " listed twice"});
        }

        const std::size_t n = system.size();
        system.costs.travel_time = Mat(n, n);
        system.costs.distance = Mat(n, n);
        for (const auto& [code_i, i] : index_of) {
            for (const auto& [code_j, j] : index_of) {
                if (i == j) continue;
                const auto key = std::make_pair(raw.at(code_i).cost_source_code,
                                                raw.at(code_j).cost_source_code);
                auto it = pairs.find(key);
                if (it == pairs.end()) {
                    issues.push_back({"MissingCost", costs_csv->file, 0, 0,
                                      "no cost entry for " + key.first + "->" + key.second});
                    continue;
                }
                system.costs.travel_time(i, j) = it->second.first;
                system.costs.distance(i, j) = it->second.second;
            }
        }
    }

    // normalized covariates per kept year
    for (int year : kept_years) {
        CovariateSet cov;
        cov.year = year;
        for (auto& v : cov.values) v.resize(system.size());
        for (const auto& [code, t] : raw) {
            const std::size_t i = index_of.at(code);
            const RawCovariates& rc = t.by_year.at(year);
            try {
                double misuse = per_capita_100k(rc.counts[0], t.population);
                double poisoning = per_capita_100k(rc.counts[1], t.population);
                if (config.bed_adjust != BedAdjustMode::None)
                    misuse = bed_adjust(misuse, rc.beds_per_capita);
                if (config.bed_adjust == BedAdjustMode::Both)
                    poisoning = bed_adjust(poisoning, rc.beds_per_capita);
                cov.values[0][i] = misuse;
                cov.values[1][i] = poisoning;
                cov.values[2][i] = per_capita_100k(rc.counts[2], t.population);
                cov.values[3][i] = per_capita_100k(rc.counts[3], t.population);
                cov.values[4][i] = rc.gdhi_total / t.population;
            } catch (const ZeroBeds& e) {
                issues.push_back({"ZeroBeds", paths.covariates, 0, 0,
                                  "territory " + code + " year " + std::to_string(year) + ": " +
                                      e.what()});
            }
        }
        system.covariates.push_back(std::move(cov));
    }

    // flow observations over the destination ordering, absent rows zero
    for (const auto& [year, by_dest] : flows_by_year) {
        FlowObservation obs;
        obs.year = year;
        obs.counts.assign(system.destination_count(), 0.0);
        for (const auto& [dest, count] : by_dest)
            for (std::size_t j = 0; j < system.destination_count(); ++j)
                if (system.territories[system.territory_of_destination(j)].code == dest)
                    obs.counts[j] = count;
        dataset.flows.push_back(std::move(obs));
    }

    if (!issues.empty()) throw IngestFailure(std::move(issues));

    for (const auto& v : validate_system(system, dataset.flows))
        issues.push_back({issue_kind_name(v.kind), "", 0, 0,
                          v.detail + (v.territory.empty() ? "" : " (territory " + v.territory + ")") +
                              (v.covariate.empty() ? "" : " (covariate " + v.covariate + ")")});
    if (!issues.empty()) throw IngestFailure(std::move(issues));

    return dataset;
}

// ---- bundle serialization ----

namespace {

using nlohmann::json;

json system_to_json(const TerritorySystem& system) {
    json territories = json::array();
    for (const auto& t : system.territories)
        territories.push_back({{"code", t.code},
                               {"name", t.name},
                               {"lon", t.lon},
                               {"lat", t.lat},
                               {"population", t.population}});
    json covariates = json::array();
    for (const auto& c : system.covariates) {
        json entry{{"year", c.year}};
        for (std::size_t i = 0; i < kCovariateCount; ++i)
            entry[covariate_name(static_cast<Covariate>(i))] = c.values[i];
        covariates.push_back(std::move(entry));
    }
    auto matrix_to_json = [](const Mat& m) {
        json rows = json::array();
        for (std::size_t i = 0; i < m.rows; ++i) {
            json row = json::array();
            for (std::size_t j = 0; j < m.cols; ++j) row.push_back(m(i, j));
            rows.push_back(std::move(row));
        }
        return rows;
    };
    return json{{"origin_index", system.origin_index},
                {"territories", std::move(territories)},
                {"covariates", std::move(covariates)},
                {"costs",
                 {{"travel_time", matrix_to_json(system.costs.travel_time)},
                  {"distance", matrix_to_json(system.costs.distance)}}}};
}

TerritorySystem system_from_json(const json& j) {
    TerritorySystem system;
    system.origin_index = j.at("origin_index").get<std::size_t>();
    for (const auto& t : j.at("territories"))
        system.territories.push_back({t.at("code").get<std::string>(),
                                      t.at("name").get<std::string>(),
                                      t.at("population").get<double>(),
                                      t.at("lon").get<double>(), t.at("lat").get<double>()});
    for (const auto& c : j.at("covariates")) {
        CovariateSet cov;
        cov.year = c.at("year").get<int>();
        for (std::size_t i = 0; i < kCovariateCount; ++i)
            cov.values[i] =
                c.at(covariate_name(static_cast<Covariate>(i))).get<std::vector<double>>();
        system.covariates.push_back(std::move(cov));
    }
    auto matrix_from_json = [](const json& rows) {
        Mat m(rows.size(), rows.empty() ? 0 : rows.front().size());
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t jx = 0; jx < m.cols; ++jx) m(i, jx) = rows[i][jx].get<double>();
        return m;
    };
    system.costs.travel_time = matrix_from_json(j.at("costs").at("travel_time"));
    system.costs.distance = matrix_from_json(j.at("costs").at("distance"));
    return system;
}

} // namespace

void write_bundle(const Dataset& dataset, const std::string& directory) {
    namespace fs = std::filesystem;
    fs::create_directories(directory);
    {
        std::ofstream out(fs::path(directory) / "system.json");
        out << system_to_json(dataset.system).dump(2) << '\n';
    }
    {
        json observations = json::array();
        for (const auto& f : dataset.flows)
            observations.push_back({{"year", f.year}, {"counts", f.counts}});
        std::ofstream out(fs::path(directory) / "flows.json");
        out << json{{"observations", std::move(observations)}}.dump(2) << '\n';
    }
}

Dataset read_bundle(const std::string& directory) {
    namespace fs = std::filesystem;
    auto load = [](const fs::path& p) {
        std::ifstream in(p);
        if (!in) throw Error("cannot open " + p.string());
        return json::parse(in);
    };
    Dataset dataset;
    dataset.system = system_from_json(load(fs::path(directory) / "system.json"));
    const json flows_json = load(fs::path(directory) / "flows.json");
    for (const auto& o : flows_json.at("observations")) {
        FlowObservation obs;
        obs.year = o.at("year").get<int>();
        obs.counts = o.at("counts").get<std::vector<double>>();
        dataset.flows.push_back(std::move(obs));
    }
    std::vector<IngestIssue> issues;
    for (const auto& v : validate_system(dataset.system, dataset.flows))
        issues.push_back({issue_kind_name(v.kind), directory, 0, 0, v.detail});
    if (!issues.empty()) throw IngestFailure(std::move(issues));
    return dataset;
}

} // namespace odflow
