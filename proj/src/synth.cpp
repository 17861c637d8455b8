#include "odflow/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "odflow/errors.hpp"
#include "odflow/util.hpp"

namespace odflow {

double Rng::uniform() {
    // 53 random bits -> [0, 1)
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
}

long long Rng::poisson(double mean) {
    if (!(mean > 0.0)) return 0;
    // Superposition keeps inversion numerically safe for large means.
    if (mean > 500.0) return poisson(mean / 2.0) + poisson(mean - mean / 2.0);
    const double u = uniform();
    double p = std::exp(-mean);
    double cdf = p;
    long long k = 0;
    while (u >= cdf && k < 100000) {
        ++k;
        p *= mean / static_cast<double>(k);
        cdf += p;
    }
    return k;
}

std::uint64_t Rng::derive_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed ^ (salt * 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

TerritorySystem generate_system(const SynthConfig& config) {
    if (config.territory_count < 2) throw Error("generate_system needs at least 2 territories");
    if (config.origin_index >= config.territory_count)
        throw Error("origin index out of range");

    Rng rng(config.seed);
    const std::size_t n = config.territory_count;

    TerritorySystem system;
    system.origin_index = config.origin_index;
    system.territories.reserve(n);
    std::vector<std::pair<double, double>> points(n);
    for (std::size_t i = 0; i < n; ++i) {
        char code[24];
        std::snprintf(code, sizeof(code), "T%03zu", i + 1);
        Territory t;
        t.code = code;
        t.name = std::string("Territory ") + (code + 1);
        points[i] = {rng.uniform(0.0, config.box_km), rng.uniform(0.0, config.box_km)};
        t.lon = points[i].first;
        t.lat = points[i].second;
        t.population = rng.log_uniform(config.population_range.first,
                                       config.population_range.second);
        system.territories.push_back(std::move(t));
    }

    system.costs.distance = Mat(n, n);
    system.costs.travel_time = Mat(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double dx = points[i].first - points[j].first;
            const double dy = points[i].second - points[j].second;
            const double d = std::sqrt(dx * dx + dy * dy);
            system.costs.distance(i, j) = d;
            system.costs.travel_time(i, j) = d * config.minutes_per_km;
        }
    }

    // One covariate draw shared by every year: identical yearly flows then
    // make the two cross-validation folds exactly symmetric.
    CovariateSet cov;
    for (std::size_t c = 0; c < kCovariateCount; ++c) cov.values[c].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c + 1 < kCovariateCount; ++c)
            cov.values[c][i] = rng.log_uniform(config.rate_range.first, config.rate_range.second);
        cov.values[static_cast<std::size_t>(Covariate::Gdhi)][i] =
            rng.uniform(config.gdhi_range.first, config.gdhi_range.second);
    }
    for (int year : config.years) {
        cov.year = year;
        system.covariates.push_back(cov);
    }
    return system;
}

FlowObservation generate_flows(const ModelSpec& spec, const std::vector<double>& true_params,
                               const TerritorySystem& system, int year, double total_outflow,
                               NoiseKind noise, std::uint64_t seed) {
    auto model = make_flow_model(spec, system, year, total_outflow);
    const FlowPrediction expected = model->predict(true_params);

    FlowObservation obs;
    obs.year = year;
    obs.counts.resize(expected.values.size());
    if (noise == NoiseKind::None) {
        for (std::size_t j = 0; j < obs.counts.size(); ++j)
            obs.counts[j] = std::round(expected.values[j] * 1e6) / 1e6;
    } else {
        Rng rng(seed);
        for (std::size_t j = 0; j < obs.counts.size(); ++j)
            obs.counts[j] = static_cast<double>(rng.poisson(expected.values[j]));
    }
    return obs;
}

FlowPrediction brute_force_radiation(const TerritorySystem& system, double rho, double r,
                                     double total_outflow) {
    const std::size_t n = system.size();
    const std::size_t origin = system.origin_index;

    // Everything below is evaluated directly from the written model with
    // plain nested loops; no shared subcomputation with radiation_flows.
    // Extended precision keeps the direct difference of powers accurate.
    auto absorption = [&](std::size_t dest) -> long double {
        long double between = 0.0L;
        const double d_dest = system.costs.distance(origin, dest);
        for (std::size_t k = 0; k < n; ++k) {
            if (k == origin || k == dest) continue;
            if (system.costs.distance(origin, k) < d_dest)
                between += static_cast<long double>(system.territories[k].population);
        }
        const long double n_i = static_cast<long double>(rho) * system.territories[origin].population;
        const long double n_j = static_cast<long double>(rho) * system.territories[dest].population;
        const long double n_ij = static_cast<long double>(rho) * between;
        const long double rr = static_cast<long double>(r);
        return (std::pow(n_i + n_j + n_ij, rr) - std::pow(n_i + n_ij, rr)) *
               (std::pow(n_i, rr) + 1.0L) /
               ((std::pow(n_i + n_ij, rr) + 1.0L) * (std::pow(n_i + n_j + n_ij, rr) + 1.0L));
    };

    FlowPrediction out;
    out.family = ModelFamily::Radiation;
    out.values.reserve(system.destination_count());
    for (std::size_t dest = 0; dest < n; ++dest) {
        if (dest == origin) continue;
        long double denom = 0.0L;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == origin) continue;
            denom += absorption(k);
        }
        if (!(denom > 0.0L))
            throw DegenerateDenominator("all radiation absorption probabilities are zero");
        out.values.push_back(static_cast<double>(total_outflow * absorption(dest) / denom));
    }
    return out;
}

GridResult grid_search(const ModelSpec& spec, const TerritorySystem& system,
                       const FlowObservation& observation, const GridSpec& grid, double lambda) {
    if (grid.axes.empty()) throw Error("grid_search needs at least one axis");
    for (const auto& axis : grid.axes)
        if (axis.empty()) throw Error("grid_search axis is empty");

    auto model = make_flow_model(spec, system, observation.year, observation.total_outflow());

    GridResult best;
    best.best_loss = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> idx(grid.axes.size(), 0);
    std::vector<double> point(grid.axes.size());
    while (true) {
        for (std::size_t k = 0; k < idx.size(); ++k) point[k] = grid.axes[k][idx[k]];
        double loss = std::numeric_limits<double>::infinity();
        try {
            const FlowPrediction pred = model->predict(point);
            const LossValue lv = spec.loss == LossKind::Poisson
                                     ? poisson_loss(pred, observation, point, lambda)
                                     : gaussian_loss(pred, observation, point, lambda);
            loss = lv.total();
        } catch (const Error&) {
            // infeasible grid point
        }
        if (std::isfinite(loss) && loss < best.best_loss) {
            best.best_loss = loss;
            best.best_point = point;
        }
        // Advance the odometer, last axis fastest.
        std::size_t k = idx.size();
        while (k-- > 0) {
            if (++idx[k] < grid.axes[k].size()) break;
            idx[k] = 0;
            if (k == 0) {
                if (best.best_point.empty())
                    throw NonFiniteLoss("loss non-finite at every grid point");
                return best;
            }
        }
    }
}

void dump_dataset_csv(const TerritorySystem& system, const std::vector<FlowObservation>& flows,
                      const std::string& directory) {
    namespace fs = std::filesystem;
    fs::create_directories(directory);

    {
        std::ofstream out(fs::path(directory) / "territories.csv");
        out << "code,name,lon,lat,population,year\n";
        for (const auto& cov : system.covariates)
            for (const auto& t : system.territories)
                out << t.code << ',' << t.name << ',' << fmt_double(t.lon) << ','
                    << fmt_double(t.lat) << ',' << fmt_double(t.population) << ',' << cov.year
                    << '\n';
    }
    {
        // Raw counts/totals that normalize back to the stored covariate
        // values: count = rate * pop / 1e5 with unit bed density, and
        // gdhi_total = per-head gdhi * pop.
        std::ofstream out(fs::path(directory) / "covariates.csv");
        out << "code,year,misuse_admissions,poisoning_admissions,police_fte,knife_crimes,"
               "gdhi_total,beds_per_capita\n";
        for (const auto& cov : system.covariates) {
            for (std::size_t i = 0; i < system.size(); ++i) {
                const auto& t = system.territories[i];
                const double pop = t.population;
                out << t.code << ',' << cov.year;
                for (std::size_t c = 0; c + 1 < kCovariateCount; ++c)
                    out << ',' << fmt_double(cov.values[c][i] * pop / 1e5);
                out << ',' << fmt_double(cov.values[static_cast<std::size_t>(Covariate::Gdhi)][i] * pop);
                out << ",1\n";
            }
        }
    }
    {
        std::ofstream out(fs::path(directory) / "costs.csv");
        out << "origin_code,dest_code,travel_time_min,distance_km\n";
        for (std::size_t i = 0; i < system.size(); ++i)
            for (std::size_t j = 0; j < system.size(); ++j) {
                if (i == j) continue;
                out << system.territories[i].code << ',' << system.territories[j].code << ','
                    << fmt_double(system.costs.travel_time(i, j)) << ','
                    << fmt_double(system.costs.distance(i, j)) << '\n';
            }
    }
    {
        std::ofstream out(fs::path(directory) / "flows.csv");
        out << "year,dest_code,lines\n";
        for (const auto& f : flows)
            for (std::size_t j = 0; j < f.counts.size(); ++j)
                out << f.year << ','
                    << system.territories[system.territory_of_destination(j)].code << ','
                    << static_cast<long long>(std::llround(f.counts[j])) << '\n';
    }
}

} // namespace odflow
