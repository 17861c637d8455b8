#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "odflow/domain.hpp"

namespace odflow::testhelp {

// Hand-built system: territory i gets code T01, T02, ... (input order is
// lexicographic order), constant positive covariates unless given.
inline TerritorySystem make_system(const std::vector<double>& populations,
                                   const std::vector<std::vector<double>>& distance,
                                   std::size_t origin = 0,
                                   const std::vector<std::array<double, 5>>& covs = {},
                                   const std::vector<int>& years = {2019, 2020},
                                   double minutes_per_km = 1.0) {
    const std::size_t n = populations.size();
    TerritorySystem system;
    system.origin_index = origin;
    for (std::size_t i = 0; i < n; ++i) {
        char code[32];
        std::snprintf(code, sizeof(code), "T%02zu", i + 1);
        system.territories.push_back(
            {code, std::string("Place ") + code, populations[i], 0.0, 0.0});
    }
    system.costs.distance = Mat(n, n);
    system.costs.travel_time = Mat(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            system.costs.distance(i, j) = distance[i][j];
            system.costs.travel_time(i, j) = distance[i][j] * minutes_per_km;
        }
    for (int year : years) {
        CovariateSet cov;
        cov.year = year;
        for (std::size_t c = 0; c < kCovariateCount; ++c) {
            cov.values[c].resize(n);
            for (std::size_t i = 0; i < n; ++i)
                cov.values[c][i] = covs.empty() ? 10.0 * (static_cast<double>(c) + 1.0)
                                                : covs[i][c];
        }
        system.covariates.push_back(std::move(cov));
    }
    return system;
}

// Symmetric distance matrix from a list of planar points.
inline std::vector<std::vector<double>> planar_distances(
    const std::vector<std::pair<double, double>>& points) {
    const std::size_t n = points.size();
    std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double dx = points[i].first - points[j].first;
            const double dy = points[i].second - points[j].second;
            d[i][j] = std::sqrt(dx * dx + dy * dy);
        }
    return d;
}

inline FlowObservation make_flows(int year, std::vector<double> counts) {
    FlowObservation obs;
    obs.year = year;
    obs.counts = std::move(counts);
    return obs;
}

// Three territories, origin first: distances 10 (to T02) and 20 (to T03).
inline TerritorySystem tiny_system() {
    return make_system({1000.0, 2000.0, 3000.0},
                       {{0.0, 10.0, 20.0}, {10.0, 0.0, 15.0}, {20.0, 15.0, 0.0}}, 0,
                       {{{10.0, 5.0, 100.0, 50.0, 15000.0}},
                        {{20.0, 6.0, 110.0, 60.0, 16000.0}},
                        {{30.0, 7.0, 120.0, 70.0, 17000.0}}});
}

} // namespace odflow::testhelp
