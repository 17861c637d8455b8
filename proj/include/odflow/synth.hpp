#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "odflow/calibrate.hpp"
#include "odflow/domain.hpp"
#include "odflow/models.hpp"

namespace odflow {

// Seeded generator. Built on std::mt19937_64, whose output sequence is
// fixed by the standard; uniform and Poisson draws are implemented here
// directly (the standard library distributions are not portable across
// implementations). Bit-stable across platforms and releases.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    double log_uniform(double lo, double hi);
    long long poisson(double mean);
    std::uint64_t next_u64() { return engine_(); }

    // Deterministically derived child seed (e.g. per year).
    static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

  private:
    std::mt19937_64 engine_;
};

struct SynthConfig {
    std::size_t territory_count = 10;
    std::uint64_t seed = 1;
    std::vector<int> years = {2019, 2020};
    std::size_t origin_index = 0; // in code order
    double box_km = 300.0;        // representative points sampled in [0, box]^2
    double minutes_per_km = 1.2;  // travel time = distance * this factor
    std::pair<double, double> population_range = {5e4, 5e6};  // log-uniform
    std::pair<double, double> rate_range = {5.0, 500.0};      // log-uniform, count covariates
    std::pair<double, double> gdhi_range = {14000.0, 26000.0}; // uniform
};

// Deterministic pseudo-random system: positive populations and covariates,
// planar representative points, metric-consistent symmetric distances.
TerritorySystem generate_system(const SynthConfig& config);

enum class NoiseKind { None, Poisson };

// Flows from a family at known true parameters. noise=None returns the
// expected flows rounded to 6 decimals as real-valued pseudo-counts;
// noise=Poisson draws independent counts with those means.
FlowObservation generate_flows(const ModelSpec& spec, const std::vector<double>& true_params,
                               const TerritorySystem& system, int year, double total_outflow,
                               NoiseKind noise, std::uint64_t seed);

// Independent oracle for radiation_flows: direct nested-loop evaluation of
// the model as written, sharing no code with the implementation it checks.
FlowPrediction brute_force_radiation(const TerritorySystem& system, double rho, double r,
                                     double total_outflow);

struct GridSpec {
    // One axis of candidate values per free parameter, in natural
    // parameter order.
    std::vector<std::vector<double>> axes;
};

struct GridResult {
    std::vector<double> best_point;
    double best_loss = 0.0;
};

// Exhaustive loss evaluation over the grid; deterministic argmin with
// lexicographic tie-break (earlier grid point wins). Oracle for minimize.
GridResult grid_search(const ModelSpec& spec, const TerritorySystem& system,
                       const FlowObservation& observation, const GridSpec& grid, double lambda);

// Writes the dataset in the exact ingest CSV formats (territories.csv,
// covariates.csv, costs.csv, flows.csv) for round-trip and pipeline tests.
// Flow counts are rounded to integers to satisfy the file schema.
void dump_dataset_csv(const TerritorySystem& system, const std::vector<FlowObservation>& flows,
                      const std::string& directory);

} // namespace odflow
