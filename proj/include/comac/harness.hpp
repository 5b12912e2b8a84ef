#pragma once

#include "comac/adapter.hpp"
#include "comac/config.hpp"
#include "comac/stream.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace comac::harness {

/// Output directory used when neither --out nor output_dir is given.
inline constexpr const char* kOutDirEnv = "COMAC_OUT_DIR";

/// Everything a run needs that depends only on (config, seed): the seeded
/// world, its segments and the pretrained models. Shared by all variants of
/// that seed, which is what makes the comparison paired.
struct SeedContext {
    std::uint64_t seed = 0;
    stream::WorldSpec world;
    std::vector<stream::SegmentSpec> segments;
    stream::PretrainResult pretrained;
    std::uint64_t stream_seed = 0;
    std::uint64_t init_seed = 0;
};

SeedContext prepare_seed(const config::ExperimentConfig& cfg, std::uint64_t seed);

struct RunRecord {
    adapter::Variant variant = adapter::Variant::comac;
    std::uint64_t seed = 0;
    std::optional<adapter::RunResult> result;  // empty on failure
    std::string error;
};

/// One (variant, seed) run. Failures (divergence etc.) are captured in the
/// record rather than thrown. Writes a JSON-lines trace when trace_path is set.
RunRecord run_variant(const config::ExperimentConfig& cfg, const SeedContext& ctx, adapter::Variant variant,
                      const std::optional<std::filesystem::path>& trace_path = std::nullopt);

/// Same as run_variant but with an explicit adapter config (variant taken from it).
RunRecord run_with(const config::ExperimentConfig& cfg, const SeedContext& ctx, const adapter::AdapterConfig& acfg,
                   const std::optional<std::filesystem::path>& trace_path = std::nullopt);

struct ExperimentResult {
    std::vector<SeedContext> seeds;
    std::vector<RunRecord> runs;  // ordered variant-major, then seed
};

using Logger = std::function<void(const std::string&)>;

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

std::vector<SeedContext> prepare_seeds(const config::ExperimentConfig& cfg, const Logger& log = {});

/// Pretrain once per seed, then every (variant, seed) pair on that seed's stream.
ExperimentResult run_experiment(const config::ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                const Logger& log = {});

/// summary.csv: variant,seed,segment,accuracy,miou with one row per segment
/// plus "overall" for every successful run. Deterministic formatting.
std::string summary_csv(const ExperimentResult& r);
/// summary.json: per-run values, per-variant means over seeds, failures and
/// pretraining accuracies.
std::string summary_json(const config::ExperimentConfig& cfg, const ExperimentResult& r);
void write_summaries(const config::ExperimentConfig& cfg, const ExperimentResult& r, const std::filesystem::path& out_dir);

/// Mean over successful seeds of a metric picked from each run.
struct MeanMetric {
    double accuracy = 0.0;
    double miou = 0.0;
    int n = 0;
};
MeanMetric mean_overall(const ExperimentResult& r, adapter::Variant v);
MeanMetric mean_segment(const ExperimentResult& r, adapter::Variant v, std::size_t segment);

struct GridCell {
    int n_aug_2d = 0;
    int n_aug_3d = 0;
    MeanMetric metric;
};

struct SensitivityRow {
    std::string parameter;
    double value = 0.0;
    MeanMetric metric;
};

struct AblationResult {
    std::vector<int> counts_2d;
    std::vector<int> counts_3d;
    std::vector<GridCell> grid;  // row-major over counts_3d x counts_2d
    std::vector<SensitivityRow> sensitivity;
};

/// Augmentation grid and one-at-a-time sensitivity sweeps of the comac
/// variant. ConfigError if no axis is declared.
AblationResult run_ablation(const config::ExperimentConfig& cfg, const Logger& log = {});
/// Table-shaped grid: rows are 3D counts, columns 2D counts, plus averages.
std::string grid_csv(const AblationResult& a);
std::string sensitivity_csv(const AblationResult& a);
void write_ablation(const AblationResult& a, const std::filesystem::path& out_dir);

/// Reads summary.csv (and the ablation CSVs when present) from `dir` and
/// writes report.md plus miou_by_segment.svg.
void write_report(const std::filesystem::path& dir);

/// Resolution order: explicit flag, then the environment variable, then the config.
std::filesystem::path resolve_out_dir(const std::optional<std::string>& flag, const config::ExperimentConfig& cfg);

}  // namespace comac::harness
