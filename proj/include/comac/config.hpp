#pragma once

#include "comac/adapter.hpp"
#include "comac/stream.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace comac::config {

struct ModelOptions {
    std::vector<int> hidden{32};
    int feature_dim = 16;
};

struct PretrainSettings {
    int n_samples = 100;
    int epochs = 30;
    double lr = 0.05;
};

struct TraceOptions {
    bool enabled = true;
    bool centroids = true;
};

struct AblationAxes {
    std::vector<int> aug_2d_counts;
    std::vector<int> aug_3d_counts;
    std::vector<double> restore_prob;
    std::vector<double> confidence_threshold;
    std::vector<double> lambda_cts;

    bool has_aug_grid() const { return !aug_2d_counts.empty() || !aug_3d_counts.empty(); }
    bool has_sensitivity() const {
        return !restore_prob.empty() || !confidence_threshold.empty() || !lambda_cts.empty();
    }
};

struct ExperimentConfig {
    stream::WorldOptions world;
    ModelOptions model;
    PretrainSettings pretrain;
    std::vector<stream::SegmentTemplate> segments;
    adapter::AdapterConfig adapter;
    std::vector<std::uint64_t> seeds{0};
    std::vector<adapter::Variant> variants{adapter::Variant::comac};
    std::filesystem::path output_dir = "results";
    int workers = 1;
    TraceOptions trace;
    AblationAxes ablation;

    /// ConfigError on any invariant violation.
    void validate() const;
};

/// Library defaults with the six-segment schedule and the desk-scale queue
/// sizes, teacher momentum and learning rate used by the shipped configs.
ExperimentConfig default_config();

/// Parses a YAML config on top of default_config(). Errors carry the file
/// name and 1-based line of the offending key.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source_name = "<config>");

/// Serializes every field, so the output round-trips through parse_config.
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace comac::config
