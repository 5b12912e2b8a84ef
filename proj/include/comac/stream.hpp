#pragma once

#include "comac/linalg.hpp"
#include "comac/model_pair.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace comac::stream {

/// Knobs for generating a synthetic two-modality world.
struct WorldOptions {
    int n_classes = 5;
    int dim_2d = 8;   // appearance features
    int dim_3d = 3;   // spatial coordinates; z is the last of the first three
    double noise_scale = 0.3;
    int points_per_sample = 256;
    double proto_scale_2d = 1.0;  // std of 2D prototype entries
    double radius_min = 0.6;      // 3D prototypes sit at (r, 0, h)
    double radius_max = 3.0;
    double height_max = 1.5;
    double min_separation = 1.2;  // rejection threshold between prototypes
    /// Each 3D point is the prototype turned by a random azimuth, so class
    /// identity lives in (radius, height) and z-rotation preserves labels.
    bool azimuth_jitter = true;
    std::uint64_t seed = 0;
};

struct WorldSpec {
    int n_classes = 0;
    int dim_2d = 0;
    int dim_3d = 0;
    double noise_scale = 0.0;
    int points_per_sample = 0;
    bool azimuth_jitter = false;
    std::uint64_t seed = 0;
    Matrix proto_2d;  // n_classes x dim_2d
    Matrix proto_3d;  // n_classes x dim_3d

    /// ConfigError on colliding prototypes (distance <= 2 * noise) or N < n_classes.
    void validate() const;
};

/// Draws prototypes by seeded rejection sampling. ConfigError if no
/// well-separated layout is found.
WorldSpec make_world(const WorldOptions& opts);

struct Corruption2D {
    Vector bias;              // empty means zero
    double noise_gain = 0.0;  // extra noise std, in units of the world noise scale
};

struct Corruption3D {
    double rotation_rad = 0.0;  // about z
    double noise_gain = 0.0;
    double dropout = 0.0;  // per-point removal probability, in [0, 1)
};

struct SegmentSpec {
    std::string name;
    int length = 1;
    Corruption2D corrupt_2d;
    Corruption3D corrupt_3d;

    void validate(const WorldSpec& world) const;
};

struct PointBatch {
    Matrix x2d;
    Matrix x3d;
    std::vector<int> labels;  // hidden from the adapter
    int segment_id = 0;
    int sample_index = 0;

    Eigen::Index size() const noexcept { return x2d.rows(); }
    const Matrix& input(Modality m) const noexcept { return m == Modality::two_d ? x2d : x3d; }
};

struct SourceDataset {
    std::vector<PointBatch> train;
    std::vector<PointBatch> holdout;
};

/// One clean sample: per-point class uniform, features = prototype + noise.
PointBatch sample_clean(const WorldSpec& world, std::uint64_t seed);

/// The last ~20% of samples (at least one) form the holdout split.
SourceDataset make_source_dataset(const WorldSpec& world, int n_samples, std::uint64_t seed);

/// Rotates the first two coordinates of every row by angle_rad about z.
Matrix rotate_z(const Matrix& x, double angle_rad);

PointBatch corrupt(const PointBatch& clean, const SegmentSpec& seg, std::uint64_t seed, double noise_scale);

/// Deterministic sample sequence across segments. Sample i depends only on
/// (world, segments, seed, i), so any prefix can be regenerated independently.
class Stream {
public:
    Stream(WorldSpec world, std::vector<SegmentSpec> segments, std::uint64_t seed);

    std::size_t total_length() const noexcept { return total_; }
    const std::vector<SegmentSpec>& segments() const noexcept { return segments_; }
    const WorldSpec& world() const noexcept { return world_; }

    PointBatch at(std::size_t index) const;
    bool done() const noexcept { return cursor_ >= total_; }
    PointBatch next();
    void reset() noexcept { cursor_ = 0; }

private:
    WorldSpec world_;
    std::vector<SegmentSpec> segments_;
    std::vector<std::size_t> offsets_;
    std::uint64_t seed_;
    std::size_t total_ = 0;
    std::size_t cursor_ = 0;
};

Stream make_stream(const WorldSpec& world, const std::vector<SegmentSpec>& segments, std::uint64_t seed);

/// Stand-in for image resizing: one copy per factor with 2D features scaled.
std::vector<PointBatch> augment_2d(const PointBatch& batch, const std::vector<double>& scales);
/// One copy per angle (degrees) with 3D coordinates turned about z.
std::vector<PointBatch> augment_3d(const PointBatch& batch, const std::vector<double>& angles_deg);
std::vector<PointBatch> augment(const PointBatch& batch, Modality m, const std::vector<double>& factors);

/// n evenly spaced scales in [0.5, 1): 0.5 + 0.5 i / n.
std::vector<double> even_scales_2d(int n);
/// n evenly spaced angles in (0, 360): 360 i / (n + 1), i = 1..n.
std::vector<double> even_angles_3d(int n);

/// World-independent description of a segment; the 2D bias is either an
/// explicit vector or a magnitude along bias_direction(world).
struct SegmentTemplate {
    std::string name;
    int length = 200;
    double bias_2d = 0.0;
    std::vector<double> bias_2d_vector;
    double noise_2d = 0.0;
    double rotation_3d_deg = 0.0;
    double noise_3d = 0.0;
    double dropout_3d = 0.0;
};

/// Unit bias direction for the 2D modality, fixed by the world seed.
Vector bias_direction(const WorldSpec& world);

SegmentSpec materialize(const SegmentTemplate& tpl, const WorldSpec& world);
std::vector<SegmentSpec> materialize(const std::vector<SegmentTemplate>& tpls, const WorldSpec& world);

/// Six 200-sample segments alternating the corrupted modality with rising
/// severity and ending with both corrupted.
std::vector<SegmentTemplate> default_schedule_templates();
std::vector<SegmentSpec> default_schedule(const WorldSpec& world);

struct PretrainOptions {
    int epochs = 30;
    double lr = 0.05;
    std::uint64_t seed = 0;
};

struct PretrainResult {
    ModelPair pair_2d;
    ModelPair pair_3d;
    /// Normalized encoder features of every training point, grouped by class.
    std::vector<Matrix> features_2d;
    std::vector<Matrix> features_3d;
    double holdout_accuracy_2d = 0.0;
    double holdout_accuracy_3d = 0.0;
};

/// Trains both students by cross-entropy with per-sample SGD and copies them
/// into the teachers. DivergenceError on a non-finite loss.
PretrainResult pretrain(const ModelPair& pair_2d, const ModelPair& pair_3d, const SourceDataset& data,
                        const PretrainOptions& opts);

/// Fraction of holdout points the student of `net` labels correctly.
double accuracy(const nn::Network& net, const std::vector<PointBatch>& data, Modality m);

}  // namespace comac::stream
