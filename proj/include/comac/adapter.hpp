#pragma once

#include "comac/fusion.hpp"
#include "comac/memory.hpp"
#include "comac/metrics.hpp"
#include "comac/model_pair.hpp"
#include "comac/stream.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace comac::adapter {

enum class Variant {
    comac,
    raw_only,     // intra-modal prediction := raw
    aug_only,     // intra-modal prediction := augmentation average
    no_impa,      // raw/aug simply averaged
    no_xmpf,      // modalities simply averaged
    no_update,    // no target enqueue, centroids stay at source
    no_restore,   // restore branch disabled
    pslabel,      // per-modality hard pseudo-labels, median-filtered
    entropy_min,  // per-modality entropy minimization of the classifier
    source_only,  // inference only
};

std::string_view variant_name(Variant v);
std::optional<Variant> parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();

enum class EvalOutput { softmax_average, cross_modal };

std::string_view eval_output_name(EvalOutput e);
std::optional<EvalOutput> parse_eval_output(std::string_view name);

struct AdapterConfig {
    double ema_momentum = 0.999;  // lambda_s
    double lambda_cts = 1.0;
    double restore_prob = 0.5;          // p_rs
    double confidence_threshold = 0.8;  // tau_cf
    int queue_size = 4096;              // N_q
    int n_enqueue = 200;                // N_enq
    double lr = 1e-3;
    std::vector<double> aug_scales_2d{0.5, 0.625, 0.75, 0.875};
    std::vector<double> aug_angles_3d{60.0, 120.0, 180.0, 240.0, 300.0};
    Variant variant = Variant::comac;
    EvalOutput eval_output = EvalOutput::softmax_average;
    memory::ContrastiveForm contrastive_form = memory::ContrastiveForm::log_ratio;
    double temperature = 1.0;

    /// ConfigError on out-of-range values.
    void validate() const;
    memory::RestorationPolicy policy() const;
};

struct ModalityMemory {
    std::vector<memory::ClassCentroid> centroids;
    std::vector<Matrix> banks;
    std::vector<memory::MomentumQueue> queues;

    /// Live class means stacked as rows (n_classes x F).
    Matrix live_means() const;
};

struct AdapterState {
    std::array<ModelPair, 2> pairs;  // indexed by modality
    std::array<ModalityMemory, 2> memory;
    std::int64_t t = 0;
    std::mt19937_64 restore_rng;  // gamma_t draws
    std::mt19937_64 sample_rng;   // bank sampling
    /// When set, replaces the gamma_t draw (the restore rng is still advanced).
    std::function<double(std::int64_t)> gamma_override;

    ModelPair& pair(Modality m) { return pairs[static_cast<std::size_t>(m)]; }
    const ModelPair& pair(Modality m) const { return pairs[static_cast<std::size_t>(m)]; }
    ModalityMemory& mem(Modality m) { return memory[static_cast<std::size_t>(m)]; }
    const ModalityMemory& mem(Modality m) const { return memory[static_cast<std::size_t>(m)]; }
};

/// Builds centroids, samples one pseudo-source bank per class and modality and
/// fills every queue from its bank. Teachers are reset to copies of the
/// students. ConfigError if a class has too little source support.
AdapterState init(const ModelPair& pair_2d, const ModelPair& pair_3d, const std::vector<Matrix>& features_2d,
                  const std::vector<Matrix>& features_3d, const AdapterConfig& cfg, std::uint64_t seed);

struct ModalityStepStats {
    double loss_ce = 0.0;
    double loss_cts = 0.0;
    double mean_w = 0.0;
    double mean_w_aug = 0.0;
    double mean_w_hat = 0.0;
    double agreement = 0.0;  // fraction of points with k == k~
    std::vector<int> enqueued;   // target rows enqueued per class
    std::vector<bool> restored;  // per class
    double pseudo_source_fraction = 0.0;
};

struct StepOutput {
    std::int64_t t = 0;
    Matrix eval_probs;       // per cfg.eval_output
    Matrix softmax_average;  // mean of the two teachers' raw predictions
    Matrix cross_modal;      // fused prediction; empty for variants without fusion
    std::vector<int> pseudo_labels;
    std::array<ModalityStepStats, 2> modality;
};

/// One adaptation step on one streamed sample. The evaluation prediction comes
/// from the state entering the step; parameters, queues and centroids are then
/// updated in place. DivergenceError (with the step index) on a non-finite loss.
StepOutput step(AdapterState& state, const stream::PointBatch& batch, const AdapterConfig& cfg);

/// Student update shared by all training variants: CE against labels (-1 =
/// ignored) plus an optional feature-path gradient, one SGD step, then EMA.
struct StudentUpdate {
    double loss_ce = 0.0;
};
StudentUpdate update_student(ModelPair& pair, const nn::ForwardCache& cache, const std::vector<int>& labels,
                             const Matrix& feature_grad, const AdapterConfig& cfg, std::int64_t t);

/// Labels the teacher's argmax per point, dropping (-1) points whose
/// confidence is below the median confidence of their predicted class.
std::vector<int> median_filtered_labels(const Matrix& probs);

struct SegmentMetrics {
    std::string name;
    metrics::IoUReport report;
};

struct RunResult {
    std::vector<SegmentMetrics> segments;
    std::optional<metrics::IoUReport> overall;
    std::vector<std::vector<int>> predictions;  // per sample, eval argmax
    std::vector<Matrix> probabilities;          // per sample, only if requested
    double wall_clock_s = 0.0;
};

struct StepRecord {
    const stream::PointBatch* batch = nullptr;
    const StepOutput* out = nullptr;
    const AdapterState* state = nullptr;
    std::int64_t correct = 0;
};

struct RunOptions {
    std::size_t max_samples = std::numeric_limits<std::size_t>::max();
    bool keep_probabilities = false;
    std::function<void(const StepRecord&)> on_step;
};

/// Feeds the stream one sample at a time, recording each evaluation
/// prediction before the step's update. Never revisits a sample.
RunResult run_sequence(AdapterState& state, const AdapterConfig& cfg, stream::Stream& stream,
                       const RunOptions& opts = {});

}  // namespace comac::adapter
