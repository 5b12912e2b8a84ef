#pragma once

#include "comac/linalg.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace comac::memory {

/// Diagonal-Gaussian statistics of one class's normalized source features, plus
/// the live mean that tracks the class's momentum queue during adaptation.
struct ClassCentroid {
    Vector source_mean;
    Vector source_std;
    Vector live_mean;
};

/// One centroid per class. Every class needs >= 2 unit-norm rows; throws
/// InsufficientSupport naming the first class that has fewer.
std::vector<ClassCentroid> build_source_centroids(const std::vector<Matrix>& features_by_class);

/// Groups rows of features by label, then builds centroids as above.
std::vector<ClassCentroid> build_source_centroids(const Matrix& features, const std::vector<int>& labels,
                                                  int n_classes);

/// n_q i.i.d. draws from N(mean, diag(std^2)), before normalization.
Matrix sample_gaussian(const ClassCentroid& c, int n_q, std::uint64_t seed);

/// sample_gaussian with each row scaled to unit norm.
Matrix sample_pseudo_source(const ClassCentroid& c, int n_q, std::uint64_t seed);

enum class RowOrigin : std::uint8_t { pseudo_source, target };

/// Fixed-capacity FIFO of unit-norm feature rows. Constructed full; every
/// enqueue of b rows evicts the b oldest, so size() == capacity() always.
class MomentumQueue {
public:
    MomentumQueue() = default;
    explicit MomentumQueue(const Matrix& initial, RowOrigin origin = RowOrigin::pseudo_source);

    int capacity() const noexcept { return static_cast<int>(rows_.rows()); }
    int size() const noexcept { return capacity(); }
    int dim() const noexcept { return static_cast<int>(rows_.cols()); }

    void enqueue(const Matrix& feats, RowOrigin origin = RowOrigin::target);

    /// Rows oldest-first.
    Matrix contents() const;
    /// Insertion sequence number of each row, oldest-first. Initial rows are 0..capacity-1.
    std::vector<std::uint64_t> tags() const;
    std::uint64_t inserted() const noexcept { return inserted_; }
    /// Fraction of stored rows that came from the pseudo-source bank.
    double pseudo_source_fraction() const;

    /// Ring-buffer storage; row order is unspecified.
    const Matrix& storage() const noexcept { return rows_; }

private:
    Matrix rows_;
    std::vector<std::uint64_t> tags_;
    std::vector<RowOrigin> origin_;
    Eigen::Index head_ = 0;  // oldest row
    std::uint64_t inserted_ = 0;
};

/// Arithmetic mean of the stored rows.
Vector centroid_mean(const MomentumQueue& q);

struct RestorationPolicy {
    double restore_prob = 0.5;      // p_rs
    int n_enqueue = 200;            // N_enq
    double confidence_threshold = 0.8;  // tau_cf

    void validate() const;
};

struct ConfidentSet {
    std::vector<std::vector<int>> indices;  // per class, highest confidence first
    std::vector<Matrix> features;           // per class, unit-norm rows, same order as indices
};

/// Per class k: rows whose argmax is k with probability >= tau_cf, capped at the
/// n_enqueue most confident. Ties in confidence keep the lower row index.
ConfidentSet select_confident(const Matrix& probs, const Matrix& features, const RestorationPolicy& policy);

/// n rows drawn uniformly without replacement from bank.
Matrix sample_bank_rows(const Matrix& bank, int n, std::mt19937_64& rng);

struct RestoreOutcome {
    MomentumQueue queue;
    bool restored = false;
};

/// Restore branch if gamma <= p_rs: discard `updated` and enqueue n_enqueue bank
/// rows into `previous`. Otherwise return `updated`.
RestoreOutcome restore_or_keep(const MomentumQueue& previous, const MomentumQueue& updated, const Matrix& bank,
                               double gamma, const RestorationPolicy& policy, std::mt19937_64& sample_rng);

/// Draws gamma ~ U[0,1] from flag_rng and applies restore_or_keep.
RestoreOutcome maybe_restore(const MomentumQueue& previous, const MomentumQueue& updated, const Matrix& bank,
                             const RestorationPolicy& policy, std::mt19937_64& flag_rng,
                             std::mt19937_64& sample_rng);

enum class ContrastiveForm {
    log_ratio,  // supervised-contrastive form over positives and negatives
    literal,    // exp ratio without log, denominator over negatives only
};

struct ContrastiveResult {
    double loss = 0.0;
    Matrix grad;  // w.r.t. anchors
};

/// Class-wise contrastive loss of unit-norm anchors of class k against the queues
/// of one modality. Positives are queues[k]; negatives are every other queue.
/// Queue rows are constants. Summed over anchors.
ContrastiveResult contrastive_loss(const Matrix& anchors, std::span<const MomentumQueue> queues, int k,
                                   ContrastiveForm form = ContrastiveForm::log_ratio, double temperature = 1.0);

}  // namespace comac::memory
