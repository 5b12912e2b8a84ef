#include "comac/memory.hpp"

#include "comac/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace comac::memory {

using detail::require;

namespace {

constexpr double kUnitTol = 1e-9;

bool rows_unit_norm(const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        if (std::abs(m.row(i).norm() - 1.0) > kUnitTol)
            return false;
    return true;
}

}  // namespace

std::vector<ClassCentroid> build_source_centroids(const std::vector<Matrix>& features_by_class) {
    std::vector<ClassCentroid> out;
    out.reserve(features_by_class.size());
    for (std::size_t k = 0; k < features_by_class.size(); ++k) {
        const Matrix& f = features_by_class[k];
        if (f.rows() < 2)
            throw InsufficientSupport("class " + std::to_string(k) + " has " + std::to_string(f.rows()) +
                                      " source feature rows, need at least 2");
        require(rows_unit_norm(f), "build_source_centroids: class " + std::to_string(k) + " rows not unit-norm");
        ClassCentroid c;
        c.source_mean = f.colwise().mean().transpose();
        const Matrix centered = f.rowwise() - c.source_mean.transpose();
        c.source_std = (centered.colwise().squaredNorm() / static_cast<double>(f.rows() - 1)).cwiseSqrt().transpose();
        c.live_mean = c.source_mean;
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<ClassCentroid> build_source_centroids(const Matrix& features, const std::vector<int>& labels,
                                                  int n_classes) {
    require(static_cast<Eigen::Index>(labels.size()) == features.rows(), "build_source_centroids: label count");
    std::vector<std::vector<int>> idx(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] >= 0 && labels[i] < n_classes, "build_source_centroids: label out of range");
        idx[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
    }
    std::vector<Matrix> by_class;
    for (const auto& rows : idx)
        by_class.push_back(features(rows, Eigen::all));
    return build_source_centroids(by_class);
}

Matrix sample_gaussian(const ClassCentroid& c, int n_q, std::uint64_t seed) {
    require(n_q >= 1, "sample_pseudo_source: n_q must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Index f = c.source_mean.size();
    Matrix out(n_q, f);
    for (Eigen::Index i = 0; i < n_q; ++i)
        for (Eigen::Index j = 0; j < f; ++j)
            out(i, j) = c.source_mean[j] + c.source_std[j] * normal(rng);
    return out;
}

Matrix sample_pseudo_source(const ClassCentroid& c, int n_q, std::uint64_t seed) {
    return normalize_rows(sample_gaussian(c, n_q, seed));
}

MomentumQueue::MomentumQueue(const Matrix& initial, RowOrigin origin)
    : rows_(initial), tags_(static_cast<std::size_t>(initial.rows())),
      origin_(static_cast<std::size_t>(initial.rows()), origin) {
    require(initial.rows() >= 1, "MomentumQueue: initial contents must be non-empty");
    require(rows_unit_norm(initial), "MomentumQueue: initial rows must be unit-norm");
    std::iota(tags_.begin(), tags_.end(), std::uint64_t{0});
    inserted_ = static_cast<std::uint64_t>(initial.rows());
}

void MomentumQueue::enqueue(const Matrix& feats, RowOrigin origin) {
    if (feats.rows() == 0)
        return;
    require(feats.rows() <= rows_.rows(), "enqueue: " + std::to_string(feats.rows()) +
                                              " rows exceed queue capacity " + std::to_string(rows_.rows()));
    require(feats.cols() == rows_.cols(), "enqueue: feature dimension mismatch");
    require(rows_unit_norm(feats), "enqueue: rows must be unit-norm");
    const Eigen::Index cap = rows_.rows();
    for (Eigen::Index i = 0; i < feats.rows(); ++i) {
        rows_.row(head_) = feats.row(i);
        tags_[static_cast<std::size_t>(head_)] = inserted_++;
        origin_[static_cast<std::size_t>(head_)] = origin;
        head_ = (head_ + 1) % cap;
    }
}

Matrix MomentumQueue::contents() const {
    const Eigen::Index cap = rows_.rows();
    Matrix out(cap, rows_.cols());
    for (Eigen::Index i = 0; i < cap; ++i)
        out.row(i) = rows_.row((head_ + i) % cap);
    return out;
}

std::vector<std::uint64_t> MomentumQueue::tags() const {
    const std::size_t cap = tags_.size();
    std::vector<std::uint64_t> out(cap);
    for (std::size_t i = 0; i < cap; ++i)
        out[i] = tags_[(static_cast<std::size_t>(head_) + i) % cap];
    return out;
}

double MomentumQueue::pseudo_source_fraction() const {
    if (origin_.empty())
        return 0.0;
    const auto n = std::count(origin_.begin(), origin_.end(), RowOrigin::pseudo_source);
    return static_cast<double>(n) / static_cast<double>(origin_.size());
}

Vector centroid_mean(const MomentumQueue& q) {
    require(q.capacity() > 0, "centroid_mean: empty queue");
    return q.storage().colwise().mean().transpose();
}

void RestorationPolicy::validate() const {
    require(restore_prob >= 0.0 && restore_prob <= 1.0, "restore probability must lie in [0, 1]");
    require(confidence_threshold >= 0.0 && confidence_threshold <= 1.0, "confidence threshold must lie in [0, 1]");
    require(n_enqueue >= 0, "n_enqueue must be >= 0");
}

ConfidentSet select_confident(const Matrix& probs, const Matrix& features, const RestorationPolicy& policy) {
    require(probs.rows() == features.rows(), "select_confident: probs/features row mismatch");
    const auto n_classes = static_cast<std::size_t>(probs.cols());
    std::vector<std::vector<int>> candidates(n_classes);
    std::vector<double> conf(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const int k = argmax(probs.row(i));
        conf[static_cast<std::size_t>(i)] = probs(i, k);
        if (probs(i, k) >= policy.confidence_threshold)
            candidates[static_cast<std::size_t>(k)].push_back(static_cast<int>(i));
    }
    ConfidentSet out;
    out.indices.resize(n_classes);
    out.features.resize(n_classes);
    for (std::size_t k = 0; k < n_classes; ++k) {
        auto& c = candidates[k];
        std::stable_sort(c.begin(), c.end(), [&](int a, int b) {
            return conf[static_cast<std::size_t>(a)] > conf[static_cast<std::size_t>(b)];
        });
        if (static_cast<int>(c.size()) > policy.n_enqueue)
            c.resize(static_cast<std::size_t>(policy.n_enqueue));
        out.features[k] = normalize_rows(features(c, Eigen::all));
        out.indices[k] = std::move(c);
    }
    return out;
}

Matrix sample_bank_rows(const Matrix& bank, int n, std::mt19937_64& rng) {
    require(n >= 0 && n <= bank.rows(), "sample_bank_rows: cannot draw " + std::to_string(n) +
                                            " rows without replacement from " + std::to_string(bank.rows()));
    std::vector<int> idx(static_cast<std::size_t>(bank.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates.
    for (int i = 0; i < n; ++i) {
        std::uniform_int_distribution<int> pick(i, static_cast<int>(bank.rows()) - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    idx.resize(static_cast<std::size_t>(n));
    return bank(idx, Eigen::all);
}

RestoreOutcome restore_or_keep(const MomentumQueue& previous, const MomentumQueue& updated, const Matrix& bank,
                               double gamma, const RestorationPolicy& policy, std::mt19937_64& sample_rng) {
    require(bank.cols() == previous.dim(), "restore: bank dimension does not match queue");
    if (gamma > policy.restore_prob)
        return {updated, false};
    RestoreOutcome out{previous, true};
    out.queue.enqueue(sample_bank_rows(bank, policy.n_enqueue, sample_rng), RowOrigin::pseudo_source);
    return out;
}

RestoreOutcome maybe_restore(const MomentumQueue& previous, const MomentumQueue& updated, const Matrix& bank,
                             const RestorationPolicy& policy, std::mt19937_64& flag_rng,
                             std::mt19937_64& sample_rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double gamma = unit(flag_rng);
    return restore_or_keep(previous, updated, bank, gamma, policy, sample_rng);
}

ContrastiveResult contrastive_loss(const Matrix& anchors, std::span<const MomentumQueue> queues, int k,
                                   ContrastiveForm form, double temperature) {
    require(k >= 0 && k < static_cast<int>(queues.size()), "contrastive_loss: class index out of range");
    require(queues.size() >= 2, "contrastive_loss: no negative queues (single-class world)");
    require(temperature > 0.0, "contrastive_loss: temperature must be positive");
    ContrastiveResult out{0.0, Matrix::Zero(anchors.rows(), anchors.cols())};
    if (anchors.rows() == 0)
        return out;
    require(anchors.cols() == queues[0].dim(), "contrastive_loss: anchor dimension mismatch");

    const auto ku = static_cast<std::size_t>(k);
    const double inv_t = 1.0 / temperature;
    const Matrix& positives = queues[ku].storage();

    // Similarity blocks per queue, then a shared per-anchor max shift.
    std::vector<Matrix> sims(queues.size());
    Vector shift = Vector::Constant(anchors.rows(), -std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < queues.size(); ++c) {
        if (form == ContrastiveForm::literal && c == ku) {
            sims[c] = anchors * positives.transpose() * inv_t;
            continue;
        }
        sims[c] = anchors * queues[c].storage().transpose() * inv_t;
        shift = shift.cwiseMax(sims[c].rowwise().maxCoeff());
    }

    // Denominator: softmax-weighted sum over its support, per anchor.
    Vector denom = Vector::Zero(anchors.rows());
    Matrix weighted = Matrix::Zero(anchors.rows(), anchors.cols());
    for (std::size_t c = 0; c < queues.size(); ++c) {
        if (form == ContrastiveForm::literal && c == ku)
            continue;
        Matrix e = (sims[c].colwise() - shift).array().exp().matrix();
        denom += e.rowwise().sum();
        weighted += e * queues[c].storage();
    }
    const Matrix denom_mean = weighted.array().colwise() / denom.array();  // sum_n softmax_n q_n

    const double inv_p = 1.0 / static_cast<double>(positives.rows());
    if (form == ContrastiveForm::log_ratio) {
        const Vector pos_mean = positives.colwise().mean().transpose();
        for (Eigen::Index i = 0; i < anchors.rows(); ++i) {
            const double lse = shift[i] + std::log(denom[i]);
            out.loss += -anchors.row(i).dot(pos_mean) * inv_t + lse;
            out.grad.row(i) = (denom_mean.row(i) - pos_mean.transpose()) * inv_t;
        }
        return out;
    }

    // literal: -1/|P| sum_p exp(s_p) / sum_{n in A} exp(s_n)
    const Matrix ratio = (sims[ku].colwise() - shift).array().exp().matrix();
    for (Eigen::Index i = 0; i < anchors.rows(); ++i) {
        const Eigen::RowVectorXd r = ratio.row(i) / denom[i];
        const double rsum = r.sum();
        out.loss += -inv_p * rsum;
        const Eigen::RowVectorXd rq = r * positives;
        out.grad.row(i) = -inv_p * (rq - rsum * denom_mean.row(i)) * inv_t;
    }
    return out;
}

}  // namespace comac::memory
