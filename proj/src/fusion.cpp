#include "comac/fusion.hpp"

#include "comac/error.hpp"

#include <cmath>
#include <string>

namespace comac::fusion {

using detail::require;

TeacherOutput teacher_predict(const nn::Network& teacher, const Matrix& x, const std::vector<Matrix>& augmented) {
    const nn::ForwardCache raw = nn::forward(teacher, x);
    TeacherOutput out;
    out.p = raw.probs;
    out.z = raw.features;
    if (augmented.empty()) {
        out.p_aug = out.p;
        out.z_aug = out.z;
        return out;
    }
    out.p_aug = Matrix::Zero(x.rows(), raw.probs.cols());
    std::vector<Matrix> feats;
    feats.reserve(augmented.size());
    for (std::size_t i = 0; i < augmented.size(); ++i) {
        if (augmented[i].rows() != x.rows())
            throw AlignmentError("augmented copy " + std::to_string(i) + " has " +
                                 std::to_string(augmented[i].rows()) + " points, raw input has " +
                                 std::to_string(x.rows()));
        nn::ForwardCache c = nn::forward(teacher, augmented[i]);
        out.p_aug += c.probs;
        feats.push_back(std::move(c.features));
    }
    out.p_aug /= static_cast<double>(augmented.size());
    out.z_aug = average_features(feats, out.z);
    return out;
}

Matrix average_features(const std::vector<Matrix>& per_copy_features, const Matrix& raw_features) {
    if (per_copy_features.empty())
        return raw_features;
    Matrix mean = Matrix::Zero(raw_features.rows(), raw_features.cols());
    for (const auto& f : per_copy_features) {
        require(f.rows() == raw_features.rows() && f.cols() == raw_features.cols(),
                "average_features: copy shape mismatch");
        mean += f;
    }
    mean /= static_cast<double>(per_copy_features.size());
    for (Eigen::Index i = 0; i < mean.rows(); ++i) {
        const double n = mean.row(i).norm();
        if (n < kTinyNorm)
            mean.row(i) = raw_features.row(i);
        else
            mean.row(i) /= n;
    }
    return mean;
}

std::vector<int> argmax_rows(const Matrix& p) {
    std::vector<int> out(static_cast<std::size_t>(p.rows()));
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        out[static_cast<std::size_t>(i)] = argmax(p.row(i));
    return out;
}

namespace {

Vector weight_at(const Matrix& z, const Matrix& centroids, const std::vector<int>& k) {
    require(z.cols() == centroids.cols(), "impa_weights: feature/centroid dimension mismatch");
    require(static_cast<Eigen::Index>(k.size()) == z.rows(), "impa_weights: class index count mismatch");
    const Matrix sims = z * centroids.transpose();
    const Matrix soft = softmax_rows(sims);
    Vector w(z.rows());
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
        const int c = k[static_cast<std::size_t>(j)];
        require(c >= 0 && c < centroids.rows(), "impa_weights: class index out of range");
        w[j] = soft(j, c);
    }
    return w;
}

}  // namespace

Weights impa_weights(const Matrix& z, const Matrix& z_aug, const Matrix& centroids, const std::vector<int>& k,
                     const std::vector<int>& k_aug) {
    require(z.rows() == z_aug.rows(), "impa_weights: raw/aug point count mismatch");
    return {weight_at(z, centroids, k), weight_at(z_aug, centroids, k_aug)};
}

Matrix impa_fuse(const Matrix& p, const Matrix& p_aug, const Vector& w, const Vector& w_aug) {
    require(p.rows() == p_aug.rows() && p.cols() == p_aug.cols(), "impa_fuse: prediction shape mismatch");
    require(w.size() == p.rows() && w_aug.size() == p.rows(), "impa_fuse: weight count mismatch");
    Matrix out(p.rows(), p.cols());
    for (Eigen::Index j = 0; j < p.rows(); ++j) {
        const double s = w[j] + w_aug[j];
        require(s > 0.0, "impa_fuse: weights must have a positive sum");
        out.row(j) = (w[j] * p.row(j) + w_aug[j] * p_aug.row(j)) / s;
    }
    return out;
}

Vector xmpf_weight(const Vector& w, const Vector& w_aug, const std::vector<int>& k, const std::vector<int>& k_aug) {
    require(w.size() == w_aug.size() && static_cast<Eigen::Index>(k.size()) == w.size() &&
                k.size() == k_aug.size(),
            "xmpf_weight: length mismatch");
    Vector out(w.size());
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        const auto ju = static_cast<std::size_t>(j);
        out[j] = k[ju] == k_aug[ju] ? w[j] + w_aug[j] : std::max(w[j], w_aug[j]);
    }
    return out;
}

IntraModalResult intra_modal(const TeacherOutput& t, const Matrix& centroids, IntraMode mode) {
    IntraModalResult r;
    r.p = t.p;
    r.p_aug = t.p_aug;
    r.z = t.z;
    r.z_aug = t.z_aug;
    r.k = argmax_rows(t.p);
    r.k_aug = argmax_rows(t.p_aug);
    Weights w = impa_weights(t.z, t.z_aug, centroids, r.k, r.k_aug);
    r.w = std::move(w.raw);
    r.w_aug = std::move(w.aug);
    switch (mode) {
    case IntraMode::adaptive:
        r.p_hat = impa_fuse(r.p, r.p_aug, r.w, r.w_aug);
        break;
    case IntraMode::raw_only:
        r.p_hat = r.p;
        break;
    case IntraMode::aug_only:
        r.p_hat = r.p_aug;
        break;
    case IntraMode::average:
        r.p_hat = 0.5 * (r.p + r.p_aug);
        break;
    }
    r.w_hat = xmpf_weight(r.w, r.w_aug, r.k, r.k_aug);
    return r;
}

CrossModalLabel xmpf_fuse(const IntraModalResult& r2d, const IntraModalResult& r3d, bool equal_weights) {
    require(r2d.p_hat.rows() == r3d.p_hat.rows() && r2d.p_hat.cols() == r3d.p_hat.cols(),
            "xmpf_fuse: modalities disagree on point count or class count");
    const Eigen::Index n = r2d.p_hat.rows();
    CrossModalLabel out;
    out.p_xm.resize(n, r2d.p_hat.cols());
    out.labels.resize(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
        const double a = equal_weights ? 1.0 : r2d.w_hat[j];
        const double b = equal_weights ? 1.0 : r3d.w_hat[j];
        out.p_xm.row(j) = (a * r2d.p_hat.row(j) + b * r3d.p_hat.row(j)) / (a + b);
        out.labels[static_cast<std::size_t>(j)] = argmax(out.p_xm.row(j));
    }
    return out;
}

}  // namespace comac::fusion
