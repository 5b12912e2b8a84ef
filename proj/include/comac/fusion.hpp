#pragma once

#include "comac/linalg.hpp"
#include "comac/nn.hpp"

#include <vector>

namespace comac::fusion {

/// Teacher outputs for the raw input and the average over augmented copies.
struct TeacherOutput {
    Matrix p;      // raw softmax, N x Nc
    Matrix p_aug;  // mean of augmented softmax outputs
    Matrix z;      // raw normalized features, N x F
    Matrix z_aug;  // mean of per-copy normalized features, re-normalized
};

/// Runs the teacher on x and on every augmented copy. With no copies the
/// augmented outputs equal the raw ones. Copies must keep x's row order and
/// count (AlignmentError otherwise).
TeacherOutput teacher_predict(const nn::Network& teacher, const Matrix& x, const std::vector<Matrix>& augmented);

/// Averages per-copy normalized features and re-normalizes; a point whose
/// average has norm < 1e-12 falls back to its raw feature.
Matrix average_features(const std::vector<Matrix>& per_copy_features, const Matrix& raw_features);

/// Row-wise argmax, lowest index on ties.
std::vector<int> argmax_rows(const Matrix& p);

struct Weights {
    Vector raw;
    Vector aug;
};

/// Per point j: w = softmax_i(<mu_i, z_j>) at i = k_j, and likewise for the
/// augmented feature at its own class. centroids holds one live mean per row.
Weights impa_weights(const Matrix& z, const Matrix& z_aug, const Matrix& centroids, const std::vector<int>& k,
                     const std::vector<int>& k_aug);

/// (w p + w~ p~) / (w + w~), per point.
Matrix impa_fuse(const Matrix& p, const Matrix& p_aug, const Vector& w, const Vector& w_aug);

/// w + w~ where the raw and augmented classes agree, max(w, w~) otherwise.
Vector xmpf_weight(const Vector& w, const Vector& w_aug, const std::vector<int>& k, const std::vector<int>& k_aug);

enum class IntraMode {
    adaptive,  // centroid-weighted
    raw_only,
    aug_only,
    average,   // w forced equal to w~
};

struct IntraModalResult {
    Matrix p, p_aug, z, z_aug;
    std::vector<int> k, k_aug;
    Vector w, w_aug;
    Matrix p_hat;
    Vector w_hat;
};

IntraModalResult intra_modal(const TeacherOutput& t, const Matrix& centroids, IntraMode mode = IntraMode::adaptive);

struct CrossModalLabel {
    Matrix p_xm;
    std::vector<int> labels;
};

/// Cross-modal weighted fusion of the two intra-modal predictions. With
/// equal_weights the modalities are simply averaged.
CrossModalLabel xmpf_fuse(const IntraModalResult& r2d, const IntraModalResult& r3d, bool equal_weights = false);

}  // namespace comac::fusion
