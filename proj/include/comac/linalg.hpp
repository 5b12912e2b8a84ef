#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace comac {

/// Row-major so that one row is one point / one feature vector.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Rows below this norm are treated as zero vectors.
inline constexpr double kTinyNorm = 1e-12;

/// Row-wise numerically stable softmax (max subtraction).
Matrix softmax_rows(const Matrix& logits);

/// Row-wise L2 normalization; rows with norm < kTinyNorm are left unscaled.
Matrix normalize_rows(const Matrix& x);

/// Index of the largest entry; lowest index wins ties.
int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row);

/// SplitMix64 mix, used to derive independent RNG seeds from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace comac
