#pragma once

#include "comac/error.hpp"
#include "comac/linalg.hpp"
#include "comac/nn.hpp"

#include <random>

namespace testutil {

inline comac::Matrix gaussian(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    comac::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = g(rng);
    return m;
}

inline comac::Matrix unit_rows(int rows, int cols, std::mt19937_64& rng) {
    comac::Matrix m = gaussian(rows, cols, rng);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        m.row(i) /= m.row(i).norm();
    return m;
}

inline comac::Matrix simplex_rows(int rows, int cols, std::mt19937_64& rng) {
    std::exponential_distribution<double> e(1.0);
    comac::Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j)
            m(i, j) = e(rng);
        m.row(i) /= m.row(i).sum();
    }
    return m;
}

// Nonzero biases keep every point away from the zero feature.
inline comac::nn::Network random_net(int in, int hidden, int feat, int classes, std::mt19937_64& rng) {
    auto net = comac::nn::Network::mlp(in, {hidden}, feat, classes, rng());
    std::normal_distribution<double> g(0.0, 0.3);
    for (auto& l : net.layers())
        for (Eigen::Index i = 0; i < l.bias.size(); ++i)
            l.bias[i] = g(rng);
    return net;
}

}  // namespace testutil
