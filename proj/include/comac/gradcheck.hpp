#pragma once

#include "comac/memory.hpp"
#include "comac/nn.hpp"

#include <string>
#include <vector>

namespace comac::nn {

enum class LossKind { cross_entropy, contrastive, combined };

/// A loss over one batch. Rows of x labelled k are cross-entropy targets for
/// class k and, for the contrastive terms, anchors of class k against queues.
struct LossSetup {
    LossKind kind = LossKind::cross_entropy;
    std::vector<int> labels;
    std::vector<memory::MomentumQueue> queues;
    double lambda_cts = 1.0;
    memory::ContrastiveForm form = memory::ContrastiveForm::log_ratio;
    double temperature = 1.0;
};

struct LossEval {
    double value = 0.0;
    Gradients grads;
};

LossEval evaluate_loss(const Network& net, const Matrix& x, const LossSetup& setup);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t n_params = 0;
    std::string worst_param;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Central differences over every parameter. Relative error per entry is
/// |a - n| / max(|a|, |n|, 1e-3 * max_j |a_j|).
GradCheckReport grad_check(const Network& net, const Matrix& x, const LossSetup& setup, double eps = 1e-5);

}  // namespace comac::nn
