#include "comac/gradcheck.hpp"

#include "comac/error.hpp"

#include <cmath>

namespace comac::nn {

LossEval evaluate_loss(const Network& net, const Matrix& x, const LossSetup& setup) {
    detail::require(static_cast<Eigen::Index>(setup.labels.size()) == x.rows(), "evaluate_loss: label count mismatch");
    const ForwardCache cache = forward(net, x);
    LossEval out;
    Matrix logit_grad;
    Matrix feature_grad;
    if (setup.kind != LossKind::contrastive) {
        const LossValue ce = cross_entropy(cache.probs, setup.labels);
        out.value += ce.value;
        logit_grad = ce.grad;
    }
    if (setup.kind != LossKind::cross_entropy) {
        const double weight = setup.kind == LossKind::combined ? setup.lambda_cts : 1.0;
        feature_grad = Matrix::Zero(cache.features.rows(), cache.features.cols());
        const int n_classes = static_cast<int>(setup.queues.size());
        for (int k = 0; k < n_classes; ++k) {
            std::vector<int> rows;
            for (std::size_t i = 0; i < setup.labels.size(); ++i)
                if (setup.labels[i] == k)
                    rows.push_back(static_cast<int>(i));
            if (rows.empty())
                continue;
            const auto c = memory::contrastive_loss(cache.features(rows, Eigen::all), setup.queues, k, setup.form,
                                                    setup.temperature);
            out.value += weight * c.loss;
            for (std::size_t a = 0; a < rows.size(); ++a)
                feature_grad.row(rows[a]) += weight * c.grad.row(static_cast<Eigen::Index>(a));
        }
    }
    out.grads = backward(net, cache, logit_grad, feature_grad);
    return out;
}

GradCheckReport grad_check(const Network& net, const Matrix& x, const LossSetup& setup, double eps) {
    const LossEval analytic = evaluate_loss(net, x, setup);
    const double floor = 1e-3 * analytic.grads.max_abs();
    GradCheckReport rep;
    Network probe = net;
    for (std::size_t li = 0; li < net.depth(); ++li) {
        for (int block = 0; block < 2; ++block) {
            auto& layer = probe.layers()[li];
            double* data = block == 0 ? layer.weight.data() : layer.bias.data();
            const Eigen::Index size = block == 0 ? layer.weight.size() : layer.bias.size();
            const double* grad = block == 0 ? analytic.grads.layers[li].weight.data()
                                            : analytic.grads.layers[li].bias.data();
            for (Eigen::Index i = 0; i < size; ++i) {
                double& p = data[i];
                const double saved = p;
                p = saved + eps;
                const double up = evaluate_loss(probe, x, setup).value;
                p = saved - eps;
                const double down = evaluate_loss(probe, x, setup).value;
                p = saved;
                const double numeric = (up - down) / (2.0 * eps);
                const double a = grad[i];
                const double denom = std::max({std::abs(a), std::abs(numeric), floor, 1e-300});
                const double rel = std::abs(a - numeric) / denom;
                ++rep.n_params;
                if (rel > rep.max_rel_error || rep.worst_param.empty()) {
                    rep.max_rel_error = std::max(rep.max_rel_error, rel);
                    rep.worst_param = "layer " + std::to_string(li) + (block == 0 ? " weight[" : " bias[") +
                                      std::to_string(i) + "]";
                    rep.worst_analytic = a;
                    rep.worst_numeric = numeric;
                }
            }
        }
    }
    return rep;
}

}  // namespace comac::nn
