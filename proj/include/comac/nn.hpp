#pragma once

#include "comac/linalg.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace comac::nn {

enum class Activation { relu, identity };

struct Layer {
    Matrix weight;  // out x in
    Vector bias;    // out
    Activation activation = Activation::identity;
};

/// Dense feed-forward net. The last layer is the linear classifier; every
/// layer before it belongs to the encoder, whose output is the feature vector.
class Network {
public:
    Network() = default;
    explicit Network(std::vector<Layer> layers);

    /// input -> hidden (ReLU)... -> feature_dim (identity) -> n_classes (identity).
    static Network mlp(int input_dim, const std::vector<int>& hidden, int feature_dim, int n_classes,
                       std::uint64_t seed);

    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Layer>& layers() noexcept { return layers_; }

    std::size_t depth() const noexcept { return layers_.size(); }
    int input_dim() const;
    int feature_dim() const;
    int n_classes() const;
    std::size_t parameter_count() const;

    bool congruent(const Network& other) const;
    /// Throws ContractViolation if dimensions do not chain or a parameter is non-finite.
    void validate() const;

    /// Max absolute elementwise difference; both nets must be congruent.
    double max_abs_diff(const Network& other) const;
    /// L2 norm of (this - other) over all parameters.
    double distance(const Network& other) const;

    bool operator==(const Network& other) const;

private:
    std::vector<Layer> layers_;
};

struct ForwardCache {
    Matrix input;
    std::vector<Matrix> pre;   // pre-activation per layer
    std::vector<Matrix> post;  // post-activation per layer
    Matrix encoded;            // encoder output, not normalized (classifier input)
    Vector encoded_norm;
    Matrix features;           // encoded rows scaled to unit L2 norm
    Matrix logits;
    Matrix probs;
};

struct LayerGradient {
    Matrix weight;
    Vector bias;
};

struct Gradients {
    std::vector<LayerGradient> layers;

    static Gradients zeros_like(const Network& net);
    Gradients& operator+=(const Gradients& other);
    Gradients& operator*=(double s);
    double max_abs() const;
    /// Zero every block except the classifier layer.
    void keep_classifier_only();
};

ForwardCache forward(const Network& net, const Matrix& x);

/// Reverse-mode gradients of a loss whose partials w.r.t. logits and w.r.t. the
/// normalized features are given. Pass an empty (0-row) matrix for either term
/// to drop it.
Gradients backward(const Network& net, const ForwardCache& cache, const Matrix& loss_grad_logits,
                   const Matrix& loss_grad_features);

Network sgd_step(const Network& net, const Gradients& g, double lr);

/// teacher <- (1 - momentum) * student + momentum * teacher
Network ema_update(const Network& teacher, const Network& student, double momentum);

struct LossValue {
    double value = 0.0;
    Matrix grad;  // w.r.t. logits
};

/// Mean negative log-likelihood over rows whose label is >= 0; label -1 marks an
/// ignored row. All-ignored input gives zero loss and zero gradient.
LossValue cross_entropy(const Matrix& probs, const std::vector<int>& labels);

/// Mean Shannon entropy of the rows of probs (natural log).
LossValue mean_entropy(const Matrix& probs);

}  // namespace comac::nn
