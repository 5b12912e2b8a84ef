#include "comac/nn.hpp"

#include "comac/error.hpp"

#include <cmath>
#include <random>

namespace comac::nn {

using detail::require;

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) {
    validate();
}

Network Network::mlp(int input_dim, const std::vector<int>& hidden, int feature_dim, int n_classes,
                     std::uint64_t seed) {
    require(input_dim > 0 && feature_dim > 0 && n_classes > 0, "mlp: dimensions must be positive");
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    auto add = [&](int in, int out, Activation act) {
        // He init for ReLU layers, LeCun for linear ones.
        const double gain = act == Activation::relu ? 2.0 : 1.0;
        std::normal_distribution<double> dist(0.0, std::sqrt(gain / in));
        Layer l;
        l.weight.resize(out, in);
        for (Eigen::Index i = 0; i < l.weight.size(); ++i)
            l.weight.data()[i] = dist(rng);
        l.bias = Vector::Zero(out);
        l.activation = act;
        layers.push_back(std::move(l));
    };
    int prev = input_dim;
    for (int h : hidden) {
        require(h > 0, "mlp: hidden width must be positive");
        add(prev, h, Activation::relu);
        prev = h;
    }
    add(prev, feature_dim, Activation::identity);
    add(feature_dim, n_classes, Activation::identity);
    return Network(std::move(layers));
}

int Network::input_dim() const {
    require(!layers_.empty(), "empty network");
    return static_cast<int>(layers_.front().weight.cols());
}

int Network::feature_dim() const {
    require(!layers_.empty(), "empty network");
    return static_cast<int>(layers_.back().weight.cols());
}

int Network::n_classes() const {
    require(!layers_.empty(), "empty network");
    return static_cast<int>(layers_.back().weight.rows());
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
        n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

bool Network::congruent(const Network& other) const {
    if (layers_.size() != other.layers_.size())
        return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& a = layers_[i];
        const auto& b = other.layers_[i];
        if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
            a.bias.size() != b.bias.size() || a.activation != b.activation)
            return false;
    }
    return true;
}

void Network::validate() const {
    require(!layers_.empty(), "network has no layers");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        const std::string tag = "layer " + std::to_string(i);
        require(l.weight.rows() > 0 && l.weight.cols() > 0, tag + ": empty weight matrix");
        require(l.bias.size() == l.weight.rows(), tag + ": bias length != weight rows");
        if (i + 1 < layers_.size())
            require(layers_[i + 1].weight.cols() == l.weight.rows(),
                    tag + ": output dim does not match next layer input");
        require(l.weight.allFinite() && l.bias.allFinite(), tag + ": non-finite parameter");
    }
    require(layers_.back().activation == Activation::identity, "classifier layer must be linear");
}

double Network::max_abs_diff(const Network& other) const {
    require(congruent(other), "max_abs_diff: networks not congruent");
    double m = 0.0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        m = std::max(m, (layers_[i].weight - other.layers_[i].weight).cwiseAbs().maxCoeff());
        m = std::max(m, (layers_[i].bias - other.layers_[i].bias).cwiseAbs().maxCoeff());
    }
    return m;
}

double Network::distance(const Network& other) const {
    require(congruent(other), "distance: networks not congruent");
    double s = 0.0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        s += (layers_[i].weight - other.layers_[i].weight).squaredNorm();
        s += (layers_[i].bias - other.layers_[i].bias).squaredNorm();
    }
    return std::sqrt(s);
}

bool Network::operator==(const Network& other) const {
    if (!congruent(other))
        return false;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].weight != other.layers_[i].weight || layers_[i].bias != other.layers_[i].bias)
            return false;
    return true;
}

Gradients Gradients::zeros_like(const Network& net) {
    Gradients g;
    for (const auto& l : net.layers())
        g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    return g;
}

Gradients& Gradients::operator+=(const Gradients& other) {
    require(layers.size() == other.layers.size(), "gradient add: layer count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        require(layers[i].weight.rows() == other.layers[i].weight.rows() &&
                    layers[i].weight.cols() == other.layers[i].weight.cols(),
                "gradient add: shape mismatch");
        layers[i].weight += other.layers[i].weight;
        layers[i].bias += other.layers[i].bias;
    }
    return *this;
}

Gradients& Gradients::operator*=(double s) {
    for (auto& l : layers) {
        l.weight *= s;
        l.bias *= s;
    }
    return *this;
}

double Gradients::max_abs() const {
    double m = 0.0;
    for (const auto& l : layers) {
        if (l.weight.size() > 0)
            m = std::max(m, l.weight.cwiseAbs().maxCoeff());
        if (l.bias.size() > 0)
            m = std::max(m, l.bias.cwiseAbs().maxCoeff());
    }
    return m;
}

void Gradients::keep_classifier_only() {
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
        layers[i].weight.setZero();
        layers[i].bias.setZero();
    }
}

namespace {

Matrix activate(const Matrix& pre, Activation act) {
    if (act == Activation::relu)
        return pre.cwiseMax(0.0);
    return pre;
}

}  // namespace

ForwardCache forward(const Network& net, const Matrix& x) {
    require(!net.layers().empty(), "forward: empty network");
    require(x.rows() >= 1, "forward: need at least one input row");
    require(x.cols() == net.input_dim(),
            "forward: input has " + std::to_string(x.cols()) + " columns, network expects " +
                std::to_string(net.input_dim()));

    const auto& layers = net.layers();
    ForwardCache c;
    c.input = x;
    c.pre.reserve(layers.size());
    c.post.reserve(layers.size());
    const Matrix* h = &c.input;
    for (const auto& l : layers) {
        Matrix a = (*h) * l.weight.transpose();
        a.rowwise() += l.bias.transpose();
        c.post.push_back(activate(a, l.activation));
        c.pre.push_back(std::move(a));
        h = &c.post.back();
    }
    const std::size_t L = layers.size();
    c.encoded = L >= 2 ? c.post[L - 2] : c.input;
    c.encoded_norm = c.encoded.rowwise().norm();
    c.features = normalize_rows(c.encoded);
    c.logits = c.post[L - 1];
    c.probs = softmax_rows(c.logits);
    return c;
}

namespace {

// d/de of (e / |e|) applied to an upstream gradient g, row by row.
Matrix normalization_backward(const ForwardCache& c, const Matrix& g) {
    Matrix out(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double r = c.encoded_norm[i];
        if (r < kTinyNorm) {
            out.row(i) = g.row(i);
            continue;
        }
        const auto z = c.features.row(i);
        out.row(i) = (g.row(i) - z * z.dot(g.row(i))) / r;
    }
    return out;
}

}  // namespace

Gradients backward(const Network& net, const ForwardCache& cache, const Matrix& loss_grad_logits,
                   const Matrix& loss_grad_features) {
    const auto& layers = net.layers();
    const std::size_t L = layers.size();
    require(cache.pre.size() == L && cache.post.size() == L, "backward: cache does not match network depth");
    const Eigen::Index n = cache.input.rows();
    const bool has_logit_term = loss_grad_logits.rows() > 0;
    const bool has_feature_term = loss_grad_features.rows() > 0;
    if (has_logit_term)
        require(loss_grad_logits.rows() == n && loss_grad_logits.cols() == net.n_classes(),
                "backward: logit gradient shape mismatch");
    if (has_feature_term)
        require(loss_grad_features.rows() == n && loss_grad_features.cols() == cache.features.cols(),
                "backward: feature gradient shape mismatch");

    Gradients g = Gradients::zeros_like(net);
    Matrix upstream = has_logit_term ? loss_grad_logits : Matrix::Zero(n, net.n_classes());
    for (std::size_t k = L; k-- > 0;) {
        const auto& l = layers[k];
        Matrix dpre = upstream;
        if (l.activation == Activation::relu)
            dpre = dpre.cwiseProduct((cache.pre[k].array() > 0.0).cast<double>().matrix());
        const Matrix& in = k == 0 ? cache.input : cache.post[k - 1];
        g.layers[k].weight = dpre.transpose() * in;
        g.layers[k].bias = dpre.colwise().sum().transpose();
        if (k == 0)
            break;
        upstream = dpre * l.weight;
        if (k == L - 1 && has_feature_term)
            upstream += normalization_backward(cache, loss_grad_features);
    }
    return g;
}

Network sgd_step(const Network& net, const Gradients& g, double lr) {
    require(lr > 0.0 && std::isfinite(lr), "sgd_step: learning rate must be positive and finite");
    require(g.layers.size() == net.depth(), "sgd_step: gradient/network depth mismatch");
    Network out = net;
    for (std::size_t i = 0; i < net.depth(); ++i) {
        auto& l = out.layers()[i];
        const auto& gl = g.layers[i];
        require(gl.weight.rows() == l.weight.rows() && gl.weight.cols() == l.weight.cols() &&
                    gl.bias.size() == l.bias.size(),
                "sgd_step: gradient shape mismatch at layer " + std::to_string(i));
        if (!gl.weight.allFinite())
            throw DivergenceError("sgd_step: non-finite gradient in layer " + std::to_string(i) + " weight");
        if (!gl.bias.allFinite())
            throw DivergenceError("sgd_step: non-finite gradient in layer " + std::to_string(i) + " bias");
        l.weight -= lr * gl.weight;
        l.bias -= lr * gl.bias;
    }
    return out;
}

Network ema_update(const Network& teacher, const Network& student, double momentum) {
    require(momentum >= 0.0 && momentum <= 1.0, "ema_update: momentum must lie in [0, 1]");
    require(teacher.congruent(student), "ema_update: teacher and student are not congruent");
    Network out = teacher;
    for (std::size_t i = 0; i < out.depth(); ++i) {
        auto& t = out.layers()[i];
        const auto& s = student.layers()[i];
        t.weight = (1.0 - momentum) * s.weight + momentum * t.weight;
        t.bias = (1.0 - momentum) * s.bias + momentum * t.bias;
    }
    return out;
}

LossValue cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
    require(static_cast<Eigen::Index>(labels.size()) == probs.rows(), "cross_entropy: label count mismatch");
    LossValue out{0.0, Matrix::Zero(probs.rows(), probs.cols())};
    int counted = 0;
    for (int y : labels)
        counted += y >= 0 ? 1 : 0;
    if (counted == 0)
        return out;
    const double inv = 1.0 / counted;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0)
            continue;
        require(y < probs.cols(), "cross_entropy: label out of range");
        out.value -= std::log(std::max(probs(i, y), 1e-300)) * inv;
        out.grad.row(i) = probs.row(i) * inv;
        out.grad(i, y) -= inv;
    }
    return out;
}

LossValue mean_entropy(const Matrix& probs) {
    LossValue out{0.0, Matrix::Zero(probs.rows(), probs.cols())};
    if (probs.rows() == 0)
        return out;
    const double inv = 1.0 / static_cast<double>(probs.rows());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        double h = 0.0;
        for (Eigen::Index j = 0; j < probs.cols(); ++j)
            if (probs(i, j) > 0.0)
                h -= probs(i, j) * std::log(probs(i, j));
        out.value += h * inv;
        for (Eigen::Index j = 0; j < probs.cols(); ++j) {
            const double p = probs(i, j);
            const double logp = p > 0.0 ? std::log(p) : 0.0;
            out.grad(i, j) = -p * (logp + h) * inv;
        }
    }
    return out;
}

}  // namespace comac::nn
