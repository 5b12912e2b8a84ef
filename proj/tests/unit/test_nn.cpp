#include "helpers.hpp"

#include "comac/gradcheck.hpp"
#include "comac/nn.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace comac;
using namespace comac::nn;

namespace {

// Plain loops over std::vector, nothing shared with the Eigen path.
std::vector<std::vector<double>> naive_logits(const Network& net, const Matrix& x) {
    std::vector<std::vector<double>> out;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        std::vector<double> a(static_cast<std::size_t>(x.cols()));
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            a[static_cast<std::size_t>(c)] = x(r, c);
        for (const auto& l : net.layers()) {
            std::vector<double> next(static_cast<std::size_t>(l.weight.rows()));
            for (Eigen::Index o = 0; o < l.weight.rows(); ++o) {
                double s = l.bias[o];
                for (Eigen::Index i = 0; i < l.weight.cols(); ++i)
                    s += l.weight(o, i) * a[static_cast<std::size_t>(i)];
                if (l.activation == Activation::relu && s < 0.0)
                    s = 0.0;
                next[static_cast<std::size_t>(o)] = s;
            }
            a = std::move(next);
        }
        out.push_back(std::move(a));
    }
    return out;
}

Network single_layer(const Matrix& w) {
    Layer l{w, Vector::Zero(w.rows()), Activation::identity};
    Layer cls{Matrix::Identity(w.rows(), w.rows()), Vector::Zero(w.rows()), Activation::identity};
    return Network({l, cls});
}

}  // namespace

TEST_CASE("test_nn: identity net gives softmax of the input") {
    const auto net = single_layer(Matrix::Identity(2, 2));
    Matrix x(1, 2);
    x << 0.0, 0.0;
    const auto c = forward(net, x);
    CHECK(c.probs(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(c.probs(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

    Matrix one_hot = Matrix::Identity(3, 3);
    const auto c3 = forward(single_layer(Matrix::Identity(3, 3)), one_hot);
    const double e = std::exp(1.0);
    for (int i = 0; i < 3; ++i)
        CHECK(c3.probs(i, i) == doctest::Approx(e / (e + 2.0)).epsilon(1e-14));
}

TEST_CASE("test_nn: zero-weight classifier is uniform") {
    std::mt19937_64 rng(1);
    auto net = Network::mlp(4, {6}, 5, 3, 7);
    net.layers().back().weight.setZero();
    const auto c = forward(net, testutil::gaussian(10, 4, rng));
    for (Eigen::Index i = 0; i < c.probs.size(); ++i)
        CHECK(c.probs.data()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("test_nn: forward matches a naive per-element oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto net = testutil::random_net(5, 9, 4, 3, rng);
        const Matrix x = testutil::gaussian(7, 5, rng);
        const auto c = forward(net, x);
        const auto oracle = naive_logits(net, x);
        for (Eigen::Index r = 0; r < x.rows(); ++r)
            for (Eigen::Index k = 0; k < 3; ++k)
                CHECK(std::abs(c.logits(r, k) - oracle[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)]) <
                      1e-12);
        for (Eigen::Index r = 0; r < x.rows(); ++r)
            CHECK(c.features.row(r).norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("test_nn: forward is bitwise deterministic") {
    std::mt19937_64 rng(3);
    const auto net = testutil::random_net(5, 9, 4, 3, rng);
    const Matrix x = testutil::gaussian(20, 5, rng);
    CHECK(forward(net, x).probs == forward(net, x).probs);
}

TEST_CASE("test_nn: softmax rows sum to one and ignore row shifts") {
    std::mt19937_64 rng(5);
    Matrix l = testutil::gaussian(30, 6, rng, 50.0);
    const Matrix p = softmax_rows(l);
    Matrix shifted = l;
    for (Eigen::Index i = 0; i < l.rows(); ++i)
        shifted.row(i).array() += 1000.0 * (i % 3 == 0 ? -1.0 : 1.0);
    const Matrix q = softmax_rows(shifted);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-9);
        CHECK((p.row(i) - q.row(i)).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("test_nn: zero upstream gradients give zero parameter gradients") {
    std::mt19937_64 rng(8);
    const auto net = testutil::random_net(4, 6, 3, 2, rng);
    const Matrix x = testutil::gaussian(5, 4, rng);
    const auto c = forward(net, x);
    const auto g = backward(net, c, Matrix::Zero(5, 2), Matrix::Zero(5, 3));
    CHECK(g.max_abs() == 0.0);
}

TEST_CASE("test_nn: finite-difference gradients for every loss") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const auto net = testutil::random_net(4, 8, 3, 3, rng);
        const Matrix x = testutil::gaussian(6, 4, rng);
        LossSetup s;
        s.labels = {0, 1, 2, 0, 1, 2};
        for (int k = 0; k < 3; ++k)
            s.queues.emplace_back(testutil::unit_rows(5, 3, rng));
        for (auto kind : {LossKind::cross_entropy, LossKind::contrastive, LossKind::combined}) {
            s.kind = kind;
            for (auto form : {memory::ContrastiveForm::log_ratio, memory::ContrastiveForm::literal}) {
                s.form = form;
                const auto rep = grad_check(net, x, s);
                CAPTURE(trial);
                CAPTURE(static_cast<int>(kind));
                CHECK(rep.max_rel_error < 1e-4);
            }
        }
    }
}

TEST_CASE("test_nn: combined loss with zero contrastive weight is CE exactly") {
    std::mt19937_64 rng(4);
    const auto net = testutil::random_net(4, 8, 3, 3, rng);
    const Matrix x = testutil::gaussian(6, 4, rng);
    LossSetup s;
    s.labels = {0, 1, 2, 2, 1, 0};
    for (int k = 0; k < 3; ++k)
        s.queues.emplace_back(testutil::unit_rows(5, 3, rng));
    s.kind = LossKind::cross_entropy;
    const auto ce = evaluate_loss(net, x, s);
    s.kind = LossKind::combined;
    s.lambda_cts = 0.0;
    const auto comb = evaluate_loss(net, x, s);
    CHECK(ce.value == comb.value);
    for (std::size_t i = 0; i < ce.grads.layers.size(); ++i) {
        CHECK(ce.grads.layers[i].weight == comb.grads.layers[i].weight);
        CHECK(ce.grads.layers[i].bias == comb.grads.layers[i].bias);
    }
}

TEST_CASE("test_nn: sgd_step arithmetic") {
    Layer l{Matrix::Constant(1, 1, 1.0), Vector::Zero(1), Activation::identity};
    Network net({l, Layer{Matrix::Identity(1, 1), Vector::Zero(1), Activation::identity}});
    auto g = Gradients::zeros_like(net);
    CHECK(sgd_step(net, g, 0.1) == net);
    g.layers[0].weight(0, 0) = 2.0;
    CHECK(sgd_step(net, g, 0.1).layers()[0].weight(0, 0) == doctest::Approx(0.8).epsilon(1e-15));

    std::mt19937_64 rng(9);
    const auto big = testutil::random_net(3, 4, 2, 2, rng);
    auto g1 = Gradients::zeros_like(big), g2 = Gradients::zeros_like(big);
    for (std::size_t i = 0; i < g1.layers.size(); ++i) {
        g1.layers[i].weight = testutil::gaussian(static_cast<int>(g1.layers[i].weight.rows()),
                                                 static_cast<int>(g1.layers[i].weight.cols()), rng);
        g2.layers[i].weight = testutil::gaussian(static_cast<int>(g2.layers[i].weight.rows()),
                                                 static_cast<int>(g2.layers[i].weight.cols()), rng);
    }
    auto sum = g1;
    sum += g2;
    CHECK(sgd_step(sgd_step(big, g1, 0.05), g2, 0.05).max_abs_diff(sgd_step(big, sum, 0.05)) < 1e-14);
}

TEST_CASE("test_nn: ema fixed points and geometric decay") {
    std::mt19937_64 rng(2);
    const auto teacher = testutil::random_net(3, 4, 2, 2, rng);
    const auto student = testutil::random_net(3, 4, 2, 2, rng);
    CHECK(ema_update(teacher, student, 1.0) == teacher);
    CHECK(ema_update(teacher, student, 0.0) == student);

    Layer zero{Matrix::Zero(1, 1), Vector::Zero(1), Activation::identity};
    Layer one{Matrix::Ones(1, 1), Vector::Ones(1), Activation::identity};
    Network s({zero, zero}), t({one, one});
    for (int i = 0; i < 100; ++i)
        t = ema_update(t, s, 0.999);
    CHECK(std::abs(t.layers()[0].weight(0, 0) - 0.9048) < 1e-4);
    CHECK(std::abs(t.layers()[0].weight(0, 0) - std::pow(0.999, 100)) < 1e-9);
}

TEST_CASE("test_nn: ema is linear in both parameter sets") {
    std::mt19937_64 rng(12);
    auto a = testutil::random_net(3, 4, 2, 2, rng);
    auto b = testutil::random_net(3, 4, 2, 2, rng);
    const double s = 2.5;
    auto scaled = [s](Network n) {
        for (auto& l : n.layers()) {
            l.weight *= s;
            l.bias *= s;
        }
        return n;
    };
    const auto lhs = ema_update(scaled(a), scaled(b), 0.9);
    const auto rhs = scaled(ema_update(a, b, 0.9));
    CHECK(lhs.max_abs_diff(rhs) < 1e-12);
}

TEST_CASE("test_nn: cross entropy ignores unlabelled rows") {
    Matrix p(3, 2);
    p << 0.9, 0.1, 0.2, 0.8, 0.5, 0.5;
    const auto all_ignored = cross_entropy(p, {-1, -1, -1});
    CHECK(all_ignored.value == 0.0);
    CHECK(all_ignored.grad.cwiseAbs().maxCoeff() == 0.0);
    const auto two = cross_entropy(p, {0, -1, 1});
    CHECK(two.value == doctest::Approx(-(std::log(0.9) + std::log(0.5)) / 2.0).epsilon(1e-14));
}

TEST_CASE("test_nn: validate rejects broken shapes and non-finite weights") {
    auto net = Network::mlp(3, {4}, 2, 2, 1);
    net.layers()[1].weight(0, 0) = std::nan("");
    CHECK_THROWS_AS(net.validate(), ContractViolation);
    CHECK_THROWS_AS(Network::mlp(0, {4}, 2, 2, 1), ContractViolation);
}
