#include "helpers.hpp"

#include "comac/memory.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace comac;
using namespace comac::memory;

namespace {

Matrix rows_of(std::initializer_list<std::initializer_list<double>> r) {
    Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& row : r) {
        Eigen::Index j = 0;
        for (double v : row)
            m(i, j++) = v;
        ++i;
    }
    return m;
}

// Naive log-form loss: sum_a [ -mean_p <a,p>/T + log sum_{n in all} exp(<a,n>/T) ].
double naive_log_ratio(const Matrix& anchors, const std::vector<Matrix>& qs, int k, double temp) {
    double total = 0.0;
    for (Eigen::Index a = 0; a < anchors.rows(); ++a) {
        double pos = 0.0;
        for (Eigen::Index p = 0; p < qs[static_cast<std::size_t>(k)].rows(); ++p) {
            double d = 0.0;
            for (Eigen::Index f = 0; f < anchors.cols(); ++f)
                d += anchors(a, f) * qs[static_cast<std::size_t>(k)](p, f);
            pos += d / temp;
        }
        pos /= static_cast<double>(qs[static_cast<std::size_t>(k)].rows());
        double denom = 0.0;
        for (const auto& q : qs)
            for (Eigen::Index n = 0; n < q.rows(); ++n) {
                double d = 0.0;
                for (Eigen::Index f = 0; f < anchors.cols(); ++f)
                    d += anchors(a, f) * q(n, f);
                denom += std::exp(d / temp);
            }
        total += -pos + std::log(denom);
    }
    return total;
}

// Literal form: -1/|P| sum_p exp(<a,p>) / sum_{n not in class k} exp(<a,n>).
double naive_literal(const Matrix& anchors, const std::vector<Matrix>& qs, int k) {
    double total = 0.0;
    const auto& pos = qs[static_cast<std::size_t>(k)];
    for (Eigen::Index a = 0; a < anchors.rows(); ++a) {
        double denom = 0.0;
        for (std::size_t c = 0; c < qs.size(); ++c) {
            if (static_cast<int>(c) == k)
                continue;
            for (Eigen::Index n = 0; n < qs[c].rows(); ++n)
                denom += std::exp(anchors.row(a).dot(qs[c].row(n)));
        }
        double s = 0.0;
        for (Eigen::Index p = 0; p < pos.rows(); ++p)
            s += std::exp(anchors.row(a).dot(pos.row(p))) / denom;
        total += -s / static_cast<double>(pos.rows());
    }
    return total;
}

std::vector<MomentumQueue> make_queues(const std::vector<Matrix>& qs) {
    std::vector<MomentumQueue> out;
    for (const auto& q : qs)
        out.emplace_back(q);
    return out;
}

Matrix shuffled_rows(const Matrix& m, std::mt19937_64& rng) {
    std::vector<int> idx(static_cast<std::size_t>(m.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return m(idx, Eigen::all);
}

}  // namespace

TEST_CASE("test_memory: centroid of identical rows has zero spread") {
    Matrix f(4, 3);
    f.rowwise() = Eigen::RowVector3d(0.6, 0.0, 0.8);
    const auto c = build_source_centroids(std::vector<Matrix>{f, f});
    CHECK((c[0].source_mean - Eigen::Vector3d(0.6, 0.0, 0.8)).norm() < 1e-15);
    CHECK(c[0].source_std.cwiseAbs().maxCoeff() < 1e-15);
    CHECK(c[0].live_mean == c[0].source_mean);
}

TEST_CASE("test_memory: antipodal rows average to zero") {
    const Matrix f = rows_of({{1, 0}, {-1, 0}});
    const auto c = build_source_centroids(std::vector<Matrix>{f, f});
    CHECK(c[0].source_mean.norm() < 1e-15);
}

TEST_CASE("test_memory: centroid matches a two-pass oracle") {
    std::mt19937_64 rng(17);
    const Matrix f = testutil::unit_rows(100, 6, rng);
    const auto c = build_source_centroids(std::vector<Matrix>{f, f});
    for (int j = 0; j < 6; ++j) {
        double mean = 0.0;
        for (int i = 0; i < 100; ++i)
            mean += f(i, j);
        mean /= 100.0;
        double ss = 0.0;
        for (int i = 0; i < 100; ++i)
            ss += (f(i, j) - mean) * (f(i, j) - mean);
        CHECK(std::abs(c[0].source_mean[j] - mean) < 1e-12);
        CHECK(std::abs(c[0].source_std[j] - std::sqrt(ss / 99.0)) < 1e-12);
    }
}

TEST_CASE("test_memory: too little support names the class") {
    std::mt19937_64 rng(1);
    const Matrix ok = testutil::unit_rows(5, 3, rng);
    const Matrix thin = testutil::unit_rows(1, 3, rng);
    try {
        build_source_centroids(std::vector<Matrix>{ok, thin});
        FAIL("expected InsufficientSupport");
    } catch (const InsufficientSupport& e) {
        CHECK(std::string(e.what()).find("class 1") != std::string::npos);
    }
}

TEST_CASE("test_memory: pseudo-source sampling") {
    ClassCentroid c;
    c.source_mean = Eigen::Vector3d(0.3, -0.4, 1.2);
    c.source_std = Eigen::Vector3d::Zero();
    const Matrix degenerate = sample_pseudo_source(c, 10, 3);
    const Eigen::RowVector3d dir = c.source_mean.transpose() / c.source_mean.norm();
    for (int i = 0; i < 10; ++i)
        CHECK((degenerate.row(i) - dir).norm() < 1e-15);

    c.source_std = Eigen::Vector3d(0.2, 0.5, 0.1);
    CHECK(sample_pseudo_source(c, 64, 9) == sample_pseudo_source(c, 64, 9));
    CHECK(sample_pseudo_source(c, 64, 9) != sample_pseudo_source(c, 64, 10));

    const int n = 4096;
    const Matrix raw = sample_gaussian(c, n, 77);
    for (int j = 0; j < 3; ++j) {
        const double bound = 4.0 * c.source_std[j] / std::sqrt(static_cast<double>(n));
        CHECK(std::abs(raw.col(j).mean() - c.source_mean[j]) < bound);
    }
    CHECK_THROWS_AS(sample_pseudo_source(c, 0, 1), ContractViolation);
}

TEST_CASE("test_memory: FIFO enqueue semantics") {
    const Matrix init = rows_of({{1, 0}, {0, 1}, {-1, 0}, {0, -1}});  // a b c d
    MomentumQueue q(init);
    const Matrix ef = rows_of({{0.6, 0.8}, {0.8, 0.6}});
    q.enqueue(Matrix(0, 2));
    CHECK(q.contents() == init);
    q.enqueue(ef);
    Matrix expect(4, 2);
    expect << init.row(2), init.row(3), ef.row(0), ef.row(1);
    CHECK(q.contents() == expect);
    CHECK(q.tags() == std::vector<std::uint64_t>{2, 3, 4, 5});
    CHECK(q.size() == 4);

    const Matrix full = rows_of({{0, 1}, {1, 0}, {0.6, -0.8}, {-0.8, 0.6}});
    q.enqueue(full);
    CHECK(q.contents() == full);
    CHECK_THROWS_AS(q.enqueue(rows_of({{2, 0}})), ContractViolation);
    CHECK_THROWS_AS(q.enqueue(Matrix::Zero(5, 2)), ContractViolation);
}

TEST_CASE("test_memory: centroid mean") {
    std::mt19937_64 rng(5);
    const Matrix bank = testutil::unit_rows(32, 4, rng);
    MomentumQueue q(bank);
    CHECK((centroid_mean(q) - bank.colwise().mean().transpose()).norm() == 0.0);

    Matrix rep(8, 4);
    rep.rowwise() = bank.row(0);
    CHECK((centroid_mean(MomentumQueue(rep)) - bank.row(0).transpose()).norm() < 1e-15);

    q.enqueue(testutil::unit_rows(13, 4, rng));
    const Matrix c = q.contents();
    for (int j = 0; j < 4; ++j) {
        double s = 0.0;
        for (int i = 0; i < 32; ++i)
            s += c(i, j);
        CHECK(std::abs(centroid_mean(q)[j] - s / 32.0) < 1e-12);
    }
}

TEST_CASE("test_memory: select_confident thresholds and caps") {
    RestorationPolicy pol;
    std::mt19937_64 rng(6);
    const Matrix feats = testutil::gaussian(300, 4, rng);

    Matrix low = Matrix::Constant(300, 3, 1.0 / 3.0);
    auto none = select_confident(low, feats, pol);
    for (const auto& idx : none.indices)
        CHECK(idx.empty());

    Matrix sure = Matrix::Zero(300, 3);
    sure.col(1).setOnes();
    auto kept = select_confident(sure, feats, pol);
    CHECK(kept.indices[1].size() == 200);
    CHECK(kept.indices[0].empty());
    // All tied at 1.0: the first 200 rows win.
    for (int i = 0; i < 200; ++i)
        CHECK(kept.indices[1][static_cast<std::size_t>(i)] == i);
    for (Eigen::Index i = 0; i < kept.features[1].rows(); ++i)
        CHECK(kept.features[1].row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("test_memory: select_confident is permutation invariant") {
    std::mt19937_64 rng(7);
    RestorationPolicy pol;
    pol.n_enqueue = 5;
    pol.confidence_threshold = 0.4;
    const Matrix probs = testutil::simplex_rows(60, 3, rng);
    const Matrix feats = testutil::gaussian(60, 4, rng);
    std::vector<int> perm(60);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = select_confident(probs, feats, pol);
    const auto b = select_confident(probs(perm, Eigen::all), feats(perm, Eigen::all), pol);
    for (int k = 0; k < 3; ++k) {
        REQUIRE(a.indices[k].size() == b.indices[k].size());
        for (std::size_t i = 0; i < a.indices[k].size(); ++i)
            CHECK(perm[static_cast<std::size_t>(b.indices[k][i])] == a.indices[k][i]);
        CHECK(a.features[k] == b.features[k]);
    }
}

TEST_CASE("test_memory: restoration branches") {
    std::mt19937_64 rng(8);
    const Matrix bank = testutil::unit_rows(50, 3, rng);
    const MomentumQueue prev(testutil::unit_rows(10, 3, rng));
    MomentumQueue upd = prev;
    upd.enqueue(testutil::unit_rows(4, 3, rng));
    RestorationPolicy pol;
    pol.n_enqueue = 4;

    std::mt19937_64 flag(1), samp(2);
    pol.restore_prob = 0.0;
    for (int i = 0; i < 200; ++i) {
        auto r = maybe_restore(prev, upd, bank, pol, flag, samp);
        CHECK_FALSE(r.restored);
        CHECK(r.queue.contents() == upd.contents());
    }
    pol.restore_prob = 1.0;
    for (int i = 0; i < 200; ++i) {
        auto r = maybe_restore(prev, upd, bank, pol, flag, samp);
        CHECK(r.restored);
        // Only bank rows and rows of the previous queue.
        const Matrix c = r.queue.contents();
        for (int j = 6; j < 10; ++j) {
            bool found = false;
            for (Eigen::Index b = 0; b < bank.rows(); ++b)
                found = found || c.row(j) == bank.row(b);
            CHECK(found);
        }
        CHECK(r.queue.contents().topRows(6) == prev.contents().bottomRows(6));
    }
}

TEST_CASE("test_memory: bank sampling is without replacement") {
    std::mt19937_64 rng(4);
    Matrix bank(20, 1);
    for (int i = 0; i < 20; ++i)
        bank(i, 0) = i;
    const Matrix s = sample_bank_rows(bank, 20, rng);
    std::vector<double> v(s.data(), s.data() + 20);
    std::sort(v.begin(), v.end());
    for (int i = 0; i < 20; ++i)
        CHECK(v[static_cast<std::size_t>(i)] == i);
    CHECK_THROWS_AS(sample_bank_rows(bank, 21, rng), ContractViolation);
}

TEST_CASE("test_memory: restoration count lies in the binomial interval") {
    std::mt19937_64 rng(1);
    const Matrix bank = testutil::unit_rows(64, 3, rng);
    MomentumQueue q(testutil::unit_rows(16, 3, rng));
    RestorationPolicy pol;
    pol.n_enqueue = 4;
    std::mt19937_64 flag(2024), samp(7);
    int restored = 0;
    for (int t = 0; t < 10000; ++t) {
        MomentumQueue upd = q;
        upd.enqueue(testutil::unit_rows(4, 3, rng));
        auto r = maybe_restore(q, upd, bank, pol, flag, samp);
        restored += r.restored ? 1 : 0;
        q = r.queue;
    }
    CHECK(restored >= 4836);
    CHECK(restored <= 5164);
}

TEST_CASE("test_memory: some restoration in every 50-step window") {
    // Bernoulli(0.5) flags per step; N_q and N_enq at full scale.
    const int nq = 4096, nenq = 200, f = 4;
    std::mt19937_64 r0(0);
    const Matrix bank = testutil::unit_rows(nq, f, r0);
    const Matrix target = testutil::unit_rows(nenq, f, r0);
    RestorationPolicy pol;
    pol.n_enqueue = nenq;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 flag(seed), samp(seed + 100);
        MomentumQueue q(bank);
        std::vector<bool> hit;
        for (int t = 0; t < 1000; ++t) {
            MomentumQueue upd = q;
            upd.enqueue(target);
            auto r = maybe_restore(q, upd, bank, pol, flag, samp);
            hit.push_back(r.restored);
            q = std::move(r.queue);
            CHECK(q.size() == nq);
        }
        for (int start = 0; start + 50 <= 1000; ++start) {
            bool any = false;
            for (int t = start; t < start + 50; ++t)
                any = any || hit[static_cast<std::size_t>(t)];
            CHECK(any);
        }
        CHECK(q.pseudo_source_fraction() > 0.0);
    }
}

TEST_CASE("test_memory: contrastive loss against naive oracles") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Matrix> raw;
        for (int c = 0; c < 4; ++c)
            raw.push_back(testutil::unit_rows(6, 5, rng));
        const auto qs = make_queues(raw);
        const Matrix anchors = testutil::unit_rows(7, 5, rng);
        const int k = trial % 4;
        const double temp = trial % 2 ? 1.0 : 0.5;
        const auto lr = contrastive_loss(anchors, qs, k, ContrastiveForm::log_ratio, temp);
        CHECK(std::abs(lr.loss - naive_log_ratio(anchors, raw, k, temp)) < 1e-12);
        const auto lit = contrastive_loss(anchors, qs, k, ContrastiveForm::literal);
        CHECK(std::abs(lit.loss - naive_literal(anchors, raw, k)) < 1e-12);

        // Central differences on the anchor gradient, both forms.
        for (auto form : {ContrastiveForm::log_ratio, ContrastiveForm::literal}) {
            const auto an = contrastive_loss(anchors, qs, k, form, temp);
            double worst = 0.0;
            const double scale = std::max(an.grad.cwiseAbs().maxCoeff(), 1e-12);
            for (Eigen::Index i = 0; i < anchors.size(); ++i) {
                Matrix plus = anchors, minus = anchors;
                plus.data()[i] += 1e-5;
                minus.data()[i] -= 1e-5;
                const double num = (contrastive_loss(plus, qs, k, form, temp).loss -
                                    contrastive_loss(minus, qs, k, form, temp).loss) /
                                   2e-5;
                const double a = an.grad.data()[i];
                worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-3 * scale}));
            }
            CHECK(worst < 1e-4);
        }
    }
}

TEST_CASE("test_memory: contrastive loss edge cases") {
    std::mt19937_64 rng(2);
    const auto qs = make_queues({testutil::unit_rows(4, 3, rng), testutil::unit_rows(4, 3, rng)});
    const auto empty = contrastive_loss(Matrix(0, 3), qs, 0);
    CHECK(empty.loss == 0.0);
    CHECK(empty.grad.size() == 0);
    const auto single = make_queues({testutil::unit_rows(4, 3, rng)});
    CHECK_THROWS_AS(contrastive_loss(testutil::unit_rows(2, 3, rng), single, 0), ContractViolation);
}

TEST_CASE("test_memory: contrastive loss is permutation invariant") {
    std::mt19937_64 rng(13);
    std::vector<Matrix> raw;
    for (int c = 0; c < 3; ++c)
        raw.push_back(testutil::unit_rows(8, 4, rng));
    const Matrix anchors = testutil::unit_rows(9, 4, rng);
    const double base = contrastive_loss(anchors, make_queues(raw), 1).loss;
    std::vector<Matrix> shuf;
    for (const auto& q : raw)
        shuf.push_back(shuffled_rows(q, rng));
    CHECK(std::abs(contrastive_loss(shuffled_rows(anchors, rng), make_queues(shuf), 1).loss - base) < 1e-12);
}

TEST_CASE("test_memory: moving an anchor onto the positive mean lowers the loss") {
    std::mt19937_64 rng(21);
    // Tight clusters around distinct directions.
    auto cluster = [&](Eigen::RowVector3d centre) {
        Matrix m = testutil::gaussian(16, 3, rng, 0.05);
        m.rowwise() += centre;
        return normalize_rows(m);
    };
    const auto qs = make_queues({cluster({1, 0, 0}), cluster({0, 1, 0}), cluster({0, 0, 1})});
    Matrix at_negative(1, 3);
    at_negative.row(0) = centroid_mean(qs[1]).transpose().normalized();
    Matrix at_positive(1, 3);
    at_positive.row(0) = centroid_mean(qs[0]).transpose().normalized();
    CHECK(contrastive_loss(at_positive, qs, 0).loss < contrastive_loss(at_negative, qs, 0).loss);
}
