#include "comac/error.hpp"
#include "comac/metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

using namespace comac;
using namespace comac::metrics;

TEST_CASE("test_metrics: perfect prediction") {
    const std::vector<int> y{0, 1, 2, 2, 1};
    const auto r = compute_miou(y, y, 4);
    CHECK(r.miou == 1.0);
    CHECK(r.accuracy == 1.0);
    CHECK(r.per_class[0].value() == 1.0);
    CHECK_FALSE(r.per_class[3].has_value());
}

TEST_CASE("test_metrics: all-zero prediction on a half split") {
    const auto r = compute_miou({0, 0, 0, 0}, {0, 0, 1, 1}, 2);
    CHECK(r.per_class[0].value() == doctest::Approx(0.5));
    CHECK(r.per_class[1].value() == 0.0);
    CHECK(r.miou == doctest::Approx(0.25));
    CHECK(r.accuracy == doctest::Approx(0.5));
}

TEST_CASE("test_metrics: random instances match a set-based oracle") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const int nc = 2 + trial % 5;
        const int n = 1 + static_cast<int>(rng() % 200);
        std::vector<int> pred(static_cast<std::size_t>(n)), truth(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            pred[static_cast<std::size_t>(i)] = static_cast<int>(rng() % static_cast<unsigned>(nc));
            truth[static_cast<std::size_t>(i)] = static_cast<int>(rng() % static_cast<unsigned>(nc));
        }
        // IoU as |pred==k AND truth==k| / |pred==k OR truth==k| over point sets.
        double sum = 0.0;
        int present = 0;
        for (int k = 0; k < nc; ++k) {
            std::set<int> p, t;
            for (int i = 0; i < n; ++i) {
                if (pred[static_cast<std::size_t>(i)] == k)
                    p.insert(i);
                if (truth[static_cast<std::size_t>(i)] == k)
                    t.insert(i);
            }
            std::set<int> uni = p;
            uni.insert(t.begin(), t.end());
            if (uni.empty())
                continue;
            int inter = 0;
            for (int i : p)
                inter += t.count(i) ? 1 : 0;
            sum += static_cast<double>(inter) / static_cast<double>(uni.size());
            ++present;
        }
        const auto r = compute_miou(pred, truth, nc);
        CHECK(r.miou == doctest::Approx(sum / present).epsilon(1e-15));
        CHECK(r.n_points == n);
        CHECK(r.miou >= 0.0);
        CHECK(r.miou <= 1.0);
    }
}

TEST_CASE("test_metrics: confusion matrices add") {
    ConfusionMatrix a(3), b(3);
    a.add({0, 1}, {0, 2});
    b.add(2, 2);
    a += b;
    CHECK(a.total() == 3);
    CHECK(a.at(2, 1) == 1);
    CHECK(a.at(2, 2) == 1);
}

TEST_CASE("test_metrics: contract violations") {
    CHECK_THROWS_AS(compute_miou({}, {}, 2), ContractViolation);
    CHECK_THROWS_AS(compute_miou({0, 3}, {0, 1}, 2), ContractViolation);
    CHECK_THROWS_AS(compute_miou({0}, {0, 1}, 2), ContractViolation);
}
