#include "helpers.hpp"

#include "comac/stream.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace comac;
using namespace comac::stream;

namespace {

WorldSpec small_world(double noise = 0.3, bool jitter = true, int points = 256) {
    WorldOptions o;
    o.noise_scale = noise;
    o.azimuth_jitter = jitter;
    o.points_per_sample = points;
    o.seed = 42;
    return make_world(o);
}

SegmentSpec clean_segment(int length = 3) {
    SegmentSpec s;
    s.name = "clean";
    s.length = length;
    return s;
}

}  // namespace

TEST_CASE("test_stream: zero noise puts every point on its prototype") {
    const auto w = small_world(0.0, false);
    const auto b = sample_clean(w, 5);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        const int k = b.labels[static_cast<std::size_t>(i)];
        CHECK(b.x2d.row(i) == w.proto_2d.row(k));
        CHECK(b.x3d.row(i) == w.proto_3d.row(k));
    }
}

TEST_CASE("test_stream: jittered 3D points keep radius and height") {
    const auto w = small_world(0.0, true);
    const auto b = sample_clean(w, 6);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        const auto p = w.proto_3d.row(b.labels[static_cast<std::size_t>(i)]);
        CHECK(std::hypot(b.x3d(i, 0), b.x3d(i, 1)) == doctest::Approx(std::hypot(p[0], p[1])).epsilon(1e-12));
        CHECK(b.x3d(i, 2) == p[2]);
    }
}

TEST_CASE("test_stream: generation is deterministic") {
    const auto w1 = small_world(), w2 = small_world();
    CHECK(w1.proto_2d == w2.proto_2d);
    CHECK(w1.proto_3d == w2.proto_3d);
    const auto d1 = make_source_dataset(w1, 20, 3), d2 = make_source_dataset(w2, 20, 3);
    REQUIRE(d1.train.size() == d2.train.size());
    for (std::size_t i = 0; i < d1.train.size(); ++i) {
        CHECK(d1.train[i].x2d == d2.train[i].x2d);
        CHECK(d1.train[i].labels == d2.train[i].labels);
    }
    CHECK(d1.holdout.size() == 4);

    const auto segs = default_schedule(w1);
    const auto s1 = make_stream(w1, segs, 9), s2 = make_stream(w2, segs, 9);
    for (std::size_t i : {0u, 250u, 1199u}) {
        CHECK(s1.at(i).x2d == s2.at(i).x2d);
        CHECK(s1.at(i).x3d == s2.at(i).x3d);
    }
}

TEST_CASE("test_stream: class counts are within binomial bounds") {
    WorldOptions o;
    o.points_per_sample = 10000;
    o.seed = 1;
    const auto w = make_world(o);
    const auto b = sample_clean(w, 2);
    std::vector<int> counts(5, 0);
    for (int k : b.labels)
        ++counts[static_cast<std::size_t>(k)];
    const double mean = 10000 / 5.0, sd = std::sqrt(10000 * 0.2 * 0.8);
    for (int c : counts)
        CHECK(std::abs(c - mean) < 3.0 * sd);
}

TEST_CASE("test_stream: identity corruption leaves the clean draw") {
    const auto w = small_world();
    Stream s(w, {clean_segment()}, 4);
    const auto b = s.at(1);
    CHECK(b.size() == w.points_per_sample);
    const auto again = s.at(1);
    CHECK(b.x2d == again.x2d);
    // No corruption op touches the data, so the batch is the clean sample itself.
    const auto c = corrupt(b, clean_segment(), 123, w.noise_scale);
    CHECK(c.x2d == b.x2d);
    CHECK(c.x3d == b.x3d);
    CHECK(c.labels == b.labels);
}

TEST_CASE("test_stream: dropout count within binomial bounds and rows stay aligned") {
    const auto w = small_world();
    SegmentSpec seg = clean_segment(50);
    seg.corrupt_3d.dropout = 0.5;
    Stream s(w, {seg}, 8);
    const double sd = std::sqrt(256 * 0.25);
    int outside = 0;
    for (std::size_t i = 0; i < 50; ++i) {
        const auto b = s.at(i);
        CHECK(b.x3d.rows() == b.x2d.rows());
        CHECK(static_cast<Eigen::Index>(b.labels.size()) == b.x2d.rows());
        outside += std::abs(static_cast<double>(b.size()) - 128.0) > 3.0 * sd ? 1 : 0;
    }
    // P(|X - 128| > 3 sd) is about 0.003 per draw.
    CHECK(outside <= 1);
}

TEST_CASE("test_stream: rotations") {
    std::mt19937_64 rng(3);
    const Matrix x = testutil::gaussian(20, 3, rng);
    CHECK((rotate_z(x, 2.0 * std::numbers::pi) - x).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((rotate_z(rotate_z(x, std::numbers::pi), std::numbers::pi) - x).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(rotate_z(x, 0.7).col(2) == x.col(2));

    PointBatch b;
    b.x2d = testutil::gaussian(20, 8, rng);
    b.x3d = x;
    b.labels.assign(20, 0);
    const auto twice = augment_3d(augment_3d(b, {180.0})[0], {180.0})[0];
    CHECK((twice.x3d - x).cwiseAbs().maxCoeff() < 1e-9);
    const auto same = augment_2d(b, {1.0})[0];
    CHECK(same.x2d == b.x2d);
    CHECK(same.x3d == b.x3d);
}

TEST_CASE("test_stream: default augmentation lists") {
    PointBatch b;
    b.x2d = Matrix::Ones(2, 8);
    b.x3d = Matrix::Ones(2, 3);
    b.labels = {0, 1};
    CHECK(augment(b, Modality::two_d, {0.5, 0.625, 0.75, 0.875}).size() == 4);
    CHECK(augment(b, Modality::three_d, {60, 120, 180, 240, 300}).size() == 5);
    CHECK(even_scales_2d(4) == std::vector<double>{0.5, 0.625, 0.75, 0.875});
    const auto a = even_angles_3d(5);
    const std::vector<double> expect{60, 120, 180, 240, 300};
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(a[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("test_stream: segment templates materialize against the world") {
    const auto w = small_world();
    SegmentTemplate t;
    t.name = "x";
    t.bias_2d = 2.0;
    t.rotation_3d_deg = 90.0;
    const auto s = materialize(t, w);
    CHECK(s.corrupt_2d.bias.norm() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(s.corrupt_3d.rotation_rad == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
    t.bias_2d_vector = {1.0, 2.0};
    CHECK_THROWS_AS(materialize(t, w), ConfigError);
    t.bias_2d_vector.clear();
    t.dropout_3d = 1.0;
    CHECK_THROWS_AS(materialize(t, w), ConfigError);

    const auto def = default_schedule(w);
    CHECK(def.size() == 6);
    for (const auto& seg : def)
        CHECK(seg.length == 200);
}

TEST_CASE("test_stream: stream yields each sample once in order") {
    const auto w = small_world(0.3, true, 16);
    Stream s(w, {clean_segment(2), clean_segment(3)}, 1);
    CHECK(s.total_length() == 5);
    int n = 0;
    while (!s.done()) {
        const auto b = s.next();
        CHECK(b.sample_index == n);
        CHECK(b.segment_id == (n < 2 ? 0 : 1));
        ++n;
    }
    CHECK(n == 5);
    CHECK_THROWS_AS(s.next(), ContractViolation);
    CHECK_THROWS_AS(Stream(w, {}, 1), ConfigError);
}

TEST_CASE("test_stream: pretraining separates the source task") {
    const auto w = small_world();
    const auto data = make_source_dataset(w, 100, 11);
    const auto p2 = ModelPair::from_student(nn::Network::mlp(w.dim_2d, {32}, 16, 5, 1), Modality::two_d);
    const auto p3 = ModelPair::from_student(nn::Network::mlp(w.dim_3d, {32}, 16, 5, 2), Modality::three_d);

    PretrainOptions none;
    none.epochs = 0;
    const auto idle = pretrain(p2, p3, data, none);
    CHECK(idle.pair_2d.student == p2.student);
    CHECK(idle.pair_2d.teacher == p2.student);

    PretrainOptions opts;
    opts.seed = 3;
    const auto r = pretrain(p2, p3, data, opts);
    CHECK(r.holdout_accuracy_2d > 0.9);
    CHECK(r.holdout_accuracy_3d > 0.9);
    CHECK(r.pair_3d.teacher == r.pair_3d.student);
    for (const auto& m : r.features_2d)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            CHECK(std::abs(m.row(i).norm() - 1.0) < 1e-9);
}

TEST_CASE("test_stream: colliding prototypes are rejected") {
    WorldOptions o;
    o.noise_scale = 5.0;
    CHECK_THROWS_AS(make_world(o), ConfigError);
}
