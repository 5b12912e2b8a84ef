#include "comac/stream.hpp"

#include "comac/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace comac::stream {

using detail::require;

namespace {

double min_pairwise_distance(const Matrix& protos) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < protos.rows(); ++a)
        for (Eigen::Index b = a + 1; b < protos.rows(); ++b)
            best = std::min(best, (protos.row(a) - protos.row(b)).norm());
    return best;
}

template <class Draw>
Matrix rejection_layout(int n, int dim, double min_sep, std::mt19937_64& rng, Draw draw, const char* what) {
    Matrix out(n, dim);
    for (int k = 0; k < n; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
            const Eigen::RowVectorXd cand = draw(rng);
            placed = true;
            for (int j = 0; j < k && placed; ++j)
                placed = (out.row(j) - cand).norm() > min_sep;
            if (placed)
                out.row(k) = cand;
        }
        if (!placed)
            throw ConfigError(std::string("cannot place ") + what + " prototype " + std::to_string(k) +
                              " at separation " + std::to_string(min_sep));
    }
    return out;
}

}  // namespace

void WorldSpec::validate() const {
    if (n_classes < 2)
        throw ConfigError("world: n_classes must be >= 2");
    if (dim_2d < 1 || dim_3d < 3)
        throw ConfigError("world: need dim_2d >= 1 and dim_3d >= 3");
    if (points_per_sample < n_classes)
        throw ConfigError("world: points_per_sample must be >= n_classes");
    if (!(noise_scale >= 0.0))
        throw ConfigError("world: noise_scale must be >= 0");
    if (proto_2d.rows() != n_classes || proto_2d.cols() != dim_2d || proto_3d.rows() != n_classes ||
        proto_3d.cols() != dim_3d)
        throw ConfigError("world: prototype shape mismatch");
    const double d2 = min_pairwise_distance(proto_2d);
    const double d3 = min_pairwise_distance(proto_3d);
    if (!(d2 > 2.0 * noise_scale) || !(d3 > 2.0 * noise_scale))
        throw ConfigError("world: class prototypes collide (min distance 2d=" + std::to_string(d2) +
                          ", 3d=" + std::to_string(d3) + ", need > " + std::to_string(2.0 * noise_scale) + ")");
}

WorldSpec make_world(const WorldOptions& o) {
    WorldSpec w;
    w.n_classes = o.n_classes;
    w.dim_2d = o.dim_2d;
    w.dim_3d = o.dim_3d;
    w.noise_scale = o.noise_scale;
    w.points_per_sample = o.points_per_sample;
    w.azimuth_jitter = o.azimuth_jitter;
    w.seed = o.seed;
    if (o.n_classes < 2 || o.dim_2d < 1 || o.dim_3d < 3)
        throw ConfigError("world: need n_classes >= 2, dim_2d >= 1, dim_3d >= 3");
    if (!(o.radius_max > o.radius_min) || o.radius_min < 0.0 || o.height_max < 0.0)
        throw ConfigError("world: bad radius/height ranges");

    std::mt19937_64 rng(derive_seed(o.seed, 0x9051));
    std::normal_distribution<double> normal(0.0, 1.0);
    w.proto_2d = rejection_layout(
        o.n_classes, o.dim_2d, o.min_separation, rng,
        [&](std::mt19937_64& g) {
            Eigen::RowVectorXd v(o.dim_2d);
            for (int j = 0; j < o.dim_2d; ++j)
                v[j] = o.proto_scale_2d * normal(g);
            return v;
        },
        "2d");
    std::uniform_real_distribution<double> radius(o.radius_min, o.radius_max);
    std::uniform_real_distribution<double> height(-o.height_max, o.height_max);
    w.proto_3d = rejection_layout(
        o.n_classes, o.dim_3d, o.min_separation, rng,
        [&](std::mt19937_64& g) {
            Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(o.dim_3d);
            v[0] = radius(g);
            v[2] = height(g);
            return v;
        },
        "3d");
    w.validate();
    return w;
}

void SegmentSpec::validate(const WorldSpec& world) const {
    if (length < 1)
        throw ConfigError("segment '" + name + "': length must be >= 1");
    if (corrupt_2d.bias.size() != 0 && corrupt_2d.bias.size() != world.dim_2d)
        throw ConfigError("segment '" + name + "': bias length must equal dim_2d");
    if (!(corrupt_2d.noise_gain >= 0.0) || !(corrupt_3d.noise_gain >= 0.0))
        throw ConfigError("segment '" + name + "': noise gains must be >= 0");
    if (!(corrupt_3d.dropout >= 0.0 && corrupt_3d.dropout < 1.0))
        throw ConfigError("segment '" + name + "': dropout must lie in [0, 1)");
}

Matrix rotate_z(const Matrix& x, double angle_rad) {
    require(x.cols() >= 2, "rotate_z: need at least two coordinates");
    const double c = std::cos(angle_rad);
    const double s = std::sin(angle_rad);
    Matrix out = x;
    out.col(0) = c * x.col(0) - s * x.col(1);
    out.col(1) = s * x.col(0) + c * x.col(1);
    return out;
}

PointBatch sample_clean(const WorldSpec& world, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> cls(0, world.n_classes - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> azimuth(0.0, 2.0 * std::numbers::pi);
    const int n = world.points_per_sample;
    PointBatch b;
    b.x2d.resize(n, world.dim_2d);
    b.x3d.resize(n, world.dim_3d);
    b.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int k = cls(rng);
        b.labels[static_cast<std::size_t>(i)] = k;
        for (int j = 0; j < world.dim_2d; ++j)
            b.x2d(i, j) = world.proto_2d(k, j) + world.noise_scale * normal(rng);
        Eigen::RowVectorXd p = world.proto_3d.row(k);
        if (world.azimuth_jitter) {
            const double a = azimuth(rng);
            const double x = p[0], y = p[1];
            p[0] = std::cos(a) * x - std::sin(a) * y;
            p[1] = std::sin(a) * x + std::cos(a) * y;
        }
        for (int j = 0; j < world.dim_3d; ++j)
            b.x3d(i, j) = p[j] + world.noise_scale * normal(rng);
    }
    return b;
}

SourceDataset make_source_dataset(const WorldSpec& world, int n_samples, std::uint64_t seed) {
    if (n_samples < 10)
        throw ConfigError("make_source_dataset: need at least 10 samples");
    world.validate();
    const int n_holdout = std::max(1, n_samples / 5);
    SourceDataset ds;
    for (int i = 0; i < n_samples; ++i) {
        PointBatch b = sample_clean(world, derive_seed(seed, static_cast<std::uint64_t>(i)));
        b.sample_index = i;
        b.segment_id = -1;
        (i < n_samples - n_holdout ? ds.train : ds.holdout).push_back(std::move(b));
    }
    return ds;
}

PointBatch corrupt(const PointBatch& clean, const SegmentSpec& seg, std::uint64_t seed, double noise_scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PointBatch b = clean;
    const auto& c2 = seg.corrupt_2d;
    const auto& c3 = seg.corrupt_3d;
    if (c2.bias.size() > 0)
        b.x2d.rowwise() += c2.bias.transpose();
    if (c2.noise_gain > 0.0)
        for (Eigen::Index i = 0; i < b.x2d.size(); ++i)
            b.x2d.data()[i] += c2.noise_gain * noise_scale * normal(rng);
    if (c3.rotation_rad != 0.0)
        b.x3d = rotate_z(b.x3d, c3.rotation_rad);
    if (c3.noise_gain > 0.0)
        for (Eigen::Index i = 0; i < b.x3d.size(); ++i)
            b.x3d.data()[i] += c3.noise_gain * noise_scale * normal(rng);
    if (c3.dropout > 0.0) {
        std::vector<int> keep;
        for (Eigen::Index i = 0; i < b.x2d.rows(); ++i)
            if (unit(rng) >= c3.dropout)
                keep.push_back(static_cast<int>(i));
        if (keep.empty())
            keep.push_back(0);
        b.x2d = Matrix(b.x2d(keep, Eigen::all));
        b.x3d = Matrix(b.x3d(keep, Eigen::all));
        std::vector<int> labels;
        labels.reserve(keep.size());
        for (int i : keep)
            labels.push_back(b.labels[static_cast<std::size_t>(i)]);
        b.labels = std::move(labels);
    }
    return b;
}

Stream::Stream(WorldSpec world, std::vector<SegmentSpec> segments, std::uint64_t seed)
    : world_(std::move(world)), segments_(std::move(segments)), seed_(seed) {
    if (segments_.empty())
        throw ConfigError("stream: at least one segment is required");
    world_.validate();
    for (const auto& s : segments_) {
        s.validate(world_);
        offsets_.push_back(total_);
        total_ += static_cast<std::size_t>(s.length);
    }
}

PointBatch Stream::at(std::size_t index) const {
    require(index < total_, "stream: index past end");
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), index);
    const auto seg = static_cast<std::size_t>(std::distance(offsets_.begin(), it) - 1);
    // Clean draw and corruption use separate derived seeds so an all-zero
    // segment reproduces the source generator exactly.
    PointBatch clean = sample_clean(world_, derive_seed(seed_, 2 * index));
    PointBatch b = corrupt(clean, segments_[seg], derive_seed(seed_, 2 * index + 1), world_.noise_scale);
    b.segment_id = static_cast<int>(seg);
    b.sample_index = static_cast<int>(index);
    return b;
}

PointBatch Stream::next() {
    require(!done(), "stream: exhausted");
    return at(cursor_++);
}

Stream make_stream(const WorldSpec& world, const std::vector<SegmentSpec>& segments, std::uint64_t seed) {
    return Stream(world, segments, seed);
}

std::vector<PointBatch> augment_2d(const PointBatch& batch, const std::vector<double>& scales) {
    std::vector<PointBatch> out;
    out.reserve(scales.size());
    for (double s : scales) {
        PointBatch b = batch;
        b.x2d *= s;
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<PointBatch> augment_3d(const PointBatch& batch, const std::vector<double>& angles_deg) {
    std::vector<PointBatch> out;
    out.reserve(angles_deg.size());
    for (double a : angles_deg) {
        PointBatch b = batch;
        b.x3d = rotate_z(batch.x3d, a * std::numbers::pi / 180.0);
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<PointBatch> augment(const PointBatch& batch, Modality m, const std::vector<double>& factors) {
    return m == Modality::two_d ? augment_2d(batch, factors) : augment_3d(batch, factors);
}

std::vector<double> even_scales_2d(int n) {
    require(n >= 0, "even_scales_2d: negative count");
    std::vector<double> out;
    for (int i = 0; i < n; ++i)
        out.push_back(0.5 + 0.5 * i / n);
    return out;
}

std::vector<double> even_angles_3d(int n) {
    require(n >= 0, "even_angles_3d: negative count");
    std::vector<double> out;
    for (int i = 1; i <= n; ++i)
        out.push_back(360.0 * i / (n + 1));
    return out;
}

Vector bias_direction(const WorldSpec& world) {
    std::mt19937_64 rng(derive_seed(world.seed, 0xb1a5));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector d(world.dim_2d);
    for (int j = 0; j < world.dim_2d; ++j)
        d[j] = normal(rng);
    return d / d.norm();
}

SegmentSpec materialize(const SegmentTemplate& tpl, const WorldSpec& world) {
    SegmentSpec s;
    s.name = tpl.name;
    s.length = tpl.length;
    if (!tpl.bias_2d_vector.empty()) {
        if (static_cast<int>(tpl.bias_2d_vector.size()) != world.dim_2d)
            throw ConfigError("segment '" + tpl.name + "': bias vector length must equal dim_2d");
        s.corrupt_2d.bias = Eigen::Map<const Vector>(tpl.bias_2d_vector.data(), world.dim_2d);
    } else if (tpl.bias_2d != 0.0) {
        s.corrupt_2d.bias = tpl.bias_2d * bias_direction(world);
    }
    s.corrupt_2d.noise_gain = tpl.noise_2d;
    s.corrupt_3d.rotation_rad = tpl.rotation_3d_deg * std::numbers::pi / 180.0;
    s.corrupt_3d.noise_gain = tpl.noise_3d;
    s.corrupt_3d.dropout = tpl.dropout_3d;
    s.validate(world);
    return s;
}

std::vector<SegmentSpec> materialize(const std::vector<SegmentTemplate>& tpls, const WorldSpec& world) {
    std::vector<SegmentSpec> out;
    out.reserve(tpls.size());
    for (const auto& t : tpls)
        out.push_back(materialize(t, world));
    return out;
}

std::vector<SegmentTemplate> default_schedule_templates() {
    auto seg = [](std::string name, double bias, double noise2, double rot_deg, double noise3, double drop) {
        SegmentTemplate s;
        s.name = std::move(name);
        s.length = 200;
        s.bias_2d = bias;
        s.noise_2d = noise2;
        s.rotation_3d_deg = rot_deg;
        s.noise_3d = noise3;
        s.dropout_3d = drop;
        return s;
    };
    return {
        seg("2d-mild", 1.0, 1.0, 0.0, 0.0, 0.0),
        seg("3d-mild", 0.0, 0.0, 30.0, 1.5, 0.2),
        seg("2d-moderate", 2.0, 2.0, 0.0, 0.0, 0.0),
        seg("3d-moderate", 0.0, 0.0, 90.0, 2.5, 0.4),
        seg("2d-severe", 3.0, 3.0, 0.0, 0.0, 0.0),
        seg("both-severe", 3.0, 3.0, 150.0, 2.5, 0.5),
    };
}

std::vector<SegmentSpec> default_schedule(const WorldSpec& world) {
    return materialize(default_schedule_templates(), world);
}

double accuracy(const nn::Network& net, const std::vector<PointBatch>& data, Modality m) {
    std::size_t correct = 0, total = 0;
    for (const auto& b : data) {
        const auto c = nn::forward(net, b.input(m));
        for (Eigen::Index i = 0; i < c.probs.rows(); ++i) {
            correct += argmax(c.probs.row(i)) == b.labels[static_cast<std::size_t>(i)] ? 1 : 0;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

std::vector<Matrix> features_by_class(const nn::Network& net, const std::vector<PointBatch>& data, Modality m,
                                      int n_classes) {
    std::vector<std::vector<Eigen::RowVectorXd>> rows(static_cast<std::size_t>(n_classes));
    for (const auto& b : data) {
        const auto c = nn::forward(net, b.input(m));
        for (Eigen::Index i = 0; i < c.features.rows(); ++i)
            rows[static_cast<std::size_t>(b.labels[static_cast<std::size_t>(i)])].push_back(c.features.row(i));
    }
    std::vector<Matrix> out;
    for (const auto& r : rows) {
        Matrix f(static_cast<Eigen::Index>(r.size()), net.feature_dim());
        for (std::size_t i = 0; i < r.size(); ++i)
            f.row(static_cast<Eigen::Index>(i)) = r[i];
        out.push_back(std::move(f));
    }
    return out;
}

nn::Network train_student(nn::Network net, const SourceDataset& data, Modality m, const PretrainOptions& o) {
    std::mt19937_64 rng(derive_seed(o.seed, m == Modality::two_d ? 0x2d : 0x3d));
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 0; epoch < o.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t idx : order) {
            const auto& b = data.train[idx];
            const auto cache = nn::forward(net, b.input(m));
            const auto loss = nn::cross_entropy(cache.probs, b.labels);
            if (!std::isfinite(loss.value))
                throw DivergenceError("pretrain (" + std::string(modality_name(m)) + "): non-finite loss at epoch " +
                                      std::to_string(epoch));
            net = nn::sgd_step(net, nn::backward(net, cache, loss.grad, Matrix()), o.lr);
        }
    }
    return net;
}

}  // namespace

PretrainResult pretrain(const ModelPair& pair_2d, const ModelPair& pair_3d, const SourceDataset& data,
                        const PretrainOptions& opts) {
    require(!data.train.empty(), "pretrain: empty training split");
    const auto& first = data.train.front();
    require(pair_2d.student.input_dim() == first.x2d.cols(), "pretrain: 2d network input dim mismatch");
    require(pair_3d.student.input_dim() == first.x3d.cols(), "pretrain: 3d network input dim mismatch");
    require(pair_2d.student.n_classes() == pair_3d.student.n_classes(), "pretrain: class count mismatch");
    const int n_classes = pair_2d.student.n_classes();

    PretrainResult r;
    r.pair_2d = ModelPair::from_student(train_student(pair_2d.student, data, Modality::two_d, opts), Modality::two_d);
    r.pair_3d =
        ModelPair::from_student(train_student(pair_3d.student, data, Modality::three_d, opts), Modality::three_d);
    r.features_2d = features_by_class(r.pair_2d.student, data.train, Modality::two_d, n_classes);
    r.features_3d = features_by_class(r.pair_3d.student, data.train, Modality::three_d, n_classes);
    r.holdout_accuracy_2d = accuracy(r.pair_2d.student, data.holdout, Modality::two_d);
    r.holdout_accuracy_3d = accuracy(r.pair_3d.student, data.holdout, Modality::three_d);
    return r;
}

}  // namespace comac::stream
