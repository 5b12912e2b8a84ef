#include "comac/selftest.hpp"

#include "comac/adapter.hpp"
#include "comac/error.hpp"
#include "comac/gradcheck.hpp"
#include "comac/harness.hpp"
#include "comac/memory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <sstream>

namespace comac::selftest {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

Matrix random_unit_rows(int n, int d, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = g(rng);
    return normalize_rows(m);
}

Matrix random_simplex_rows(int n, int c, std::mt19937_64& rng) {
    std::exponential_distribution<double> e(1.0);
    Matrix m(n, c);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j)
            s += (m(i, j) = e(rng));
        m.row(i) /= s;
    }
    return m;
}

std::vector<std::vector<double>> to_nested(const Matrix& m) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            out[static_cast<std::size_t>(i)].push_back(m(i, j));
    return out;
}

int first_argmax(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)])
            best = i;
    return best;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

double centroid_weight(const std::vector<std::vector<double>>& centroids, const std::vector<double>& z, int k) {
    double denom = 0.0;
    for (const auto& mu : centroids)
        denom += std::exp(dot(mu, z));
    return std::exp(dot(centroids[static_cast<std::size_t>(k)], z)) / denom;
}

}  // namespace

CheckResult check_gradients(int n_instances, std::uint64_t seed, double tol) {
    const auto t0 = Clock::now();
    CheckResult r{"gradients", true, "", 0.0};
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dim(2, 5), classes(2, 4), rows(4, 9), cap(3, 6);
    struct Kind {
        const char* name;
        nn::LossKind kind;
        memory::ContrastiveForm form;
    };
    const Kind kinds[] = {
        {"cross_entropy", nn::LossKind::cross_entropy, memory::ContrastiveForm::log_ratio},
        {"contrastive_log_ratio", nn::LossKind::contrastive, memory::ContrastiveForm::log_ratio},
        {"contrastive_literal", nn::LossKind::contrastive, memory::ContrastiveForm::literal},
        {"combined", nn::LossKind::combined, memory::ContrastiveForm::log_ratio},
    };
    std::ostringstream detail;
    for (const auto& k : kinds) {
        double worst = 0.0;
        std::string where;
        for (int inst = 0; inst < n_instances; ++inst) {
            const int d = dim(rng), nc = classes(rng), n = rows(rng), f = dim(rng) + 1;
            auto net = nn::Network::mlp(d, {dim(rng) + 3}, f, nc, rng());
            std::normal_distribution<double> g(0.0, 1.0);
            // Zero biases let a point with every ReLU off map to the zero
            // feature, where normalization has no derivative.
            for (auto& layer : net.layers())
                for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
                    layer.bias[i] = 0.3 * g(rng);
            Matrix x(n, d);
            for (Eigen::Index i = 0; i < x.size(); ++i)
                x.data()[i] = g(rng);
            nn::LossSetup setup;
            setup.kind = k.kind;
            setup.form = k.form;
            setup.lambda_cts = 0.7;
            setup.temperature = inst % 2 == 0 ? 1.0 : 0.5;
            std::uniform_int_distribution<int> label(-1, nc - 1);
            for (int i = 0; i < n; ++i)
                setup.labels.push_back(i < nc ? i : label(rng));
            const int c = cap(rng);
            for (int q = 0; q < nc; ++q)
                setup.queues.emplace_back(random_unit_rows(c, f, rng));
            const auto rep = nn::grad_check(net, x, setup);
            if (rep.max_rel_error > worst || where.empty()) {
                worst = std::max(worst, rep.max_rel_error);
                where = rep.worst_param;
            }
        }
        detail << k.name << " " << sci(worst) << "; ";
        if (!(worst < tol))
            r.passed = false;
    }
    r.detail = detail.str() + "tol " + sci(tol) + ", " + std::to_string(n_instances) + " instances each";
    r.seconds = since(t0);
    return r;
}

OracleOutput fusion_oracle(const OracleInput& in) {
    const std::size_t n = in.p[0].size();
    const std::size_t nc = in.p[0][0].size();
    OracleOutput out;
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> fused_num(nc, 0.0);
        double fused_den = 0.0;
        for (std::size_t m = 0; m < 2; ++m) {
            const auto& p = in.p[m][j];
            const auto& pa = in.p_aug[m][j];
            const int k = first_argmax(p);
            const int ka = first_argmax(pa);
            const double w = centroid_weight(in.centroids[m], in.z[m][j], k);
            const double wa = centroid_weight(in.centroids[m], in.z_aug[m][j], ka);
            std::vector<double> p_hat(nc);
            for (std::size_t c = 0; c < nc; ++c)
                p_hat[c] = (w * p[c] + wa * pa[c]) / (w + wa);
            const double w_hat = k == ka ? w + wa : std::max(w, wa);
            for (std::size_t c = 0; c < nc; ++c)
                fused_num[c] += w_hat * p_hat[c];
            fused_den += w_hat;
        }
        for (auto& v : fused_num)
            v /= fused_den;
        out.labels.push_back(first_argmax(fused_num));
        out.p_xm.push_back(std::move(fused_num));
    }
    return out;
}

CheckResult check_fusion_oracle(int n_instances, std::uint64_t seed, double tol) {
    const auto t0 = Clock::now();
    CheckResult r{"fusion_oracle", true, "", 0.0};
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> points(1, 32), classes(2, 5), feat(2, 8);
    double worst = 0.0;
    int label_mismatch = 0;
    for (int inst = 0; inst < n_instances; ++inst) {
        const int n = points(rng), nc = classes(rng);
        std::array<fusion::IntraModalResult, 2> intra;
        OracleInput in;
        for (int m = 0; m < 2; ++m) {
            const int f = feat(rng);
            fusion::TeacherOutput t{random_simplex_rows(n, nc, rng), random_simplex_rows(n, nc, rng),
                                    random_unit_rows(n, f, rng), random_unit_rows(n, f, rng)};
            const Matrix centroids = random_unit_rows(nc, f, rng);
            intra[static_cast<std::size_t>(m)] = fusion::intra_modal(t, centroids);
            in.p.push_back(to_nested(t.p));
            in.p_aug.push_back(to_nested(t.p_aug));
            in.z.push_back(to_nested(t.z));
            in.z_aug.push_back(to_nested(t.z_aug));
            in.centroids.push_back(to_nested(centroids));
        }
        const auto lib = fusion::xmpf_fuse(intra[0], intra[1]);
        const auto ref = fusion_oracle(in);
        for (int j = 0; j < n; ++j) {
            for (int c = 0; c < nc; ++c)
                worst = std::max(worst, std::abs(lib.p_xm(j, c) - ref.p_xm[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)]));
            label_mismatch += lib.labels[static_cast<std::size_t>(j)] != ref.labels[static_cast<std::size_t>(j)];
        }
    }
    r.passed = worst < tol && label_mismatch == 0;
    r.detail = "max |diff| " + sci(worst) + ", label mismatches " + std::to_string(label_mismatch) + " over " +
               std::to_string(n_instances) + " instances";
    r.seconds = since(t0);
    return r;
}

CheckResult check_queue(int n_ops, std::uint64_t seed, int lo, int hi) {
    const auto t0 = Clock::now();
    CheckResult r{"queue", true, "", 0.0};
    std::mt19937_64 rng(seed);
    const int cap = 64, dim = 8;
    const Matrix bank = random_unit_rows(4 * cap, dim, rng);
    memory::MomentumQueue q(random_unit_rows(cap, dim, rng));
    memory::RestorationPolicy policy{0.5, 16, 0.8};
    std::mt19937_64 flag_rng(derive_seed(seed, 1)), sample_rng(derive_seed(seed, 2));
    std::uniform_int_distribution<int> batch(0, cap);
    int restores = 0;
    std::string problem;
    for (int op = 0; op < n_ops && problem.empty(); ++op) {
        auto updated = q;
        updated.enqueue(random_unit_rows(batch(rng), dim, rng));
        auto out = memory::maybe_restore(q, updated, bank, policy, flag_rng, sample_rng);
        restores += out.restored ? 1 : 0;
        q = std::move(out.queue);
        if (q.size() != cap)
            problem = "size " + std::to_string(q.size()) + " at op " + std::to_string(op);
        const auto tags = q.tags();
        for (std::size_t i = 1; i < tags.size() && problem.empty(); ++i)
            if (tags[i] != tags[i - 1] + 1)
                problem = "tags out of FIFO order at op " + std::to_string(op);
        if (problem.empty() && tags.back() + 1 != q.inserted())
            problem = "newest tag does not match insert count at op " + std::to_string(op);
        const Matrix rows = q.contents();
        for (Eigen::Index i = 0; i < rows.rows() && problem.empty(); ++i)
            if (std::abs(rows.row(i).norm() - 1.0) > 1e-9)
                problem = "row norm off at op " + std::to_string(op);
    }
    r.passed = problem.empty() && restores >= lo && restores <= hi;
    r.detail = "restores " + std::to_string(restores) + " of " + std::to_string(n_ops) + " (interval [" +
               std::to_string(lo) + ", " + std::to_string(hi) + "])" + (problem.empty() ? "" : "; " + problem);
    r.seconds = since(t0);
    return r;
}

CheckResult check_ema(int n_steps, double momentum, double tol) {
    const auto t0 = Clock::now();
    CheckResult r{"ema", true, "", 0.0};
    const auto student = nn::Network::mlp(6, {12}, 5, 4, 11);
    const auto start = nn::Network::mlp(6, {12}, 5, 4, 12);
    auto teacher = start;
    for (int i = 0; i < n_steps; ++i)
        teacher = nn::ema_update(teacher, student, momentum);
    const double decay = std::pow(momentum, n_steps);
    double worst = 0.0;
    for (std::size_t l = 0; l < teacher.depth(); ++l) {
        const auto& a = teacher.layers()[l];
        const auto& s = student.layers()[l];
        const auto& t = start.layers()[l];
        const Matrix wexp = s.weight + decay * (t.weight - s.weight);
        const Vector bexp = s.bias + decay * (t.bias - s.bias);
        worst = std::max({worst, (a.weight - wexp).cwiseAbs().maxCoeff(), (a.bias - bexp).cwiseAbs().maxCoeff()});
    }
    r.passed = worst < tol;
    r.detail = "max deviation " + sci(worst) + " after " + std::to_string(n_steps) + " steps";
    r.seconds = since(t0);
    return r;
}

CheckResult check_one_pass(const config::ExperimentConfig& cfg) {
    const auto t0 = Clock::now();
    CheckResult r{"one_pass", true, "", 0.0};
    const auto ctx = harness::prepare_seed(cfg, cfg.seeds.front());
    auto acfg = cfg.adapter;
    acfg.variant = adapter::Variant::comac;
    const auto& p = ctx.pretrained;
    auto full_state = adapter::init(p.pair_2d, p.pair_3d, p.features_2d, p.features_3d, acfg, ctx.init_seed);
    auto full_stream = stream::make_stream(ctx.world, ctx.segments, ctx.stream_seed);
    const auto full = adapter::run_sequence(full_state, acfg, full_stream);
    const std::size_t half = full_stream.total_length() / 2;
    auto half_state = adapter::init(p.pair_2d, p.pair_3d, p.features_2d, p.features_3d, acfg, ctx.init_seed);
    auto half_stream = stream::make_stream(ctx.world, ctx.segments, ctx.stream_seed);
    adapter::RunOptions opts;
    opts.max_samples = half;
    const auto part = adapter::run_sequence(half_state, acfg, half_stream, opts);
    std::size_t mismatched = 0;
    for (std::size_t i = 0; i < half; ++i)
        mismatched += i >= part.predictions.size() || part.predictions[i] != full.predictions[i];
    r.passed = part.predictions.size() == half && mismatched == 0;
    r.detail = std::to_string(half) + " replayed samples, " + std::to_string(mismatched) + " differ";
    r.seconds = since(t0);
    return r;
}

CheckResult check_determinism(const config::ExperimentConfig& cfg) {
    const auto t0 = Clock::now();
    CheckResult r{"determinism", true, "", 0.0};
    auto c = cfg;
    c.trace.enabled = false;
    const auto a = harness::summary_csv(harness::run_experiment(c, {}));
    const auto b = harness::summary_csv(harness::run_experiment(c, {}));
    r.passed = a == b && !a.empty();
    r.detail = std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "different");
    r.seconds = since(t0);
    return r;
}

config::ExperimentConfig tiny_config() {
    auto cfg = config::default_config();
    cfg.world.points_per_sample = 48;
    cfg.pretrain.n_samples = 40;
    cfg.pretrain.epochs = 10;
    for (auto& s : cfg.segments)
        s.length = 12;
    cfg.adapter.queue_size = 32;
    cfg.adapter.n_enqueue = 8;
    cfg.variants = {adapter::Variant::comac, adapter::Variant::no_restore};
    cfg.trace.enabled = false;
    return cfg;
}

bool run_all(std::ostream& os) {
    const auto tiny = tiny_config();
    std::vector<CheckResult> results;
    results.push_back(check_gradients(20, 1));
    results.push_back(check_fusion_oracle(100, 2));
    results.push_back(check_queue(10000, 3));
    results.push_back(check_ema(100, 0.999));
    results.push_back(check_one_pass(tiny));
    results.push_back(check_determinism(tiny));
    bool ok = true;
    for (const auto& r : results) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2fs", r.seconds);
        os << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << buf << "): " << r.detail << '\n';
        ok = ok && r.passed;
    }
    return ok;
}

}  // namespace comac::selftest
