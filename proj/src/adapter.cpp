#include "comac/adapter.hpp"

#include "comac/error.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>

namespace comac::adapter {

using detail::require;

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 10> kVariantNames{{
    {Variant::comac, "comac"},
    {Variant::raw_only, "raw_only"},
    {Variant::aug_only, "aug_only"},
    {Variant::no_impa, "no_impa"},
    {Variant::no_xmpf, "no_xmpf"},
    {Variant::no_update, "no_update"},
    {Variant::no_restore, "no_restore"},
    {Variant::pslabel, "pslabel"},
    {Variant::entropy_min, "entropy_min"},
    {Variant::source_only, "source_only"},
}};

constexpr std::array<Modality, 2> kModalities{Modality::two_d, Modality::three_d};

bool uses_fusion(Variant v) {
    return v != Variant::pslabel && v != Variant::entropy_min && v != Variant::source_only;
}

fusion::IntraMode intra_mode(Variant v) {
    switch (v) {
    case Variant::raw_only:
        return fusion::IntraMode::raw_only;
    case Variant::aug_only:
        return fusion::IntraMode::aug_only;
    case Variant::no_impa:
        return fusion::IntraMode::average;
    default:
        return fusion::IntraMode::adaptive;
    }
}

}  // namespace

std::string_view variant_name(Variant v) {
    for (const auto& [var, name] : kVariantNames)
        if (var == v)
            return name;
    return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
    for (const auto& [var, n] : kVariantNames)
        if (n == name)
            return var;
    return std::nullopt;
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> all = [] {
        std::vector<Variant> v;
        for (const auto& [var, name] : kVariantNames)
            v.push_back(var);
        return v;
    }();
    return all;
}

std::string_view eval_output_name(EvalOutput e) {
    return e == EvalOutput::softmax_average ? "softmax_average" : "cross_modal";
}

std::optional<EvalOutput> parse_eval_output(std::string_view name) {
    if (name == "softmax_average")
        return EvalOutput::softmax_average;
    if (name == "cross_modal")
        return EvalOutput::cross_modal;
    return std::nullopt;
}

void AdapterConfig::validate() const {
    auto check = [](bool ok, const std::string& msg) {
        if (!ok)
            throw ConfigError("adapter: " + msg);
    };
    check(ema_momentum >= 0.0 && ema_momentum <= 1.0, "ema_momentum must lie in [0, 1]");
    check(lambda_cts >= 0.0, "lambda_cts must be >= 0");
    check(restore_prob >= 0.0 && restore_prob <= 1.0, "restore_prob must lie in [0, 1]");
    check(confidence_threshold >= 0.0 && confidence_threshold <= 1.0, "confidence_threshold must lie in [0, 1]");
    check(queue_size >= 1, "queue_size must be >= 1");
    check(n_enqueue >= 0 && n_enqueue <= queue_size, "n_enqueue must lie in [0, queue_size]");
    check(lr >= 0.0 && std::isfinite(lr), "lr must be finite and >= 0");
    check(temperature > 0.0, "temperature must be > 0");
}

memory::RestorationPolicy AdapterConfig::policy() const {
    return {restore_prob, n_enqueue, confidence_threshold};
}

Matrix ModalityMemory::live_means() const {
    require(!centroids.empty(), "live_means: no centroids");
    Matrix out(static_cast<Eigen::Index>(centroids.size()), centroids.front().live_mean.size());
    for (std::size_t k = 0; k < centroids.size(); ++k)
        out.row(static_cast<Eigen::Index>(k)) = centroids[k].live_mean.transpose();
    return out;
}

AdapterState init(const ModelPair& pair_2d, const ModelPair& pair_3d, const std::vector<Matrix>& features_2d,
                  const std::vector<Matrix>& features_3d, const AdapterConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int n_classes = pair_2d.student.n_classes();
    if (pair_3d.student.n_classes() != n_classes)
        throw ConfigError("init: 2d and 3d networks disagree on class count");
    AdapterState s;
    s.pairs[0] = ModelPair::from_student(pair_2d.student, Modality::two_d);
    s.pairs[1] = ModelPair::from_student(pair_3d.student, Modality::three_d);
    const std::array<const std::vector<Matrix>*, 2> feats{&features_2d, &features_3d};
    for (std::size_t m = 0; m < 2; ++m) {
        const auto& f = *feats[m];
        if (static_cast<int>(f.size()) != n_classes)
            throw ConfigError("init: source features cover " + std::to_string(f.size()) + " of " +
                              std::to_string(n_classes) + " classes (" + std::string(modality_name(kModalities[m])) +
                              ")");
        ModalityMemory mem;
        try {
            mem.centroids = memory::build_source_centroids(f);
        } catch (const InsufficientSupport& e) {
            throw ConfigError(std::string("init (") + std::string(modality_name(kModalities[m])) + "): " + e.what());
        }
        for (int k = 0; k < n_classes; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            mem.banks.push_back(memory::sample_pseudo_source(mem.centroids[ku], cfg.queue_size,
                                                             derive_seed(seed, 0x1000 + 0x100 * m + ku)));
            mem.queues.emplace_back(mem.banks.back(), memory::RowOrigin::pseudo_source);
            mem.centroids[ku].live_mean = memory::centroid_mean(mem.queues.back());
        }
        s.memory[m] = std::move(mem);
    }
    s.restore_rng.seed(derive_seed(seed, 0x7e57));
    s.sample_rng.seed(derive_seed(seed, 0x5a3b));
    return s;
}

std::vector<int> median_filtered_labels(const Matrix& probs) {
    const auto n = static_cast<std::size_t>(probs.rows());
    std::vector<int> labels(n);
    std::vector<double> conf(n);
    std::vector<std::vector<double>> by_class(static_cast<std::size_t>(probs.cols()));
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        labels[i] = argmax(probs.row(row));
        conf[i] = probs(row, labels[i]);
        by_class[static_cast<std::size_t>(labels[i])].push_back(conf[i]);
    }
    std::vector<double> median(by_class.size(), 0.0);
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        auto& v = by_class[k];
        if (v.empty())
            continue;
        std::sort(v.begin(), v.end());
        const std::size_t h = v.size() / 2;
        median[k] = v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
    }
    for (std::size_t i = 0; i < n; ++i)
        if (conf[i] < median[static_cast<std::size_t>(labels[i])])
            labels[i] = -1;
    return labels;
}

StudentUpdate update_student(ModelPair& pair, const nn::ForwardCache& cache, const std::vector<int>& labels,
                             const Matrix& feature_grad, const AdapterConfig& cfg, std::int64_t t) {
    const nn::LossValue ce = nn::cross_entropy(cache.probs, labels);
    if (!std::isfinite(ce.value))
        throw DivergenceError("step " + std::to_string(t) + " (" + std::string(modality_name(pair.modality)) +
                              "): non-finite cross-entropy");
    if (cfg.lr > 0.0) {
        try {
            pair.student = nn::sgd_step(pair.student, nn::backward(pair.student, cache, ce.grad, feature_grad), cfg.lr);
        } catch (const DivergenceError& e) {
            throw DivergenceError("step " + std::to_string(t) + ": " + e.what());
        }
    }
    pair.teacher = nn::ema_update(pair.teacher, pair.student, cfg.ema_momentum);
    return {ce.value};
}

namespace {

struct QueueUpdate {
    std::vector<int> enqueued;
    std::vector<bool> restored;
};

QueueUpdate update_queues(ModalityMemory& mem, const memory::ConfidentSet& confident, bool restore,
                          const AdapterConfig& cfg, std::mt19937_64& sample_rng) {
    const auto n_classes = mem.queues.size();
    QueueUpdate out{std::vector<int>(n_classes, 0), std::vector<bool>(n_classes, false)};
    if (cfg.variant == Variant::no_update)
        return out;
    const auto policy = cfg.policy();
    for (std::size_t k = 0; k < n_classes; ++k) {
        memory::MomentumQueue updated = mem.queues[k];
        updated.enqueue(confident.features[k], memory::RowOrigin::target);
        const auto r = memory::restore_or_keep(mem.queues[k], updated, mem.banks[k], restore ? 0.0 : 2.0, policy,
                                               sample_rng);
        const bool changed = r.restored || confident.features[k].rows() > 0;
        mem.queues[k] = r.queue;
        out.restored[k] = r.restored;
        out.enqueued[k] = r.restored ? 0 : static_cast<int>(confident.features[k].rows());
        if (changed)
            mem.centroids[k].live_mean = memory::centroid_mean(mem.queues[k]);
    }
    return out;
}

double mean_of(const Vector& v) {
    return v.size() == 0 ? 0.0 : v.mean();
}

}  // namespace

StepOutput step(AdapterState& state, const stream::PointBatch& batch, const AdapterConfig& cfg) {
    require(batch.x2d.rows() == batch.x3d.rows(), "step: modalities disagree on point count");
    require(batch.x2d.cols() == state.pair(Modality::two_d).teacher.input_dim() &&
                batch.x3d.cols() == state.pair(Modality::three_d).teacher.input_dim(),
            "step: batch does not match world dimensions");
    const std::int64_t t = state.t;
    const int n_classes = state.pair(Modality::two_d).teacher.n_classes();

    // gamma_t is drawn every step for every variant so that paired runs consume
    // identical random streams.
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double gamma = unit(state.restore_rng);
    if (state.gamma_override)
        gamma = state.gamma_override(t);

    StepOutput out;
    out.t = t;
    for (auto& s : out.modality) {
        s.enqueued.assign(static_cast<std::size_t>(n_classes), 0);
        s.restored.assign(static_cast<std::size_t>(n_classes), false);
    }

    const Variant v = cfg.variant;
    if (uses_fusion(v)) {
        // 1-4: teacher inference on raw + augmented inputs, iMPA, xMPF.
        std::array<fusion::IntraModalResult, 2> intra;
        for (std::size_t m = 0; m < 2; ++m) {
            const Modality mod = kModalities[m];
            const auto& factors = mod == Modality::two_d ? cfg.aug_scales_2d : cfg.aug_angles_3d;
            std::vector<Matrix> aug_inputs;
            for (auto& b : stream::augment(batch, mod, factors))
                aug_inputs.push_back(std::move(mod == Modality::two_d ? b.x2d : b.x3d));
            const auto teacher_out = fusion::teacher_predict(state.pair(mod).teacher, batch.input(mod), aug_inputs);
            intra[m] = fusion::intra_modal(teacher_out, state.mem(mod).live_means(), intra_mode(v));
            auto& s = out.modality[m];
            s.mean_w = mean_of(intra[m].w);
            s.mean_w_aug = mean_of(intra[m].w_aug);
            s.mean_w_hat = mean_of(intra[m].w_hat);
            std::size_t agree = 0;
            for (std::size_t j = 0; j < intra[m].k.size(); ++j)
                agree += intra[m].k[j] == intra[m].k_aug[j] ? 1 : 0;
            s.agreement = intra[m].k.empty() ? 0.0 : static_cast<double>(agree) / static_cast<double>(intra[m].k.size());
        }
        const auto xm = fusion::xmpf_fuse(intra[0], intra[1], v == Variant::no_xmpf);
        out.softmax_average = 0.5 * (intra[0].p + intra[1].p);
        out.cross_modal = xm.p_xm;
        out.pseudo_labels = xm.labels;
        out.eval_probs = cfg.eval_output == EvalOutput::cross_modal ? out.cross_modal : out.softmax_average;

        // 5-6: confident student features into the queues, contrastive + CE
        // loss, SGD on the student, EMA on the teacher.
        const bool restore = v != Variant::no_restore && gamma <= cfg.restore_prob;
        for (std::size_t m = 0; m < 2; ++m) {
            const Modality mod = kModalities[m];
            auto& pair = state.pair(mod);
            auto& mem = state.mem(mod);
            auto& s = out.modality[m];
            const nn::ForwardCache cache = nn::forward(pair.student, batch.input(mod));
            const auto confident = memory::select_confident(cache.probs, cache.features, cfg.policy());
            const auto qu = update_queues(mem, confident, restore, cfg, state.sample_rng);
            s.enqueued = qu.enqueued;
            s.restored = qu.restored;
            double pseudo_src = 0.0;
            for (const auto& q : mem.queues)
                pseudo_src += q.pseudo_source_fraction();
            s.pseudo_source_fraction = pseudo_src / static_cast<double>(mem.queues.size());

            Matrix feature_grad;
            if (cfg.lambda_cts > 0.0) {
                feature_grad = Matrix::Zero(cache.features.rows(), cache.features.cols());
                for (int k = 0; k < n_classes; ++k) {
                    const auto ku = static_cast<std::size_t>(k);
                    if (confident.indices[ku].empty())
                        continue;
                    const auto c = memory::contrastive_loss(confident.features[ku], mem.queues, k,
                                                            cfg.contrastive_form, cfg.temperature);
                    s.loss_cts += c.loss;
                    for (std::size_t a = 0; a < confident.indices[ku].size(); ++a)
                        feature_grad.row(confident.indices[ku][a]) += cfg.lambda_cts * c.grad.row(static_cast<Eigen::Index>(a));
                }
                if (!std::isfinite(s.loss_cts))
                    throw DivergenceError("step " + std::to_string(t) + " (" + std::string(modality_name(mod)) +
                                          "): non-finite contrastive loss");
            }
            s.loss_ce = update_student(pair, cache, out.pseudo_labels, feature_grad, cfg, t).loss_ce;
        }
    } else {
        std::array<Matrix, 2> teacher_probs;
        for (std::size_t m = 0; m < 2; ++m)
            teacher_probs[m] = nn::forward(state.pairs[m].teacher, batch.input(kModalities[m])).probs;
        out.softmax_average = 0.5 * (teacher_probs[0] + teacher_probs[1]);
        out.eval_probs = out.softmax_average;
        if (v == Variant::pslabel) {
            for (std::size_t m = 0; m < 2; ++m) {
                auto& pair = state.pairs[m];
                const auto labels = median_filtered_labels(teacher_probs[m]);
                const auto cache = nn::forward(pair.student, batch.input(kModalities[m]));
                out.modality[m].loss_ce = update_student(pair, cache, labels, Matrix(), cfg, t).loss_ce;
            }
        } else if (v == Variant::entropy_min) {
            for (std::size_t m = 0; m < 2; ++m) {
                auto& pair = state.pairs[m];
                const auto cache = nn::forward(pair.student, batch.input(kModalities[m]));
                const auto ent = nn::mean_entropy(cache.probs);
                if (!std::isfinite(ent.value))
                    throw DivergenceError("step " + std::to_string(t) + ": non-finite entropy");
                out.modality[m].loss_ce = ent.value;
                if (cfg.lr > 0.0) {
                    auto g = nn::backward(pair.student, cache, ent.grad, Matrix());
                    g.keep_classifier_only();
                    pair.student = nn::sgd_step(pair.student, g, cfg.lr);
                }
                pair.teacher = nn::ema_update(pair.teacher, pair.student, cfg.ema_momentum);
            }
        }
    }
    ++state.t;
    return out;
}

RunResult run_sequence(AdapterState& state, const AdapterConfig& cfg, stream::Stream& stream,
                       const RunOptions& opts) {
    const auto start = std::chrono::steady_clock::now();
    const int n_classes = state.pair(Modality::two_d).teacher.n_classes();
    const auto& segments = stream.segments();
    std::vector<metrics::ConfusionMatrix> per_segment(segments.size(), metrics::ConfusionMatrix(n_classes));
    metrics::ConfusionMatrix overall(n_classes);

    RunResult result;
    std::size_t seen = 0;
    while (!stream.done() && seen < opts.max_samples) {
        const stream::PointBatch batch = stream.next();
        const StepOutput out = step(state, batch, cfg);
        const auto pred = fusion::argmax_rows(out.eval_probs);
        metrics::ConfusionMatrix cm(n_classes);
        cm.add(pred, batch.labels);
        per_segment[static_cast<std::size_t>(batch.segment_id)] += cm;
        overall += cm;
        std::int64_t correct = 0;
        for (int k = 0; k < n_classes; ++k)
            correct += cm.at(k, k);
        if (opts.on_step)
            opts.on_step(StepRecord{&batch, &out, &state, correct});
        result.predictions.push_back(pred);
        if (opts.keep_probabilities)
            result.probabilities.push_back(out.eval_probs);
        ++seen;
    }
    for (std::size_t s = 0; s < segments.size(); ++s)
        if (per_segment[s].total() > 0)
            result.segments.push_back({segments[s].name, metrics::summarize(per_segment[s])});
    if (overall.total() > 0)
        result.overall = metrics::summarize(overall);
    result.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace comac::adapter
