#include "comac/harness.hpp"

#include "comac/error.hpp"
#include "comac/fusion.hpp"
#include "comac/svg.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace comac::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using adapter::Variant;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return buf;
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write " + path.string());
    out << text;
    if (!out)
        throw Error("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, sep))
        out.push_back(cur);
    if (!line.empty() && line.back() == sep)
        out.emplace_back();
    return out;
}

json stats_json(const adapter::ModalityStepStats& s) {
    return {{"loss_ce", s.loss_ce},
            {"loss_cts", s.loss_cts},
            {"mean_w", s.mean_w},
            {"mean_w_aug", s.mean_w_aug},
            {"mean_w_hat", s.mean_w_hat},
            {"agreement", s.agreement},
            {"enqueued", s.enqueued},
            {"restored", s.restored},
            {"pseudo_source_fraction", s.pseudo_source_fraction}};
}

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(m.row(i).data(), m.row(i).data() + m.cols());
        rows.push_back(r);
    }
    return rows;
}

json report_json(const metrics::IoUReport& r) {
    json per_class = json::array();
    for (const auto& c : r.per_class)
        per_class.push_back(c ? json(*c) : json(nullptr));
    return {{"accuracy", r.accuracy}, {"miou", r.miou}, {"per_class", per_class}, {"n_points", r.n_points}};
}

std::string trace_name(Variant v, std::uint64_t seed) {
    return std::string(adapter::variant_name(v)) + "_seed" + std::to_string(seed) + ".jsonl";
}

}  // namespace

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    const auto n_threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error)
                        first_error = std::current_exception();
                }
            }
        });
    pool.clear();
    if (first_error)
        std::rethrow_exception(first_error);
}

SeedContext prepare_seed(const config::ExperimentConfig& cfg, std::uint64_t seed) {
    SeedContext ctx;
    ctx.seed = seed;
    auto wopts = cfg.world;
    wopts.seed = derive_seed(cfg.world.seed, seed);
    ctx.world = stream::make_world(wopts);
    ctx.segments = stream::materialize(cfg.segments, ctx.world);
    const auto& w = ctx.world;
    const auto net_2d = nn::Network::mlp(w.dim_2d, cfg.model.hidden, cfg.model.feature_dim, w.n_classes,
                                         derive_seed(seed, 0x2d0));
    const auto net_3d = nn::Network::mlp(w.dim_3d, cfg.model.hidden, cfg.model.feature_dim, w.n_classes,
                                         derive_seed(seed, 0x3d0));
    const auto source = stream::make_source_dataset(w, cfg.pretrain.n_samples, derive_seed(wopts.seed, 0x50));
    stream::PretrainOptions popts;
    popts.epochs = cfg.pretrain.epochs;
    popts.lr = cfg.pretrain.lr;
    popts.seed = derive_seed(seed, 0x97);
    ctx.pretrained = stream::pretrain(ModelPair::from_student(net_2d, Modality::two_d),
                                      ModelPair::from_student(net_3d, Modality::three_d), source, popts);
    ctx.stream_seed = derive_seed(seed, 0x57);
    ctx.init_seed = derive_seed(seed, 0xada);
    return ctx;
}

std::vector<SeedContext> prepare_seeds(const config::ExperimentConfig& cfg, const Logger& log) {
    std::vector<SeedContext> out(cfg.seeds.size());
    std::mutex m;
    parallel_for(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
        out[i] = prepare_seed(cfg, cfg.seeds[i]);
        if (log) {
            std::lock_guard lock(m);
            log("pretrained seed " + std::to_string(cfg.seeds[i]) + ": holdout accuracy 2d " +
                fmt(out[i].pretrained.holdout_accuracy_2d) + ", 3d " + fmt(out[i].pretrained.holdout_accuracy_3d));
        }
    });
    return out;
}

RunRecord run_with(const config::ExperimentConfig& cfg, const SeedContext& ctx, const adapter::AdapterConfig& acfg,
                   const std::optional<fs::path>& trace_path) {
    RunRecord rec;
    rec.variant = acfg.variant;
    rec.seed = ctx.seed;
    std::ofstream trace;
    try {
        const auto& p = ctx.pretrained;
        auto state = adapter::init(p.pair_2d, p.pair_3d, p.features_2d, p.features_3d, acfg, ctx.init_seed);
        auto s = stream::make_stream(ctx.world, ctx.segments, ctx.stream_seed);
        adapter::RunOptions opts;
        if (trace_path) {
            if (trace_path->has_parent_path())
                fs::create_directories(trace_path->parent_path());
            trace.open(*trace_path, std::ios::binary | std::ios::trunc);
            if (!trace)
                throw Error("cannot write " + trace_path->string());
            const bool centroids = cfg.trace.centroids;
            opts.on_step = [&](const adapter::StepRecord& r) {
                json j{{"type", "step"},
                       {"t", r.out->t},
                       {"segment", ctx.segments[static_cast<std::size_t>(r.batch->segment_id)].name},
                       {"n_points", r.batch->size()},
                       {"correct", r.correct},
                       {"2d", stats_json(r.out->modality[0])},
                       {"3d", stats_json(r.out->modality[1])}};
                if (centroids)
                    j["centroids"] = {{"2d", matrix_json(r.state->mem(Modality::two_d).live_means())},
                                      {"3d", matrix_json(r.state->mem(Modality::three_d).live_means())}};
                trace << j.dump() << '\n';
            };
        }
        rec.result = adapter::run_sequence(state, acfg, s, opts);
        if (trace) {
            for (const auto& seg : rec.result->segments) {
                json j = report_json(seg.report);
                j["type"] = "segment";
                j["name"] = seg.name;
                trace << j.dump() << '\n';
            }
            if (rec.result->overall) {
                json j = report_json(*rec.result->overall);
                j["type"] = "overall";
                trace << j.dump() << '\n';
            }
        }
    } catch (const std::exception& e) {
        rec.result.reset();
        rec.error = e.what();
        if (trace)
            trace << json{{"type", "failure"}, {"error", rec.error}}.dump() << '\n';
    }
    return rec;
}

RunRecord run_variant(const config::ExperimentConfig& cfg, const SeedContext& ctx, Variant variant,
                      const std::optional<fs::path>& trace_path) {
    auto acfg = cfg.adapter;
    acfg.variant = variant;
    return run_with(cfg, ctx, acfg, trace_path);
}

ExperimentResult run_experiment(const config::ExperimentConfig& cfg, const fs::path& out_dir, const Logger& log) {
    cfg.validate();
    ExperimentResult r;
    r.seeds = prepare_seeds(cfg, log);
    const std::size_t n_seeds = cfg.seeds.size();
    r.runs.resize(cfg.variants.size() * n_seeds);
    std::mutex m;
    parallel_for(r.runs.size(), cfg.workers, [&](std::size_t i) {
        const Variant v = cfg.variants[i / n_seeds];
        const auto& ctx = r.seeds[i % n_seeds];
        std::optional<fs::path> trace;
        if (cfg.trace.enabled)
            trace = out_dir / "traces" / trace_name(v, ctx.seed);
        r.runs[i] = run_variant(cfg, ctx, v, trace);
        if (log) {
            std::lock_guard lock(m);
            const auto& run = r.runs[i];
            if (run.result && run.result->overall)
                log(std::string(adapter::variant_name(v)) + " seed " + std::to_string(ctx.seed) + ": accuracy " +
                    fmt(run.result->overall->accuracy) + ", miou " + fmt(run.result->overall->miou));
            else
                log(std::string(adapter::variant_name(v)) + " seed " + std::to_string(ctx.seed) +
                    " failed: " + run.error);
        }
    });
    return r;
}

std::string summary_csv(const ExperimentResult& r) {
    std::string out = "variant,seed,segment,accuracy,miou\n";
    for (const auto& run : r.runs) {
        if (!run.result)
            continue;
        const std::string prefix = std::string(adapter::variant_name(run.variant)) + "," + std::to_string(run.seed) + ",";
        for (const auto& seg : run.result->segments)
            out += prefix + seg.name + "," + fmt(seg.report.accuracy) + "," + fmt(seg.report.miou) + "\n";
        if (run.result->overall)
            out += prefix + "overall," + fmt(run.result->overall->accuracy) + "," + fmt(run.result->overall->miou) + "\n";
    }
    return out;
}

MeanMetric mean_overall(const ExperimentResult& r, Variant v) {
    MeanMetric m;
    for (const auto& run : r.runs)
        if (run.variant == v && run.result && run.result->overall) {
            m.accuracy += run.result->overall->accuracy;
            m.miou += run.result->overall->miou;
            ++m.n;
        }
    if (m.n > 0) {
        m.accuracy /= m.n;
        m.miou /= m.n;
    }
    return m;
}

MeanMetric mean_segment(const ExperimentResult& r, Variant v, std::size_t segment) {
    MeanMetric m;
    for (const auto& run : r.runs)
        if (run.variant == v && run.result && segment < run.result->segments.size()) {
            m.accuracy += run.result->segments[segment].report.accuracy;
            m.miou += run.result->segments[segment].report.miou;
            ++m.n;
        }
    if (m.n > 0) {
        m.accuracy /= m.n;
        m.miou /= m.n;
    }
    return m;
}

std::string summary_json(const config::ExperimentConfig& cfg, const ExperimentResult& r) {
    json runs = json::array();
    json failures = json::array();
    for (const auto& run : r.runs) {
        json j{{"variant", adapter::variant_name(run.variant)}, {"seed", run.seed}};
        if (run.result) {
            j["status"] = "ok";
            json segs = json::array();
            for (const auto& s : run.result->segments) {
                json sj = report_json(s.report);
                sj["name"] = s.name;
                segs.push_back(sj);
            }
            j["segments"] = segs;
            if (run.result->overall)
                j["overall"] = report_json(*run.result->overall);
            j["wall_clock_s"] = run.result->wall_clock_s;
        } else {
            j["status"] = "failed";
            j["error"] = run.error;
            failures.push_back({{"variant", adapter::variant_name(run.variant)}, {"seed", run.seed}, {"error", run.error}});
        }
        runs.push_back(j);
    }
    json means = json::object();
    for (auto v : cfg.variants) {
        const auto o = mean_overall(r, v);
        json segs = json::array();
        for (std::size_t s = 0; s < cfg.segments.size(); ++s) {
            const auto m = mean_segment(r, v, s);
            segs.push_back({{"name", cfg.segments[s].name}, {"accuracy", m.accuracy}, {"miou", m.miou}, {"n_seeds", m.n}});
        }
        means[std::string(adapter::variant_name(v))] = {
            {"overall", {{"accuracy", o.accuracy}, {"miou", o.miou}, {"n_seeds", o.n}}}, {"segments", segs}};
    }
    json pre = json::array();
    for (const auto& s : r.seeds)
        pre.push_back({{"seed", s.seed},
                       {"holdout_accuracy_2d", s.pretrained.holdout_accuracy_2d},
                       {"holdout_accuracy_3d", s.pretrained.holdout_accuracy_3d}});
    json root{{"runs", runs}, {"means", means}, {"failures", failures}, {"pretrain", pre}};
    return root.dump(2) + "\n";
}

void write_summaries(const config::ExperimentConfig& cfg, const ExperimentResult& r, const fs::path& out_dir) {
    write_file(out_dir / "summary.csv", summary_csv(r));
    write_file(out_dir / "summary.json", summary_json(cfg, r));
}

AblationResult run_ablation(const config::ExperimentConfig& cfg, const Logger& log) {
    cfg.validate();
    const auto& ax = cfg.ablation;
    if (!ax.has_aug_grid() && !ax.has_sensitivity())
        throw ConfigError("ablation: no axis declared (aug_2d_counts, aug_3d_counts, restore_prob, "
                          "confidence_threshold or lambda_cts)");
    const auto seeds = prepare_seeds(cfg, log);

    // Every job is one (adapter config, seed) run of the comac variant.
    std::vector<adapter::AdapterConfig> configs;
    AblationResult out;
    auto base = cfg.adapter;
    base.variant = Variant::comac;
    if (ax.has_aug_grid()) {
        out.counts_2d = ax.aug_2d_counts.empty() ? std::vector<int>{static_cast<int>(base.aug_scales_2d.size())}
                                                 : ax.aug_2d_counts;
        out.counts_3d = ax.aug_3d_counts.empty() ? std::vector<int>{static_cast<int>(base.aug_angles_3d.size())}
                                                 : ax.aug_3d_counts;
        for (int n3 : out.counts_3d)
            for (int n2 : out.counts_2d) {
                auto c = base;
                if (!ax.aug_2d_counts.empty())
                    c.aug_scales_2d = stream::even_scales_2d(n2);
                if (!ax.aug_3d_counts.empty())
                    c.aug_angles_3d = stream::even_angles_3d(n3);
                configs.push_back(c);
                out.grid.push_back({n2, n3, {}});
            }
    }
    auto sweep = [&](const char* name, const std::vector<double>& values, double adapter::AdapterConfig::*field) {
        for (double v : values) {
            auto c = base;
            c.*field = v;
            c.validate();
            configs.push_back(c);
            out.sensitivity.push_back({name, v, {}});
        }
    };
    sweep("restore_prob", ax.restore_prob, &adapter::AdapterConfig::restore_prob);
    sweep("confidence_threshold", ax.confidence_threshold, &adapter::AdapterConfig::confidence_threshold);
    sweep("lambda_cts", ax.lambda_cts, &adapter::AdapterConfig::lambda_cts);

    std::vector<RunRecord> runs(configs.size() * seeds.size());
    std::mutex m;
    std::atomic<std::size_t> done{0};
    parallel_for(runs.size(), cfg.workers, [&](std::size_t i) {
        runs[i] = run_with(cfg, seeds[i % seeds.size()], configs[i / seeds.size()]);
        const auto d = ++done;
        if (log) {
            std::lock_guard lock(m);
            log("ablation run " + std::to_string(d) + "/" + std::to_string(runs.size()) +
                (runs[i].result ? "" : " failed: " + runs[i].error));
        }
    });
    for (std::size_t c = 0; c < configs.size(); ++c) {
        MeanMetric mm;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const auto& run = runs[c * seeds.size() + s];
            if (run.result && run.result->overall) {
                mm.accuracy += run.result->overall->accuracy;
                mm.miou += run.result->overall->miou;
                ++mm.n;
            }
        }
        if (mm.n > 0) {
            mm.accuracy /= mm.n;
            mm.miou /= mm.n;
        }
        if (c < out.grid.size())
            out.grid[c].metric = mm;
        else
            out.sensitivity[c - out.grid.size()].metric = mm;
    }
    return out;
}

std::string grid_csv(const AblationResult& a) {
    if (a.grid.empty())
        return {};
    const auto n2 = a.counts_2d.size();
    std::string out = "n_aug_3d\\n_aug_2d";
    for (int c : a.counts_2d)
        out += "," + std::to_string(c);
    out += ",avg\n";
    std::vector<double> col_sum(n2, 0.0);
    double total = 0.0;
    for (std::size_t r = 0; r < a.counts_3d.size(); ++r) {
        out += std::to_string(a.counts_3d[r]);
        double row_sum = 0.0;
        for (std::size_t c = 0; c < n2; ++c) {
            const double v = a.grid[r * n2 + c].metric.miou;
            out += "," + fmt(v);
            row_sum += v;
            col_sum[c] += v;
        }
        total += row_sum;
        out += "," + fmt(row_sum / static_cast<double>(n2)) + "\n";
    }
    out += "avg";
    const auto n3 = static_cast<double>(a.counts_3d.size());
    for (double s : col_sum)
        out += "," + fmt(s / n3);
    out += "," + fmt(total / (n3 * static_cast<double>(n2))) + "\n";
    return out;
}

std::string sensitivity_csv(const AblationResult& a) {
    if (a.sensitivity.empty())
        return {};
    std::string out = "parameter,value,accuracy,miou\n";
    for (const auto& s : a.sensitivity)
        out += s.parameter + "," + fmt(s.value) + "," + fmt(s.metric.accuracy) + "," + fmt(s.metric.miou) + "\n";
    return out;
}

void write_ablation(const AblationResult& a, const fs::path& out_dir) {
    if (!a.grid.empty()) {
        write_file(out_dir / "ablation_grid.csv", grid_csv(a));
        std::string lng = "n_aug_2d,n_aug_3d,accuracy,miou\n";
        for (const auto& c : a.grid)
            lng += std::to_string(c.n_aug_2d) + "," + std::to_string(c.n_aug_3d) + "," + fmt(c.metric.accuracy) + "," +
                   fmt(c.metric.miou) + "\n";
        write_file(out_dir / "ablation_grid_long.csv", lng);
    }
    if (!a.sensitivity.empty())
        write_file(out_dir / "ablation_sensitivity.csv", sensitivity_csv(a));
}

void write_report(const fs::path& dir) {
    const auto text = read_file(dir / "summary.csv");
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    if (line != "variant,seed,segment,accuracy,miou")
        throw Error((dir / "summary.csv").string() + ": unexpected header");
    // variant -> segment -> (sum acc, sum miou, n); insertion order kept separately.
    struct Acc {
        double acc = 0, miou = 0;
        int n = 0;
    };
    std::vector<std::string> variants, segments;
    std::map<std::string, std::map<std::string, Acc>> table;
    std::set<std::string> seeds;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const auto f = split(line, ',');
        if (f.size() != 5)
            throw Error((dir / "summary.csv").string() + ":" + std::to_string(lineno) + ": expected 5 fields");
        if (std::find(variants.begin(), variants.end(), f[0]) == variants.end())
            variants.push_back(f[0]);
        if (std::find(segments.begin(), segments.end(), f[2]) == segments.end())
            segments.push_back(f[2]);
        seeds.insert(f[1]);
        auto& a = table[f[0]][f[2]];
        a.acc += std::stod(f[3]);
        a.miou += std::stod(f[4]);
        ++a.n;
    }
    // "overall" goes last.
    segments.erase(std::remove(segments.begin(), segments.end(), "overall"), segments.end());

    auto cell = [&](const std::string& v, const std::string& s, bool miou) {
        const auto it = table[v].find(s);
        if (it == table[v].end() || it->second.n == 0)
            return std::string("-");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.1f", 100.0 * (miou ? it->second.miou : it->second.acc) / it->second.n);
        return std::string(buf);
    };

    std::ostringstream md;
    md << "# Results\n\nMeans over " << seeds.size() << " seed(s), in percent.\n\n";
    for (bool miou : {true, false}) {
        md << "## " << (miou ? "mIoU" : "Accuracy") << " by segment\n\n| variant |";
        for (const auto& s : segments)
            md << ' ' << s << " |";
        md << " overall |\n|---|";
        for (std::size_t i = 0; i <= segments.size(); ++i)
            md << "---|";
        md << '\n';
        for (const auto& v : variants) {
            md << "| " << v << " |";
            for (const auto& s : segments)
                md << ' ' << cell(v, s, miou) << " |";
            md << ' ' << cell(v, "overall", miou) << " |\n";
        }
        md << '\n';
    }
    for (const char* name : {"ablation_grid.csv", "ablation_sensitivity.csv"}) {
        if (!fs::exists(dir / name))
            continue;
        md << "## " << name << "\n\n```\n" << read_file(dir / name) << "```\n\n";
    }
    md << "![mIoU by segment](miou_by_segment.svg)\n";
    write_file(dir / "report.md", md.str());

    svg::LineChart chart;
    chart.title = "mIoU by segment";
    chart.y_label = "mIoU";
    chart.categories = segments;
    for (const auto& v : variants) {
        svg::Series s{v, {}};
        for (const auto& seg : segments) {
            const auto& a = table[v][seg];
            s.values.push_back(a.n ? a.miou / a.n : std::nan(""));
        }
        chart.series.push_back(std::move(s));
    }
    write_file(dir / "miou_by_segment.svg", svg::render(chart));
}

fs::path resolve_out_dir(const std::optional<std::string>& flag, const config::ExperimentConfig& cfg) {
    if (flag && !flag->empty())
        return *flag;
    if (const char* env = std::getenv(kOutDirEnv); env && *env)
        return env;
    return cfg.output_dir;
}

}  // namespace comac::harness
