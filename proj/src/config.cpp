#include "comac/config.hpp"

#include "comac/error.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

namespace comac::config {

namespace {

using adapter::Variant;

// Shortest text that parses back to the same double.
std::string num(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::vector<std::string> nums(const std::vector<double>& v) {
    std::vector<std::string> out;
    for (double x : v)
        out.push_back(num(x));
    return out;
}

std::string_view form_name(memory::ContrastiveForm f) {
    return f == memory::ContrastiveForm::log_ratio ? "log_ratio" : "literal";
}

// Wraps a node with the source name so every error can point at a line.
class Reader {
public:
    explicit Reader(std::string source) : source_(std::move(source)) {}

    [[noreturn]] void fail(const YAML::Node& node, const std::string& key, const std::string& msg) const {
        std::ostringstream os;
        os << source_;
        const auto mark = node.Mark();
        if (mark.line >= 0)
            os << ':' << mark.line + 1;
        os << ": " << (key.empty() ? std::string() : "key '" + key + "': ") << msg;
        throw ConfigError(os.str());
    }

    void require_map(const YAML::Node& node, const std::string& key) const {
        if (!node.IsMap())
            fail(node, key, "expected a mapping");
    }

    void check_keys(const YAML::Node& map, const std::string& section, std::initializer_list<const char*> allowed) const {
        require_map(map, section);
        std::set<std::string> ok(allowed.begin(), allowed.end());
        for (const auto& kv : map) {
            const auto k = kv.first.as<std::string>();
            if (!ok.count(k))
                fail(kv.first, (section.empty() ? "" : section + ".") + k, "unknown key");
        }
    }

    template <class T>
    void get(const YAML::Node& map, const char* key, const std::string& section, T& out) const {
        const YAML::Node n = map[key];
        if (!n)
            return;
        const std::string full = (section.empty() ? "" : section + ".") + key;
        try {
            out = n.as<T>();
        } catch (const YAML::Exception&) {
            fail(n, full, "cannot convert value '" + scalar_text(n) + "'");
        }
    }

    template <class T>
    void get_list(const YAML::Node& map, const char* key, const std::string& section, std::vector<T>& out,
                  bool allow_empty = false) const {
        const YAML::Node n = map[key];
        if (!n)
            return;
        const std::string full = (section.empty() ? "" : section + ".") + key;
        if (!n.IsSequence())
            fail(n, full, "expected a list");
        if (n.size() == 0 && !allow_empty)
            fail(n, full, "list must not be empty");
        std::vector<T> v;
        for (const auto& item : n) {
            try {
                v.push_back(item.as<T>());
            } catch (const YAML::Exception&) {
                fail(item, full, "cannot convert element '" + scalar_text(item) + "'");
            }
        }
        out = std::move(v);
    }

    static std::string scalar_text(const YAML::Node& n) { return n.IsScalar() ? n.Scalar() : "<non-scalar>"; }

    const std::string& source() const { return source_; }

private:
    std::string source_;
};

void read_world(const Reader& r, const YAML::Node& n, stream::WorldOptions& w) {
    const std::string s = "world";
    r.check_keys(n, s,
                 {"n_classes", "dim_2d", "dim_3d", "noise_scale", "points_per_sample", "proto_scale_2d", "radius_min",
                  "radius_max", "height_max", "min_separation", "azimuth_jitter", "seed"});
    r.get(n, "n_classes", s, w.n_classes);
    r.get(n, "dim_2d", s, w.dim_2d);
    r.get(n, "dim_3d", s, w.dim_3d);
    r.get(n, "noise_scale", s, w.noise_scale);
    r.get(n, "points_per_sample", s, w.points_per_sample);
    r.get(n, "proto_scale_2d", s, w.proto_scale_2d);
    r.get(n, "radius_min", s, w.radius_min);
    r.get(n, "radius_max", s, w.radius_max);
    r.get(n, "height_max", s, w.height_max);
    r.get(n, "min_separation", s, w.min_separation);
    r.get(n, "azimuth_jitter", s, w.azimuth_jitter);
    r.get(n, "seed", s, w.seed);
}

stream::SegmentTemplate read_segment(const Reader& r, const YAML::Node& n, std::size_t index) {
    const std::string s = "segments[" + std::to_string(index) + "]";
    r.check_keys(n, s,
                 {"name", "length", "bias_2d", "bias_2d_vector", "noise_2d", "rotation_3d_deg", "noise_3d",
                  "dropout_3d"});
    stream::SegmentTemplate t;
    t.name = "segment-" + std::to_string(index);
    r.get(n, "name", s, t.name);
    r.get(n, "length", s, t.length);
    r.get(n, "bias_2d", s, t.bias_2d);
    r.get_list(n, "bias_2d_vector", s, t.bias_2d_vector);
    r.get(n, "noise_2d", s, t.noise_2d);
    r.get(n, "rotation_3d_deg", s, t.rotation_3d_deg);
    r.get(n, "noise_3d", s, t.noise_3d);
    r.get(n, "dropout_3d", s, t.dropout_3d);
    if (t.length < 1)
        r.fail(n["length"] ? n["length"] : n, s + ".length", "must be >= 1");
    if (!(t.noise_2d >= 0.0 && t.noise_3d >= 0.0))
        r.fail(n, s, "noise gains must be >= 0");
    if (!(t.dropout_3d >= 0.0 && t.dropout_3d < 1.0))
        r.fail(n["dropout_3d"], s + ".dropout_3d", "must lie in [0, 1)");
    if (!t.bias_2d_vector.empty() && t.bias_2d != 0.0)
        r.fail(n, s, "bias_2d and bias_2d_vector are mutually exclusive");
    return t;
}

void read_adapter(const Reader& r, const YAML::Node& n, adapter::AdapterConfig& a) {
    const std::string s = "adapter";
    r.check_keys(n, s,
                 {"ema_momentum", "lambda_cts", "restore_prob", "confidence_threshold", "queue_size", "n_enqueue", "lr",
                  "aug_scales_2d", "aug_angles_3d", "eval_output", "contrastive_form", "temperature"});
    r.get(n, "ema_momentum", s, a.ema_momentum);
    r.get(n, "lambda_cts", s, a.lambda_cts);
    r.get(n, "restore_prob", s, a.restore_prob);
    r.get(n, "confidence_threshold", s, a.confidence_threshold);
    r.get(n, "queue_size", s, a.queue_size);
    r.get(n, "n_enqueue", s, a.n_enqueue);
    r.get(n, "lr", s, a.lr);
    r.get_list(n, "aug_scales_2d", s, a.aug_scales_2d, true);
    r.get_list(n, "aug_angles_3d", s, a.aug_angles_3d, true);
    r.get(n, "temperature", s, a.temperature);
    if (const auto e = n["eval_output"]) {
        const auto parsed = adapter::parse_eval_output(Reader::scalar_text(e));
        if (!parsed)
            r.fail(e, s + ".eval_output", "expected softmax_average or cross_modal");
        a.eval_output = *parsed;
    }
    if (const auto f = n["contrastive_form"]) {
        const auto v = Reader::scalar_text(f);
        if (v == "log_ratio")
            a.contrastive_form = memory::ContrastiveForm::log_ratio;
        else if (v == "literal")
            a.contrastive_form = memory::ContrastiveForm::literal;
        else
            r.fail(f, s + ".contrastive_form", "expected log_ratio or literal");
    }
    try {
        a.validate();
    } catch (const ConfigError& e) {
        r.fail(n, "", e.what());
    }
}

void read_ablation(const Reader& r, const YAML::Node& n, AblationAxes& ax) {
    const std::string s = "ablation";
    r.check_keys(n, s, {"aug_2d_counts", "aug_3d_counts", "restore_prob", "confidence_threshold", "lambda_cts"});
    r.get_list(n, "aug_2d_counts", s, ax.aug_2d_counts);
    r.get_list(n, "aug_3d_counts", s, ax.aug_3d_counts);
    r.get_list(n, "restore_prob", s, ax.restore_prob);
    r.get_list(n, "confidence_threshold", s, ax.confidence_threshold);
    r.get_list(n, "lambda_cts", s, ax.lambda_cts);
    for (int c : ax.aug_2d_counts)
        if (c < 0)
            r.fail(n["aug_2d_counts"], s + ".aug_2d_counts", "counts must be >= 0");
    for (int c : ax.aug_3d_counts)
        if (c < 0)
            r.fail(n["aug_3d_counts"], s + ".aug_3d_counts", "counts must be >= 0");
    for (double p : ax.restore_prob)
        if (!(p >= 0.0 && p <= 1.0))
            r.fail(n["restore_prob"], s + ".restore_prob", "values must lie in [0, 1]");
    for (double p : ax.confidence_threshold)
        if (!(p >= 0.0 && p <= 1.0))
            r.fail(n["confidence_threshold"], s + ".confidence_threshold", "values must lie in [0, 1]");
    for (double p : ax.lambda_cts)
        if (!(p >= 0.0))
            r.fail(n["lambda_cts"], s + ".lambda_cts", "values must be >= 0");
}

ExperimentConfig parse_root(const Reader& r, const YAML::Node& root) {
    ExperimentConfig cfg = default_config();
    if (!root || root.IsNull())
        return cfg;
    r.check_keys(root, "",
                 {"world", "model", "pretrain", "segments", "adapter", "seeds", "variants", "output_dir", "workers",
                  "trace", "ablation"});
    if (const auto n = root["world"])
        read_world(r, n, cfg.world);
    if (const auto n = root["model"]) {
        r.check_keys(n, "model", {"hidden", "feature_dim"});
        r.get_list(n, "hidden", "model", cfg.model.hidden, true);
        r.get(n, "feature_dim", "model", cfg.model.feature_dim);
        for (int h : cfg.model.hidden)
            if (h < 1)
                r.fail(n["hidden"], "model.hidden", "widths must be >= 1");
        if (cfg.model.feature_dim < 1)
            r.fail(n["feature_dim"], "model.feature_dim", "must be >= 1");
    }
    if (const auto n = root["pretrain"]) {
        r.check_keys(n, "pretrain", {"n_samples", "epochs", "lr"});
        r.get(n, "n_samples", "pretrain", cfg.pretrain.n_samples);
        r.get(n, "epochs", "pretrain", cfg.pretrain.epochs);
        r.get(n, "lr", "pretrain", cfg.pretrain.lr);
        if (cfg.pretrain.n_samples < 10)
            r.fail(n, "pretrain.n_samples", "must be >= 10");
        if (cfg.pretrain.epochs < 1)
            r.fail(n, "pretrain.epochs", "must be >= 1");
        if (!(cfg.pretrain.lr > 0.0))
            r.fail(n, "pretrain.lr", "must be > 0");
    }
    if (const auto n = root["segments"]) {
        if (!n.IsSequence() || n.size() == 0)
            r.fail(n, "segments", "expected a non-empty list");
        cfg.segments.clear();
        for (std::size_t i = 0; i < n.size(); ++i)
            cfg.segments.push_back(read_segment(r, n[i], i));
    }
    if (const auto n = root["adapter"])
        read_adapter(r, n, cfg.adapter);
    r.get_list(root, "seeds", "", cfg.seeds);
    if (const auto n = root["variants"]) {
        std::vector<std::string> names;
        r.get_list(root, "variants", "", names);
        cfg.variants.clear();
        for (std::size_t i = 0; i < names.size(); ++i) {
            const auto v = adapter::parse_variant(names[i]);
            if (!v)
                r.fail(n[i], "variants", "unknown variant '" + names[i] + "'");
            cfg.variants.push_back(*v);
        }
    }
    if (const auto n = root["output_dir"]) {
        std::string dir;
        r.get(root, "output_dir", "", dir);
        if (dir.empty())
            r.fail(n, "output_dir", "must not be empty");
        cfg.output_dir = dir;
    }
    r.get(root, "workers", "", cfg.workers);
    if (cfg.workers < 1)
        r.fail(root["workers"], "workers", "must be >= 1");
    if (const auto n = root["trace"]) {
        r.check_keys(n, "trace", {"enabled", "centroids"});
        r.get(n, "enabled", "trace", cfg.trace.enabled);
        r.get(n, "centroids", "trace", cfg.trace.centroids);
    }
    if (const auto n = root["ablation"])
        read_ablation(r, n, cfg.ablation);
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(r.source() + ": " + e.what());
    }
    return cfg;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (seeds.empty())
        throw ConfigError("seeds: need at least one seed");
    if (variants.empty())
        throw ConfigError("variants: need at least one variant");
    if (segments.empty())
        throw ConfigError("segments: need at least one segment");
    if (workers < 1)
        throw ConfigError("workers: must be >= 1");
    if (model.feature_dim < 1 || std::any_of(model.hidden.begin(), model.hidden.end(), [](int h) { return h < 1; }))
        throw ConfigError("model: widths must be >= 1");
    if (pretrain.n_samples < 10 || pretrain.epochs < 1 || !(pretrain.lr > 0.0))
        throw ConfigError("pretrain: need n_samples >= 10, epochs >= 1, lr > 0");
    adapter.validate();
    // Building the world checks prototype separation; materializing checks segments against it.
    const auto world_spec = stream::make_world(world);
    for (const auto& s : segments) {
        if (s.name.empty() || s.name.find_first_of(",\"\n") != std::string::npos || s.name == "overall")
            throw ConfigError("segments: name '" + s.name + "' must be non-empty, not 'overall', and free of commas and quotes");
        stream::materialize(s, world_spec);
    }
}

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.segments = stream::default_schedule_templates();
    // Desk scale: a single core cannot afford 5 x 4096 contrastive rows per step.
    cfg.adapter.queue_size = 256;
    cfg.adapter.n_enqueue = 12;
    // 1200 steps at momentum 0.999 barely move the teacher off its source weights.
    cfg.adapter.ema_momentum = 0.99;
    cfg.adapter.lr = 0.01;
    return cfg;
}

ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source_name) {
    const Reader r(source_name);
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(source_name + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    return parse_root(r, root);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError(path.string() + ": cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string dump_config(const ExperimentConfig& cfg) {
    YAML::Emitter e;
    e << YAML::BeginMap;

    const auto& w = cfg.world;
    e << YAML::Key << "world" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "n_classes" << YAML::Value << w.n_classes;
    e << YAML::Key << "dim_2d" << YAML::Value << w.dim_2d;
    e << YAML::Key << "dim_3d" << YAML::Value << w.dim_3d;
    e << YAML::Key << "noise_scale" << YAML::Value << num(w.noise_scale);
    e << YAML::Key << "points_per_sample" << YAML::Value << w.points_per_sample;
    e << YAML::Key << "proto_scale_2d" << YAML::Value << num(w.proto_scale_2d);
    e << YAML::Key << "radius_min" << YAML::Value << num(w.radius_min);
    e << YAML::Key << "radius_max" << YAML::Value << num(w.radius_max);
    e << YAML::Key << "height_max" << YAML::Value << num(w.height_max);
    e << YAML::Key << "min_separation" << YAML::Value << num(w.min_separation);
    e << YAML::Key << "azimuth_jitter" << YAML::Value << w.azimuth_jitter;
    e << YAML::Key << "seed" << YAML::Value << w.seed;
    e << YAML::EndMap;

    e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "hidden" << YAML::Value << YAML::Flow << cfg.model.hidden;
    e << YAML::Key << "feature_dim" << YAML::Value << cfg.model.feature_dim;
    e << YAML::EndMap;

    e << YAML::Key << "pretrain" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "n_samples" << YAML::Value << cfg.pretrain.n_samples;
    e << YAML::Key << "epochs" << YAML::Value << cfg.pretrain.epochs;
    e << YAML::Key << "lr" << YAML::Value << num(cfg.pretrain.lr);
    e << YAML::EndMap;

    e << YAML::Key << "segments" << YAML::Value << YAML::BeginSeq;
    for (const auto& s : cfg.segments) {
        e << YAML::BeginMap;
        e << YAML::Key << "name" << YAML::Value << s.name;
        e << YAML::Key << "length" << YAML::Value << s.length;
        if (s.bias_2d_vector.empty())
            e << YAML::Key << "bias_2d" << YAML::Value << num(s.bias_2d);
        else
            e << YAML::Key << "bias_2d_vector" << YAML::Value << YAML::Flow << nums(s.bias_2d_vector);
        e << YAML::Key << "noise_2d" << YAML::Value << num(s.noise_2d);
        e << YAML::Key << "rotation_3d_deg" << YAML::Value << num(s.rotation_3d_deg);
        e << YAML::Key << "noise_3d" << YAML::Value << num(s.noise_3d);
        e << YAML::Key << "dropout_3d" << YAML::Value << num(s.dropout_3d);
        e << YAML::EndMap;
    }
    e << YAML::EndSeq;

    const auto& a = cfg.adapter;
    e << YAML::Key << "adapter" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "ema_momentum" << YAML::Value << num(a.ema_momentum);
    e << YAML::Key << "lambda_cts" << YAML::Value << num(a.lambda_cts);
    e << YAML::Key << "restore_prob" << YAML::Value << num(a.restore_prob);
    e << YAML::Key << "confidence_threshold" << YAML::Value << num(a.confidence_threshold);
    e << YAML::Key << "queue_size" << YAML::Value << a.queue_size;
    e << YAML::Key << "n_enqueue" << YAML::Value << a.n_enqueue;
    e << YAML::Key << "lr" << YAML::Value << num(a.lr);
    e << YAML::Key << "aug_scales_2d" << YAML::Value << YAML::Flow << nums(a.aug_scales_2d);
    e << YAML::Key << "aug_angles_3d" << YAML::Value << YAML::Flow << nums(a.aug_angles_3d);
    e << YAML::Key << "eval_output" << YAML::Value << std::string(adapter::eval_output_name(a.eval_output));
    e << YAML::Key << "contrastive_form" << YAML::Value << std::string(form_name(a.contrastive_form));
    e << YAML::Key << "temperature" << YAML::Value << num(a.temperature);
    e << YAML::EndMap;

    e << YAML::Key << "seeds" << YAML::Value << YAML::Flow << cfg.seeds;
    std::vector<std::string> names;
    for (auto v : cfg.variants)
        names.emplace_back(adapter::variant_name(v));
    e << YAML::Key << "variants" << YAML::Value << YAML::Flow << names;
    e << YAML::Key << "output_dir" << YAML::Value << cfg.output_dir.string();
    e << YAML::Key << "workers" << YAML::Value << cfg.workers;

    e << YAML::Key << "trace" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "enabled" << YAML::Value << cfg.trace.enabled;
    e << YAML::Key << "centroids" << YAML::Value << cfg.trace.centroids;
    e << YAML::EndMap;

    const auto& ab = cfg.ablation;
    auto maybe = [&](const char* key, const auto& v) {
        if (!v.empty())
            e << YAML::Key << key << YAML::Value << YAML::Flow << v;
    };
    if (ab.has_aug_grid() || ab.has_sensitivity()) {
        e << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap;
        maybe("aug_2d_counts", ab.aug_2d_counts);
        maybe("aug_3d_counts", ab.aug_3d_counts);
        maybe("restore_prob", nums(ab.restore_prob));
        maybe("confidence_threshold", nums(ab.confidence_threshold));
        maybe("lambda_cts", nums(ab.lambda_cts));
        e << YAML::EndMap;
    }

    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

}  // namespace comac::config
