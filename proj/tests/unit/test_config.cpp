#include "comac/config.hpp"
#include "comac/error.hpp"

#include <doctest.h>

#include <string>

using namespace comac;
using namespace comac::config;

namespace {

std::string error_of(const std::string& yaml) {
    try {
        parse_config(yaml, "t.yaml");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("test_config: defaults validate and round-trip") {
    const auto d = default_config();
    CHECK_NOTHROW(d.validate());
    CHECK(d.segments.size() == 6);
    const std::string text = dump_config(d);
    CHECK(dump_config(parse_config(text)) == text);
    CHECK(parse_config("").adapter.queue_size == d.adapter.queue_size);
}

TEST_CASE("test_config: every section parses") {
    const auto c = parse_config(R"(
world: {n_classes: 4, noise_scale: 0.25, azimuth_jitter: false, seed: 3}
model: {hidden: [24, 12], feature_dim: 8}
pretrain: {n_samples: 50, epochs: 5, lr: 0.1}
segments:
  - {name: a, length: 10, bias_2d: 1.5}
  - {name: b, length: 20, bias_2d_vector: [1, 0, 0, 0, 0, 0, 0, 0], rotation_3d_deg: 45, dropout_3d: 0.1}
adapter: {lr: 0.01, queue_size: 64, n_enqueue: 8, contrastive_form: literal, eval_output: cross_modal,
          aug_scales_2d: [0.5], aug_angles_3d: [90, 270]}
seeds: [1, 2, 3]
variants: [comac, no_restore]
workers: 2
trace: {enabled: false}
ablation: {aug_2d_counts: [1, 2], restore_prob: [0.3, 0.7]}
)");
    CHECK(c.world.n_classes == 4);
    CHECK_FALSE(c.world.azimuth_jitter);
    CHECK(c.model.hidden == std::vector<int>{24, 12});
    CHECK(c.segments.size() == 2);
    CHECK(c.segments[1].bias_2d_vector.size() == 8);
    CHECK(c.adapter.contrastive_form == memory::ContrastiveForm::literal);
    CHECK(c.adapter.eval_output == adapter::EvalOutput::cross_modal);
    CHECK(c.adapter.aug_angles_3d == std::vector<double>{90, 270});
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(c.variants.size() == 2);
    CHECK_FALSE(c.trace.enabled);
    CHECK(c.ablation.has_aug_grid());
    CHECK(c.ablation.has_sensitivity());
    CHECK(dump_config(parse_config(dump_config(c))) == dump_config(c));
}

TEST_CASE("test_config: errors name the file and line") {
    const auto e1 = error_of("seeds: [0]\nadapter:\n  lr: -1\n");
    CHECK(e1.find("t.yaml:3") != std::string::npos);
    CHECK(e1.find("lr") != std::string::npos);

    const auto e2 = error_of("world:\n  n_clases: 5\n");
    CHECK(e2.find("t.yaml:2") != std::string::npos);
    CHECK(e2.find("n_clases") != std::string::npos);

    const auto e3 = error_of("variants: [comac, nope]\n");
    CHECK(e3.find("t.yaml:1") != std::string::npos);

    const auto e4 = error_of("adapter: {restore_prob: [1, 2]}\n");
    CHECK(e4.find("t.yaml:1") != std::string::npos);

    const auto e5 = error_of("seeds: [0\n");
    CHECK(e5.find("t.yaml:") != std::string::npos);
}

TEST_CASE("test_config: semantic validation") {
    CHECK_FALSE(error_of("seeds: []\n").empty());
    CHECK_FALSE(error_of("segments: []\n").empty());
    CHECK_FALSE(error_of("segments:\n  - {name: overall}\n").empty());
    CHECK_FALSE(error_of("segments:\n  - {name: 'a,b'}\n").empty());
    CHECK_FALSE(error_of("adapter: {queue_size: 8, n_enqueue: 9}\n").empty());
    CHECK_FALSE(error_of("world: {noise_scale: 5}\n").empty());
    CHECK_FALSE(error_of("segments:\n  - {name: a, bias_2d_vector: [1, 2]}\n").empty());
    CHECK_FALSE(error_of("ablation: {aug_2d_counts: []}\n").empty());
    CHECK_FALSE(error_of("workers: 0\n").empty());
}

TEST_CASE("test_config: missing file") {
    CHECK_THROWS_AS(load_config("/nonexistent/cfg.yaml"), ConfigError);
}
