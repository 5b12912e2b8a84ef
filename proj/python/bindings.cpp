#include "comac/config.hpp"
#include "comac/error.hpp"
#include "comac/fusion.hpp"
#include "comac/harness.hpp"
#include "comac/memory.hpp"
#include "comac/metrics.hpp"
#include "comac/selftest.hpp"
#include "comac/stream.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace comac;

namespace {

memory::ContrastiveForm parse_form(const std::string& s) {
    if (s == "log_ratio")
        return memory::ContrastiveForm::log_ratio;
    if (s == "literal")
        return memory::ContrastiveForm::literal;
    throw ConfigError("contrastive form must be 'log_ratio' or 'literal', got '" + s + "'");
}

config::ExperimentConfig config_from(const std::optional<std::string>& yaml) {
    auto cfg = yaml ? config::parse_config(*yaml, "<python>") : config::default_config();
    cfg.validate();
    return cfg;
}

py::dict report_dict(const metrics::IoUReport& r) {
    py::dict d;
    d["miou"] = r.miou;
    d["accuracy"] = r.accuracy;
    d["n_points"] = r.n_points;
    d["per_class"] = r.per_class;
    return d;
}

py::dict batch_dict(const stream::PointBatch& b) {
    py::dict d;
    d["x2d"] = b.x2d;
    d["x3d"] = b.x3d;
    d["labels"] = b.labels;
    d["segment_id"] = b.segment_id;
    d["sample_index"] = b.sample_index;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Continual multi-modal test-time adaptation core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
    py::register_exception<AlignmentError>(m, "AlignmentError", PyExc_ValueError);
    py::register_exception<InsufficientSupport>(m, "InsufficientSupport", PyExc_ValueError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

    m.def("variants", [] {
        std::vector<std::string> out;
        for (auto v : adapter::all_variants())
            out.emplace_back(adapter::variant_name(v));
        return out;
    });

    m.def("default_config", [] { return config::dump_config(config::default_config()); },
          "Every setting with its default value, as YAML.");
    m.def("check_config", [](const std::string& yaml) { return config::dump_config(config_from(yaml)); },
          py::arg("yaml"), "Validate a YAML config and return it fully resolved.");

    m.def(
        "run_experiment",
        [](const std::optional<std::string>& yaml, const std::filesystem::path& out_dir) {
            const auto cfg = config_from(yaml);
            std::filesystem::create_directories(out_dir);
            py::gil_scoped_release release;
            const auto r = harness::run_experiment(cfg, out_dir);
            harness::write_summaries(cfg, r, out_dir);
            return harness::summary_csv(r);
        },
        py::arg("yaml") = py::none(), py::arg("out_dir"),
        "Run every (variant, seed) pair, write summary files into out_dir and return summary.csv text.");

    m.def(
        "pretrain_accuracy",
        [](const std::optional<std::string>& yaml, std::uint64_t seed) {
            const auto cfg = config_from(yaml);
            py::gil_scoped_release release;
            const auto ctx = harness::prepare_seed(cfg, seed);
            return std::make_pair(ctx.pretrained.holdout_accuracy_2d, ctx.pretrained.holdout_accuracy_3d);
        },
        py::arg("yaml") = py::none(), py::arg("seed") = 0, "Holdout accuracy (2d, 3d) of the source models.");

    m.def(
        "stream_sample",
        [](const std::optional<std::string>& yaml, std::uint64_t seed, std::size_t index) {
            const auto cfg = config_from(yaml);
            const auto ctx = harness::prepare_seed(cfg, seed);
            const auto s = stream::make_stream(ctx.world, ctx.segments, ctx.stream_seed);
            return batch_dict(s.at(index));
        },
        py::arg("yaml") = py::none(), py::arg("seed") = 0, py::arg("index") = 0,
        "One streamed sample as numpy arrays, as the adapter would see it for this seed.");

    m.def("compute_miou",
          [](const std::vector<int>& pred, const std::vector<int>& truth, int n_classes) {
              return report_dict(metrics::compute_miou(pred, truth, n_classes));
          },
          py::arg("pred"), py::arg("truth"), py::arg("n_classes"));

    m.def("softmax_rows", &softmax_rows, py::arg("logits"));
    m.def("normalize_rows", &normalize_rows, py::arg("x"));

    m.def(
        "impa_weights",
        [](const Matrix& z, const Matrix& z_aug, const Matrix& centroids, const std::vector<int>& k,
           const std::vector<int>& k_aug) {
            auto w = fusion::impa_weights(z, z_aug, centroids, k, k_aug);
            return std::make_pair(w.raw, w.aug);
        },
        py::arg("z"), py::arg("z_aug"), py::arg("centroids"), py::arg("k"), py::arg("k_aug"));
    m.def("impa_fuse", &fusion::impa_fuse, py::arg("p"), py::arg("p_aug"), py::arg("w"), py::arg("w_aug"));
    m.def("xmpf_weight", &fusion::xmpf_weight, py::arg("w"), py::arg("w_aug"), py::arg("k"), py::arg("k_aug"));
    m.def(
        "xmpf_fuse",
        [](const Matrix& p_hat_2d, const Vector& w_hat_2d, const Matrix& p_hat_3d, const Vector& w_hat_3d) {
            fusion::IntraModalResult a, b;
            a.p_hat = p_hat_2d;
            a.w_hat = w_hat_2d;
            b.p_hat = p_hat_3d;
            b.w_hat = w_hat_3d;
            auto r = fusion::xmpf_fuse(a, b);
            return std::make_pair(r.p_xm, r.labels);
        },
        py::arg("p_hat_2d"), py::arg("w_hat_2d"), py::arg("p_hat_3d"), py::arg("w_hat_3d"),
        "Cross-modal fusion; returns (fused probabilities, labels).");

    m.def(
        "contrastive_loss",
        [](const Matrix& anchors, const std::vector<Matrix>& queues, int k, const std::string& form,
           double temperature) {
            std::vector<memory::MomentumQueue> qs;
            for (const auto& q : queues)
                qs.emplace_back(q);
            auto r = memory::contrastive_loss(anchors, std::span<const memory::MomentumQueue>(qs), k, parse_form(form),
                                              temperature);
            return std::make_pair(r.loss, r.grad);
        },
        py::arg("anchors"), py::arg("queues"), py::arg("k"), py::arg("form") = "log_ratio",
        py::arg("temperature") = 1.0, "Class-wise contrastive loss and its gradient w.r.t. the anchors.");

    m.def("selftest", [] {
        std::ostringstream os;
        const bool ok = selftest::run_all(os);
        return std::make_pair(ok, os.str());
    });
}
