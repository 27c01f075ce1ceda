#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cace/cli.hpp"
#include "cace/continual_trainer.hpp"
#include "cace/feature_stats.hpp"
#include "cace/segmenter.hpp"
#include "cace/synth_domains.hpp"

namespace py = pybind11;
using namespace cace;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Labels = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

FeatureMap to_map(const Array& a) {
    if (a.ndim() != 3) throw py::value_error("expected an (H, W, K) array");
    FeatureMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), m.data());
    return m;
}

Array from_map(const FeatureMap& m) {
    Array a({m.height(), m.width(), m.channels()});
    std::copy(m.values().begin(), m.values().end(), a.mutable_data());
    return a;
}

LabelMap to_labels(const Labels& a, int classes) {
    if (a.ndim() != 2) throw py::value_error("expected an (H, W) label array");
    LabelMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), classes);
    for (py::ssize_t p = 0; p < a.size(); ++p) m.set(static_cast<int>(p), static_cast<int>(a.data()[p]));
    return m;
}

Labels from_labels(const LabelMap& m) {
    Labels a({m.height(), m.width()});
    std::copy(m.indices().begin(), m.indices().end(), a.mutable_data());
    return a;
}

Array matrix(const std::vector<double>& v, int rows, int cols) {
    Array a({rows, cols});
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

LayerMoments to_moments(const Array& mean, const Array& std, const std::vector<bool>& present) {
    if (mean.ndim() != 2 || std.ndim() != 2 || mean.shape(0) != std.shape(0) || mean.shape(1) != std.shape(1))
        throw py::value_error("mean and std must be (C, K) arrays of the same shape");
    LayerMoments m(static_cast<int>(mean.shape(0)), static_cast<int>(mean.shape(1)));
    if (static_cast<int>(present.size()) != m.classes) throw py::value_error("present must have C entries");
    std::copy(mean.data(), mean.data() + mean.size(), m.mean.begin());
    std::copy(std.data(), std.data() + std.size(), m.std.begin());
    for (int c = 0; c < m.classes; ++c) m.present[static_cast<std::size_t>(c)] = present[static_cast<std::size_t>(c)];
    return m;
}

py::dict report_dict(const RunReport& r) {
    py::dict d;
    d["complete"] = r.complete;
    d["error"] = r.error;
    d["mean_miou"] = r.mean_miou;
    std::vector<double> final;
    for (const auto& x : r.final_iou) final.push_back(x.mean);
    d["final_miou"] = final;
    d["miou_after_stage"] = r.miou_after_stage;
    std::vector<double> forgetting;
    if (r.complete)
        for (int k = 1; k <= r.domains; ++k) forgetting.push_back(r.forgetting(k));
    d["forgetting"] = forgetting;
    d["memory_footprint"] = r.memory_footprint;
    d["csv"] = report_csv(r);
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Class-conditional style replay for continual domain adaptation (C++ core)";
    py::register_exception<Error>(m, "CaceError", PyExc_ValueError);

    m.def("class_moments",
          [](const Array& z, const Labels& mask, int classes) {
              const LayerMoments lm = class_moments(to_map(z), to_labels(mask, classes));
              std::vector<bool> present(lm.present.begin(), lm.present.end());
              return py::make_tuple(matrix(lm.mean, lm.classes, lm.channels), matrix(lm.std, lm.classes, lm.channels),
                                    present);
          },
          py::arg("z"), py::arg("mask"), py::arg("classes"),
          "Per-class population (mean, std) of an (H, W, K) map; returns (mean, std, present).");
    m.def("adain",
          [](const Array& z, const std::vector<double>& mean, const std::vector<double>& std) {
              return from_map(adain(to_map(z), mean, std));
          },
          py::arg("z"), py::arg("mean"), py::arg("std"));
    m.def("cc_adain",
          [](const Array& z, const Labels& mask, const Array& mean, const Array& std, const std::vector<bool>& present) {
              const LayerMoments target = to_moments(mean, std, present);
              return from_map(cc_adain(to_map(z), to_labels(mask, target.classes), target));
          },
          py::arg("z"), py::arg("mask"), py::arg("mean"), py::arg("std"), py::arg("present"));
    m.def("ce_loss",
          [](const Array& probs, const Labels& labels) {
              return ce_loss(to_map(probs), to_labels(labels, static_cast<int>(probs.shape(2))));
          },
          py::arg("probs"), py::arg("labels"));
    m.def("miou",
          [](const std::vector<Labels>& preds, const std::vector<Labels>& gts, int classes) {
              std::vector<LabelMap> p, g;
              for (const auto& a : preds) p.push_back(to_labels(a, classes));
              for (const auto& a : gts) g.push_back(to_labels(a, classes));
              const IouResult r = miou(p, g);
              return py::make_tuple(r.mean, r.per_class);
          },
          py::arg("preds"), py::arg("gts"), py::arg("classes"));
    m.def("generate_scene",
          [](std::uint64_t seed, int height, int width, int classes) {
              SceneSpec spec;
              spec.height = height;
              spec.width = width;
              spec.classes = classes;
              const Scene s = generate_scene(spec, seed);
              return py::make_tuple(from_map(s.image), from_labels(s.labels));
          },
          py::arg("seed"), py::arg("height") = 32, py::arg("width") = 32, py::arg("classes") = 5);
    m.def("normalize_config", [](const std::string& text) { return cli::config_json(cli::parse_run_config(text).sequence); },
          py::arg("config_json"), "Validate a run configuration and return its canonical JSON echo.");
    m.def("run_sequence",
          [](const std::string& text) {
              const SequenceConfig c = cli::parse_run_config(text).sequence;
              RunReport r;
              {
                  py::gil_scoped_release release;
                  r = run_sequence(c);
              }
              return report_dict(r);
          },
          py::arg("config_json"), "Pretrain, adapt to every target domain and evaluate; returns a report dict.");
    m.def("cli", [](const std::vector<std::string>& args) {
        std::vector<std::string> all{"cace"};
        all.insert(all.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : all) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
    }, py::arg("args"), "Run the command-line interface in-process; returns (exit code, stdout, stderr).");
}
