#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "phenoswin/backbone.hpp"
#include "phenoswin/cli.hpp"
#include "phenoswin/evaluation.hpp"
#include "phenoswin/training.hpp"

namespace py = pybind11;
using namespace phenoswin;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

/// Defaults with one sentinel2 source, as the command line uses.
Config default_config() {
    Config c;
    SourceSpec s;
    s.name = "sentinel2";
    s.bands = default_band_count(s.name);
    c.sources = {s};
    return c;
}

Config config_from(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.is_object() && !j.contains("sources")) j["sources"] = to_json(default_config())["sources"];
    return parse_config(j);
}

const SourceSpec& pick_source(const Config& c, const std::string& name) {
    return name.empty() ? c.sources.front() : c.source(name);
}

Tensor to_tensor(const DoubleArray& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
    py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

LabelMap to_label_map(const IntArray& a) {
    if (a.ndim() != 2) throw std::invalid_argument("label map must be 2-D");
    LabelMap m(a.shape(0), a.shape(1));
    std::copy(a.data(), a.data() + a.size(), m.codes.begin());
    return m;
}

std::vector<int> flat_ints(const IntArray& a) { return {a.data(), a.data() + a.size()}; }

}  // namespace

PYBIND11_MODULE(_phenoswin, m) {
    m.doc() = "Multi-source temporal segmentation backbone with land-cover-fraction pretraining.";

    m.def("default_config", [] { return to_json(default_config()).dump(); }, "Built-in defaults as JSON text.");
    m.def("normalize_config", [](const std::string& text) { return to_json(config_from(text)).dump(); },
          py::arg("config"));
    m.def("config_hash", [](const std::string& text) { return config_hash(config_from(text)); }, py::arg("config"));

    m.def(
        "temporal_patch_size",
        [](int frames, int threshold, int short_patch, int long_patch) {
            return temporal_patch_size(frames, {threshold, short_patch, long_patch});
        },
        py::arg("frames"), py::arg("threshold") = 16, py::arg("short_patch") = 2, py::arg("long_patch") = 4);

    m.def(
        "stage_shapes",
        [](const std::string& text, int frames, Index height, Index width, const std::string& source) {
            const Config c = config_from(text);
            std::vector<std::array<Index, 4>> out;
            for (const auto& s : stage_shapes(c.model, pick_source(c, source), frames, height, width))
                out.push_back({s.frames, s.height, s.width, s.channels});
            return out;
        },
        py::arg("config"), py::arg("frames"), py::arg("height"), py::arg("width"), py::arg("source") = "");

    m.def(
        "flops",
        [](const std::string& text, int frames, Index size, const std::string& source, bool include_decoder) {
            const Config c = config_from(text);
            return flops_json(flops_estimate(c.model, pick_source(c, source), frames, size, size, include_decoder)).dump();
        },
        py::arg("config"), py::arg("frames"), py::arg("size"), py::arg("source") = "", py::arg("include_decoder") = true);

    m.def(
        "backbone_features",
        [](const std::string& text, const DoubleArray& input, const std::string& source, std::uint64_t seed) {
            const Config c = config_from(text);
            const SourceSpec& s = pick_source(c, source);
            ParamStore store;
            Rng rng(derive_seed(seed, "init"));
            init_backbone(store, c.model, c.sources, rng);
            const Tensor x = to_tensor(input);
            BackboneOutput out;
            {
                py::gil_scoped_release release;
                ag::NoGradGuard no_grad;
                out = backbone_forward(store, c.model, s, x);
            }
            std::vector<py::array_t<double>> stages;
            for (const auto& st : out.stages) stages.push_back(to_array(st.as_thwc()));
            return stages;
        },
        py::arg("config"), py::arg("input"), py::arg("source") = "", py::arg("seed") = 0,
        "Stage outputs [T, H, W, C] of a freshly initialized backbone for one [C, T, H, W] input.");

    m.def(
        "compute_fractions",
        [](const IntArray& labels, const std::map<int, int>& mapping) {
            const FractionVector f = compute_fractions(to_label_map(labels), ClassMapping(mapping));
            return to_array(Tensor({kFractionBins}, std::vector<double>(f.begin(), f.end())));
        },
        py::arg("labels"), py::arg("mapping"));

    m.def(
        "metrics",
        [](const IntArray& pred, const IntArray& gt, int num_classes, std::optional<int> ignore) {
            if (pred.size() != gt.size()) throw std::invalid_argument("prediction and reference sizes differ");
            const ConfusionCounts counts = confusion(flat_ints(pred), flat_ints(gt), num_classes, ignore);
            return report_json(metrics(counts), counts, "").dump();
        },
        py::arg("pred"), py::arg("gt"), py::arg("num_classes"), py::arg("ignore") = py::none());

    m.def(
        "predict",
        [](const std::string& text, const std::string& checkpoint, const std::map<std::string, DoubleArray>& inputs) {
            const Config c = config_from(text);
            std::vector<NamedInput> named;
            for (const auto& [name, a] : inputs) named.push_back({name, to_tensor(a)});
            Tensor probs;
            LabelMap map;
            {
                py::gil_scoped_release release;
                SegmentationModel model = load_segmentation_model(c, checkpoint);
                map = predict_labels(model, named, &probs);
            }
            py::array_t<int> labels({map.height, map.width});
            std::copy(map.codes.begin(), map.codes.end(), labels.mutable_data());
            return py::make_tuple(labels, to_array(probs.reshaped({map.height, map.width, probs.dim(1)})));
        },
        py::arg("config"), py::arg("checkpoint"), py::arg("inputs"),
        "Class map [H, W] and probabilities [H, W, K] from a finetuned checkpoint.");

    m.def(
        "generate_dataset",
        [](const std::string& text, const std::string& root, int workers) {
            const Config c = config_from(text);
            py::gil_scoped_release release;
            return static_cast<int>(generate_dataset(c, root, workers).tiles.size());
        },
        py::arg("config"), py::arg("root"), py::arg("workers") = 1);

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "phenoswin");
            std::vector<char*> argv;
            for (auto& a : args) argv.push_back(a.data());
            py::gil_scoped_release release;
            return run_cli(static_cast<int>(argv.size()), argv.data());
        },
        py::arg("args"), "Runs one command-line subcommand in process; returns its exit status.");
}
