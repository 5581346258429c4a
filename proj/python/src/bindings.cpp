// Python bindings. Volumes cross the boundary as C-contiguous numpy arrays
// shaped (Z, Y, X): float32 for intensities, uint8 for masks. Spacing tuples
// stay in (x, y, z) order, matching the file formats.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "volseg/error.hpp"
#include "volseg/gradcheck.hpp"
#include "volseg/metrics.hpp"
#include "volseg/phantom.hpp"
#include "volseg/training.hpp"
#include "volseg/unet.hpp"
#include "volseg/volume.hpp"

namespace py = pybind11;
using namespace volseg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Dims dims_of(const py::array& a) {
  if (a.ndim() != 3) throw ShapeError("expected a 3-D array shaped (Z, Y, X), got " + std::to_string(a.ndim()) + "-D");
  return {static_cast<std::size_t>(a.shape(2)), static_cast<std::size_t>(a.shape(1)),
          static_cast<std::size_t>(a.shape(0))};
}

Volume to_volume(const FloatArray& a, const Spacing& spacing = {1.0, 1.0, 1.0}) {
  Volume v = Volume::zeros(dims_of(a), spacing);
  std::memcpy(v.data.data(), a.data(), v.data.size() * sizeof(float));
  return v;
}

Mask to_mask(const ByteArray& a, const Spacing& spacing = {1.0, 1.0, 1.0}) {
  Mask m = Mask::zeros(dims_of(a), spacing);
  std::memcpy(m.data.data(), a.data(), m.data.size());
  m.validate();
  return m;
}

FloatArray from_volume(const Volume& v) {
  FloatArray a({v.dims[2], v.dims[1], v.dims[0]});
  std::memcpy(a.mutable_data(), v.data.data(), v.data.size() * sizeof(float));
  return a;
}

ByteArray from_mask(const Mask& m) {
  ByteArray a({m.dims[2], m.dims[1], m.dims[0]});
  std::memcpy(a.mutable_data(), m.data.data(), m.data.size());
  return a;
}

py::dict metrics_dict(const SimilarityMetrics& s) {
  py::dict d;
  d["dsc"] = s.dsc;
  d["sensitivity"] = s.sensitivity;
  d["ppv"] = s.ppv;
  d["iou"] = s.iou;
  return d;
}

Dataset to_dataset(const std::vector<FloatArray>& vols, const std::vector<ByteArray>& masks, Split split) {
  if (vols.size() != masks.size()) throw ConfigError("volumes and masks differ in count");
  Dataset ds;
  ds.split = split;
  for (std::size_t i = 0; i < vols.size(); ++i) ds.samples.push_back({std::to_string(i), to_volume(vols[i]), to_mask(masks[i])});
  return ds;
}

UNetConfig make_config(const std::string& preset, std::optional<std::vector<std::size_t>> schedule, bool skips,
                       bool validate = true) {
  UNetConfig c = UNetConfig::preset(preset);
  if (schedule) {
    c.channel_schedule = *schedule;
    c.levels = schedule->size();
  }
  c.skips = skips;
  if (validate) c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "3D U-Net volume segmentation core";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  // I/O
  m.def("read_volume", [](const std::filesystem::path& p) {
    const Volume v = read_volume(p);
    return py::make_tuple(from_volume(v), v.spacing);
  }, py::arg("path"), "Read an SRV or NIfTI-1 volume; returns (array, spacing).");
  m.def("read_mask", [](const std::filesystem::path& p) {
    const Mask mk = read_mask(p);
    return py::make_tuple(from_mask(mk), mk.spacing);
  }, py::arg("path"));
  m.def("write_srv", [](const std::filesystem::path& p, const py::array& a, const Spacing& spacing) {
    if (a.dtype().is(py::dtype::of<std::uint8_t>())) {
      write_srv(to_mask(a.cast<ByteArray>(), spacing), p);
    } else {
      write_srv(to_volume(a.cast<FloatArray>(), spacing), p);
    }
  }, py::arg("path"), py::arg("array"), py::arg("spacing") = Spacing{1.0, 1.0, 1.0},
     "uint8 arrays are written as masks, everything else as float32 volumes.");

  // Phantoms
  m.def("generate_phantom", [](std::size_t size, std::uint64_t seed, std::size_t index, double noise_std,
                               double semi_axis_min, double semi_axis_max, std::size_t center_jitter) {
    PhantomSpec s;
    s.size = size;
    s.seed = seed;
    s.count = index + 1;
    s.noise_std = noise_std;
    s.semi_axis_min = semi_axis_min;
    s.semi_axis_max = semi_axis_max;
    s.center_jitter = center_jitter;
    s.validate();
    const PhantomSample p = generate_phantom(s, index);
    return py::make_tuple(from_volume(p.volume), from_mask(p.left), from_mask(p.right));
  }, py::arg("size") = 32, py::arg("seed") = 0, py::arg("index") = 0, py::arg("noise_std") = 0.1,
     py::arg("semi_axis_min") = 4.0, py::arg("semi_axis_max") = 7.0, py::arg("center_jitter") = 2,
     "Returns (volume, left, right).");

  // Preprocessing
  m.def("fuse_masks", [](const ByteArray& l, const ByteArray& r) { return from_mask(fuse_masks(to_mask(l), to_mask(r))); });
  m.def("zscore_normalize", [](const FloatArray& v) { return from_volume(zscore_normalize(to_volume(v))); });
  m.def("binarize", [](const FloatArray& prob, double t) { return from_mask(binarize(to_volume(prob), t)); },
        py::arg("prob"), py::arg("threshold") = 0.5);
  m.def("preprocess_case", [](const FloatArray& v, const ByteArray& l, const ByteArray& r, const Dims& target,
                              std::size_t margin) {
    const CropResult c = preprocess_case(to_volume(v), to_mask(l), to_mask(r), target, margin);
    return py::make_tuple(from_volume(c.volume), from_mask(c.mask));
  }, py::arg("volume"), py::arg("left"), py::arg("right"), py::arg("target"), py::arg("margin") = kDefaultCropMargin,
     "Fuse, crop to target (x, y, z) and z-score; returns (volume, mask).");

  // Metrics
  m.def("confusion_counts", [](const ByteArray& pred, const ByteArray& gt) {
    const ConfusionCounts c = confusion_counts(to_mask(pred), to_mask(gt));
    py::dict d;
    d["tp"] = c.tp;
    d["fp"] = c.fp;
    d["fn"] = c.fn;
    d["tn"] = c.tn;
    return d;
  });
  m.def("metrics", [](const ByteArray& pred, const ByteArray& gt) {
    return metrics_dict(metrics_from_counts(confusion_counts(to_mask(pred), to_mask(gt))));
  }, "dsc, sensitivity, ppv and iou of one prediction.");

  // Model
  m.def("param_count", [](const std::string& preset, std::optional<std::vector<std::size_t>> schedule, bool skips) {
    return param_count(make_config(preset, schedule, skips, false));
  }, py::arg("preset") = "desk", py::arg("schedule") = py::none(), py::arg("skips") = true);

  py::class_<UNet<float>>(m, "UNet")
      .def(py::init([](const std::string& preset, std::optional<std::vector<std::size_t>> schedule, bool skips,
                       std::uint64_t seed) { return build_unet(make_config(preset, schedule, skips), seed); }),
           py::arg("preset") = "desk", py::arg("schedule") = py::none(), py::arg("skips") = true,
           py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); })
      .def("save", [](const UNet<float>& net, const std::filesystem::path& p) { save_model(net, p); })
      .def_property_readonly("parameter_count", &UNet<float>::parameter_count)
      .def_property_readonly("schedule", [](const UNet<float>& net) { return net.config().channel_schedule; })
      .def_property_readonly("parameter_names", [](const UNet<float>& net) {
        std::vector<std::string> names;
        for (const auto& [name, t] : net.named_parameters()) names.push_back(name);
        return names;
      })
      .def("predict_probability", [](const UNet<float>& net, const FloatArray& v) {
        Volume out;
        {
          py::gil_scoped_release release;
          out = predict_probability(net, to_volume(v));
        }
        return from_volume(out);
      })
      .def("fit", [](UNet<float>& net, const std::vector<FloatArray>& vols, const std::vector<ByteArray>& masks,
                     std::size_t epochs, double lr, std::uint64_t seed, bool shuffle,
                     std::optional<std::vector<FloatArray>> test_vols, std::optional<std::vector<ByteArray>> test_masks) {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.adam.lr = lr;
        cfg.seed = seed;
        cfg.shuffle = shuffle;
        const Dataset tr = to_dataset(vols, masks, Split::train);
        const Dataset te = test_vols ? to_dataset(*test_vols, test_masks.value_or(std::vector<ByteArray>{}), Split::test)
                                     : Dataset{{}, Split::test};
        History h;
        {
          py::gil_scoped_release release;
          h = train(net, tr, te, cfg);
        }
        py::list out;
        for (const auto& r : h.epochs) {
          py::dict d;
          d["epoch"] = r.epoch;
          d["loss"] = r.loss;
          d["train_iou"] = r.train_iou;
          d["test_iou"] = r.test_iou;
          out.append(d);
        }
        return out;
      }, py::arg("volumes"), py::arg("masks"), py::arg("epochs") = 10, py::arg("lr") = 1e-2, py::arg("seed") = 0,
         py::arg("shuffle") = false, py::arg("test_volumes") = py::none(), py::arg("test_masks") = py::none(),
         "Adam training, batch size 1. Returns one dict per epoch.");

  m.def("gradcheck", [](std::uint64_t seed) {
    py::list out;
    for (const auto& r : run_gradcheck_suite(seed)) out.append(py::make_tuple(r.op, r.worst_error, r.cases));
    return out;
  }, py::arg("seed") = 2024, "Worst relative gradient error per op: [(op, error, cases)].");
  m.attr("GRADCHECK_TOLERANCE") = kGradCheckTolerance;
}
