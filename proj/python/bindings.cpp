#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dhsl/config.hpp"
#include "dhsl/evaluation.hpp"
#include "dhsl/trainer.hpp"

namespace py = pybind11;
using namespace dhsl;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

/// A manifest with its decoded images, kept together so spans stay valid.
struct Dataset {
  DatasetManifest manifest;
  std::vector<ImageRecord> images;
};

FloatArray to_numpy(const FeatureMatrix<float>& m) {
  FloatArray out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

FeatureMatrix<float> to_features(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d feature array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return FeatureMatrix<float>(rows, cols, std::vector<float>(a.data(), a.data() + rows * cols));
}

std::vector<ImageRecord> to_images(const FloatArray& a) {
  if (a.ndim() != 4 || a.shape(1) != static_cast<py::ssize_t>(kImageHeight) ||
      a.shape(2) != static_cast<py::ssize_t>(kImageWidth) || a.shape(3) != static_cast<py::ssize_t>(kImageChannels)) {
    throw ShapeError("images must be n x 128 x 48 x 3");
  }
  const std::size_t per = kImageHeight * kImageWidth * kImageChannels;
  std::vector<ImageRecord> out(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = Image(kImageHeight, kImageWidth);
    std::copy_n(a.data() + i * per, per, out[i].pixels.begin());
  }
  return out;
}

FloatArray images_array(const std::vector<ImageRecord>& images) {
  FloatArray out({images.size(), kImageHeight, kImageWidth, kImageChannels});
  float* dst = out.mutable_data();
  for (const auto& im : images) dst = std::copy(im.pixels.begin(), im.pixels.end(), dst);
  return out;
}

TrainConfig make_config(const py::dict& options) {
  TrainConfig config;
  for (const auto& [k, v] : options) {
    const auto key = py::str(k).cast<std::string>();
    const auto value = py::isinstance<py::bool_>(v) ? std::string(v.cast<bool>() ? "true" : "false")
                                                     : py::str(v).cast<std::string>();
    if (!config.apply(key, value)) throw ConfigError("unknown training option '" + key + "'");
  }
  config.validate();
  return config;
}

}  // namespace

PYBIND11_MODULE(_dhsl, m) {
  m.doc() = "Siamese CNN with a learned hybrid similarity for person re-identification";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<DataError>(m, "DataError", base);
  py::register_exception<ProtocolError>(m, "ProtocolError", base);
  py::register_exception<IoError>(m, "IoError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<DivergenceError>(m, "DivergenceError", base);
  py::register_exception<ShapeError>(m, "ShapeError", base);

  m.def(
      "count_metric_params",
      [](const std::string& kind, std::size_t d) { return count_metric_params(parse_metric_kind(kind), d); },
      py::arg("kind"), py::arg("d"));

  py::class_<Dataset>(m, "Dataset")
      .def_static(
          "synthetic",
          [](std::size_t identities, std::size_t images_per_camera, std::size_t cameras, std::size_t distractors,
             double difficulty, std::uint64_t seed) {
            auto s = generate_synthetic({identities, images_per_camera, cameras, distractors, difficulty, seed});
            return Dataset{std::move(s.manifest), std::move(s.images)};
          },
          py::arg("identities") = 20, py::arg("images_per_camera") = 2, py::arg("cameras") = 2,
          py::arg("distractors") = 0, py::arg("difficulty") = 0.2, py::arg("seed") = 1)
      .def_static(
          "open",
          [](const std::filesystem::path& path) {
            auto manifest = open_dataset(path);
            auto images = load_images(manifest);
            return Dataset{std::move(manifest), std::move(images)};
          },
          py::arg("path"))
      .def("__len__", [](const Dataset& d) { return d.images.size(); })
      .def_property_readonly("identities",
                             [](const Dataset& d) {
                               std::vector<int> out;
                               for (const auto& e : d.manifest.entries) out.push_back(e.identity);
                               return out;
                             })
      .def_property_readonly("cameras",
                             [](const Dataset& d) {
                               std::vector<int> out;
                               for (const auto& e : d.manifest.entries) out.push_back(e.camera);
                               return out;
                             })
      .def_property_readonly("images", [](const Dataset& d) { return images_array(d.images); })
      .def(
          "subset",
          [](const Dataset& d, const std::vector<int>& ids) {
            const auto s = subset(d.manifest, ids);
            return Dataset{s.manifest, s.gather<ImageRecord>(d.images)};
          },
          py::arg("identities"));

  py::class_<Model<float>>(m, "Model")
      .def(py::init([](double channel_mult, std::uint64_t seed) {
             Model<float> model(StackConfig::with_channel_multiplier(channel_mult));
             init_params(model, seed);
             return model;
           }),
           py::arg("channel_mult") = 1.0, py::arg("seed") = 1)
      .def_property_readonly("feature_dim", &Model<float>::feature_dim)
      .def_property_readonly("num_learnable", &Model<float>::num_learnable)
      .def(
          "features",
          [](Model<float>& model, const FloatArray& images) {
            const auto records = to_images(images);
            std::vector<std::size_t> entries(records.size());
            std::iota(entries.begin(), entries.end(), std::size_t{0});
            FeatureMatrix<float> features;
            {
              py::gil_scoped_release release;
              features = extract_features(model, records, entries);
            }
            return to_numpy(features);
          },
          py::arg("images"))
      .def_property(
          "w_d", [](const Model<float>& model) { return model.head().w_d; },
          [](Model<float>& model, const std::vector<float>& w) {
            if (w.size() != model.feature_dim()) throw ShapeError("w_d must have feature_dim entries");
            model.head().w_d = w;
          })
      .def_property(
          "w_m", [](const Model<float>& model) { return model.head().w_m; },
          [](Model<float>& model, const std::vector<float>& w) {
            if (w.size() != model.feature_dim()) throw ShapeError("w_m must have feature_dim entries");
            model.head().w_m = w;
          })
      .def(
          "score_matrix",
          [](const Model<float>& model, const FloatArray& probes, const FloatArray& gallery, const std::string& metric) {
            const auto p = to_features(probes);
            const auto g = to_features(gallery);
            const MetricScorer scorer(parse_metric_kind(metric), &model.head());
            const auto scores = scorer.score_matrix(p, g);
            DoubleArray out({p.rows, g.rows});
            std::copy(scores.begin(), scores.end(), out.mutable_data());
            return out;
          },
          py::arg("probes"), py::arg("gallery"), py::arg("metric") = "hybrid")
      .def(
          "sub_scores",
          [](const Model<float>& model, const FloatArray& x1, const FloatArray& x2) {
            FeaturePairs<float> pairs{to_features(x1), to_features(x2)};
            const auto d = score_distributions(model.head(), pairs);
            return py::make_tuple(d.diff.values, d.mult.values, d.hybrid);
          },
          py::arg("x1"), py::arg("x2"))
      .def(
          "save",
          [](Model<float>& model, const std::filesystem::path& path) {
            TrainConfig config;
            config.channel_multiplier = static_cast<double>(model.stack().config().widths[0]) / 32.0;
            save_checkpoint(model, config, nullptr, path);
          },
          py::arg("path"))
      .def_static(
          "load", [](const std::filesystem::path& path) { return std::move(load_checkpoint(path).model); },
          py::arg("path"));

  m.def(
      "train",
      [](Model<float>& model, const Dataset& data, const py::dict& options) {
        const auto config = make_config(options);
        model.apply_head_mode(config.head_mode);
        std::vector<double> losses;
        {
          py::gil_scoped_release release;
          Trainer trainer(model, config, data.manifest, data.images);
          trainer.run([&](const StepRecord& r) {
            losses.push_back(r.loss);
            return false;
          });
        }
        return losses;
      },
      py::arg("model"), py::arg("data"), py::arg("options") = py::dict(),
      "Trains in place with TrainConfig keys (e.g. max_steps=50, batch=16) and returns the per-step losses.");

  m.def(
      "cmc",
      [](const DoubleArray& scores, const std::vector<std::size_t>& truth, bool higher_is_better) {
        if (scores.ndim() != 2) throw ShapeError("scores must be probes x gallery");
        const auto gallery = static_cast<std::size_t>(scores.shape(1));
        const std::span<const double> flat(scores.data(), static_cast<std::size_t>(scores.size()));
        return cmc_from_scores(flat, gallery, truth, higher_is_better).rates;
      },
      py::arg("scores"), py::arg("truth"), py::arg("higher_is_better") = true);

  m.def(
      "evaluate",
      [](Model<float>& model, const Dataset& data, const std::vector<int>& test_ids, const std::string& metric,
         bool with_distractors) {
        ProtocolSplit split;
        split.test_ids = test_ids;
        split.distractors_in_gallery = with_distractors;
        py::gil_scoped_release release;
        return evaluate_trial(model, split, data.manifest, data.images, parse_metric_kind(metric)).rates;
      },
      py::arg("model"), py::arg("data"), py::arg("test_ids"), py::arg("metric") = "hybrid",
      py::arg("with_distractors") = false);
}
