#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "tvgan/cli.hpp"
#include "tvgan/dataio.hpp"
#include "tvgan/error.hpp"
#include "tvgan/losses.hpp"
#include "tvgan/recog.hpp"
#include "tvgan/train.hpp"

namespace py = pybind11;
using namespace tvgan;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (C, H, W) or (H, W) arrays become tensors.
Tensor to_tensor(const Array& a) {
  if (a.ndim() == 2) {
    Tensor t(1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), t.data());
    return t;
  }
  if (a.ndim() != 3) throw ShapeError("expected a (C, H, W) or (H, W) array");
  Tensor t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

Tensor to_flat(const Array& a) {
  Tensor t(1, 1, static_cast<int>(a.size()));
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

Array to_array(const Tensor& t) {
  Array a({t.channels(), t.height(), t.width()});
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

py::dict sample_dict(const PairedSample& s) {
  py::dict d;
  d["subject"] = s.subject_id;
  d["pose"] = s.pose_tag;
  d["attributes"] = std::vector<std::string>(s.attributes.begin(), s.attributes.end());
  d["thermal"] = to_array(s.thermal);
  d["visible"] = to_array(s.visible);
  return d;
}

Gallery make_gallery(const std::vector<std::string>& subjects, const Array& embeddings) {
  if (embeddings.ndim() != 2 || static_cast<std::size_t>(embeddings.shape(0)) != subjects.size()) {
    throw ShapeError("gallery embeddings must be an (M, d) array with one row per subject label");
  }
  Gallery g;
  g.dim = static_cast<int>(embeddings.shape(1));
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const double* row = embeddings.data() + i * g.dim;
    g.entries.push_back({subjects[i], Embedding(row, row + g.dim)});
  }
  return g;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Thermal-to-visible face translation: losses, ranking, toy data and the command line";

  // translators run newest first, so subclasses are registered last
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv = {"tvgan"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line in process; returns (status, stdout, stderr).");

  m.def("discriminator_adv_loss",
        [](const Array& real, const Array& fake) { return discriminator_adv_loss(to_flat(real), to_flat(fake)); },
        py::arg("realness_real"), py::arg("realness_fake"));
  m.def("generator_adv_loss", [](const Array& fake) { return generator_adv_loss(to_flat(fake)); },
        py::arg("realness_fake"));
  m.def("l1_loss", [](const Array& t, const Array& g) { return l1_loss(to_flat(t), to_flat(g)); },
        py::arg("target"), py::arg("generated"));
  m.def("mse_loss", [](const Array& t, const Array& g) { return mse_loss(to_flat(t), to_flat(g)); },
        py::arg("target"), py::arg("generated"));
  m.def(
      "identity_loss_discriminator",
      [](const Array& real, const Array& true_id, const Array& fake, bool fake_term) {
        return identity_loss_discriminator(to_vector(real), to_vector(true_id), to_vector(fake), fake_term);
      },
      py::arg("id_logits_real"), py::arg("true_id"), py::arg("id_logits_fake"), py::arg("fake_term") = true);
  m.def(
      "identity_loss_generator",
      [](const Array& fake, const Array& true_id) {
        return identity_loss_generator(to_vector(fake), to_vector(true_id));
      },
      py::arg("id_logits_fake"), py::arg("true_id"));
  m.def(
      "tvgan_generator_total",
      [](double g_adv, double l1, double g_id, double lambda1, double lambda2) {
        return tvgan_generator_total(g_adv, l1, g_id, LossWeights{lambda1, lambda2});
      },
      py::arg("g_adv"), py::arg("l1"), py::arg("g_id"), py::arg("lambda1") = 100.0,
      py::arg("lambda2") = 100.0);

  m.def(
      "cosine_distance",
      [](const Array& a, const Array& b) { return cosine_distance(to_vector(a), to_vector(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "rank_of_query",
      [](const Array& query, const std::string& truth, const std::vector<std::string>& subjects,
         const Array& embeddings, const std::string& mode) {
        const RankResult r =
            rank_of_query(to_vector(query), truth, make_gallery(subjects, embeddings), parse_rank_mode(mode));
        return py::make_tuple(r.rank, r.sorted_gallery_subjects);
      },
      py::arg("query"), py::arg("truth"), py::arg("gallery_subjects"), py::arg("gallery_embeddings"),
      py::arg("mode") = "per-image", "Returns (rank, gallery subjects sorted by distance).");
  m.def(
      "cmc_curve",
      [](const Array& queries, const std::vector<std::string>& truths, const std::vector<std::string>& subjects,
         const Array& embeddings, const std::string& mode) {
        if (queries.ndim() != 2 || static_cast<std::size_t>(queries.shape(0)) != truths.size()) {
          throw ShapeError("queries must be an (Q, d) array with one row per truth label");
        }
        std::vector<Query> q;
        const auto d = static_cast<std::size_t>(queries.shape(1));
        for (std::size_t i = 0; i < truths.size(); ++i) {
          const double* row = queries.data() + i * d;
          q.push_back({Embedding(row, row + d), truths[i]});
        }
        return cmc_curve(q, make_gallery(subjects, embeddings), parse_rank_mode(mode));
      },
      py::arg("queries"), py::arg("truths"), py::arg("gallery_subjects"), py::arg("gallery_embeddings"),
      py::arg("mode") = "per-image");
  m.def("content_hash", [](const Array& image) { return content_hash(to_tensor(image)); }, py::arg("image"));

  m.def(
      "synthesize_toy_dataset",
      [](int subjects, int per_subject, int resolution, std::uint64_t seed) {
        py::list out;
        for (const auto& s : synthesize_toy_dataset(subjects, per_subject, resolution, seed))
          out.append(sample_dict(s));
        return out;
      },
      py::arg("subjects") = 8, py::arg("per_subject") = 10, py::arg("resolution") = 64, py::arg("seed") = 0);

  py::class_<TransformModel>(m, "TransformModel")
      .def_property_readonly("kind", [](const TransformModel& t) { return to_string(t.kind); })
      .def("__call__", [](const TransformModel& t, const Array& thermal) {
        return to_array(transform(t, to_tensor(thermal)));
      });
  m.def("plain_model", &plain_model);
  m.def(
      "load_model", [](const std::string& path) { return load_transform_model(path); }, py::arg("checkpoint"));
}
