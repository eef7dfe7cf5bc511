#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "piqn/assignment.hpp"
#include "piqn/cli.hpp"
#include "piqn/data.hpp"
#include "piqn/encoder.hpp"
#include "piqn/errors.hpp"
#include "piqn/evaluation.hpp"
#include "piqn/heads.hpp"

namespace py = pybind11;
using namespace piqn;

namespace {

using Rows = std::vector<std::vector<double>>;

Tensor tensor_from_rows(const Rows& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.front().size();
  std::vector<double> flat;
  flat.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return Tensor::from({r, c}, std::move(flat));
}

Rows rows_from_tensor(const Tensor& t) {
  Rows out(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out[i][j] = t.at(i, j);
  return out;
}

py::dict result_dict(const AssignmentResult& r) {
  py::dict d;
  std::vector<py::object> labels;
  for (auto k : r.labels) labels.push_back(k == r.entities ? py::none() : py::cast(k));
  d["labels"] = labels;
  d["total_cost"] = r.total_cost;
  d["queries"] = r.queries;
  d["entities"] = r.entities;
  return d;
}

using Span = std::tuple<std::size_t, std::size_t, std::size_t>;

std::vector<EntityAnnotation> to_gold(const std::vector<Span>& spans) {
  std::vector<EntityAnnotation> gold;
  for (const auto& [l, r, t] : spans) gold.push_back({l, r, t});
  return gold;
}

py::dict prf(const MetricCounts& c) {
  py::dict d;
  d["p"] = c.precision();
  d["r"] = c.recall();
  d["f1"] = c.f1();
  return d;
}

}  // namespace

PYBIND11_MODULE(_piqn, m) {
  m.doc() = "Nested NER with parallel instance queries";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<InfeasibleError>(m, "InfeasibleError", PyExc_ValueError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_ValueError);
  py::register_exception<AnnotationError>(m, "AnnotationError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "allocate_quantities",
      [](std::size_t entities, std::size_t queries, double ratio, std::uint64_t seed) {
        return allocate_quantities(entities, queries, ratio, seed).q;
      },
      py::arg("entities"), py::arg("queries"), py::arg("ratio") = 0.75, py::arg("seed") = 0);

  m.def(
      "solve_lap",
      [](const Rows& cost, const std::vector<std::size_t>& q) {
        return result_dict(solve_one_to_many_lap(CostMatrix::from_rows(cost), QuantityVector{q}));
      },
      py::arg("cost"), py::arg("quantities"),
      "Minimum-cost one-to-many assignment; cost is queries x entities.");

  m.def(
      "brute_force_lap",
      [](const Rows& cost, const std::vector<std::size_t>& q) {
        return result_dict(brute_force_lap(CostMatrix::from_rows(cost), QuantityVector{q}));
      },
      py::arg("cost"), py::arg("quantities"));

  m.def(
      "decode",
      [](const Rows& left, const Rows& right, const Rows& types, double loc, double cls) {
        BoundaryScores scores{tensor_from_rows(left), tensor_from_rows(right)};
        TypeDistribution dist{tensor_from_rows(types)};
        std::vector<py::dict> out;
        for (const auto& p : decode_entities(scores, dist, {loc, cls})) {
          py::dict d;
          d["query_id"] = p.query_id;
          d["start"] = p.left;
          d["end"] = p.right;
          d["type"] = p.type_id;
          d["score"] = p.type_prob;
          out.push_back(d);
        }
        return out;
      },
      py::arg("left"), py::arg("right"), py::arg("types"), py::arg("loc_threshold") = 0.6,
      py::arg("cls_threshold") = 0.8);

  m.def(
      "evaluate",
      [](const std::vector<Span>& predicted, const std::vector<Span>& gold) {
        std::vector<Prediction> preds;
        for (std::size_t i = 0; i < predicted.size(); ++i) {
          const auto& [l, r, t] = predicted[i];
          preds.push_back({i, l, r, t, 1.0, 1.0, 1.0});
        }
        const auto g = to_gold(gold);
        const EvalReport rep = evaluate_sentence(preds, g);
        py::dict d;
        d["ner"] = prf(rep.ner);
        d["loc"] = prf(rep.localization);
        d["cls"] = prf(rep.classification);
        return d;
      },
      py::arg("predicted"), py::arg("gold"), "Spans are (start, end, type) triples.");

  m.def(
      "generate_synthetic",
      [](std::size_t sentences, std::size_t types, double nesting, std::uint64_t seed) {
        SyntheticSpec spec;
        spec.sentences = sentences;
        spec.type_count = types;
        spec.nesting_ratio = nesting;
        const Dataset ds = generate_synthetic(spec, seed);
        std::vector<py::dict> out;
        for (const auto& ex : ds.examples) {
          py::dict d;
          d["tokens"] = ex.tokens;
          std::vector<Span> spans;
          for (const auto& e : ex.entities) spans.emplace_back(e.left, e.right, e.type_id);
          d["entities"] = spans;
          out.push_back(d);
        }
        return py::make_tuple(out, ds.meta.types, nesting_ratio(ds.examples));
      },
      py::arg("sentences") = 64, py::arg("types") = 4, py::arg("nesting") = 0.3,
      py::arg("seed") = 0, "Returns (examples, type names, realized nesting ratio).");

  m.def(
      "one_way_mask",
      [](std::size_t words, std::size_t queries, bool query_interaction) {
        return rows_from_tensor(build_one_way_mask(words, queries, query_interaction));
      },
      py::arg("words"), py::arg("queries"), py::arg("query_interaction") = true);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, double eps) { return toy_model_grad_check(seed, eps).max_relative_error; },
      py::arg("seed") = 0, py::arg("eps") = 1e-5);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"piqn"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI command in-process; returns (exit code, stdout, stderr).");
}
