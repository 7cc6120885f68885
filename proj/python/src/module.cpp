#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sael/checkpoint.hpp"
#include "sael/corpus.hpp"
#include "sael/errors.hpp"
#include "sael/evaluation.hpp"
#include "sael/features.hpp"
#include "sael/llm_client.hpp"
#include "sael/metrics.hpp"
#include "sael/moe.hpp"
#include "sael/synthetic.hpp"

namespace py = pybind11;
using namespace sael;

namespace {

// Checkpoints cross the boundary as JSON text; the Python side parses it.
std::string model_to_json(const MoeModel& m) { return checkpoint_to_json(m).dump(); }
MoeModel model_from_json(const std::string& text) {
  return checkpoint_from_json(nlohmann::json::parse(text)).model;
}

void bind_types(py::module_& m) {
  py::enum_<VulnType>(m, "VulnType")
      .value("Reentrancy", VulnType::Reentrancy)
      .value("Timestamp", VulnType::Timestamp)
      .value("OverflowUnderflow", VulnType::OverflowUnderflow)
      .value("Delegatecall", VulnType::Delegatecall);
  py::enum_<Verdict>(m, "Verdict").value("Vulnerable", Verdict::Vulnerable).value("Secure", Verdict::Secure);
  py::enum_<Split>(m, "Split")
      .value("Train", Split::Train)
      .value("Valid", Split::Valid)
      .value("Test", Split::Test)
      .value("Unassigned", Split::Unassigned);
  py::enum_<FusionMode>(m, "FusionMode")
      .value("WeightedSum", FusionMode::WeightedSum)
      .value("Selection", FusionMode::Selection);
}

void bind_corpus(py::module_& m) {
  py::class_<ExtractedFunction>(m, "ExtractedFunction")
      .def_readonly("contract_name", &ExtractedFunction::contract_name)
      .def_readonly("function_name", &ExtractedFunction::function_name)
      .def_readonly("source", &ExtractedFunction::source)
      .def_readonly("offset", &ExtractedFunction::offset)
      .def_readonly("line", &ExtractedFunction::line)
      .def("__repr__", [](const ExtractedFunction& f) {
        return "<ExtractedFunction " + f.contract_name + "." + f.function_name + ">";
      });
  m.def("extract_functions", [](const std::string& src) { return extract_functions(src); }, py::arg("source"));

  py::class_<FunctionRecord>(m, "FunctionRecord")
      .def_readonly("id", &FunctionRecord::id)
      .def_readonly("contract_name", &FunctionRecord::contract_name)
      .def_readonly("function_name", &FunctionRecord::function_name)
      .def_readonly("source", &FunctionRecord::source)
      .def_readonly("vuln_type", &FunctionRecord::vuln_type)
      .def_readonly("label", &FunctionRecord::label)
      .def_readonly("split", &FunctionRecord::split);
  py::class_<Corpus>(m, "Corpus")
      .def_readonly("vuln_type", &Corpus::vuln_type)
      .def_readonly("records", &Corpus::records)
      .def("__len__", &Corpus::size);
  m.def("load_corpus", [](const std::filesystem::path& p, VulnType v) { return load_corpus(p, v); },
        py::arg("path"), py::arg("vuln_type"));
}

void bind_votes(py::module_& m) {
  py::class_<LlmVerdict>(m, "LlmVerdict")
      .def_readonly("prediction", &LlmVerdict::prediction)
      .def_readonly("explanation", &LlmVerdict::explanation)
      .def_property_readonly("votes", [](const LlmVerdict& v) {
        return py::make_tuple(v.votes.vulnerable, v.votes.secure);
      })
      .def_readonly("abstentions", &LlmVerdict::abstentions);
  m.def("parse_verdict", [](const std::string& text) -> std::optional<Verdict> {
    return parse_verdict(text).verdict;
  });
  m.def("aggregate_votes", &aggregate_votes, py::arg("responses"));
}

void bind_metrics(py::module_& m) {
  py::class_<Metrics>(m, "Metrics")
      .def_readonly("tp", &Metrics::tp)
      .def_readonly("fp", &Metrics::fp)
      .def_readonly("fn", &Metrics::fn)
      .def_readonly("tn", &Metrics::tn)
      .def_readonly("precision", &Metrics::precision)
      .def_readonly("recall", &Metrics::recall)
      .def_readonly("f1", &Metrics::f1);
  m.def("compute_metrics", [](const std::vector<int>& pred, const std::vector<int>& gold) {
    return compute_metrics(pred, gold);
  }, py::arg("predictions"), py::arg("labels"));
  m.def("metrics_from_counts", &metrics_from_counts, py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn"));
  m.def("f1_score", &f1_score);
}

void bind_model(py::module_& m) {
  py::class_<FeatureBundle>(m, "FeatureBundle")
      .def(py::init([](Embedding raw, Embedding expl, Embedding pred) {
             FeatureBundle b{std::move(raw), std::move(expl), std::move(pred)};
             b.validate();
             return b;
           }),
           py::arg("raw"), py::arg("expl"), py::arg("pred"))
      .def_readonly("raw", &FeatureBundle::raw)
      .def_readonly("expl", &FeatureBundle::expl)
      .def_readonly("pred", &FeatureBundle::pred);

  m.def("mock_embed", [](const std::string& text, std::size_t d, std::uint64_t seed) {
    return MockProvider(d, seed).embed(text);
  }, py::arg("text"), py::arg("d"), py::arg("seed") = 0);
  m.def("embed_pred", py::overload_cast<const std::optional<Verdict>&, std::size_t>(&embed_pred));

  py::class_<MoeConfig>(m, "MoeConfig")
      .def(py::init<>())
      .def_readwrite("d", &MoeConfig::d)
      .def_readwrite("n_heads", &MoeConfig::n_heads)
      .def_readwrite("d_gate", &MoeConfig::d_gate)
      .def_readwrite("k", &MoeConfig::k)
      .def_readwrite("alpha", &MoeConfig::alpha)
      .def_readwrite("gamma", &MoeConfig::gamma)
      .def_readwrite("eta", &MoeConfig::eta)
      .def_readwrite("epochs", &MoeConfig::epochs)
      .def_readwrite("batch_size", &MoeConfig::batch_size)
      .def_readwrite("seed", &MoeConfig::seed)
      .def("validate", &MoeConfig::validate);

  py::class_<Prediction>(m, "Prediction")
      .def_readonly("label", &Prediction::label)
      .def_readonly("final_probs", &Prediction::final_probs)
      .def_readonly("gate", &Prediction::gate)
      .def_readonly("expert_probs", &Prediction::expert_probs);

  py::class_<LossBreakdown>(m, "LossBreakdown")
      .def_readonly("total", &LossBreakdown::total)
      .def_readonly("feature", &LossBreakdown::feature)
      .def_readonly("pred", &LossBreakdown::pred)
      .def_readonly("reg", &LossBreakdown::reg)
      .def_readonly("mean_gate", &LossBreakdown::mean_gate);

  py::class_<MoeModel>(m, "MoeModel")
      .def_static("initialized", &MoeModel::initialized, py::arg("config"))
      .def_readonly("config", &MoeModel::config)
      .def_readwrite("prev_gate", &MoeModel::prev_gate)
      .def_property_readonly("parameter_count", &MoeModel::parameter_count)
      .def("predict", [](const MoeModel& self, const FeatureBundle& b, FusionMode mode) {
        return predict(b, self, mode);
      }, py::arg("bundle"), py::arg("mode") = FusionMode::WeightedSum)
      .def("gate", [](const MoeModel& self, const FeatureBundle& b) {
        const auto e = mhsa_enhance(b, self);
        return gate_forward(FeatureBundle{e[0], e[1], e[2]}, self);
      })
      .def("loss", [](const MoeModel& self, std::vector<FeatureBundle> bundles, std::vector<int> labels) {
        return loss_total(Batch{std::move(bundles), std::move(labels)}, self);
      })
      .def("train_step", [](MoeModel& self, std::vector<FeatureBundle> bundles, std::vector<int> labels) {
        return train_step(Batch{std::move(bundles), std::move(labels)}, self).loss;
      })
      .def("to_json", &model_to_json)
      .def_static("from_json", &model_from_json)
      .def("__eq__", &MoeModel::operator==);

  m.def("fuse", [](const GateVector& g, const Probs2& o1, const Probs2& o2, const Probs2& o3) {
    return fuse(g, assemble_matrix(o1, o2, o3));
  }, py::arg("gate"), py::arg("o1"), py::arg("o2"), py::arg("o3"));
}

void bind_experiments(py::module_& m) {
  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("n", &SyntheticSpec::n)
      .def_readwrite("d", &SyntheticSpec::d)
      .def_readwrite("raw_separation", &SyntheticSpec::raw_separation)
      .def_readwrite("expl_separation", &SyntheticSpec::expl_separation)
      .def_readwrite("pred_accuracy", &SyntheticSpec::pred_accuracy)
      .def_readwrite("positive_rate", &SyntheticSpec::positive_rate)
      .def_readwrite("seed", &SyntheticSpec::seed);
  py::class_<LabeledBundles>(m, "LabeledBundles")
      .def_readonly("bundles", &LabeledBundles::bundles)
      .def_readonly("labels", &LabeledBundles::labels)
      .def("__len__", &LabeledBundles::size);
  py::class_<Dataset>(m, "Dataset")
      .def_readonly("train", &Dataset::train)
      .def_readonly("valid", &Dataset::valid)
      .def_readonly("test", &Dataset::test);
  m.def("make_synthetic_dataset", &make_synthetic_dataset, py::arg("spec"));

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("model", &FitResult::model)
      .def_readonly("best_epoch", &FitResult::best_epoch)
      .def_readonly("mean_gate_drift", &FitResult::mean_gate_drift);
  m.def("train_model", &train_model, py::arg("data"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("evaluate", [](const MoeModel& model, const LabeledBundles& data, FusionMode mode) {
    return evaluate(model, data, VulnType::Reentrancy, mode).metrics;
  }, py::arg("model"), py::arg("data"), py::arg("mode") = FusionMode::WeightedSum);

  py::class_<AblationRow>(m, "AblationRow")
      .def_readonly("group", &AblationRow::group)
      .def_readonly("name", &AblationRow::name)
      .def_readonly("metrics", &AblationRow::metrics);
  m.def("run_ablation", &run_ablation, py::arg("data"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Smart-contract vulnerability detection with LLM explanations and a gated expert mixture";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<DataError>(m, "DataError", error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());
  py::register_exception<TransportError>(m, "TransportError", error.ptr());

  bind_types(m);
  bind_corpus(m);
  bind_votes(m);
  bind_metrics(m);
  bind_model(m);
  bind_experiments(m);
}
