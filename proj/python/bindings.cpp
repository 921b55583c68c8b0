#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hiprompt/commands.hpp"
#include "hiprompt/error.hpp"
#include "hiprompt/experiment.hpp"
#include "hiprompt/inference.hpp"
#include "hiprompt/learning.hpp"
#include "hiprompt/run_config.hpp"

namespace py = pybind11;
using namespace hiprompt;

namespace {

// (exit code, stdout, stderr)
using CommandResult = std::tuple<int, std::string, std::string>;

CommandResult run_command(const std::string& name, const std::string& config_json,
                          const std::optional<std::string>& input, const std::optional<std::string>& checkpoint,
                          const std::optional<std::string>& export_features, int trials) {
  std::ostringstream out, err;
  RunConfig cfg;
  try {
    cfg = config_from_json(nlohmann::json::parse(config_json));
  } catch (const Error& e) {
    return {exit_code_for(e.code()), "", e.what()};
  }
  CommandOptions opt;
  opt.input = input;
  opt.checkpoint = checkpoint;
  opt.export_features = export_features;
  opt.trials = trials;
  int code;
  {
    py::gil_scoped_release release;
    if (name == "acquire")
      code = cmd_acquire(cfg, out, err);
    else if (name == "train")
      code = cmd_train(cfg, out, err);
    else if (name == "eval")
      code = cmd_eval(cfg, opt, out, err);
    else if (name == "gradcheck")
      code = cmd_gradcheck(cfg, opt, out, err);
    else
      throw py::value_error("unknown command: " + name);
  }
  return {code, out.str(), err.str()};
}

py::dict experiment(const std::string& variant, std::uint64_t seed, std::size_t per_attribute, std::size_t per_pair,
                    int epochs) {
  SyntheticConfig sc;
  sc.seed = seed;
  sc.per_attribute = per_attribute;
  sc.per_pair = per_pair;
  ExperimentSettings s;
  s.encoder.seed = seed;
  s.prompt_seed = seed;
  s.train.seed = seed;
  s.train.epochs = epochs;
  ExperimentResult r;
  {
    py::gil_scoped_release release;
    auto task = make_synthetic_task(sc);
    r = run_experiment(task, prompt_variant_from_string(variant), s);
  }
  py::dict d;
  d["map_init"] = r.map_init;
  d["map_trained"] = r.map_trained;
  d["f1_trained"] = r.f1_trained;
  d["order_kl_init"] = r.order_kl_init;
  d["order_kl_trained"] = r.order_kl_trained;
  py::list log;
  for (const auto& e : r.log) log.append(py::make_tuple(e.epoch, e.lr, e.mean_total));
  d["log"] = log;
  return d;
}

}  // namespace

PYBIND11_MODULE(_hiprompt, m) {
  m.doc() = "Hierarchical prompt learning core";

  // Owned for the lifetime of the interpreter.
  static py::handle error = PyErr_NewException("hiprompt.HipromptError", PyExc_RuntimeError, nullptr);
  m.attr("HipromptError") = error;
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error)(e.what());
      exc.attr("code") = to_string(e.code());
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  m.def("normalize_name", &normalize_name);
  m.def("parse_list_answer", &parse_list_answer);

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<>())
      .def_static("build", &Vocabulary::build)
      .def_static("from_json", [](const std::string& s) { return Vocabulary::from_json(s); })
      .def("to_json", &Vocabulary::to_json)
      .def("id", [](const Vocabulary& v, const std::string& t) { return v.id(t); })
      .def("token", &Vocabulary::token)
      .def("tokenize", [](const Vocabulary& v, const std::string& text) { return tokenize(text, v); })
      .def("__len__", &Vocabulary::size);

  py::class_<TextEncoder>(m, "TextEncoder")
      .def(py::init([](std::size_t vocab_size, int d, std::uint64_t seed) {
             EncoderConfig c;
             c.d = d;
             c.seed = seed;
             return TextEncoder(c, vocab_size);
           }),
           py::arg("vocab_size"), py::arg("d") = 64, py::arg("seed") = 0)
      .def_property_readonly("dim", &TextEncoder::dim)
      .def("encode",
           [](const TextEncoder& enc, const std::vector<TokenId>& ids) {
             auto e = enc.encode(ids);
             return py::make_tuple(e.global, e.tokens);
           })
      .def("fingerprint", &TextEncoder::fingerprint);

  m.def("local_similarity", &local_similarity, py::arg("tokens"), py::arg("bank"), py::arg("tau") = 1.0);
  m.def("similarity_matrix", &similarity_matrix);
  m.def("order_loss", &order_loss, py::arg("learned"), py::arg("anchor"), py::arg("tau") = 1.0);
  m.def("average_precision", &average_precision);
  m.def("f1_at_k", &f1_at_k, py::arg("scores"), py::arg("labels"), py::arg("k") = 3);
  m.def(
      "lr_at",
      [](int epoch, double lr, std::vector<int> milestones, double gamma) {
        TrainConfig c;
        c.lr = lr;
        c.milestones = std::move(milestones);
        c.gamma = gamma;
        return lr_at(epoch, c);
      },
      py::arg("epoch"), py::arg("lr") = 0.002, py::arg("milestones") = std::vector<int>{2, 5},
      py::arg("gamma") = 0.1);

  m.def(
      "gradcheck",
      [](int trials, std::uint64_t seed) {
        GradcheckOptions o;
        o.trials = trials;
        o.seed = seed;
        auto r = run_gradcheck(o);
        py::dict d;
        d["passed"] = r.passed;
        d["max_rel_rank"] = r.max_rel_rank;
        d["max_rel_order"] = r.max_rel_order;
        d["max_rel_total"] = r.max_rel_total;
        return d;
      },
      py::arg("trials") = 20, py::arg("seed") = 0);

  m.def("synthetic_experiment", &experiment, py::arg("variant") = "hierarchical", py::arg("seed") = 0,
        py::arg("per_attribute") = 10, py::arg("per_pair") = 50, py::arg("epochs") = 10);

  m.def("run_command", &run_command, py::arg("name"), py::arg("config_json"), py::arg("input") = py::none(),
        py::arg("checkpoint") = py::none(), py::arg("export_features") = py::none(), py::arg("trials") = 20);
}
