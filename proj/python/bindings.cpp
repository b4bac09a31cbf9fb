#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <optional>

#include "rankalign/harness.hpp"

namespace py = pybind11;
using namespace rankalign;

namespace {

RunConfig make_config(const std::optional<std::string>& text,
                      const std::map<std::string, std::string>& overrides) {
  RunConfig c = text ? RunConfig::from_text(*text) : RunConfig{};
  for (const auto& [k, v] : overrides) c.set(k, v);
  c.validate();
  return c;
}

py::dict world_to_dict(const World& w) {
  py::list items;
  for (const Item& it : w.catalog.items()) items.append(it.tokens);
  py::list tasks;
  for (const Task& t : w.tasks) {
    py::dict d;
    d["context"] = t.context_id;
    d["cluster"] = t.cluster;
    d["gt"] = t.gt;
    d["split"] = to_string(t.split);
    tasks.append(d);
  }
  py::dict out;
  out["items"] = items;
  out["vocab_size"] = w.catalog.vocab_size();
  out["delim"] = w.catalog.delim();
  out["eos"] = w.catalog.eos();
  out["tasks"] = tasks;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Rank-level policy optimization over a synthetic catalog";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("default_config", [] { return RunConfig{}.to_text(); },
        "Full default configuration as text.");
  m.def("normalize_config",
        [](std::optional<std::string> text, std::map<std::string, std::string> overrides) {
          return make_config(text, overrides).to_text();
        },
        py::arg("text") = std::nullopt,
        py::arg("overrides") = std::map<std::string, std::string>{},
        "Parse, apply dotted-key overrides, validate and re-serialize.");

  m.def("generate_world",
        [](std::optional<std::string> text, std::map<std::string, std::string> overrides) {
          return world_to_dict(generate(make_config(text, overrides).env));
        },
        py::arg("text") = std::nullopt,
        py::arg("overrides") = std::map<std::string, std::string>{});

  m.def("run",
        [](const std::string& command, std::optional<std::string> text,
           std::map<std::string, std::string> overrides) {
          const RunConfig c = make_config(text, overrides);
          py::gil_scoped_release release;
          if (command == "gen-env") run_gen_env(c);
          else if (command == "distill") run_distill(c);
          else if (command == "sft") run_sft(c);
          else if (command == "rl") run_rl(c);
          else if (command == "eval") run_eval(c);
          else throw ConfigError("unknown command " + command);
        },
        py::arg("command"), py::arg("text") = std::nullopt,
        py::arg("overrides") = std::map<std::string, std::string>{},
        "Run one pipeline command; files land in the config's out directory.");

  m.def("dcg_at_n", [](std::vector<int> rel, int n) { return dcg_at_n(rel, n); });
  m.def("exp_decay_return", [](std::vector<int> rel, int k, int n, double gamma) {
    return exp_decay_return(rel, k, n, gamma);
  });
  m.def("returns",
        [](std::vector<int> rel, int n, const std::string& scheme, double gamma) {
          return compute_returns(rel, n, {reward_scheme_from_string(scheme), gamma}).returns;
        },
        py::arg("rel"), py::arg("n"), py::arg("scheme") = "exp_decay",
        py::arg("gamma") = kInfiniteGamma);
  m.def("seq_advantages", [](std::vector<double> r) { return seq_advantages(r); });
  m.def("rank_advantages",
        [](std::vector<std::vector<double>> returns, int n, double eps_over) {
          std::vector<std::vector<bool>> mask;
          for (const auto& row : returns) mask.emplace_back(row.size(), true);
          return rank_advantages(returns, mask, n, eps_over);
        },
        py::arg("returns"), py::arg("n"), py::arg("eps_over") = -0.1);
  m.def("kl_penalty", [](std::vector<double> new_lp, std::vector<double> ref_lp) {
    return kl_penalty(new_lp, ref_lp, KlGranularity::kToken);
  });
}
