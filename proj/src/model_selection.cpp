#include "patchtime/fitting.hpp"

#include "patchtime/format.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>
#include <ostream>

namespace patchtime {

std::string to_string(Family f) {
  switch (f) {
  case Family::erlang: return "erlang";
  case Family::hyper_erlang_2: return "hyper_erlang_2";
  case Family::hyper_erlang_3: return "hyper_erlang_3";
  case Family::erlang_plus_c: return "erlang_plus_c";
  }
  return "unknown";
}

Family family_from_string(const std::string& s) {
  if (s == "erlang") return Family::erlang;
  if (s == "hyper_erlang_2" || s == "he2") return Family::hyper_erlang_2;
  if (s == "hyper_erlang_3" || s == "he3") return Family::hyper_erlang_3;
  if (s == "erlang_plus_c" || s == "erlang_c") return Family::erlang_plus_c;
  throw FitError("unknown distribution family '" + s + "'");
}

FitReport fit_family(Family family, std::span<const double> x, const FitOptions& opts) {
  switch (family) {
  case Family::erlang: return fit_erlang(x, opts);
  case Family::hyper_erlang_2: return fit_hyper_erlang(x, 2, opts);
  case Family::hyper_erlang_3: return fit_hyper_erlang(x, 3, opts);
  case Family::erlang_plus_c: return fit_erlang_plus_c(x, opts);
  }
  throw FitError("unknown distribution family");
}

const ModelSelectionCell* ModelSelectionTable::find(std::size_t patch, Family family) const {
  for (const auto& c : cells)
    if (c.patch_index == patch && c.family == family) return &c;
  return nullptr;
}

ModelSelectionTable model_selection_table(const std::map<std::size_t, std::vector<double>>& samples_by_patch,
                                          std::span<const Family> families, const FitOptions& opts) {
  ModelSelectionTable table;
  table.families.assign(families.begin(), families.end());
  std::vector<const std::vector<double>*> inputs;
  for (const auto& [patch, x] : samples_by_patch) {
    for (Family f : families) {
      ModelSelectionCell cell;
      cell.patch_index = patch;
      cell.family = f;
      table.cells.push_back(std::move(cell));
      inputs.push_back(&x);
    }
  }

  // Cells are independent; workers claim them by index.
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < table.cells.size(); i = next++) {
      auto& cell = table.cells[i];
      try {
        cell.report = fit_family(cell.family, *inputs[i], opts);
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  };
  const std::size_t n_workers =
      std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), table.cells.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return table;
}

void write_model_selection_csv(std::ostream& out, const ModelSelectionTable& table) {
  out << "patch_index,family,n,log_likelihood,log_likelihood_rounded,expected_phases,iterations,converged,params\n";
  for (const auto& c : table.cells) {
    out << c.patch_index << ',' << to_string(c.family) << ',';
    if (!c.report) {
      out << ",,,,,false,\"failed: " << c.error << "\"\n";
      continue;
    }
    const auto& r = *c.report;
    out << r.n << ',' << format_double(r.log_likelihood) << ','
        << (std::isfinite(r.log_likelihood) ? std::to_string(std::llround(r.log_likelihood)) : std::string("-inf"))
        << ',' << format_decimals(r.expected_phases, 1) << ',' << r.iterations << ','
        << (r.converged ? "true" : "false") << ",\"" << describe(r.dist) << "\"\n";
  }
}

void to_json(nlohmann::json& j, const FitReport& r) {
  j = nlohmann::json{{"dist", r.dist},
                     {"n", r.n},
                     {"expected_phases", r.expected_phases},
                     {"iterations", r.iterations},
                     {"converged", r.converged}};
  // JSON has no infinities.
  j["log_likelihood"] = std::isfinite(r.log_likelihood) ? nlohmann::json(r.log_likelihood) : nlohmann::json(nullptr);
  if (!r.note.empty()) j["note"] = r.note;
}

void from_json(const nlohmann::json& j, FitReport& r) {
  r.dist = j.at("dist").get<PatchDistribution>();
  r.n = j.at("n").get<std::size_t>();
  r.expected_phases = j.at("expected_phases").get<double>();
  r.iterations = j.at("iterations").get<int>();
  r.converged = j.at("converged").get<bool>();
  const auto& ll = j.at("log_likelihood");
  r.log_likelihood = ll.is_null() ? -std::numeric_limits<double>::infinity() : ll.get<double>();
  r.note = j.value("note", std::string());
}

nlohmann::json model_selection_to_json(const ModelSelectionTable& table) {
  nlohmann::json j;
  auto fams = nlohmann::json::array();
  for (Family f : table.families) fams.push_back(to_string(f));
  j["families"] = fams;
  auto cells = nlohmann::json::array();
  for (const auto& c : table.cells) {
    nlohmann::json cj{{"patch_index", c.patch_index}, {"family", to_string(c.family)}};
    if (c.report)
      cj["report"] = *c.report;
    else
      cj["error"] = c.error;
    cells.push_back(cj);
  }
  j["cells"] = cells;
  return j;
}

ModelSelectionTable model_selection_from_json(const nlohmann::json& j) {
  ModelSelectionTable t;
  for (const auto& f : j.at("families")) t.families.push_back(family_from_string(f.get<std::string>()));
  for (const auto& cj : j.at("cells")) {
    ModelSelectionCell c;
    c.patch_index = cj.at("patch_index").get<std::size_t>();
    c.family = family_from_string(cj.at("family").get<std::string>());
    if (cj.contains("report"))
      c.report = cj.at("report").get<FitReport>();
    else
      c.error = cj.value("error", std::string("missing report"));
    t.cells.push_back(std::move(c));
  }
  return t;
}

} // namespace patchtime
