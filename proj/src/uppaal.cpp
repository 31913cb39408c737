#include "patchtime/uppaal.hpp"

#include "patchtime/format.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <regex>
#include <sstream>

namespace patchtime {

namespace {

constexpr int kSpacing = 100;

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '&': out += "&amp;"; break;
    case '"': out += "&quot;"; break;
    default: out += ch;
    }
  }
  return out;
}

struct Point {
  int x = 0;
  int y = 0;
};

// The chain advances one column per location. The branches of a branch
// point are stacked vertically and rejoin at the first location with
// several incoming edges.
std::map<std::string, Point> layout(const Pta& pta) {
  std::map<std::string, std::vector<std::string>> out;
  std::map<std::string, int> in_degree;
  for (const auto& e : pta.edges) {
    out[e.from].push_back(e.to);
    ++in_degree[e.to];
  }

  std::map<std::string, Point> pos;
  int column = 0;
  std::string current;
  for (const auto& l : pta.locations)
    if (l.is_initial) current = l.id;

  while (!current.empty() && !pos.count(current)) {
    pos[current] = {column * kSpacing, 0};
    const auto& next = out[current];
    if (next.size() == 1) {
      current = next.front();
      ++column;
      continue;
    }
    const int m = static_cast<int>(next.size());
    int longest = 0;
    std::string join;
    for (int j = 0; j < m; ++j) {
      std::string id = next[static_cast<std::size_t>(j)];
      int depth = 0;
      while (!pos.count(id) && in_degree[id] <= 1) {
        pos[id] = {(column + 1 + depth) * kSpacing, (2 * j - (m - 1)) * kSpacing / 2};
        ++depth;
        const auto& succ = out[id];
        if (succ.size() != 1) {
          id.clear();
          break;
        }
        id = succ.front();
      }
      longest = std::max(longest, depth);
      if (!id.empty() && !pos.count(id)) join = id;
    }
    column += 1 + longest;
    current = join;
  }
  // Locations off the main chain (invalid models) still need coordinates.
  for (const auto& l : pta.locations)
    if (!pos.count(l.id)) pos[l.id] = {column++ * kSpacing, 2 * kSpacing};
  return pos;
}

std::string label(const std::string& kind, Point at, const std::string& text) {
  return "<label kind=\"" + kind + "\" x=\"" + std::to_string(at.x) + "\" y=\"" + std::to_string(at.y) + "\">" +
         escape(text) + "</label>";
}

} // namespace

std::string export_queries(std::span<const Query> queries) {
  std::string out;
  for (const auto& q : queries)
    if (q.kind == QueryKind::prob_reach_by_deadline) out += query_formula(q, kTemplateName) + "\n";
  return out;
}

std::string export_xml(const Pta& pta, std::span<const Query> queries) {
  const auto pos = layout(pta);
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n"
     << "<!DOCTYPE nta PUBLIC '-//Uppaal Team//DTD Flat System 1.1//EN' "
        "'http://www.it.uu.se/research/group/darts/uppaal/flat-1_2.dtd'>\n"
     << "<nta>\n";
  os << "\t<declaration>";
  if (!pta.clocks.empty()) {
    os << "clock ";
    for (std::size_t i = 0; i < pta.clocks.size(); ++i) os << (i ? ", " : "") << pta.clocks[i];
    os << ";";
  }
  os << "</declaration>\n";
  os << "\t<template>\n\t\t<name x=\"5\" y=\"5\">" << kTemplateName << "</name>\n\t\t<declaration></declaration>\n";

  std::string init_id;
  for (const auto& l : pta.locations) {
    if (l.is_branch_point) continue;
    const Point p = pos.at(l.id);
    os << "\t\t<location id=\"" << escape(l.id) << "\" x=\"" << p.x << "\" y=\"" << p.y << "\">\n";
    os << "\t\t\t<name x=\"" << p.x - 10 << "\" y=\"" << p.y - 34 << "\">" << escape(l.id) << "</name>\n";
    if (l.rate) os << "\t\t\t" << label("exponentialrate", {p.x - 10, p.y + 17}, format_fixed(*l.rate)) << "\n";
    os << "\t\t</location>\n";
    if (l.is_initial) init_id = l.id;
  }
  for (const auto& l : pta.locations) {
    if (!l.is_branch_point) continue;
    const Point p = pos.at(l.id);
    os << "\t\t<branchpoint id=\"" << escape(l.id) << "\" x=\"" << p.x << "\" y=\"" << p.y << "\">\n\t\t</branchpoint>\n";
  }
  os << "\t\t<init ref=\"" << escape(init_id) << "\"/>\n";
  for (const auto& e : pta.edges) {
    const Point a = pos.at(e.from), b = pos.at(e.to);
    const Point mid{(a.x + b.x) / 2, (a.y + b.y) / 2};
    os << "\t\t<transition>\n\t\t\t<source ref=\"" << escape(e.from) << "\"/>\n\t\t\t<target ref=\"" << escape(e.to)
       << "\"/>\n";
    if (e.guard)
      os << "\t\t\t" << label("guard", {mid.x, mid.y - 34}, e.guard->clock + " >= " + format_fixed(e.guard->bound))
         << "\n";
    if (e.reset) os << "\t\t\t" << label("assignment", {mid.x, mid.y + 17}, *e.reset + " = 0") << "\n";
    if (e.weight) os << "\t\t\t" << label("probability", {mid.x, mid.y - 17}, std::to_string(*e.weight)) << "\n";
    os << "\t\t</transition>\n";
  }
  os << "\t</template>\n";
  os << "\t<system>system " << kTemplateName << ";</system>\n";
  os << "\t<queries>\n";
  for (const auto& q : queries) {
    if (q.kind != QueryKind::prob_reach_by_deadline) continue;
    os << "\t\t<query>\n\t\t\t<formula>" << escape(query_formula(q, kTemplateName)) << "</formula>\n";
    os << "\t\t\t<comment>"
       << (q.comparison == Comparison::exceeds ? "complement gives Pr[time > " + format_fixed(*q.deadline) + "]"
                                               : std::string())
       << "</comment>\n\t\t</query>\n";
  }
  os << "\t</queries>\n</nta>\n";
  return os.str();
}

namespace {

namespace pt = boost::property_tree;

[[noreturn]] void unsupported(const std::string& what) {
  throw UppaalImportError("unsupported UPPAAL feature: " + what);
}

std::string attr(const pt::ptree& node, const std::string& name) {
  const auto v = node.get_optional<std::string>("<xmlattr>." + name);
  if (!v) throw UppaalImportError("missing attribute '" + name + "'");
  return *v;
}

double number(const std::string& text, const std::string& what) {
  const auto v = parse_double(text);
  if (!v) throw UppaalImportError("cannot read " + what + " '" + text + "'");
  return *v;
}

std::vector<std::string> parse_clock_declaration(const std::string& decl) {
  // Strip comments, then accept only "clock a, b;" statements.
  const std::string text = std::regex_replace(std::regex_replace(decl, std::regex(R"(//[^\n]*)"), ""),
                                              std::regex(R"(/\*[\s\S]*?\*/)"), "");
  std::vector<std::string> clocks;
  for (const auto& stmt : split(text, ';')) {
    const std::string s(trim(stmt));
    if (s.empty()) continue;
    if (std::regex_search(s, std::regex(R"(\bchan\b)"))) unsupported("channel");
    std::smatch m;
    if (!std::regex_match(s, m, std::regex(R"(clock\s+(.+))"))) unsupported("declaration '" + s + "'");
    for (const auto& name : split(m[1].str(), ',')) {
      if (!std::regex_match(name, std::regex(R"([A-Za-z_]\w*)"))) unsupported("clock declaration '" + s + "'");
      clocks.push_back(name);
    }
  }
  return clocks;
}

} // namespace

Pta import_xml(const std::string& xml) {
  pt::ptree doc;
  try {
    std::istringstream in(xml);
    pt::read_xml(in, doc, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw UppaalImportError(std::string("malformed XML: ") + e.what());
  }
  const auto nta_opt = doc.get_child_optional("nta");
  if (!nta_opt) throw UppaalImportError("malformed XML: no <nta> element");
  const auto& nta = *nta_opt;

  Pta pta;
  std::size_t templates = 0;
  const pt::ptree* tmpl = nullptr;
  for (const auto& [tag, child] : nta) {
    if (tag == "declaration") {
      auto clocks = parse_clock_declaration(child.data());
      pta.clocks.insert(pta.clocks.end(), clocks.begin(), clocks.end());
    } else if (tag == "template") {
      ++templates;
      tmpl = &child;
    } else if (tag != "system" && tag != "queries" && tag != "<xmlattr>" && tag != "<xmlcomment>") {
      unsupported("<" + tag + ">");
    }
  }
  if (templates != 1) throw UppaalImportError("expected exactly one template, found " + std::to_string(templates));

  std::map<std::string, std::string> id_to_name;
  std::string init_ref;
  for (const auto& [tag, child] : *tmpl) {
    if (tag == "name" || tag == "<xmlattr>" || tag == "<xmlcomment>") continue;
    if (tag == "declaration") {
      if (!std::string(trim(child.data())).empty()) unsupported("template-local declarations");
    } else if (tag == "parameter") {
      if (!std::string(trim(child.data())).empty()) unsupported("template parameters");
    } else if (tag == "location") {
      Location l;
      const std::string xml_id = attr(child, "id");
      l.id = child.get<std::string>("name", xml_id);
      for (const auto& [ltag, lchild] : child) {
        if (ltag == "name" || ltag == "<xmlattr>") continue;
        if (ltag == "label") {
          const auto kind = attr(lchild, "kind");
          if (kind == "exponentialrate")
            l.rate = number(lchild.data(), "exponential rate");
          else
            unsupported("location label '" + kind + "'");
        } else if (ltag == "urgent" || ltag == "committed") {
          unsupported(ltag + " location");
        } else {
          unsupported("<" + ltag + "> in location");
        }
      }
      l.is_end = l.id == "end";
      id_to_name[xml_id] = l.id;
      pta.locations.push_back(std::move(l));
    } else if (tag == "branchpoint") {
      const std::string xml_id = attr(child, "id");
      id_to_name[xml_id] = xml_id;
      pta.locations.push_back({xml_id, std::nullopt, false, false, true});
    } else if (tag == "init") {
      init_ref = attr(child, "ref");
    } else if (tag == "transition") {
      Edge e;
      e.from = attr(child.get_child("source"), "ref");
      e.to = attr(child.get_child("target"), "ref");
      for (const auto& [ttag, tchild] : child) {
        if (ttag != "label") continue;
        const auto kind = attr(tchild, "kind");
        const std::string text(trim(tchild.data()));
        std::smatch m;
        if (kind == "guard") {
          if (!std::regex_match(text, m, std::regex(R"(([A-Za-z_]\w*)\s*>=?\s*([0-9.eE+-]+))")))
            unsupported("guard '" + text + "'");
          e.guard = ClockGuard{m[1].str(), number(m[2].str(), "guard bound")};
        } else if (kind == "assignment") {
          if (!std::regex_match(text, m, std::regex(R"(([A-Za-z_]\w*)\s*:?=\s*0)")))
            unsupported("assignment '" + text + "'");
          e.reset = m[1].str();
        } else if (kind == "probability") {
          const double w = number(text, "probability weight");
          if (w != std::floor(w)) throw UppaalImportError("probability weight '" + text + "' is not an integer");
          e.weight = static_cast<std::int64_t>(w);
        } else {
          unsupported("transition label '" + kind + "'");
        }
      }
      pta.edges.push_back(std::move(e));
    } else {
      unsupported("<" + tag + "> in template");
    }
  }

  for (auto& e : pta.edges) {
    if (!id_to_name.count(e.from) || !id_to_name.count(e.to))
      throw UppaalImportError("transition references unknown id");
    e.from = id_to_name[e.from];
    e.to = id_to_name[e.to];
  }
  if (!id_to_name.count(init_ref)) throw UppaalImportError("missing or unknown <init>");
  for (auto& l : pta.locations) {
    if (l.id == id_to_name[init_ref]) l.is_initial = true;
    if (l.is_end) pta.end_location = l.id;
  }

  // Branch points follow locations in the document; restore chain order,
  // which is the order of first appearance along the transitions.
  std::map<std::string, std::size_t> rank;
  for (const auto& l : pta.locations)
    if (l.is_initial) rank.emplace(l.id, 0);
  for (const auto& e : pta.edges) {
    rank.emplace(e.from, rank.size());
    rank.emplace(e.to, rank.size());
  }
  std::stable_sort(pta.locations.begin(), pta.locations.end(), [&](const Location& a, const Location& b) {
    const auto ra = rank.count(a.id) ? rank[a.id] : rank.size();
    const auto rb = rank.count(b.id) ? rank[b.id] : rank.size();
    return ra < rb;
  });

  if (const auto v = validate(pta); !v.empty()) {
    std::string msg = "imported model violates invariants:";
    for (const auto& s : v) msg += "\n  " + s;
    throw UppaalImportError(msg);
  }
  return pta;
}

} // namespace patchtime
