#include "gibbslab/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace gibbslab {

namespace {

using nlohmann::json;

std::vector<std::vector<int>> offsets_from_json(const json& arr, const char* what) {
  if (!arr.is_array() || arr.empty())
    throw std::invalid_argument(std::string(what) + " must be a nonempty array");
  std::vector<std::vector<int>> out;
  for (const auto& o : arr) {
    if (!o.is_array()) throw std::invalid_argument(std::string(what) + ": offset must be an array");
    out.push_back(o.get<std::vector<int>>());
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json offsets_to_json(const std::vector<std::vector<int>>& offsets) {
  json arr = json::array();
  for (const auto& o : offsets) arr.push_back(o);
  return arr;
}

json values_to_json(const std::vector<double>& values) {
  // nlohmann emits shortest round-trip doubles, so reloads are exact
  json arr = json::array();
  for (double v : values) arr.push_back(v);
  return arr;
}

}  // namespace

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Potential potential_from_text(const std::string& json_text) {
  const json doc = json::parse(json_text);
  Potential pot;
  if (!doc.contains("q")) throw std::invalid_argument("potential file: missing q");
  pot.q = doc.at("q").get<int>();
  pot.beta = doc.value("beta", 1.0);
  if (doc.contains("terms")) {
    for (const auto& t : doc.at("terms")) {
      InteractionTerm term;
      term.offsets = offsets_from_json(t.at("offsets"), "potential term");
      term.values = t.at("values").get<std::vector<double>>();
      pot.terms.push_back(std::move(term));
    }
  }
  pot.validate();
  return pot;
}

std::string potential_to_text(const Potential& pot) {
  json doc;
  doc["q"] = pot.q;
  doc["beta"] = pot.beta;
  doc["terms"] = json::array();
  for (const auto& term : pot.terms) {
    json t;
    t["offsets"] = offsets_to_json(term.offsets);
    t["values"] = values_to_json(term.values);
    doc["terms"].push_back(t);
  }
  return doc.dump(2) + "\n";
}

Potential load_potential(const std::filesystem::path& path) {
  return potential_from_text(read_file(path));
}

void save_potential(const Potential& pot, const std::filesystem::path& path) {
  write_file(path, potential_to_text(pot));
}

RateFamily rate_family_from_text(const std::string& json_text) {
  const json doc = json::parse(json_text);
  RateFamily fam;
  if (!doc.contains("q")) throw std::invalid_argument("rate family file: missing q");
  fam.q = doc.at("q").get<int>();
  for (const auto& r : doc.at("rules")) {
    UpdateRule rule;
    rule.q = fam.q;
    rule.shape = offsets_from_json(r.at("shape"), "rule shape");
    rule.dependence = offsets_from_json(r.at("dependence"), "rule dependence");
    rule.values = r.at("values").get<std::vector<double>>();
    rule.finalize();
    fam.rules.push_back(std::move(rule));
  }
  return fam;
}

std::string rate_family_to_text(const RateFamily& rates) {
  json doc;
  doc["q"] = rates.q;
  doc["rules"] = json::array();
  for (const auto& rule : rates.rules) {
    json r;
    r["shape"] = offsets_to_json(rule.shape);
    r["dependence"] = offsets_to_json(rule.dependence);
    r["values"] = values_to_json(rule.values);
    doc["rules"].push_back(r);
  }
  return doc.dump(2) + "\n";
}

RateFamily load_rate_family(const std::filesystem::path& path) {
  return rate_family_from_text(read_file(path));
}

void save_rate_family(const RateFamily& rates, const std::filesystem::path& path) {
  write_file(path, rate_family_to_text(rates));
}

}  // namespace gibbslab
