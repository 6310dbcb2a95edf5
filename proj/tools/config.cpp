#include "config.hpp"

#include "entrep/error.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace entrep::cli {

namespace {

const char* kModule = "cli";

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::pair<std::string, std::string> split_dotted(const std::string& dotted) {
  const auto dot = dotted.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == dotted.size())
    throw Error(kModule, "expected section.key, got '" + dotted + "'");
  return {dotted.substr(0, dot), dotted.substr(dot + 1)};
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto t = trim(text);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw Error(kModule, key + ": cannot parse '" + text + "' as a number");
  return v;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(parse_number<T>(key, item));
  return out;
}

} // namespace

Config Config::defaults() {
  Config c;
  auto section = [&](const std::string& name, std::vector<std::pair<std::string, std::string>> kv) {
    c.order_.push_back(name);
    auto& m = c.values_[name];
    for (auto& [k, v] : kv) m[k] = v;
  };
  section("model", {{"q", "1"}, {"d", "3"}});
  section("grid", {{"L", "16"}, {"eps", "0.1"}});
  section("run", {{"seed", "1"}});
  section("output", {{"dir", "out"}, {"store", "runs.jsonl"}, {"svg", "false"}});
  section("exec", {{"workers", "0"}});
  section("validate", {{"grid_points", "100000"}});
  section("green", {{"max_radius", "5"}, {"decay", "true"}, {"decay_rmin", "0"}, {"decay_rmax", "0"}});
  section("sample", {{"samples", "20000"}, {"max_radius", "3"}, {"fields", "1"}, {"blocks", "100"}});
  section("conditional", {{"boxes", "3,5,7,9"}, {"eps", "0"}, {"markov_box", "3"}});
  section("capacity", {{"steps", "4,6,8"},
                       {"radii", "3,4,6"},
                       {"kernel", "8,12,16"},
                       {"half_width", "1"},
                       {"near_field", "0"},
                       {"fit", "reciprocal"},
                       {"tolerance", "1e-8"},
                       {"max_iterations", "200000"},
                       {"eta", "0"}});
  section("repulsion", {{"Ns", "0,1,2"},
                        {"samples", "10000"},
                        {"mass_constant", "1"},
                        {"extra_margin", "0"},
                        {"capacity", "0"},
                        {"two_site", "true"}});
  section("height", {{"Ns", "4,8,16"},
                     {"block_scale", "0.5"},
                     {"z", ""},
                     {"mass_constant", "1"},
                     {"extra_margin", "0"},
                     {"burn_in", "1000"},
                     {"thinning", "10"},
                     {"kept", "200"},
                     {"chains", "4"},
                     {"high_start", "0"},
                     {"conditioned", "true"},
                     {"mx_box", "0"},
                     {"mx_shift", "0"},
                     {"mx_every", "10"}});
  section("check_c", {{"eps", "0.5,0.1,0.02"}});
  return c;
}

void Config::set(const std::string& dotted, const std::string& value, const std::string& origin) {
  const auto [sec, key] = split_dotted(dotted);
  const auto s = values_.find(sec);
  if (s == values_.end()) throw Error(kModule, origin + ": unknown section '" + sec + "'");
  const auto k = s->second.find(key);
  if (k == s->second.end()) throw Error(kModule, origin + ": unknown key '" + dotted + "'");
  k->second = trim(value);
}

void Config::merge_ini(const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto where = origin + ":" + std::to_string(lineno);
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(kModule, where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!values_.contains(section)) throw Error(kModule, where + ": unknown section '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(kModule, where + ": expected key = value");
    if (section.empty()) throw Error(kModule, where + ": key outside a section");
    set(section + "." + trim(line.substr(0, eq)), line.substr(eq + 1), where);
  }
}

const std::string& Config::str(const std::string& dotted) const {
  const auto [sec, key] = split_dotted(dotted);
  return values_.at(sec).at(key);
}

int Config::integer(const std::string& dotted) const { return parse_number<int>(dotted, str(dotted)); }
double Config::real(const std::string& dotted) const { return parse_number<double>(dotted, str(dotted)); }

bool Config::flag(const std::string& dotted) const {
  const auto& v = str(dotted);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(kModule, dotted + ": expected true or false, got '" + v + "'");
}

std::vector<int> Config::integers(const std::string& dotted) const { return parse_list<int>(dotted, str(dotted)); }
std::vector<double> Config::reals(const std::string& dotted) const {
  return parse_list<double>(dotted, str(dotted));
}

std::string Config::resolved(const std::vector<std::string>& sections) const {
  std::string out;
  for (const auto& sec : order_) {
    if (std::find(sections.begin(), sections.end(), sec) == sections.end()) continue;
    for (const auto& [k, v] : values_.at(sec)) out += sec + "." + k + " = " + v + "\n";
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(kModule, "cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

EmbeddedConfig read_embedded_config(const std::string& csv_text) {
  EmbeddedConfig e;
  std::stringstream ss(csv_text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.rfind("# ", 0) != 0) break;
    const auto body = line.substr(2);
    const auto eq = body.find(" = ");
    if (eq == std::string::npos) break;
    const auto key = body.substr(0, eq);
    const auto value = body.substr(eq + 3);
    if (key == "command")
      e.command = value;
    else if (key.find('.') != std::string::npos)
      e.entries.emplace_back(key, value);
    else
      break;
  }
  if (e.command.empty()) throw Error(kModule, "no embedded '# command = ...' header found");
  return e;
}

} // namespace entrep::cli
