#pragma once

#include <map>
#include <string>
#include <vector>

namespace entrep::cli {

/// Sectioned key-value configuration with a fixed schema: every key has a
/// default, and unknown sections or keys are rejected.
class Config {
public:
  /// The schema with all defaults.
  static Config defaults();

  /// `[section]` headers, `key = value` lines, `#` or `;` comments.
  void merge_ini(const std::string& text, const std::string& origin);
  /// `section.key` = value.
  void set(const std::string& dotted, const std::string& value, const std::string& origin);

  const std::string& str(const std::string& dotted) const;
  int integer(const std::string& dotted) const;
  double real(const std::string& dotted) const;
  bool flag(const std::string& dotted) const;
  std::vector<int> integers(const std::string& dotted) const;
  std::vector<double> reals(const std::string& dotted) const;

  /// `section.key = value` per line, sections in schema order.
  std::string resolved(const std::vector<std::string>& sections) const;

private:
  std::vector<std::string> order_;
  std::map<std::string, std::map<std::string, std::string>> values_;
};

/// Reads a whole file; throws on failure.
std::string read_file(const std::string& path);

/// The leading `# command = ...` and `# section.key = value` comment lines of
/// a CSV written by this tool.
struct EmbeddedConfig {
  std::string command;
  std::vector<std::pair<std::string, std::string>> entries;
};
EmbeddedConfig read_embedded_config(const std::string& csv_text);

} // namespace entrep::cli
