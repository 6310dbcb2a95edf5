#pragma once

#include <ostream>
#include <string>

namespace entrep::detail {

// Each non-empty line of `header` as a "# " comment line.
inline void write_comment_lines(std::ostream& os, const std::string& header) {
  std::size_t pos = 0;
  while (pos < header.size()) {
    auto end = header.find('\n', pos);
    if (end == std::string::npos) end = header.size();
    if (end > pos) os << "# " << header.substr(pos, end - pos) << '\n';
    pos = end + 1;
  }
}

} // namespace entrep::detail
