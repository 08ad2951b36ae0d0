#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>

#include "less/errors.hpp"

namespace less {

/// Flat `key=value` text, one pair per line. Used for config echoes inside
/// checkpoints and archives.
using KeyValues = std::map<std::string, std::string>;

inline std::string format_kv(const KeyValues& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  return os.str();
}

inline KeyValues parse_kv(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    boost::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed key=value line: " + line);
    kv[boost::trim_copy(line.substr(0, eq))] = boost::trim_copy(line.substr(eq + 1));
  }
  return kv;
}

template <class T>
T kv_get(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("missing key '" + key + "'");
  try {
    return boost::lexical_cast<T>(it->second);
  } catch (const boost::bad_lexical_cast&) {
    throw ConfigError("bad value for '" + key + "': " + it->second);
  }
}

template <class T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::vector<std::string> parts;
  boost::split(parts, text, boost::is_any_of(","));
  for (auto& p : parts) {
    boost::trim(p);
    if (p.empty()) continue;
    try {
      out.push_back(boost::lexical_cast<T>(p));
    } catch (const boost::bad_lexical_cast&) {
      throw ConfigError("bad list element: " + p);
    }
  }
  return out;
}

template <class Range>
std::string join_list(const Range& r) {
  std::ostringstream os;
  bool first = true;
  for (const auto& v : r) {
    if (!first) os << ',';
    os << v;
    first = false;
  }
  return os.str();
}

}  // namespace less
