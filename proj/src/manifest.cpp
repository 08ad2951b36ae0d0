#include "less/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <boost/algorithm/string.hpp>

namespace less {

void SlideRecord::validate() const {
  if (id.empty()) throw ConfigError("slide record with empty id");
  if (coarse_label != coarse_label_of(subtype)) {
    throw ConfigError("slide '" + id + "': subtype " + std::string(to_string(subtype)) +
                      " implies " + std::string(to_string(coarse_label_of(subtype))));
  }
}

void write_manifest(const std::filesystem::path& path, const std::vector<SlideRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest " + path.string());
  os << "# less corpus manifest v1\n";
  os << "# id\tsubtype\tcoarse_label\tseed\turi\n";
  for (const auto& r : records) {
    os << r.id << '\t' << to_string(r.subtype) << '\t' << to_string(r.coarse_label) << '\t'
       << r.seed << '\t' << r.uri.generic_string() << '\n';
  }
}

std::vector<SlideRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<SlideRecord> out;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    boost::split(f, line, boost::is_any_of("\t"));
    if (f.size() != 5) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    }
    SlideRecord r;
    r.id = f[0];
    r.subtype = parse_subtype(f[1]);
    r.coarse_label = parse_coarse_label(f[2]);
    r.seed = std::stoull(f[3]);
    r.uri = f[4];
    if (r.uri.is_relative()) r.uri = base / r.uri;
    r.validate();
    if (!seen.insert(r.id).second) throw ConfigError("duplicate slide id '" + r.id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace less
