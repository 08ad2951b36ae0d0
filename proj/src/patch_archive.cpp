#include "less/patch_archive.hpp"

#include <array>
#include <fstream>

#include <boost/algorithm/string.hpp>

#include "less/binary_io.hpp"

namespace less {

namespace {

constexpr std::array<char, 8> kMagic{'L', 'E', 'S', 'S', 'P', 'T', 'C', 'H'};
constexpr std::uint32_t kVersion = 1;

void write_image(std::ostream& os, const cv::Mat& m, int px) {
  if (m.rows != px || m.cols != px || m.type() != CV_8UC3) throw ShapeError("archive patch has the wrong shape");
  const cv::Mat c = m.isContinuous() ? m : m.clone();
  os.write(reinterpret_cast<const char*>(c.data), static_cast<std::streamsize>(px) * px * 3);
}

cv::Mat read_image(std::istream& is, int px) {
  cv::Mat m(px, px, CV_8UC3);
  is.read(reinterpret_cast<char*>(m.data), static_cast<std::streamsize>(px) * px * 3);
  if (!is) throw std::runtime_error("truncated patch archive");
  return m;
}

}  // namespace

void write_archive(const std::filesystem::path& path, const PatchArchive& a) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write archive " + path.string());
  os.write(kMagic.data(), kMagic.size());
  io::write_pod<std::uint32_t>(os, kVersion);
  io::write_string(os, a.slide_id);
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(a.pairs.size()));
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(a.small_px));
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(a.large_px));
  for (const auto& p : a.pairs) {
    io::write_pod<std::int32_t>(os, p.center.x);
    io::write_pod<std::int32_t>(os, p.center.y);
    io::write_pod<std::uint8_t>(os, p.augmented ? 1 : 0);
    io::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(p.augmentation));
    io::write_pod<std::int32_t>(os, p.source);
    write_image(os, p.small, a.small_px);
    write_image(os, p.large, a.large_px);
  }
  if (!os) throw std::runtime_error("failed writing archive " + path.string());
}

PatchArchive read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open archive " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw std::runtime_error(path.string() + " is not a patch archive");
  if (io::read_pod<std::uint32_t>(is) != kVersion) throw std::runtime_error("unsupported archive version");
  PatchArchive a;
  a.slide_id = io::read_string(is);
  const auto count = io::read_pod<std::uint32_t>(is);
  a.small_px = static_cast<int>(io::read_pod<std::uint32_t>(is));
  a.large_px = static_cast<int>(io::read_pod<std::uint32_t>(is));
  a.pairs.resize(count);
  for (auto& p : a.pairs) {
    p.slide_id = a.slide_id;
    p.center.x = io::read_pod<std::int32_t>(is);
    p.center.y = io::read_pod<std::int32_t>(is);
    p.augmented = io::read_pod<std::uint8_t>(is) != 0;
    p.augmentation = static_cast<ingest::Augmentation>(io::read_pod<std::uint8_t>(is));
    p.source = io::read_pod<std::int32_t>(is);
    p.small = read_image(is, a.small_px);
    p.large = read_image(is, a.large_px);
  }
  return a;
}

void write_patch_manifest(const std::filesystem::path& path, const std::vector<PatchManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "# slide_id\tarchive\tsubtype\tn_candidates\tn_kept\tn_augmented\tusable\n";
  for (const auto& e : entries) {
    os << e.slide_id << '\t' << e.archive.generic_string() << '\t' << to_string(e.subtype) << '\t'
       << e.n_candidates << '\t' << e.n_kept << '\t' << e.n_augmented << '\t' << (e.usable ? 1 : 0) << '\n';
  }
}

std::vector<PatchManifestEntry> read_patch_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::vector<PatchManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    boost::split(f, line, boost::is_any_of("\t"));
    if (f.size() != 7) throw std::runtime_error("malformed patch manifest line: " + line);
    PatchManifestEntry e;
    e.slide_id = f[0];
    e.archive = f[1];
    e.subtype = parse_subtype(f[2]);
    e.n_candidates = std::stoi(f[3]);
    e.n_kept = std::stoi(f[4]);
    e.n_augmented = std::stoi(f[5]);
    e.usable = f[6] == "1";
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace less
