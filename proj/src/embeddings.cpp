#include "less/embeddings.hpp"

#include <fstream>

#include <boost/algorithm/string.hpp>


namespace less {

namespace {

using vpu::Matrix;

void write_matrix(const std::filesystem::path& path, const Matrix<float>& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Matrix<float> read_matrix(const std::filesystem::path& path, long rows, long cols) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("embedding file " + path.string() + " not found", "embed");
  Matrix<float> m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!is) throw std::runtime_error("truncated embedding file " + path.string());
  return m;
}

}  // namespace

EmbeddingStore EmbeddingStore::open(const std::filesystem::path& dir) {
  const auto index = dir / kIndexName;
  std::ifstream is(index);
  if (!is) throw MissingArtifactError("embedding index " + index.string() + " not found", "embed");
  EmbeddingStore store(dir);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    boost::split(f, line, boost::is_any_of("\t"));
    if (f.size() != 6 || f[1].size() != 1) throw std::runtime_error("malformed embedding index line: " + line);
    store.by_slide_[f[0]].push_back(store.entries_.size());
    store.entries_.push_back({f[0], f[1][0], f[2], f[3], std::stol(f[4]), std::stol(f[5])});
  }
  return store;
}

EmbeddingStore EmbeddingStore::create(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  return EmbeddingStore(dir);
}

void EmbeddingStore::write(const vpu::SlideEmbedding& e) {
  if (contains(e.slide_id)) throw std::invalid_argument("slide '" + e.slide_id + "' already stored");
  const struct {
    char scale;
    const char* kind;
    const char* suffix;
    const Matrix<float>* m;
  } parts[] = {{'s', "embedding", ".s.emb.f32", &e.small},
               {'l', "embedding", ".l.emb.f32", &e.large},
               {'s', "log_prob", ".s.logp.f32", &e.log_prob_small},
               {'l', "log_prob", ".l.logp.f32", &e.log_prob_large}};
  for (const auto& p : parts) {
    const std::string file = e.slide_id + p.suffix;
    write_matrix(dir_ / file, *p.m);
    by_slide_[e.slide_id].push_back(entries_.size());
    entries_.push_back({e.slide_id, p.scale, p.kind, file, static_cast<long>(p.m->rows()),
                        static_cast<long>(p.m->cols())});
  }
}

void EmbeddingStore::finish() const {
  std::ofstream os(dir_ / kIndexName);
  if (!os) throw std::runtime_error("cannot write embedding index in " + dir_.string());
  os << "# slide_id\tscale\tkind\tfile\trows\tcols\n";
  for (const auto& e : entries_) {
    os << e.slide_id << '\t' << e.scale << '\t' << e.kind << '\t' << e.file << '\t' << e.rows << '\t' << e.cols
       << '\n';
  }
}

bool EmbeddingStore::contains(const std::string& slide_id) const { return by_slide_.contains(slide_id); }

std::vector<std::string> EmbeddingStore::slide_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : by_slide_) out.push_back(id);
  return out;
}

vpu::SlideEmbedding EmbeddingStore::read(const std::string& slide_id) const {
  const auto it = by_slide_.find(slide_id);
  if (it == by_slide_.end()) throw MissingArtifactError("no embeddings for slide '" + slide_id + "'", "embed");
  vpu::SlideEmbedding e;
  e.slide_id = slide_id;
  for (std::size_t i : it->second) {
    const Entry& en = entries_[i];
    Matrix<float>* dst = nullptr;
    if (en.kind == "embedding") dst = en.scale == 's' ? &e.small : &e.large;
    else if (en.kind == "log_prob") dst = en.scale == 's' ? &e.log_prob_small : &e.log_prob_large;
    else throw std::runtime_error("unknown embedding kind '" + en.kind + "'");
    *dst = read_matrix(dir_ / en.file, en.rows, en.cols);
  }
  if (e.small.rows() != e.large.rows()) throw ShapeError("slide '" + slide_id + "': scales are not row-aligned");
  return e;
}

}  // namespace less
