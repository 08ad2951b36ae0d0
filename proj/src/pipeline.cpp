#include "less/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "less/log.hpp"
#include "less/manifest.hpp"
#include "less/patch_archive.hpp"
#include "less/plot.hpp"
#include "less/random.hpp"
#include "less/synthgen.hpp"

namespace less::pipeline {

namespace {

using nlohmann::json;

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(now.time_since_epoch()).count() % 1000000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%dT%H%M%S") << '.' << std::setw(6) << std::setfill('0') << us;
  return os.str();
}

void refuse_if_exists(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) throw OutputExistsError(p.string() + " already exists (use --force to overwrite)");
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}

// Appends JSON lines; truncates on open.
class JsonlWriter {
 public:
  explicit JsonlWriter(const fs::path& p) {
    fs::create_directories(p.parent_path());
    os_.open(p, std::ios::trunc);
    if (!os_) throw std::runtime_error("cannot write " + p.string());
  }
  void write(const json& j) { os_ << j.dump() << '\n' << std::flush; }

 private:
  std::ofstream os_;
};

struct PatchIndex {
  std::map<std::string, PatchManifestEntry> by_id;
  fs::path dir;

  const PatchManifestEntry& at(const std::string& id) const {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw MissingArtifactError("no patches for slide '" + id + "'", "ingest");
    return it->second;
  }
  PatchArchive archive(const std::string& id) const { return read_archive(dir / at(id).archive); }
  int label(const std::string& id) const { return label_index(coarse_label_of(at(id).subtype)); }
};

PatchIndex patch_index(const Layout& layout) {
  if (!fs::exists(layout.patch_manifest())) {
    throw MissingArtifactError("patch manifest " + layout.patch_manifest().string() + " not found", "ingest");
  }
  PatchIndex idx;
  idx.dir = layout.patches_dir;
  for (auto& e : read_patch_manifest(layout.patch_manifest())) {
    if (e.usable) idx.by_id.emplace(e.slide_id, e);
  }
  return idx;
}

std::vector<vpu::SlideEmbedding> read_embeddings(const EmbeddingStore& store, const std::vector<std::string>& ids) {
  std::vector<vpu::SlideEmbedding> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    if (!store.contains(id)) throw MissingArtifactError("no embedding for slide '" + id + "'", "embed");
    out.push_back(store.read(id));
  }
  return out;
}

fs::path error_file(const fs::path& predictions) {
  auto p = predictions;
  p.replace_extension(".error");
  return p;
}

}  // namespace

// ---- run directories -------------------------------------------------------

std::vector<fs::path> find_runs(const fs::path& root, const std::string& hash) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) return out;
  const std::string prefix = hash + "-";
  for (const auto& d : fs::directory_iterator(root)) {
    const auto name = d.path().filename().string();
    if (d.is_directory() && name.compare(0, prefix.size(), prefix) == 0) out.push_back(d.path());
  }
  std::sort(out.begin(), out.end());  // timestamps sort lexicographically
  return out;
}

fs::path create_run(const fs::path& root, const RunConfig& cfg, bool force) {
  cfg.validate();
  const auto hash = cfg.hash();
  const auto existing = find_runs(root, hash);
  if (!existing.empty() && !force) {
    throw OutputExistsError("a run with this configuration exists: " + existing.back().string() +
                            " (use --force for a fresh one)");
  }
  fs::path dir = root / (hash + "-" + timestamp());
  fs::create_directories(dir);
  write_text(Layout(dir).config(), cfg.serialize());
  return dir;
}

fs::path latest_run(const fs::path& root, const RunConfig& cfg) {
  const auto runs = find_runs(root, cfg.hash());
  if (runs.empty()) {
    throw MissingArtifactError("no run for config " + cfg.hash() + " under " + root.string(), "synth-gen");
  }
  return runs.back();
}

// ---- corpus stages ---------------------------------------------------------

void synth_gen(const RunConfig& cfg, const Layout& layout, bool force) {
  refuse_if_exists(layout.manifest(), force);
  const auto sc = cfg.synth();
  log::info("synth-gen: ", 4 * sc.n_slides_per_subtype, " slides of ", sc.slide_px, " px -> ",
            layout.corpus_dir.string());
  const auto out = synth::generate_corpus(sc, layout.corpus_dir);
  log::info("synth-gen: wrote ", out.records.size(), " slides");
}

IngestSummary ingest(const RunConfig& cfg, const Layout& layout, bool force) {
  if (!fs::exists(layout.manifest())) {
    throw MissingArtifactError("corpus manifest " + layout.manifest().string() + " not found", "synth-gen");
  }
  refuse_if_exists(layout.patch_manifest(), force);
  const auto records = read_manifest(layout.manifest());
  const auto ic = cfg.ingest();
  const fs::path archive_dir = layout.patches_dir / "archives";
  fs::create_directories(archive_dir);

  IngestSummary summary;
  std::vector<PatchManifestEntry> entries;
  for (const auto& r : records) {
    PatchManifestEntry e;
    e.slide_id = r.id;
    e.subtype = r.subtype;
    e.archive = fs::path("archives") / (r.id + ".lpa");
    try {
      auto res = ingest::ingest_slide(r, ic);
      e.n_candidates = res.n_candidates;
      e.n_kept = res.n_kept;
      e.n_augmented = res.n_augmented();
      write_archive(layout.patches_dir / e.archive, {r.id, ic.small_px, ic.large_px, std::move(res.pairs)});
      if (e.n_augmented > 0) ++summary.n_augmented_slides;
    } catch (const IngestionError& err) {
      log::info("ingest: ", err.what(), " -- marked unusable");
      e.usable = false;
      e.archive.clear();
      ++summary.n_unusable;
    }
    ++summary.n_slides;
    entries.push_back(std::move(e));
  }
  write_patch_manifest(layout.patch_manifest(), entries);
  log::info("ingest: ", summary.n_slides, " slides, ", summary.n_unusable, " unusable, ",
            summary.n_augmented_slides, " needed augmentation");
  plan_splits(cfg, layout);
  return summary;
}

std::vector<eval::SplitPlan> plan_splits(const RunConfig& cfg, const Layout& layout) {
  const auto idx = patch_index(layout);
  std::vector<SlideRecord> usable;
  for (const auto& r : read_manifest(layout.manifest())) {
    if (idx.by_id.contains(r.id)) usable.push_back(r);
  }
  const auto ev = cfg.eval();
  std::vector<std::string> warnings;
  auto splits = eval::make_splits(usable, ev.n_splits, ev.split_seed, &warnings);
  for (const auto& w : warnings) log::info("splits: ", w);
  fs::create_directories(layout.splits().parent_path());
  eval::write_splits(layout.splits(), splits);
  return splits;
}

std::vector<eval::SplitPlan> load_splits(const Layout& layout, std::optional<int> only) {
  if (!fs::exists(layout.splits())) {
    throw MissingArtifactError("split file " + layout.splits().string() + " not found", "ingest");
  }
  auto splits = eval::read_splits(layout.splits());
  if (!only) return splits;
  for (auto& s : splits) {
    if (s.index == *only) return {std::move(s)};
  }
  throw ConfigError("no split with index " + std::to_string(*only));
}

// ---- stage 1 ---------------------------------------------------------------

void train_stage1(const RunConfig& cfg, const Layout& layout, const eval::SplitPlan& split, bool force) {
  refuse_if_exists(layout.encoder(split.index, false), force);
  refuse_if_exists(layout.encoder(split.index, true), force);
  const auto idx = patch_index(layout);
  auto tc = cfg.stage1();
  tc.seed = derive_seed(tc.seed, static_cast<std::uint64_t>(split.index));

  std::vector<std::string> positive, unlabeled;
  for (const auto& id : split.train) {
    const auto st = idx.at(id).subtype;
    if (st == Subtype::kBenign) positive.push_back(id);
    else if (st == Subtype::kMalignant) unlabeled.push_back(id);
  }
  if (positive.empty() || unlabeled.empty()) {
    throw ConfigError("split " + std::to_string(split.index) + " needs benign and malignant training slides");
  }

  // One scale at a time so only one patch bank is resident.
  for (const bool large : {false, true}) {
    const auto spec = cfg.encoder_spec(large);
    vpu::PuSets sets{vpu::PatchBank(spec.input_px), vpu::PatchBank(spec.input_px)};
    auto load = [&](const std::vector<std::string>& ids, vpu::PatchBank& bank) {
      for (const auto& id : ids) {
        for (const auto& p : idx.archive(id).pairs) bank.add(large ? p.large : p.small);
      }
    };
    load(positive, sets.positive);
    load(unlabeled, sets.unlabeled);
    log::info("stage1 split ", split.index, " scale ", large ? "large" : "small", ": |P|=", sets.positive.size(),
              " |U|=", sets.unlabeled.size());

    JsonlWriter logw(layout.stage1_log(split.index, large));
    auto trained = vpu::train_encoder(sets, spec, tc, [&](const vpu::EpochLog& e) {
      logw.write({{"epoch", e.epoch}, {"l_var", e.l_var}, {"l_reg", e.l_reg}, {"total", e.total}, {"lr", e.lr}});
      log::info("  epoch ", e.epoch, " l_var=", e.l_var, " l_reg=", e.l_reg, " lr=", e.lr);
    });
    vpu::save_encoder(layout.encoder(split.index, large), trained.model,
                      "split=" + std::to_string(split.index) + "\nseed=" + std::to_string(tc.seed));
  }
}

void embed(const RunConfig&, const Layout& layout, const eval::SplitPlan& split, bool force) {
  refuse_if_exists(layout.embeddings(split.index) / EmbeddingStore::kIndexName, force);
  const auto idx = patch_index(layout);
  const auto small = vpu::load_encoder(layout.encoder(split.index, false));
  const auto large = vpu::load_encoder(layout.encoder(split.index, true));
  auto store = EmbeddingStore::create(layout.embeddings(split.index));
  std::vector<std::string> ids = split.train;
  ids.insert(ids.end(), split.test.begin(), split.test.end());
  for (const auto& id : ids) store.write(vpu::export_embeddings(small, large, idx.archive(id)));
  store.finish();
  log::info("embed split ", split.index, ": ", ids.size(), " slides");
}

// ---- stage 2 and baselines -------------------------------------------------

void train_strategy(const RunConfig& cfg, const Layout& layout, Strategy strategy, const eval::SplitPlan& split,
                    int seed, bool force) {
  const std::string name(to_string(strategy));
  const auto pred_path = layout.predictions(split.index, name, seed);
  refuse_if_exists(pred_path, force);
  fs::remove(error_file(pred_path));

  const auto idx = patch_index(layout);
  const auto store = EmbeddingStore::open(layout.embeddings(split.index));
  const auto train_emb = read_embeddings(store, split.train);
  const auto test_emb = read_embeddings(store, split.test);

  std::vector<LabeledSlide> train;
  for (std::size_t i = 0; i < train_emb.size(); ++i) train.push_back({&train_emb[i], idx.label(split.train[i])});
  std::vector<const vpu::SlideEmbedding*> test;
  for (const auto& e : test_emb) test.push_back(&e);

  const auto run_seed = derive_seed(split.split_seed, static_cast<std::uint64_t>(seed));
  // Checkpoints are kept for the first seed only; the rest are evaluation repeats.
  const fs::path ckpt = seed == 0 ? layout.model(split.index, name, seed) : fs::path{};
  if (!ckpt.empty()) fs::create_directories(ckpt.parent_path());

  JsonlWriter logw(layout.train_log(split.index, name, seed));
  const auto scores = train_and_score(strategy, cfg.strategies(), train, test, run_seed, ckpt,
                                      [&](const SlideEpochLog& e) {
                                        logw.write({{"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}});
                                      });

  std::vector<eval::PredictionRecord> preds;
  for (std::size_t i = 0; i < scores.size(); ++i) preds.push_back({split.test[i], scores[i], idx.label(split.test[i])});
  fs::create_directories(pred_path.parent_path());
  eval::write_predictions(pred_path, preds);
}

// ---- evaluation ------------------------------------------------------------

EvaluateOutput evaluate(const RunConfig& cfg, const Layout& layout, const std::vector<std::string>& strategies,
                        const fs::path& out_dir) {
  const auto ev = cfg.eval();
  const auto splits = load_splits(layout);
  auto read = [&](const std::string& strategy, const eval::SplitPlan& split, int seed) {
    const auto path = layout.predictions(split.index, strategy, seed);
    if (!fs::exists(path) && fs::exists(error_file(path))) {
      std::ifstream is(error_file(path));
      std::stringstream ss;
      ss << is.rdbuf();
      throw std::runtime_error(ss.str());
    }
    eval::RunOutput out;
    for (const auto& p : eval::read_predictions(path)) {
      out.scores.push_back(p.p_high_risk);
      out.labels.push_back(p.label);
    }
    return out;
  };

  EvaluateOutput res;
  res.runs = eval::run_matrix(strategies, splits, ev.n_seeds, read, ev.threshold);
  res.rows = eval::summarize(res.runs);
  res.table = eval::format_table(res.rows);
  fs::create_directories(out_dir);
  eval::write_summary_tsv(out_dir / "summary.tsv", res.rows);
  eval::write_runs_tsv(out_dir / "runs.tsv", res.runs);
  write_text(out_dir / "table.txt", res.table);
  return res;
}

void explain(const RunConfig&, const Layout& layout, const eval::SplitPlan& split, int seed,
             const std::vector<std::string>& slide_ids, int k_top, const fs::path& out_dir) {
  const auto idx = patch_index(layout);
  const auto model = fusion::load_fusion(layout.model(split.index, "less", seed));
  const auto store = EmbeddingStore::open(layout.embeddings(split.index));
  const auto& ids = slide_ids.empty() ? split.test : slide_ids;
  for (const auto& id : ids) {
    if (!store.contains(id)) throw MissingArtifactError("no embedding for slide '" + id + "'", "embed");
    const auto pred = fusion::predict_slide(model, store.read(id));
    const fs::path dir = out_dir / ("split-" + std::to_string(split.index)) / id;
    fusion::explain_topk(pred, idx.archive(id), dir, k_top);
    write_text(dir / "prediction.json",
               json{{"slide_id", id},
                    {"p_high_risk", pred.p_high_risk},
                    {"label", idx.label(id)},
                    {"attn_small_cls", pred.attn_small_cls},
                    {"attn_large_cls", pred.attn_large_cls}}
                       .dump(2) +
                   "\n");
  }
  log::info("explain: ", ids.size(), " slides -> ", out_dir.string());
}

EvaluateOutput run_downstream(const RunConfig& cfg, const Layout& layout, bool force) {
  const auto ev = cfg.eval();
  const auto splits = load_splits(layout);
  for (const auto& split : splits) {
    train_stage1(cfg, layout, split, force);
    embed(cfg, layout, split, force);
    for (const auto& name : ev.strategies) {
      const auto strategy = parse_strategy(name);
      for (int seed = 0; seed < ev.n_seeds; ++seed) {
        log::info("split ", split.index, " ", name, " seed ", seed);
        try {
          train_strategy(cfg, layout, strategy, split, seed, force);
        } catch (const DivergenceError& e) {
          log::info("  failed: ", e.what());
          write_text(error_file(layout.predictions(split.index, name, seed)), e.what());
        }
      }
    }
  }
  auto out = evaluate(cfg, layout, ev.strategies, layout.eval_dir());
  log::info("results:\n", out.table);
  return out;
}

// ---- sweep -----------------------------------------------------------------

std::string format_sweep_table(const std::vector<SweepPoint>& points) {
  std::vector<eval::SummaryRow> rows;
  for (const auto& p : points) {
    for (auto r : p.rows) {
      r.strategy = p.label + " / " + r.strategy;
      rows.push_back(std::move(r));
    }
  }
  return eval::format_table(rows);
}

std::vector<SweepPoint> sweep(const RunConfig& base, const std::string& key_name, const std::vector<std::string>& values,
                              const fs::path& sweep_dir, bool force) {
  const std::string key = base.resolve_key(key_name);
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const std::string section = key.substr(0, key.find('.'));
  const bool corpus_varies = section == "synth" || section == "ingest";

  std::vector<RunConfig> cfgs;
  for (const auto& v : values) {
    RunConfig c = base;
    c.set(key, v);
    c.validate();
    cfgs.push_back(std::move(c));
  }

  const Layout shared(sweep_dir / "shared");
  if (!corpus_varies) {
    if (!fs::exists(shared.patch_manifest()) || force) {
      synth_gen(base, shared, force);
      ingest(base, shared, force);
    } else {
      log::info("sweep: reusing corpus in ", shared.run.string());
    }
  }

  std::vector<SweepPoint> points;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const fs::path dir = sweep_dir / ("point-" + values[i]);
    if (fs::exists(dir)) {
      if (!force) throw OutputExistsError(dir.string() + " already exists (use --force to overwrite)");
      fs::remove_all(dir);
    }
    fs::create_directories(dir);
    const Layout layout = corpus_varies ? Layout(dir) : Layout(dir, shared);
    write_text(layout.config(), cfgs[i].serialize());
    log::info("sweep: ", key, "=", values[i]);
    if (corpus_varies) {
      synth_gen(cfgs[i], layout, true);
      ingest(cfgs[i], layout, true);
    } else {
      plan_splits(cfgs[i], layout);
    }
    std::string label = key + "=" + values[i];
    if (key == "stage1.lambda") {
      label = cfgs[i].as<double>(key) == 0.0 ? "W/o regularization" : "W/ regularization";
    }
    points.push_back({values[i], label, run_downstream(cfgs[i], layout, true).rows});
  }

  // Long-format table plus one chart per metric.
  std::ostringstream tsv;
  tsv << "key\tvalue\tlabel\tstrategy\tmetric\tmean\tstd\tn_runs\n";
  std::vector<std::string> strategies;
  for (const auto& p : points) {
    for (const auto& r : p.rows) {
      if (std::find(strategies.begin(), strategies.end(), r.strategy) == strategies.end()) {
        strategies.push_back(r.strategy);
      }
      const std::pair<const char*, const eval::MetricSummary*> ms[] = {
          {"accuracy", &r.accuracy}, {"auc", &r.auc}, {"sensitivity", &r.sensitivity}, {"specificity", &r.specificity}};
      for (const auto& [m, s] : ms) {
        tsv << key << '\t' << p.value << '\t' << p.label << '\t' << r.strategy << '\t' << m << '\t' << s->mean << '\t' << s->std << '\t'
            << s->n << '\n';
      }
    }
  }
  write_text(sweep_dir / "sweep.tsv", tsv.str());
  write_text(sweep_dir / "table.txt", format_sweep_table(points));

  const std::pair<const char*, eval::MetricSummary eval::SummaryRow::*> metrics[] = {
      {"accuracy", &eval::SummaryRow::accuracy},
      {"auc", &eval::SummaryRow::auc},
      {"sensitivity", &eval::SummaryRow::sensitivity},
      {"specificity", &eval::SummaryRow::specificity}};
  for (const auto& [m, field] : metrics) {
    std::vector<plot::Series> series;
    for (const auto& s : strategies) {
      plot::Series ser{s, {}, {}};
      for (const auto& p : points) {
        const auto it = std::find_if(p.rows.begin(), p.rows.end(), [&](const auto& r) { return r.strategy == s; });
        ser.mean.push_back(it == p.rows.end() ? eval::kUndefined : ((*it).*field).mean);
        ser.std.push_back(it == p.rows.end() ? eval::kUndefined : ((*it).*field).std);
      }
      series.push_back(std::move(ser));
    }
    plot::line_chart(sweep_dir / (std::string(m) + ".png"), std::string(m) + " vs " + key, key, values,
                     std::string(m) + " (%)", series);
  }
  return points;
}

}  // namespace less::pipeline
