#include "less/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <json.hpp>

#include "less/random.hpp"

namespace less::eval {

namespace {

bool is_nan(double v) { return std::isnan(v); }

std::string fmt_cell(const MetricSummary& m) {
  if (m.n == 0) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << m.mean << '(' << m.std << ')';
  return os.str();
}

std::string fmt_num(double v) {
  if (is_nan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

std::pair<int, int> train_counts(int n_benign, int n_malignant, double fraction) {
  const int total = static_cast<int>(std::floor(fraction * (n_benign + n_malignant) + 1e-9));
  const double eb = fraction * n_benign, em = fraction * n_malignant;
  int b = static_cast<int>(std::floor(eb + 1e-9)), m = static_cast<int>(std::floor(em + 1e-9));
  while (b + m < total) {
    // Largest fractional remainder gets the next slide; ties to benign.
    if ((eb - b) >= (em - m) && b < n_benign) ++b;
    else if (m < n_malignant) ++m;
    else ++b;
  }
  return {b, m};
}

std::vector<SplitPlan> make_splits(const std::vector<SlideRecord>& corpus, int n_splits, std::uint64_t seed,
                                   std::vector<std::string>* warnings) {
  if (n_splits < 1) throw ConfigError("eval.n_splits must be >= 1");
  std::map<Subtype, std::vector<std::string>> ids;
  for (const auto& r : corpus) ids[r.subtype].push_back(r.id);
  for (auto s : kAllSubtypes) {
    auto& v = ids[s];
    std::sort(v.begin(), v.end());
    if (v.empty() && warnings) warnings->push_back("corpus has no " + std::string(to_string(s)) + " slides");
  }
  const auto& benign = ids[Subtype::kBenign];
  const auto& malignant = ids[Subtype::kMalignant];
  const auto [nb, nm] = train_counts(static_cast<int>(benign.size()), static_cast<int>(malignant.size()));

  std::vector<SplitPlan> out;
  for (int i = 0; i < n_splits; ++i) {
    SplitPlan plan;
    plan.index = i;
    plan.split_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    Rng rng(plan.split_seed);
    auto take = [&](std::vector<std::string> v, int n_train) {
      shuffle(v, rng);
      plan.train.insert(plan.train.end(), v.begin(), v.begin() + n_train);
      plan.test.insert(plan.test.end(), v.begin() + n_train, v.end());
    };
    take(benign, nb);
    take(malignant, nm);
    for (auto s : {Subtype::kAtypical, Subtype::kSuspicious}) {
      plan.test.insert(plan.test.end(), ids[s].begin(), ids[s].end());
    }
    out.push_back(std::move(plan));
  }
  return out;
}

void write_splits(const std::filesystem::path& path, const std::vector<SplitPlan>& splits) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "# split\tsplit_seed\tpart\tslide_id\n";
  for (const auto& s : splits) {
    for (const auto& id : s.train) os << s.index << '\t' << s.split_seed << "\ttrain\t" << id << '\n';
    for (const auto& id : s.test) os << s.index << '\t' << s.split_seed << "\ttest\t" << id << '\n';
  }
}

std::vector<SplitPlan> read_splits(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifactError("split file " + path.string() + " not found", "ingest");
  std::map<int, SplitPlan> plans;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    boost::split(f, line, boost::is_any_of("\t"));
    if (f.size() != 4 || (f[2] != "train" && f[2] != "test")) throw std::runtime_error("malformed split line: " + line);
    auto& p = plans[std::stoi(f[0])];
    p.index = std::stoi(f[0]);
    p.split_seed = std::stoull(f[1]);
    (f[2] == "train" ? p.train : p.test).push_back(f[3]);
  }
  std::vector<SplitPlan> out;
  for (auto& [_, p] : plans) out.push_back(std::move(p));
  return out;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Midranks; the Mann-Whitney U of the positives counts ties as one half.
  double rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        rank_sum += mid;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return kUndefined;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw std::invalid_argument("metrics need equally many nonempty scores and labels");
  }
  int tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool pos = labels[i] == 1;
    tp += pred && pos;
    tn += !pred && !pos;
    fp += pred && !pos;
    fn += !pred && pos;
  }
  Metrics m;
  m.accuracy = 100.0 * (tp + tn) / static_cast<double>(scores.size());
  m.auc = 100.0 * auc(scores, labels);
  if (tp + fn > 0) m.sensitivity = 100.0 * tp / static_cast<double>(tp + fn);
  if (tn + fp > 0) m.specificity = 100.0 * tn / static_cast<double>(tn + fp);
  return m;
}

MetricSummary summarize_values(std::span<const double> values) {
  MetricSummary s;
  double sum = 0;
  for (double v : values) {
    if (is_nan(v)) continue;
    sum += v;
    ++s.n;
  }
  if (s.n == 0) return s;
  s.mean = sum / s.n;
  double ss = 0;
  for (double v : values) {
    if (!is_nan(v)) ss += (v - s.mean) * (v - s.mean);
  }
  s.std = std::sqrt(ss / s.n);
  return s;
}

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunRecord*>> by;
  for (const auto& r : runs) {
    if (!by.contains(r.strategy)) order.push_back(r.strategy);
    by[r.strategy].push_back(&r);
  }
  std::vector<SummaryRow> rows;
  for (const auto& name : order) {
    SummaryRow row;
    row.strategy = name;
    std::vector<double> acc, auc_v, sens, spec;
    for (const auto* r : by[name]) {
      if (!r->ok) {
        ++row.n_failed;
        continue;
      }
      acc.push_back(r->metrics.accuracy);
      auc_v.push_back(r->metrics.auc);
      sens.push_back(r->metrics.sensitivity);
      spec.push_back(r->metrics.specificity);
    }
    row.accuracy = summarize_values(acc);
    row.auc = summarize_values(auc_v);
    row.sensitivity = summarize_values(sens);
    row.specificity = summarize_values(spec);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<RunRecord> run_matrix(const std::vector<std::string>& strategies, const std::vector<SplitPlan>& splits,
                                  int n_seeds, const RunFn& run, double threshold) {
  std::vector<RunRecord> out;
  for (const auto& strategy : strategies) {
    for (const auto& split : splits) {
      for (int seed = 0; seed < n_seeds; ++seed) {
        RunRecord r{strategy, split.index, seed, false, {}, {}};
        try {
          const auto o = run(strategy, split, seed);
          r.metrics = compute_metrics(o.scores, o.labels, threshold);
          r.ok = true;
        } catch (const std::exception& e) {
          r.error = e.what();
        }
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

std::string format_table(const std::vector<SummaryRow>& rows) {
  std::size_t w = 8;
  for (const auto& r : rows) w = std::max(w, r.strategy.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w) + 2) << "Method" << std::setw(16) << "Accuracy" << std::setw(16)
     << "AUC" << std::setw(16) << "Sensitivity" << std::setw(16) << "Specificity" << "Runs\n";
  for (const auto& r : rows) {
    os << std::setw(static_cast<int>(w) + 2) << r.strategy << std::setw(16) << fmt_cell(r.accuracy) << std::setw(16)
       << fmt_cell(r.auc) << std::setw(16) << fmt_cell(r.sensitivity) << std::setw(16) << fmt_cell(r.specificity)
       << r.accuracy.n;
    if (r.n_failed > 0) os << " (" << r.n_failed << " failed)";
    os << '\n';
  }
  return os.str();
}

void write_summary_tsv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "strategy\tmetric\tmean\tstd\tn_runs\n";
  for (const auto& r : rows) {
    const std::pair<const char*, const MetricSummary*> cells[] = {
        {"accuracy", &r.accuracy}, {"auc", &r.auc}, {"sensitivity", &r.sensitivity}, {"specificity", &r.specificity}};
    for (const auto& [name, m] : cells) {
      os << r.strategy << '\t' << name << '\t' << fmt_num(m->mean) << '\t' << fmt_num(m->std) << '\t' << m->n << '\n';
    }
  }
}

void write_runs_tsv(const std::filesystem::path& path, const std::vector<RunRecord>& runs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "strategy\tsplit\tseed\tok\taccuracy\tauc\tsensitivity\tspecificity\terror\n";
  for (const auto& r : runs) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '\t', ' ');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << r.strategy << '\t' << r.split << '\t' << r.seed << '\t' << (r.ok ? 1 : 0) << '\t'
       << fmt_num(r.metrics.accuracy) << '\t' << fmt_num(r.metrics.auc) << '\t' << fmt_num(r.metrics.sensitivity)
       << '\t' << fmt_num(r.metrics.specificity) << '\t' << err << '\n';
  }
}

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& preds) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : preds) {
    os << nlohmann::json{{"slide_id", p.slide_id}, {"p_high_risk", p.p_high_risk}, {"label", p.label}}.dump()
       << '\n';
  }
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifactError("predictions " + path.string() + " not found", "train-stage2");
  std::vector<PredictionRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("slide_id").get<std::string>(), j.at("p_high_risk").get<double>(), j.at("label").get<int>()});
  }
  return out;
}

}  // namespace less::eval
