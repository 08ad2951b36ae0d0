#include "less/config.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "less/kv.hpp"
#include "less/random.hpp"

extern char** environ;

namespace less {

namespace {

// Built-in defaults; the lowest layer under INI files, environment and --set.
const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"synth.n_per_subtype", "50"},
      {"synth.slide_px", "4096"},
      {"synth.malignant_fraction", "0.3"},
      {"synth.seed", "0"},
      {"synth.cell_density", "600"},
      {"synth.region_px", "128"},
      {"synth.blank_fraction", "0.1"},
      {"synth.workers", "1"},

      {"ingest.th1", "236"},
      {"ingest.th2", "10"},
      {"ingest.th3", "236"},
      {"ingest.k", "100"},
      {"ingest.stride", "64"},
      {"ingest.seed", "0"},

      {"stage1.objective", "vpu"},
      {"stage1.batch_size", "100"},
      {"stage1.epochs", "10"},
      {"stage1.lr", "1e-4"},
      {"stage1.lr_end", "1.25e-5"},
      {"stage1.lr_gamma", "0.5"},
      {"stage1.lr_step_epochs", "2"},
      {"stage1.alpha", "0.3"},
      {"stage1.lambda", "0.03"},
      {"stage1.seed", "0"},
      {"stage1.embed_small", "384"},
      {"stage1.embed_large", "768"},
      {"stage1.hidden", "128"},

      {"stage2.preset", "base"},
      {"stage2.depth", "1"},
      {"stage2.n_cross", "1"},
      {"stage2.dropout", "0.1"},
      {"stage2.drop_path", "0.1"},
      {"stage2.epochs", "40"},
      {"stage2.batch_size", "128"},
      {"stage2.lr", "1e-6"},
      {"stage2.lr_end", "5e-7"},
      {"stage2.warmup_epochs", "5"},
      {"stage2.weight_decay", "0"},

      {"baseline.epochs", "40"},
      {"baseline.batch_size", "16"},
      {"baseline.lr", "1e-3"},
      {"baseline.lr_end", "1e-4"},
      {"baseline.warmup_epochs", "0"},
      {"baseline.counting_threshold", "50"},
      {"baseline.scale", "large"},
      {"baseline.pooling", "mean"},
      {"baseline.tau", "0.9"},
      {"baseline.gnn_hidden", "128"},

      {"eval.n_splits", "5"},
      {"eval.n_seeds", "5"},
      {"eval.split_seed", "0"},
      {"eval.threshold", "0.5"},
      {"eval.strategies", "less,counting,mlp,gnn,vit,fused_gnn"},

      {"run.root", "runs"},
  };
  return d;
}

template <class T>
T lexical(const std::string& key, const std::string& v) {
  try {
    return boost::lexical_cast<T>(v);
  } catch (const boost::bad_lexical_cast&) {
    throw ConfigError("bad value for '" + key + "': '" + v + "'");
  }
}

bool known_section(const std::string& s) {
  for (const auto& [k, _] : defaults()) {
    if (k.compare(0, s.size() + 1, s + ".") == 0) return true;
  }
  return false;
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!defaults().contains(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = boost::trim_copy(value);
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected section.key=value, got '" + assignment + "'");
  set(boost::trim_copy(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::merge_ini_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' must sit inside a [section]");
    for (const auto& [key, value] : body) set(section + "." + key, value.data());
  }
}

void RunConfig::merge_file(const std::filesystem::path& ini) {
  std::ifstream is(ini);
  if (!is) throw ConfigError("cannot read config file " + ini.string());
  std::stringstream ss;
  ss << is.rdbuf();
  merge_ini_text(ss.str());
}

void RunConfig::merge_environment() {
  const std::string prefix = kEnvPrefix;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    if (entry.compare(0, prefix.size(), prefix) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const std::string name = boost::to_lower_copy(entry.substr(prefix.size(), eq - prefix.size()));
    const auto us = name.find('_');
    if (us == std::string::npos) continue;
    const std::string section = name.substr(0, us);
    if (!known_section(section)) continue;  // not ours (e.g. build options)
    set(section + "." + name.substr(us + 1), entry.substr(eq + 1));
  }
}

std::string RunConfig::resolve_key(const std::string& name) const {
  if (values_.contains(name)) return name;
  std::vector<std::string> hits;
  for (const auto& [k, _] : values_) {
    if (k.size() > name.size() && k.compare(k.size() - name.size(), name.size(), name) == 0 &&
        k[k.size() - name.size() - 1] == '.') {
      hits.push_back(k);
    }
  }
  if (hits.size() == 1) return hits.front();
  if (hits.empty()) throw ConfigError("unknown config key '" + name + "'");
  throw ConfigError("ambiguous config key '" + name + "': " + boost::join(hits, ", "));
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

template <class T>
T RunConfig::as(const std::string& key) const {
  return lexical<T>(key, get(key));
}

template int RunConfig::as<int>(const std::string&) const;
template double RunConfig::as<double>(const std::string&) const;
template std::uint64_t RunConfig::as<std::uint64_t>(const std::string&) const;
template std::string RunConfig::as<std::string>(const std::string&) const;

std::string RunConfig::serialize() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    const std::string s = k.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << '\n';
      os << '[' << s << "]\n";
      section = s;
    }
    os << k.substr(dot + 1) << " = " << v << '\n';
  }
  return os.str();
}

std::string RunConfig::hash() const {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(serialize());
  return os.str();
}

synth::SynthConfig RunConfig::synth() const {
  synth::SynthConfig c;
  c.n_slides_per_subtype = as<int>("synth.n_per_subtype");
  c.slide_px = as<int>("synth.slide_px");
  c.malignant_patch_fraction = as<double>("synth.malignant_fraction");
  c.texture_seed = as<std::uint64_t>("synth.seed");
  c.cell_density = as<double>("synth.cell_density");
  c.region_px = as<int>("synth.region_px");
  c.blank_region_fraction = as<double>("synth.blank_fraction");
  c.workers = as<int>("synth.workers");
  return c;
}

ingest::IngestConfig RunConfig::ingest() const {
  ingest::IngestConfig c;
  c.thresholds = {as<double>("ingest.th1"), as<double>("ingest.th2"), as<double>("ingest.th3")};
  c.k = as<int>("ingest.k");
  c.stride = as<int>("ingest.stride");
  c.seed = as<std::uint64_t>("ingest.seed");
  return c;
}

vpu::VpuTrainConfig RunConfig::stage1() const {
  vpu::VpuTrainConfig c;
  const auto& obj = get("stage1.objective");
  if (obj == "vpu") c.objective = vpu::Objective::kVariational;
  else if (obj == "pn") c.objective = vpu::Objective::kSupervisedPN;
  else throw ConfigError("stage1.objective must be 'vpu' or 'pn'");
  c.batch_size = as<int>("stage1.batch_size");
  c.epochs = as<int>("stage1.epochs");
  c.lr = as<double>("stage1.lr");
  c.lr_end = as<double>("stage1.lr_end");
  c.lr_gamma = as<double>("stage1.lr_gamma");
  c.lr_step_epochs = as<int>("stage1.lr_step_epochs");
  c.alpha = as<double>("stage1.alpha");
  c.lambda = as<double>("stage1.lambda");
  c.seed = as<std::uint64_t>("stage1.seed");
  return c;
}

nn::EncoderSpec RunConfig::encoder_spec(bool large_scale) const {
  auto s = large_scale ? nn::EncoderSpec::large_scale() : nn::EncoderSpec::small_scale();
  s.embed_dim = as<int>(large_scale ? "stage1.embed_large" : "stage1.embed_small");
  s.hidden = as<int>("stage1.hidden");
  if (s.embed_dim < 1 || s.hidden < 1) throw ConfigError("encoder widths must be >= 1");
  return s;
}

StrategyConfig RunConfig::strategies() const {
  StrategyConfig c;
  c.fusion = fusion::FusionConfig::from_preset(get("stage2.preset"));
  c.fusion.depth = as<int>("stage2.depth");
  c.fusion.n_cross = as<int>("stage2.n_cross");
  c.fusion.dropout = as<double>("stage2.dropout");
  c.fusion.drop_path = as<double>("stage2.drop_path");
  c.fusion.in_small = as<int>("stage1.embed_small");
  c.fusion.in_large = as<int>("stage1.embed_large");
  c.fusion_train = {as<int>("stage2.epochs"), as<int>("stage2.batch_size"), as<double>("stage2.lr"),
                    as<double>("stage2.lr_end"), as<int>("stage2.warmup_epochs"),
                    as<double>("stage2.weight_decay"), 0};
  c.baseline_train = {as<int>("baseline.epochs"), as<int>("baseline.batch_size"), as<double>("baseline.lr"),
                      as<double>("baseline.lr_end"), as<int>("baseline.warmup_epochs"), 0.0, 0};
  c.counting_threshold = as<int>("baseline.counting_threshold");
  c.single_scale = baselines::parse_scale(get("baseline.scale"));
  const auto& pool = get("baseline.pooling");
  if (pool == "mean") c.pooling = baselines::Pooling::kMean;
  else if (pool == "max") c.pooling = baselines::Pooling::kMax;
  else throw ConfigError("baseline.pooling must be 'mean' or 'max'");
  c.tau = as<double>("baseline.tau");
  c.gnn_hidden = as<int>("baseline.gnn_hidden");
  return c;
}

EvalSettings RunConfig::eval() const {
  EvalSettings e;
  e.n_splits = as<int>("eval.n_splits");
  e.n_seeds = as<int>("eval.n_seeds");
  e.split_seed = as<std::uint64_t>("eval.split_seed");
  e.threshold = as<double>("eval.threshold");
  e.strategies = parse_list<std::string>(get("eval.strategies"));
  for (const auto& s : e.strategies) parse_strategy(s);
  if (e.n_splits < 1 || e.n_seeds < 1) throw ConfigError("eval.n_splits and eval.n_seeds must be >= 1");
  if (!(e.threshold >= 0.0 && e.threshold <= 1.0)) throw ConfigError("eval.threshold must lie in [0, 1]");
  return e;
}

void RunConfig::validate() const {
  synth().validate();
  ingest().thresholds.validate();
  if (ingest().k < 1 || ingest().stride < 1) throw ConfigError("ingest.k and ingest.stride must be >= 1");
  stage1().validate();
  encoder_spec(false);
  encoder_spec(true);
  const auto s = strategies();
  s.fusion.validate();
  s.fusion_train.validate();
  s.baseline_train.validate();
  if (!(s.tau >= -1.0 && s.tau <= 1.0)) throw ConfigError("baseline.tau must lie in [-1, 1]");
  eval();
}

}  // namespace less
