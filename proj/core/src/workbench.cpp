#include "mlirl/workbench.hpp"

#include "mlirl/evalx.hpp"
#include "mlirl/random.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace mlirl {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// ---- strict JSON field access ---------------------------------------------

std::int64_t as_integer(const json& v, const std::string& where) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
  }
  throw Error(where + ": expected an integer");
}

std::uint64_t as_unsigned(const json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  const std::int64_t i = as_integer(v, where);
  if (i < 0) throw Error(where + ": expected a non-negative integer");
  return static_cast<std::uint64_t>(i);
}

double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw Error(where + ": expected a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) throw Error(where + ": expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw Error(where + ": expected a string");
  return v.get<std::string>();
}

class Fields {
 public:
  Fields(const json& object, std::string where) : object_(object), where_(std::move(where)) {
    if (!object_.is_object()) throw Error(where_ + ": expected an object");
  }

  const json* find(const std::string& key) {
    const auto it = object_.find(key);
    if (it == object_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  const json& require(const std::string& key) {
    const json* v = find(key);
    if (!v) throw Error(where_ + ": missing field \"" + key + "\"");
    return *v;
  }

  std::string at(const std::string& key) const { return where_ + "." + key; }

  void read(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      const std::int64_t i = as_integer(*v, at(key));
      if (i < INT32_MIN || i > INT32_MAX) throw Error(at(key) + ": out of range");
      out = static_cast<int>(i);
    }
  }
  void read(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) out = static_cast<std::size_t>(as_unsigned(*v, at(key)));
  }
  void read_seed(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) out = as_unsigned(*v, at(key));
  }
  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_number(*v, at(key));
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) out = as_bool(*v, at(key));
  }
  template <class Enum>
  void read_enum(const std::string& key, Enum& out, std::initializer_list<std::pair<const char*, Enum>> names) {
    const json* v = find(key);
    if (!v) return;
    const std::string name = as_string(*v, at(key));
    std::string expected;
    for (const auto& [n, e] : names) {
      if (name == n) {
        out = e;
        return;
      }
      expected += expected.empty() ? n : std::string(", ") + n;
    }
    throw Error(at(key) + ": unknown value \"" + name + "\" (expected " + expected + ")");
  }

  void finish() const {
    for (const auto& item : object_.items()) {
      if (!used_.count(item.key())) throw Error(where_ + ": unknown field \"" + item.key() + "\"");
    }
  }

 private:
  const json& object_;
  std::string where_;
  std::set<std::string> used_;
};

json parse_json(std::string_view text, const std::string& where) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw Error(where + ": invalid JSON (" + e.what() + ")");
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

// ---- enum names -------------------------------------------------------------

const char* family_name(RewardFamily f) { return f == RewardFamily::tabular_random ? "tabular_random" : "linear_random"; }

const char* policy_mode_name(PolicyMode m) { return m == PolicyMode::exact ? "exact" : "best_of_n"; }
const char* pair_selection_name(PairSelection s) { return s == PairSelection::all ? "all" : "max_min"; }
const char* objective_name(RewardObjective o) { return o == RewardObjective::btl ? "btl" : "likelihood"; }
const char* irl_reward_name(IrlRewardKind k) { return k == IrlRewardKind::tabular ? "tabular" : "linear"; }

// ---- token sequences ----------------------------------------------------------

TokenSeq parse_tokens(const json& v, int vocab, const std::string& what) {
  if (!v.is_array()) throw Error("field \"" + what + "\" must be a list of integers");
  std::vector<Token> tokens;
  tokens.reserve(v.size());
  for (const auto& t : v) {
    if (!t.is_number_integer()) throw Error("field \"" + what + "\" must be a list of integers");
    const std::int64_t id = t.get<std::int64_t>();
    if (id < 0 || id >= vocab) throw Error("token out of range");
    tokens.push_back(static_cast<Token>(id));
  }
  return TokenSeq(std::move(tokens));
}

json tokens_json(const TokenSeq& seq) {
  json out = json::array();
  for (Token t : seq.tokens()) out.push_back(t);
  return out;
}

TokenSeq parse_completion(const json& v, int vocab, int horizon, const std::string& what) {
  TokenSeq y = parse_tokens(v, vocab, what);
  if (static_cast<int>(y.size()) != horizon) {
    throw Error("field \"" + what + "\" must have length " + std::to_string(horizon));
  }
  return y;
}

// Calls fn(object, line_number) for every non-blank line, prefixing any error
// with its 1-based line number.
template <class Fn>
void for_each_record(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) {
      try {
        json object;
        try {
          object = json::parse(line.begin(), line.end());
        } catch (const json::parse_error&) {
          throw Error("malformed JSON");
        }
        if (!object.is_object()) throw Error("expected a JSON object");
        fn(object);
      } catch (const Error& e) {
        throw Error("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
}

void check_keys(const json& object, std::initializer_list<const char*> allowed) {
  for (const auto& item : object.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || item.key() == k;
    if (!ok) throw Error("unknown field \"" + item.key() + "\"");
  }
}

const json& need(const json& object, const char* key) {
  const auto it = object.find(key);
  if (it == object.end()) throw Error(std::string("missing field \"") + key + "\"");
  return *it;
}

std::string with_path(const fs::path& path, const Error& e) { return path.string() + ": " + e.what(); }

// ---- numbers ------------------------------------------------------------------

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---- instances ---------------------------------------------------------------

void InstanceSpec::validate() const {
  if (vocab < 1) throw Error("V must be at least 1");
  if (horizon < 1) throw Error("H must be at least 1");
  const CompletionSpace space(vocab, horizon);  // enforces the enumeration cap
  if (prompt_count < 1) throw Error("prompt_count must be at least 1");
  if (prompt_length < 1) throw Error("prompt_length must be at least 1");
  double prompt_space = 1.0;
  for (std::size_t i = 0; i < prompt_length; ++i) prompt_space *= vocab;
  if (static_cast<double>(prompt_count) > prompt_space) {
    throw Error("prompt_count exceeds the number of distinct prompts of that length");
  }
  if (!(r_star_scale >= 0.0) || !std::isfinite(r_star_scale)) throw Error("r_star_scale must be non-negative");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw Error("beta must be positive");
  if (!(reward_bound > 0.0) || !std::isfinite(reward_bound)) throw Error("C_r must be positive");
  if (!(ref_floor > 0.0 && ref_floor < 1.0 / static_cast<double>(space.size()))) {
    throw Error("ref_floor must lie in (0, 1/V^H)");
  }
  if (r_star_kind == RewardFamily::linear_random && feature_dim < 1) throw Error("feature_dim must be at least 1");
}

Instance make_instance(const InstanceSpec& spec) {
  spec.validate();
  const CompletionSpace space(spec.vocab, spec.horizon);

  Rng prompt_rng(derive_seed(spec.seed, 0));
  std::vector<TokenSeq> prompts;
  std::set<TokenSeq> seen;
  while (prompts.size() < spec.prompt_count) {
    std::vector<Token> tokens(spec.prompt_length);
    for (auto& t : tokens) t = static_cast<Token>(prompt_rng.below(static_cast<std::size_t>(spec.vocab)));
    TokenSeq x(std::move(tokens));
    if (seen.insert(x).second) prompts.push_back(std::move(x));
  }
  const Support support(std::make_shared<const PromptSet>(std::move(prompts)), space);

  Rng reward_rng(derive_seed(spec.seed, 1));
  RewardModel r_star = RewardModel::tabular(support, spec.reward_bound);
  if (spec.r_star_kind == RewardFamily::linear_random) {
    auto features = std::make_shared<const FeatureTable>(
        FeatureTable::random_normal(support, spec.feature_dim, derive_seed(spec.seed, 2)));
    r_star = RewardModel::linear(std::move(features), spec.reward_bound);
  }
  std::vector<double> params(r_star.param_count());
  for (auto& v : params) v = spec.r_star_scale * reward_rng.normal();
  r_star = r_star.with_params(std::move(params));

  // Dirichlet(1, ..., 1) rows from normalized exponential draws.
  Rng ref_rng(derive_seed(spec.seed, 3));
  std::vector<double> ref(support.cell_count());
  const std::size_t n = support.completion_count();
  for (std::size_t p = 0; p < support.prompt_count(); ++p) {
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) total += ref[p * n + c] = -std::log1p(-ref_rng.uniform());
    for (std::size_t c = 0; c < n; ++c) ref[p * n + c] /= total;
  }
  SequencePolicy pi_ref = SequencePolicy::from_probabilities(support, std::move(ref)).with_floor(spec.ref_floor);
  SequencePolicy pi_expert = optimal_policy(r_star, pi_ref, spec.beta);
  const double log_ref_floor = std::log(pi_ref.min_probability());

  return Instance{support, std::move(r_star), std::move(pi_ref), std::move(pi_expert),
                  spec.beta, spec.reward_bound, log_ref_floor, spec.seed};
}

DemonstrationDataset sample_demonstrations(const Instance& instance, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error("demonstration count must be at least 1");
  return sample_from_policy(instance.pi_expert, n, seed);
}

// ---- datasets ----------------------------------------------------------------

DemonstrationDataset parse_demonstrations(std::string_view text, int vocab, int horizon) {
  std::vector<Demonstration> items;
  std::vector<double> weights;
  std::size_t weighted = 0;
  for_each_record(text, [&](const json& object) {
    check_keys(object, {"prompt", "completion", "weight"});
    TokenSeq x = parse_tokens(need(object, "prompt"), vocab, "prompt");
    TokenSeq y = parse_completion(need(object, "completion"), vocab, horizon, "completion");
    double w = 0.0;
    if (const auto it = object.find("weight"); it != object.end()) {
      if (!it->is_number() || !(it->get<double>() >= 0.0)) throw Error("field \"weight\" must be a non-negative number");
      w = it->get<double>();
      ++weighted;
    }
    items.push_back({std::move(x), std::move(y)});
    weights.push_back(w);
  });
  if (items.empty()) throw Error("dataset is empty");
  if (weighted == 0) return DemonstrationDataset(std::move(items));
  if (weighted != items.size()) throw Error("either every record or none may carry a weight");
  return DemonstrationDataset(std::move(items), std::move(weights));
}

DemonstrationDataset read_demonstrations(const fs::path& path, int vocab, int horizon) {
  const std::string text = read_file(path);
  try {
    return parse_demonstrations(text, vocab, horizon);
  } catch (const Error& e) {
    throw Error(with_path(path, e));
  }
}

void write_demonstrations(const fs::path& path, const DemonstrationDataset& demos) {
  std::string text;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    ojson line;
    line["prompt"] = tokens_json(demos[i].prompt);
    line["completion"] = tokens_json(demos[i].completion);
    if (demos.is_weighted()) line["weight"] = demos.weight(i);
    text += line.dump() + "\n";
  }
  write_file(path, text);
}

PreferenceDataset parse_preferences(std::string_view text, int vocab, int horizon) {
  std::vector<Preference> items;
  for_each_record(text, [&](const json& object) {
    check_keys(object, {"prompt", "chosen", "rejected"});
    TokenSeq x = parse_tokens(need(object, "prompt"), vocab, "prompt");
    TokenSeq w = parse_completion(need(object, "chosen"), vocab, horizon, "chosen");
    TokenSeq l = parse_completion(need(object, "rejected"), vocab, horizon, "rejected");
    if (w == l) throw Error("chosen and rejected are identical");
    items.push_back({std::move(x), std::move(w), std::move(l)});
  });
  if (items.empty()) throw Error("dataset is empty");
  return PreferenceDataset(std::move(items));
}

PreferenceDataset read_preferences(const fs::path& path, int vocab, int horizon) {
  const std::string text = read_file(path);
  try {
    return parse_preferences(text, vocab, horizon);
  } catch (const Error& e) {
    throw Error(with_path(path, e));
  }
}

void write_preferences(const fs::path& path, const PreferenceDataset& prefs) {
  if (prefs.is_weighted()) throw Error("weighted preference sets have no JSONL form");
  std::string text;
  for (const auto& item : prefs.items()) {
    ojson line;
    line["prompt"] = tokens_json(item.prompt);
    line["chosen"] = tokens_json(item.chosen);
    line["rejected"] = tokens_json(item.rejected);
    text += line.dump() + "\n";
  }
  write_file(path, text);
}

// ---- instance files ------------------------------------------------------------

namespace {

ojson spec_json(const InstanceSpec& spec) {
  ojson j;
  j["V"] = spec.vocab;
  j["H"] = spec.horizon;
  j["prompt_count"] = spec.prompt_count;
  j["prompt_length"] = spec.prompt_length;
  j["r_star_kind"] = family_name(spec.r_star_kind);
  j["r_star_scale"] = spec.r_star_scale;
  j["beta"] = spec.beta;
  j["C_r"] = spec.reward_bound;
  j["ref_floor"] = spec.ref_floor;
  j["feature_dim"] = spec.feature_dim;
  j["seed"] = spec.seed;
  return j;
}

InstanceSpec spec_from_json(const json& j, const std::string& where) {
  InstanceSpec spec;
  Fields f(j, where);
  f.read("V", spec.vocab);
  f.read("H", spec.horizon);
  f.read("prompt_count", spec.prompt_count);
  f.read("prompt_length", spec.prompt_length);
  f.read_enum("r_star_kind", spec.r_star_kind,
              {{"tabular_random", RewardFamily::tabular_random}, {"linear_random", RewardFamily::linear_random}});
  f.read("r_star_scale", spec.r_star_scale);
  f.read("beta", spec.beta);
  f.read("C_r", spec.reward_bound);
  f.read("ref_floor", spec.ref_floor);
  f.read("feature_dim", spec.feature_dim);
  f.read_seed("seed", spec.seed);
  f.finish();
  spec.validate();
  return spec;
}

ojson table_json(const Support& s, std::span<const double> values) {
  ojson rows = ojson::array();
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    rows.push_back(std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(s.cell(p, 0)),
                                       values.begin() + static_cast<std::ptrdiff_t>(s.cell(p, 0) + s.completion_count())));
  }
  return rows;
}

std::vector<double> table_from_json(const json& rows, const Support& s, const std::string& where) {
  if (!rows.is_array() || rows.size() != s.prompt_count()) {
    throw Error(where + ": expected one row per prompt (" + std::to_string(s.prompt_count()) + ")");
  }
  std::vector<double> values;
  values.reserve(s.cell_count());
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != s.completion_count()) {
      throw Error(where + ": expected " + std::to_string(s.completion_count()) + " entries per row");
    }
    for (const auto& v : row) values.push_back(as_number(v, where));
  }
  return values;
}

json load_json_file(const fs::path& path) { return parse_json(read_file(path), path.string()); }

void check_shape(Fields& f, const Support& s) {
  int vocab = s.completions().vocab();
  int horizon = s.completions().horizon();
  f.read("V", vocab);
  f.read("H", horizon);
  if (vocab != s.completions().vocab() || horizon != s.completions().horizon()) {
    throw Error(f.at("V") + ": shape does not match the instance");
  }
}

}  // namespace

std::string instance_spec_to_json(const InstanceSpec& spec) { return spec_json(spec).dump(2) + "\n"; }

InstanceSpec parse_instance_spec(std::string_view text) { return spec_from_json(parse_json(text, "spec"), "spec"); }

void save_policy(const fs::path& path, const SequencePolicy& policy) {
  ojson j;
  j["V"] = policy.vocab();
  j["H"] = policy.horizon();
  j["probabilities"] = table_json(policy.support(), policy.table());
  write_file(path, j.dump(1) + "\n");
}

SequencePolicy load_policy(const fs::path& path, const Support& support) {
  const json j = load_json_file(path);
  Fields f(j, path.string());
  check_shape(f, support);
  auto probs = table_from_json(f.require("probabilities"), support, f.at("probabilities"));
  f.finish();
  try {
    return SequencePolicy::from_probabilities(support, std::move(probs));
  } catch (const Error& e) {
    throw Error(with_path(path, e));
  }
}

void save_reward(const fs::path& path, const RewardModel& reward) {
  ojson j;
  j["V"] = reward.support().completions().vocab();
  j["H"] = reward.support().completions().horizon();
  j["kind"] = reward.kind() == RewardKind::tabular ? "tabular" : "linear";
  j["output_map"] = reward.output_map() == OutputMap::bounded ? "bounded" : "identity";
  j["bound"] = reward.bound();
  j["params"] = std::vector<double>(reward.params().begin(), reward.params().end());
  if (reward.kind() == RewardKind::linear) {
    j["feature_dim"] = reward.features()->dim();
    const auto values = reward.features()->values();
    j["features"] = std::vector<double>(values.begin(), values.end());
  }
  j["values"] = table_json(reward.support(), reward.table().values());
  write_file(path, j.dump(1) + "\n");
}

RewardModel load_reward(const fs::path& path, const Support& support) {
  const json j = load_json_file(path);
  Fields f(j, path.string());
  check_shape(f, support);
  RewardKind kind = RewardKind::tabular;
  OutputMap map = OutputMap::bounded;
  double bound = 5.0;
  f.read_enum("kind", kind, {{"tabular", RewardKind::tabular}, {"linear", RewardKind::linear}});
  f.read_enum("output_map", map, {{"bounded", OutputMap::bounded}, {"identity", OutputMap::identity}});
  f.read("bound", bound);
  const json& params_json = f.require("params");
  if (!params_json.is_array()) throw Error(f.at("params") + ": expected a list of numbers");
  std::vector<double> params;
  for (const auto& v : params_json) params.push_back(as_number(v, f.at("params")));

  try {
    RewardModel model = RewardModel::tabular(support, bound, map);
    if (kind == RewardKind::linear) {
      std::size_t dim = 0;
      f.read("feature_dim", dim);
      const json& fj = f.require("features");
      if (!fj.is_array()) throw Error(f.at("features") + ": expected a list of numbers");
      std::vector<double> features;
      for (const auto& v : fj) features.push_back(as_number(v, f.at("features")));
      model = RewardModel::linear(std::make_shared<const FeatureTable>(support, dim, std::move(features)), bound, map);
    }
    if (params.size() != model.param_count()) throw Error("expected " + std::to_string(model.param_count()) + " params");
    model = model.with_params(std::move(params));
    if (const json* values = f.find("values")) {
      const auto table = table_from_json(*values, support, f.at("values"));
      const RewardTable current = model.table();
      const auto actual = current.values();
      for (std::size_t i = 0; i < table.size(); ++i) {
        if (std::abs(table[i] - actual[i]) > 1e-9 * (1.0 + std::abs(actual[i]))) {
          throw Error("stored values do not match the parameters");
        }
      }
    }
    f.finish();
    return model;
  } catch (const Error& e) {
    throw Error(with_path(path, e));
  }
}

void save_instance(const fs::path& dir, const InstanceSpec& spec, const Instance& instance) {
  fs::create_directories(dir);
  ojson j;
  j["spec"] = spec_json(spec);
  j["log_ref_floor"] = instance.log_ref_floor;
  ojson prompts = ojson::array();
  for (const auto& x : instance.prompts().prompts()) {
    prompts.push_back(std::vector<Token>(x.tokens().begin(), x.tokens().end()));
  }
  j["prompts"] = std::move(prompts);
  write_file(dir / "instance.json", j.dump(2) + "\n");
  save_reward(dir / "r_star.json", instance.r_star);
  save_policy(dir / "pi_ref.json", instance.pi_ref);
  save_policy(dir / "pi_expert.json", instance.pi_expert);
}

LoadedInstance load_instance(const fs::path& dir) {
  const fs::path meta_path = dir / "instance.json";
  const json meta = load_json_file(meta_path);
  Fields f(meta, meta_path.string());
  InstanceSpec spec = spec_from_json(f.require("spec"), f.at("spec"));
  double log_ref_floor = 0.0;
  f.read("log_ref_floor", log_ref_floor);
  const json& prompts_json = f.require("prompts");
  f.finish();
  if (!prompts_json.is_array()) throw Error(f.at("prompts") + ": expected a list of prompts");
  std::vector<TokenSeq> prompts;
  try {
    for (const auto& x : prompts_json) prompts.push_back(parse_tokens(x, spec.vocab, "prompts"));
  } catch (const Error& e) {
    throw Error(with_path(meta_path, e));
  }
  const Support support(std::make_shared<const PromptSet>(std::move(prompts)),
                        CompletionSpace(spec.vocab, spec.horizon));
  RewardModel r_star = load_reward(dir / "r_star.json", support);
  SequencePolicy pi_ref = load_policy(dir / "pi_ref.json", support);
  SequencePolicy pi_expert = load_policy(dir / "pi_expert.json", support);
  Instance instance{support, std::move(r_star), std::move(pi_ref), std::move(pi_expert),
                    spec.beta, spec.reward_bound, log_ref_floor, spec.seed};
  return {spec, std::move(instance)};
}

// ---- experiment config -----------------------------------------------------------

bool is_known_method(std::string_view method) { return method == "sft" || method == "spin" || method == "irl"; }

void ExperimentConfig::validate() const {
  instance.validate();
  if (methods.empty()) throw Error("methods must name at least one of sft, spin, irl");
  for (const auto& m : methods) {
    if (!is_known_method(m)) throw UsageError("unknown method \"" + m + "\" (expected sft, spin or irl)");
  }
  if (seeds.empty()) throw Error("seeds must be nonempty");
  if (demos == 0 && !full_population_demos) throw Error("demos must be at least 1");
  if (heldout_demos == 0 || heldout_prefs == 0 || win_matches == 0) throw Error("evaluation sizes must be positive");
  sft.validate();
  spin.validate();
  irl.validate();
  if (irl_reward == IrlRewardKind::linear && instance.r_star_kind != RewardFamily::linear_random) {
    throw Error("irl reward \"linear\" needs a linear_random instance");
  }
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig config;
  config.irl.beta = config.instance.beta;
  config.irl.objective = RewardObjective::likelihood;
  config.irl.reward_batch_size = 0;
  config.irl.reward_learning_rate = 0.5;
  config.irl.reward_steps_per_iter = 5;
  return config;
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  ojson j;
  j["instance"] = spec_json(c.instance);
  j["methods"] = c.methods;
  j["seeds"] = c.seeds;
  j["demos"] = c.demos;
  j["full_population_demos"] = c.full_population_demos;
  j["heldout_demos"] = c.heldout_demos;
  j["heldout_prefs"] = c.heldout_prefs;
  j["win_matches"] = c.win_matches;
  j["record_wall_time"] = c.record_wall_time;

  ojson sft;
  sft["epochs"] = c.sft.epochs;
  sft["learning_rate"] = c.sft.learning_rate;
  sft["batch_size"] = c.sft.batch_size;
  sft["floor"] = c.sft.floor;
  j["sft"] = sft;

  ojson spin;
  spin["iterations"] = c.spin.iterations;
  spin["dpo_beta"] = c.spin.dpo_beta;
  spin["inner_steps"] = c.spin.inner_steps;
  spin["learning_rate"] = c.spin.learning_rate;
  spin["generations_per_demo"] = c.spin.generations_per_demo;
  spin["fixed_reference"] = c.spin.fixed_reference;
  spin["floor"] = c.spin.floor;
  j["spin"] = spin;

  ojson irl;
  irl["iterations"] = c.irl.iterations;
  irl["reward_steps_per_iter"] = c.irl.reward_steps_per_iter;
  irl["reward_learning_rate"] = c.irl.reward_learning_rate;
  irl["reward_batch_size"] = c.irl.reward_batch_size;
  irl["generations_per_demo"] = c.irl.generations_per_demo;
  irl["policy_mode"] = policy_mode_name(c.irl.policy_mode);
  irl["best_of_n"] = c.irl.best_of_n;
  irl["best_of_n_draws"] = c.irl.best_of_n_draws;
  irl["pair_selection"] = pair_selection_name(c.irl.pair_selection);
  irl["objective"] = objective_name(c.irl.objective);
  irl["line_search"] = c.irl.line_search;
  irl["beta"] = c.irl.beta;
  irl["warm_start_reward"] = c.irl.warm_start_reward;
  irl["policy_floor"] = c.irl.policy_floor;
  irl["reward"] = irl_reward_name(c.irl_reward);
  j["irl"] = irl;
  return j.dump(2) + "\n";
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  const json j = parse_json(text, "config");
  ExperimentConfig c = default_experiment_config();
  Fields f(j, "config");
  if (const json* spec = f.find("instance")) c.instance = spec_from_json(*spec, f.at("instance"));
  if (const json* methods = f.find("methods")) {
    if (!methods->is_array()) throw Error(f.at("methods") + ": expected a list of method names");
    c.methods.clear();
    for (const auto& m : *methods) c.methods.push_back(as_string(m, f.at("methods")));
  }
  if (const json* seeds = f.find("seeds")) {
    if (!seeds->is_array()) throw Error(f.at("seeds") + ": expected a list of integers");
    c.seeds.clear();
    for (const auto& s : *seeds) c.seeds.push_back(as_unsigned(s, f.at("seeds")));
  }
  f.read("demos", c.demos);
  f.read("full_population_demos", c.full_population_demos);
  f.read("heldout_demos", c.heldout_demos);
  f.read("heldout_prefs", c.heldout_prefs);
  f.read("win_matches", c.win_matches);
  f.read("record_wall_time", c.record_wall_time);

  if (const json* sj = f.find("sft")) {
    Fields s(*sj, f.at("sft"));
    s.read("epochs", c.sft.epochs);
    s.read("learning_rate", c.sft.learning_rate);
    s.read("batch_size", c.sft.batch_size);
    s.read("floor", c.sft.floor);
    s.finish();
  }
  if (const json* sj = f.find("spin")) {
    Fields s(*sj, f.at("spin"));
    s.read("iterations", c.spin.iterations);
    s.read("dpo_beta", c.spin.dpo_beta);
    s.read("inner_steps", c.spin.inner_steps);
    s.read("learning_rate", c.spin.learning_rate);
    s.read("generations_per_demo", c.spin.generations_per_demo);
    s.read("fixed_reference", c.spin.fixed_reference);
    s.read("floor", c.spin.floor);
    s.finish();
  }
  if (const json* ij = f.find("irl")) {
    Fields s(*ij, f.at("irl"));
    s.read("iterations", c.irl.iterations);
    s.read("reward_steps_per_iter", c.irl.reward_steps_per_iter);
    s.read("reward_learning_rate", c.irl.reward_learning_rate);
    s.read("reward_batch_size", c.irl.reward_batch_size);
    s.read("generations_per_demo", c.irl.generations_per_demo);
    s.read_enum("policy_mode", c.irl.policy_mode, {{"exact", PolicyMode::exact}, {"best_of_n", PolicyMode::best_of_n}});
    s.read("best_of_n", c.irl.best_of_n);
    s.read("best_of_n_draws", c.irl.best_of_n_draws);
    s.read_enum("pair_selection", c.irl.pair_selection,
                {{"all", PairSelection::all}, {"max_min", PairSelection::max_min}});
    s.read_enum("objective", c.irl.objective, {{"btl", RewardObjective::btl}, {"likelihood", RewardObjective::likelihood}});
    s.read("line_search", c.irl.line_search);
    s.read("beta", c.irl.beta);
    s.read("warm_start_reward", c.irl.warm_start_reward);
    s.read("policy_floor", c.irl.policy_floor);
    s.read_enum("reward", c.irl_reward, {{"tabular", IrlRewardKind::tabular}, {"linear", IrlRewardKind::linear}});
    s.finish();
  }
  f.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return parse_experiment_config(text);
  } catch (const UsageError& e) {
    throw UsageError(with_path(path, e));
  } catch (const Error& e) {
    throw Error(with_path(path, e));
  }
}

// ---- metrics ------------------------------------------------------------------------

bool MetricsRow::all_finite() const {
  for (double v : {surrogate, exact_likelihood, kl_to_expert, reward_accuracy, gt_score, win_rate_vs_ref,
                   heldout_demo_loglik, wall_time_s}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.method + ',' + std::to_string(r.iteration) + ',' + std::to_string(r.seed);
    for (double v : {r.surrogate, r.exact_likelihood, r.kl_to_expert, r.reward_accuracy, r.gt_score,
                     r.win_rate_vs_ref, r.heldout_demo_loglik, r.wall_time_s}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricsRow>& rows) {
  write_file(path, format_metrics_csv(rows));
}

// ---- experiment driver -----------------------------------------------------------------

EvalSets make_eval_sets(const Instance& instance, const ExperimentConfig& config, std::uint64_t seed) {
  return {sample_demonstrations(instance, config.heldout_demos, derive_seed(seed, 2)),
          make_heldout_preferences(instance, config.heldout_prefs, derive_seed(seed, 3))};
}

namespace {

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    if (!enabled_) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

// E_{x~mu, y~pi_E}[log pi(y|x)].
double expert_loglik(const SequencePolicy& policy, const Instance& instance) {
  const Support& s = instance.support;
  double total = 0.0;
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    double acc = 0.0;
    for (std::size_t c = 0; c < s.completion_count(); ++c) acc += instance.pi_expert.prob(p, c) * policy.logprob(p, c);
    total += s.prompts().weight(p) * acc;
  }
  return total;
}

MetricsRow score(const std::string& method, int iteration, std::uint64_t seed, const SequencePolicy& policy,
                 double surrogate, double accuracy, double wall, const Instance& instance, const EvalSets& eval,
                 const ExperimentConfig& config) {
  MetricsRow row;
  row.method = method;
  row.iteration = iteration;
  row.seed = seed;
  row.surrogate = surrogate;
  row.exact_likelihood = expert_loglik(policy, instance);
  row.kl_to_expert = kl_to_expert(policy, instance);
  row.reward_accuracy = accuracy;
  row.gt_score = ground_truth_score_exact(policy, instance.r_star);
  row.win_rate_vs_ref = win_rate(policy, instance.pi_ref, instance.r_star, config.win_matches, derive_seed(seed, 5));
  row.heldout_demo_loglik = heldout_loglik(policy, eval.heldout_demos);
  row.wall_time_s = wall;
  return row;
}

RewardModel initial_reward(const Instance& instance, const ExperimentConfig& config) {
  if (config.irl_reward == IrlRewardKind::linear) {
    std::vector<double> zeros(instance.r_star.param_count(), 0.0);
    return instance.r_star.with_params(std::move(zeros));
  }
  return RewardModel::tabular(instance.support, instance.reward_bound);
}

}  // namespace

MethodOutcome run_method(const std::string& method, const Instance& instance, const DemonstrationDataset& train,
                         const EvalSets& eval, const ExperimentConfig& config, std::uint64_t seed) {
  if (!is_known_method(method)) throw UsageError("unknown method \"" + method + "\" (expected sft, spin or irl)");
  MethodOutcome out{{}, instance.pi_ref, std::nullopt, false, {}};
  const Stopwatch clock(config.record_wall_time);
  auto push = [&](MetricsRow row) {
    if (out.non_finite) return;
    if (!row.all_finite()) {
      out.non_finite = true;
      out.error = method + " iteration " + std::to_string(row.iteration) + " produced a non-finite metric";
    }
    out.rows.push_back(std::move(row));
  };

  if (method == "sft") {
    SftConfig cfg = config.sft;
    cfg.seed = derive_seed(seed, 4);
    SftResult result = sft_train(instance.pi_ref, train, cfg);
    const double accuracy =
        reward_accuracy(implicit_reward(result.policy, instance.pi_ref, instance.beta), eval.heldout_prefs);
    push(score(method, 1, seed, result.policy, -sft_loss(result.policy, train), accuracy, clock.seconds(), instance,
               eval, config));
    if (result.aborted && !out.non_finite) {
      out.non_finite = true;
      out.error = "sft diverged";
    }
    out.policy = std::move(result.policy);
  } else if (method == "spin") {
    SpinConfig cfg = config.spin;
    cfg.seed = derive_seed(seed, 6);
    SpinDiagnostics diag;
    diag.on_iteration = [&](int it, const SequencePolicy& policy) {
      const double accuracy =
          reward_accuracy(implicit_reward(policy, instance.pi_ref, cfg.dpo_beta), eval.heldout_prefs);
      push(score(method, it + 1, seed, policy, -sft_loss(policy, train), accuracy, clock.seconds(), instance, eval,
                 config));
    };
    SpinResult result = spin_train(instance.pi_ref, train, cfg, diag);
    out.policy = std::move(result.policy);
  } else {
    IrlConfig cfg = config.irl;
    cfg.seed = derive_seed(seed, 7);
    IrlDiagnostics diag;
    diag.on_iteration = [&](int it, const RewardModel& reward, const SequencePolicy& policy) {
      push(score(method, it + 1, seed, policy, single_level_surrogate(reward, train, instance.pi_ref, cfg.beta),
                 reward_accuracy(reward, eval.heldout_prefs), clock.seconds(), instance, eval, config));
    };
    IrlResult result = irl_align(train, instance.pi_ref, initial_reward(instance, config), cfg, diag);
    if (result.aborted && !out.non_finite) {
      out.non_finite = true;
      out.error = "irl aborted: " + result.abort_reason;
    }
    out.policy = std::move(result.policy);
    out.reward = std::move(result.reward);
  }
  return out;
}

MetricsRow evaluate_policy(const Instance& instance, const SequencePolicy& policy, const RewardModel& reward,
                           const EvalSets& eval, const ExperimentConfig& config, std::uint64_t seed) {
  if (!(policy.support() == instance.support) || !(reward.support() == instance.support)) {
    throw Error("policy and reward must live on the instance support");
  }
  return score("eval", 0, seed, policy, single_level_surrogate(reward, eval.heldout_demos, instance.pi_ref, instance.beta),
               reward_accuracy(reward, eval.heldout_prefs), 0.0, instance, eval, config);
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const Instance instance = make_instance(config.instance);
  ExperimentResult result;
  for (std::uint64_t seed : config.seeds) {
    const DemonstrationDataset train = config.full_population_demos
                                           ? DemonstrationDataset::full_population(instance.pi_expert)
                                           : sample_demonstrations(instance, config.demos, derive_seed(seed, 1));
    const EvalSets eval = make_eval_sets(instance, config, seed);
    for (const auto& method : config.methods) {
      MethodOutcome outcome = run_method(method, instance, train, eval, config, seed);
      result.rows.insert(result.rows.end(), outcome.rows.begin(), outcome.rows.end());
      if (outcome.non_finite) {
        result.exit_code = 2;
        result.summary = summarize(result.rows) + "error: " + outcome.error + "\n";
        return result;
      }
    }
  }
  result.summary = summarize(result.rows);
  return result;
}

std::string summarize(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << "final iteration per (method, seed)\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %6s %20s %10s %10s %10s %10s %12s\n", "method", "iter", "seed", "kl_exp",
                "rew_acc", "gt_score", "win_ref", "heldout_ll");
  out << line;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const bool last = i + 1 == rows.size() || rows[i + 1].method != r.method || rows[i + 1].seed != r.seed;
    if (!last) continue;
    std::snprintf(line, sizeof line, "%-6s %6d %20llu %10.4f %10.4f %10.4f %10.4f %12.4f\n", r.method.c_str(),
                  r.iteration, static_cast<unsigned long long>(r.seed), r.kl_to_expert, r.reward_accuracy, r.gt_score,
                  r.win_rate_vs_ref, r.heldout_demo_loglik);
    out << line;
  }
  return out.str();
}

}  // namespace mlirl
