#include "anchorlab/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "anchorlab/errors.hpp"
#include "anchorlab/io.hpp"

namespace anchorlab {

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    const double d = parse_double(v);
    if (!std::isfinite(d)) throw ConfigError("");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_seed(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

int to_positive(const std::string& key, const std::string& v) {
  const long long n = to_int(key, v);
  if (n < 1 || n > 100000000) throw ConfigError(key + ": must be a positive integer");
  return static_cast<int>(n);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> list(const std::string& v) {
  std::vector<std::string> out;
  for (const auto& item : split(v, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace

Schedule RunConfig::make_schedule() const { return anchorlab::make_schedule(total_steps, schedule); }

void RunConfig::validate() const {
  world.validate();
  if (total_steps < 2) throw ConfigError("schedule.T must be at least 2");
  objective.validate();
  if (pretrain.steps < 1 || pretrain.batch == 0 || !(pretrain.lr > 0.0)) throw ConfigError("invalid pretrain section");
  if (personalize.steps < 0 || personalize.batch == 0 || !(personalize.lr > 0.0) || personalize.probe_every < 1) {
    throw ConfigError("invalid personalize section");
  }
  if (adaptation.rank < 1) throw ConfigError("personalize.rank must be positive");
  if (!(tau_frac >= 0.0 && tau_frac <= 1.0)) throw ConfigError("personalize.tau must lie in [0, 1]");
  if (prior_size == 0) throw ConfigError("personalize.ppl_m must be positive");
  for (int c : eval.contexts) {
    if (c < -1 || c >= world.num_contexts) throw ConfigError("eval.contexts names a context outside the world");
  }
  if (eval.n_per_context == 0) throw ConfigError("eval.n_per_context must be positive");
  if (seeds.empty()) throw ConfigError("eval.seeds must list at least one seed");
  if (sweep_grid.empty()) throw ConfigError("sweep.grid must not be empty");
  for (double w : sweep_grid) {
    if (!(w >= 0.0)) throw ConfigError("sweep.grid values must be non-negative");
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::optional<double> w;
  std::optional<double> lambda;

  using Setter = std::function<void(const std::string& key, const std::string& v)>;
  const std::map<std::string, Setter> setters{
      {"world.seed", [&](auto& k, auto& v) { c.world.seed = to_seed(k, v); }},
      {"world.d", [&](auto& k, auto& v) { c.world.dim = to_positive(k, v); }},
      {"world.K", [&](auto& k, auto& v) { c.world.num_classes = to_positive(k, v); }},
      {"world.n_contexts", [&](auto& k, auto& v) { c.world.num_contexts = static_cast<int>(to_int(k, v)); }},
      {"world.n_ref", [&](auto& k, auto& v) { c.world.num_references = to_positive(k, v); }},
      {"world.subject_offset", [&](auto& k, auto& v) { c.world.subject_offset = to_double(k, v); }},
      {"world.ref_spread", [&](auto& k, auto& v) { c.world.reference_spread = to_double(k, v); }},
      {"schedule.T", [&](auto& k, auto& v) { c.total_steps = to_positive(k, v); }},
      {"schedule.kind", [&](auto&, auto& v) { c.schedule = parse_schedule_kind(v); }},
      {"run.seed", [&](auto& k, auto& v) { c.run_seed = to_seed(k, v); }},
      {"pretrain.steps", [&](auto& k, auto& v) { c.pretrain.steps = to_positive(k, v); }},
      {"pretrain.batch", [&](auto& k, auto& v) { c.pretrain.batch = static_cast<std::size_t>(to_positive(k, v)); }},
      {"pretrain.lr", [&](auto& k, auto& v) { c.pretrain.lr = to_double(k, v); }},
      {"pretrain.loss_ceiling", [&](auto& k, auto& v) { c.pretrain.loss_ceiling = to_double(k, v); }},
      {"personalize.method", [&](auto&, auto& v) { c.objective.method = parse_method(v); }},
      {"personalize.w", [&](auto& k, auto& v) { w = to_double(k, v); }},
      {"personalize.lambda", [&](auto& k, auto& v) { lambda = to_double(k, v); }},
      {"personalize.steps", [&](auto& k, auto& v) { c.personalize.steps = static_cast<int>(to_int(k, v)); }},
      {"personalize.batch", [&](auto& k, auto& v) { c.personalize.batch = static_cast<std::size_t>(to_positive(k, v)); }},
      {"personalize.lr", [&](auto& k, auto& v) { c.personalize.lr = to_double(k, v); }},
      {"personalize.rank", [&](auto& k, auto& v) { c.adaptation.rank = to_positive(k, v); }},
      {"personalize.scale", [&](auto& k, auto& v) { c.adaptation.scale = to_double(k, v); }},
      {"personalize.full_finetune", [&](auto& k, auto& v) { c.adaptation.full_finetune = to_bool(k, v); }},
      {"personalize.probe_every", [&](auto& k, auto& v) { c.personalize.probe_every = to_positive(k, v); }},
      {"personalize.probe_size", [&](auto& k, auto& v) { c.personalize.probe_size = static_cast<std::size_t>(to_positive(k, v)); }},
      {"personalize.probe_anchor", [&](auto&, auto& v) { c.personalize.probe_anchor = parse_probe_anchor(v); }},
      {"personalize.tau", [&](auto& k, auto& v) { c.tau_frac = to_double(k, v); }},
      {"personalize.ppl_m", [&](auto& k, auto& v) { c.prior_size = static_cast<std::size_t>(to_positive(k, v)); }},
      {"personalize.ppl_weight", [&](auto& k, auto& v) { c.objective.ppl_weight = to_double(k, v); }},
      {"eval.contexts",
       [&](auto& k, auto& v) {
         c.eval.contexts.clear();
         if (v == "all") return;
         for (const auto& item : list(v)) {
           try {
             c.eval.contexts.push_back(parse_context_name(item));
           } catch (const std::exception&) {
             throw ConfigError(k + ": bad context '" + item + "'");
           }
         }
       }},
      {"eval.n_per_context", [&](auto& k, auto& v) { c.eval.n_per_context = static_cast<std::size_t>(to_positive(k, v)); }},
      {"eval.seeds",
       [&](auto& k, auto& v) {
         c.seeds.clear();
         for (const auto& item : list(v)) c.seeds.push_back(to_seed(k, item));
       }},
      {"eval.sampler",
       [&](auto& k, auto& v) {
         if (v == "ddpm") {
           c.eval.sampler.kind = SamplerKind::ddpm;
         } else if (v == "ddim") {
           c.eval.sampler.kind = SamplerKind::ddim;
           if (c.eval.sampler.ddim_steps < 1) c.eval.sampler.ddim_steps = 50;
         } else {
           throw ConfigError(k + ": expected ddpm or ddim");
         }
       }},
      {"eval.ddim_steps", [&](auto& k, auto& v) { c.eval.sampler.ddim_steps = to_positive(k, v); }},
      {"sweep.grid",
       [&](auto& k, auto& v) {
         c.sweep_grid.clear();
         for (const auto& item : list(v)) c.sweep_grid.push_back(to_double(k, item));
       }},
  };

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'section.key = value'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (value.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty value for '" + key + "'");
    it->second(key, value);
  }

  if (lambda) {
    if (!(*lambda > 0.0 && *lambda <= 1.0)) throw ConfigError("personalize.lambda must lie in (0, 1]");
    c.objective.lambda = lambda;
    c.objective.w = w ? *w : ObjectiveConfig::weight_from_lambda(*lambda);
  } else if (w) {
    c.objective.w = *w;
  }
  c.pretrain.seed = c.run_seed;
  c.personalize.seed = c.run_seed;
  c.adaptation.seed = c.run_seed;
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::exception&) {
    throw ConfigError("cannot read config file: " + path.string());
  }
  return parse_config(text);
}

}  // namespace anchorlab
