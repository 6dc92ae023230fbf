#include "bemem/config.hpp"

#include "bemem/digest.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace bemem {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config: bad value for " + key + ": '" + v + "'");
  return out;
}

std::vector<int> parse_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Entry {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define BEMEM_INT(path)                                                                          \
  Entry {                                                                                        \
    [](RunConfig& c, const std::string& v) { c.path = parse_number<int>(#path, v); },            \
        [](const RunConfig& c) { return std::to_string(c.path); }                                \
  }
#define BEMEM_REAL(path)                                                                         \
  Entry {                                                                                        \
    [](RunConfig& c, const std::string& v) { c.path = parse_number<double>(#path, v); },         \
        [](const RunConfig& c) { return fmt(c.path); }                                           \
  }
#define BEMEM_LIST(path)                                                                         \
  Entry {                                                                                        \
    [](RunConfig& c, const std::string& v) { c.path = parse_list(#path, v); },                   \
        [](const RunConfig& c) { return fmt(c.path); }                                           \
  }

const std::map<std::string, Entry>& entries() {
  static const std::map<std::string, Entry> e = {
      {"seed", Entry{[](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
                     [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"corpus.global_families", BEMEM_INT(corpus.global_families)},
      {"corpus.local_families", BEMEM_INT(corpus.local_families)},
      {"corpus.nonmem_items", BEMEM_INT(corpus.nonmem_items)},
      {"corpus.duplication", BEMEM_INT(corpus.duplication)},
      {"corpus.slot_a_words", BEMEM_INT(corpus.slot_a_words)},
      {"corpus.slot_b_words", BEMEM_INT(corpus.slot_b_words)},
      {"corpus.held_out_colors", BEMEM_INT(corpus.held_out_colors)},
      {"corpus.texture", BEMEM_REAL(corpus.render.texture_amplitude)},
      {"corpus.region",
       Entry{[](RunConfig& c, const std::string& v) {
               const auto r = parse_list("corpus.region", v);
               if (r.size() != 4) throw ConfigError("config: corpus.region needs row0,row1,col0,col1");
               c.corpus.render.region = {r[0], r[1], r[2], r[3]};
             },
             [](const RunConfig& c) {
               const auto& r = c.corpus.render.region;
               return fmt(std::vector<int>{r.row0, r.row1, r.col0, r.col1});
             }}},
      {"train.steps", BEMEM_INT(train.steps)},
      {"train.batch", BEMEM_INT(train.batch)},
      {"train.lr", BEMEM_REAL(train.lr)},
      {"train.min_lr_fraction", BEMEM_REAL(train.min_lr_fraction)},
      {"train.warmup", BEMEM_INT(train.warmup)},
      {"train.drop_prob", BEMEM_REAL(train.drop_prob)},
      {"train.checkpoint_every", BEMEM_INT(train.checkpoint_every)},
      {"schedule.steps", BEMEM_INT(schedule.steps)},
      {"schedule.beta_start", BEMEM_REAL(schedule.beta_start)},
      {"schedule.beta_end", BEMEM_REAL(schedule.beta_end)},
      {"eval.generations", BEMEM_INT(eval.generations)},
      {"eval.nonmem_prompts", BEMEM_INT(eval.nonmem_prompts)},
      {"eval.guidance", BEMEM_REAL(eval.guidance)},
      {"eval.sampler_steps", BEMEM_INT(eval.sampler_steps)},
      {"eval.budgets", BEMEM_LIST(eval.budgets)},
      {"eval.be_layers", BEMEM_LIST(eval.be_layers)},
      {"mitigate.levels", BEMEM_INT(mitigate.levels)},
      {"mitigate.max_iters", BEMEM_INT(mitigate.max_iters)},
      {"mitigate.lr", BEMEM_REAL(mitigate.lr)},
      {"mitigate.noise_samples", BEMEM_INT(mitigate.noise_samples)},
      {"mitigate.prompts_per_stratum", BEMEM_INT(mitigate.prompts_per_stratum)},
      {"mitigate.generations", BEMEM_INT(mitigate.generations)},
  };
  return e;
}

#undef BEMEM_INT
#undef BEMEM_REAL
#undef BEMEM_LIST

}  // namespace

void RunConfig::validate() const {
  try {
    corpus.validate();
  } catch (const CorpusError& e) {
    throw ConfigError(e.what());
  }
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("config: ") + what);
  };
  need(train.steps >= 0, "train.steps must be >= 0");
  need(train.batch >= 1, "train.batch must be >= 1");
  need(train.lr > 0.0, "train.lr must be > 0");
  need(train.min_lr_fraction >= 0.0 && train.min_lr_fraction <= 1.0, "train.min_lr_fraction must be in [0, 1]");
  need(train.warmup >= 0, "train.warmup must be >= 0");
  need(train.drop_prob >= 0.0 && train.drop_prob < 1.0, "train.drop_prob must be in [0, 1)");
  need(train.checkpoint_every >= 0, "train.checkpoint_every must be >= 0");
  need(schedule.steps >= 1, "schedule.steps must be >= 1");
  need(schedule.beta_start > 0.0 && schedule.beta_start <= schedule.beta_end && schedule.beta_end < 1.0,
       "need 0 < schedule.beta_start <= schedule.beta_end < 1");
  need(eval.generations >= 1, "eval.generations must be >= 1");
  need(eval.nonmem_prompts >= 0, "eval.nonmem_prompts must be >= 0");
  need(eval.guidance >= 0.0, "eval.guidance must be >= 0");
  need(eval.sampler_steps >= 1 && eval.sampler_steps <= schedule.steps, "eval.sampler_steps must be in [1, T]");
  for (int b : eval.budgets) need(b >= 0 && b <= eval.sampler_steps, "eval.budgets entries must be in [0, sampler steps]");
  for (int l : eval.be_layers) need(l >= 0 && l < 2, "eval.be_layers entries must be 0 or 1");
  need(mitigate.levels >= 1, "mitigate.levels must be >= 1");
  need(mitigate.max_iters >= 0, "mitigate.max_iters must be >= 0");
  need(mitigate.lr > 0.0, "mitigate.lr must be > 0");
  need(mitigate.noise_samples >= 1, "mitigate.noise_samples must be >= 1");
  need(mitigate.prompts_per_stratum >= 0, "mitigate.prompts_per_stratum must be >= 0");
  need(mitigate.generations >= 1, "mitigate.generations must be >= 1");
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key=value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = entries().find(key);
    if (it == entries().end()) throw ConfigError("config line " + std::to_string(n) + ": unknown key '" + key + "'");
    if (seen.count(key)) throw ConfigError("config line " + std::to_string(n) + ": duplicate key '" + key + "'");
    seen[key] = n;
    it->second.set(c, value);
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_config(const RunConfig& c) {
  std::string s;
  for (const auto& [k, e] : entries()) s += k + "=" + e.get(c) + "\n";
  return s;
}

std::string config_hash(const RunConfig& c) { return sha256_hex(canonical_config(c)); }

}  // namespace bemem
