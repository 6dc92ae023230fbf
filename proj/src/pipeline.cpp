#include "bemem/pipeline.hpp"

#include "bemem/similarity.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>

namespace bemem {

namespace fs = std::filesystem;

namespace {

std::ostream& log_of(const PipelineOptions& opt) { return opt.log ? *opt.log : std::clog; }

void ensure_dir(const fs::path& run, const std::string& sub) { fs::create_directories(run / sub); }

// Shortest text that parses back to the same double.
std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

class Table {
 public:
  Table(const fs::path& path, const std::vector<std::string>& header) : f_(path) {
    if (!f_) throw std::runtime_error("cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) f_ << (i ? "\t" : "") << cells[i];
    f_ << "\n";
  }
  void close() {
    f_.close();
    if (f_.fail()) throw std::runtime_error("failed writing table");
  }

 private:
  std::ofstream f_;
};

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median(const std::vector<double>& v) { return quantile(v, 0.5); }

Corpus load_run_corpus(const fs::path& run) { return load_corpus(run / paths::kCorpus, run / paths::kImages); }

bool keep(const PipelineOptions& opt, Stratum s) { return !opt.stratum || *opt.stratum == s; }

const std::vector<Stratum>& all_strata() {
  static const std::vector<Stratum> s = {Stratum::GlobalMem, Stratum::LocalMem, Stratum::NonMem};
  return s;
}

double rmse_over(const Image& a, const Image& b, const PixelMask& region, bool inside) {
  double acc = 0.0;
  int n = 0;
  for (Index i = 0; i < a.rows(); ++i) {
    if ((region[i] != 0) != inside) continue;
    for (Index c = 0; c < a.cols(); ++c) {
      const double d = static_cast<double>(a(i, c)) - static_cast<double>(b(i, c));
      acc += d * d;
    }
    n += static_cast<int>(a.cols());
  }
  return n ? std::sqrt(acc / n) : 0.0;
}

// Masked first-step magnitude threshold at <= 1% false positives on NON_MEM.
double trigger_threshold(const std::vector<double>& nonmem) {
  if (nonmem.empty()) return std::numeric_limits<double>::infinity();
  auto v = nonmem;
  std::sort(v.begin(), v.end());
  const auto allowed = static_cast<std::size_t>(std::floor(0.01 * static_cast<double>(v.size())));
  return v[v.size() - 1 - allowed];
}

}  // namespace

NoiseSchedule schedule_of(const RunConfig& cfg) {
  return make_schedule(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);
}

double lr_multiplier(const TrainConfig& t, int step) {
  if (t.warmup > 0 && step < t.warmup) return static_cast<double>(step + 1) / t.warmup;
  const int span = std::max(1, t.steps - t.warmup);
  const double progress = std::clamp(static_cast<double>(step - t.warmup) / span, 0.0, 1.0);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return t.min_lr_fraction + (1.0 - t.min_lr_fraction) * cosine;
}

std::vector<int> evaluation_prompts(const Corpus& corpus, const RunConfig& cfg, const std::optional<Stratum>& filter) {
  std::vector<int> out;
  int nonmem = 0;
  for (std::size_t i = 0; i < corpus.prompts.size(); ++i) {
    const auto s = corpus.prompts[i].stratum;
    if (s == Stratum::NonMem && nonmem++ >= cfg.eval.nonmem_prompts) continue;
    if (filter && *filter != s) continue;
    out.push_back(static_cast<int>(i));
  }
  return out;
}

std::uint64_t generation_seed(std::uint64_t master, int prompt, int generation) {
  return derive_seed(derive_seed(master, "generate", static_cast<std::uint64_t>(prompt)), "generation",
                     static_cast<std::uint64_t>(generation));
}

std::string budget_label(int budget) { return budget == 0 ? "all" : std::to_string(budget); }

std::vector<GenerationScore> score_generations(const Corpus& corpus, const RunConfig& cfg,
                                               const std::vector<StoredGeneration>& gens) {
  const Region& region = corpus.spec.render.region;
  const PixelMask tpl = region_mask(region);
  std::vector<GenerationScore> out;
  out.reserve(gens.size());
  for (const auto& g : gens) {
    if (g.prompt < 0 || g.prompt >= static_cast<int>(corpus.prompts.size()))
      throw PrerequisiteError("trajectory store refers to an unknown prompt");
    const auto& p = corpus.prompts[static_cast<std::size_t>(g.prompt)];
    GenerationScore s;
    s.prompt = g.prompt;
    s.generation = g.generation;
    s.stratum = p.stratum;
    s.mask = extract_be_mask(g.traj, cfg.eval.be_layers);
    s.be = be_score(s.mask);
    s.be_max = be_score_max(s.mask);
    for (int b : cfg.eval.budgets) {
      s.baseline.push_back(detection_stat_baseline(g.traj, b).value);
      const auto m = detection_stat_masked(g.traj, b, s.mask);
      s.masked.push_back(m.value);
      s.mask_floored = s.mask_floored || m.floored;
    }
    const Image img = g.traj.image();
    double best = -1.0;
    s.variable_rmse = std::numeric_limits<double>::infinity();
    for (int r : p.references) {
      const Image& ref = corpus.train[static_cast<std::size_t>(r)].image;
      const double v = sscd_sub(img, ref);
      if (v > best) {
        best = v;
        s.reference = r;
      }
      s.variable_rmse = std::min(s.variable_rmse, rmse_over(img, ref, tpl, false));
    }
    if (s.reference >= 0) {
      const Image& ref = corpus.train[static_cast<std::size_t>(s.reference)].image;
      s.sscd = best;
      s.s = s_metric(img, ref);
      s.ls = ls_metric(img, ref, s.mask.pixel_weights);
      s.template_rmse = rmse_over(img, ref, tpl, true);
    }
    s.utility = utility_score(img, p.attribute_id, region);
    if (p.stratum == Stratum::LocalMem) {
      std::vector<double> w;
      std::vector<int> lab;
      for (int q = 0; q < kPatches; ++q) {
        w.push_back(s.mask.patch_weights[q]);
        lab.push_back(p.gt_mask[patch_pixel(q, 0)] != 0 ? 1 : 0);
      }
      s.localization_auc = auc_pairwise(w, lab);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::map<std::string, std::string>> read_table(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw PrerequisiteError("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) cells.push_back(c);
    return cells;
  };
  std::string line;
  if (!std::getline(f, line)) return {};
  const auto header = split(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    std::map<std::string, std::string> r;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) r[header[i]] = cells[i];
    rows.push_back(std::move(r));
  }
  return rows;
}

void cmd_forge(const RunConfig& cfg, const fs::path& run, const PipelineOptions& opt) {
  ensure_dir(run, "corpus");
  CorpusSpec spec = cfg.corpus;
  spec.seed = derive_seed(cfg.seed, "corpus");
  const Corpus c = build_corpus(spec);
  save_corpus(c, run / paths::kCorpus, run / paths::kImages);
  RunManifest m;
  m.config_hash = config_hash(cfg);
  m.config_text = canonical_config(cfg);
  complete_stage(m, run, "forge", {paths::kCorpus, paths::kImages},
                 {{"train_items", std::to_string(c.train.size())}, {"prompts", std::to_string(c.prompts.size())}});
  log_of(opt) << "forge: " << c.train.size() << " training items, " << c.prompts.size() << " prompts\n";
}

void cmd_train(const RunConfig& cfg, const fs::path& run, const PipelineOptions& opt) {
  auto m = require_stages(run, cfg, {"forge"});
  const Corpus c = load_run_corpus(run);
  ensure_dir(run, "train");
  const auto sched = schedule_of(cfg);
  auto params = init_denoiser<float>(c.vocab.size(), cfg.seed);
  AdamConfig ac;
  ac.lr = cfg.train.lr;
  Adam<float> adam(params.set, ac);
  Rng rng(derive_seed(cfg.seed, "train"));
  const auto n = static_cast<std::uint64_t>(c.train.size());
  if (n == 0) throw ConfigError("train: corpus is empty");

  std::vector<std::string> files = {paths::kCheckpoint, paths::kLoss};
  Table loss_log(run / paths::kLoss, {"step", "mean_loss"});
  double window = 0.0;
  int in_window = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int step = 0; step < cfg.train.steps; ++step) {
    std::vector<TrainExample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.train.batch));
    for (int b = 0; b < cfg.train.batch; ++b) {
      const auto& it = c.train[static_cast<std::size_t>(rng.below(n))];
      batch.push_back({&it.image, it.tokens});
    }
    window += train_step(params, adam, batch, sched, cfg.train.drop_prob, rng, lr_multiplier(cfg.train, step));
    ++in_window;
    if ((step + 1) % 100 == 0 || step + 1 == cfg.train.steps) {
      loss_log.row({std::to_string(step + 1), num(window / in_window)});
      if ((step + 1) % 1000 == 0 || step + 1 == cfg.train.steps) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log_of(opt) << "train: step " << step + 1 << "/" << cfg.train.steps << " loss " << num(window / in_window)
                    << " (" << std::lround(secs) << " s)\n";
      }
      window = 0.0;
      in_window = 0;
    }
    if (cfg.train.checkpoint_every > 0 && (step + 1) % cfg.train.checkpoint_every == 0 &&
        step + 1 != cfg.train.steps) {
      const std::string name = "train/model_" + std::to_string(step + 1) + ".ckpt";
      save_checkpoint(params, run / name);
      files.push_back(name);
    }
  }
  save_checkpoint(params, run / paths::kCheckpoint);
  loss_log.close();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  complete_stage(m, run, "train", files, {{"seconds", num(secs)}});
}

void cmd_generate(const RunConfig& cfg, const fs::path& run, const PipelineOptions& opt) {
  auto m = require_stages(run, cfg, {"forge", "train"});
  const Corpus c = load_run_corpus(run);
  const auto params = load_checkpoint(run / paths::kCheckpoint);
  const auto sched = schedule_of(cfg);
  ensure_dir(run, "generate");
  SamplerConfig sc;
  sc.steps = cfg.eval.sampler_steps;
  sc.guidance = cfg.eval.guidance;
  sc.keep_eps = 1;

  const auto prompts = evaluation_prompts(c, cfg, opt.stratum);
  std::vector<StoredGeneration> gens;
  Table index(run / paths::kGenerations, {"prompt", "stratum", "generation", "seed"});
  for (std::size_t k = 0; k < prompts.size(); ++k) {
    const int pi = prompts[k];
    const auto& p = c.prompts[static_cast<std::size_t>(pi)];
    std::vector<std::uint64_t> seeds;
    for (int g = 0; g < cfg.eval.generations; ++g) seeds.push_back(generation_seed(cfg.seed, pi, g));
    auto trajs = sample_batch(params, embed_prompt(params, p.tokens), sched, sc, seeds);
    for (int g = 0; g < cfg.eval.generations; ++g) {
      index.row({std::to_string(pi), stratum_name(p.stratum), std::to_string(g), std::to_string(seeds[static_cast<std::size_t>(g)])});
      gens.push_back({pi, g, std::move(trajs[static_cast<std::size_t>(g)])});
    }
    if ((k + 1) % 10 == 0 || k + 1 == prompts.size())
      log_of(opt) << "generate: " << k + 1 << "/" << prompts.size() << " prompts\n";
  }
  save_trajectories(gens, run / paths::kTrajectories);
  index.close();
  complete_stage(m, run, "generate", {paths::kTrajectories, paths::kGenerations},
                 {{"stratum", opt.stratum ? stratum_name(*opt.stratum) : "all"}});
}

void cmd_detect(const RunConfig& cfg, const fs::path& run, const PipelineOptions& opt) {
  auto m = require_stages(run, cfg, {"forge", "train", "generate"});
  const Corpus c = load_run_corpus(run);
  const auto gens = load_trajectories(run / paths::kTrajectories);
  const auto scores = score_generations(c, cfg, gens);
  ensure_dir(run, "detect");
  ensure_dir(run, "detect/masks");
  std::vector<std::string> files = {paths::kScores, paths::kMetrics, paths::kRoc};

  // thresholds from the NON_MEM stratum
  std::vector<double> nonmem_ls, nonmem_masked, nonmem_base;
  for (const auto& s : scores)
    if (s.stratum == Stratum::NonMem) {
      nonmem_ls.push_back(s.ls);
      nonmem_masked.push_back(s.masked.front());
      nonmem_base.push_back(s.baseline.front());
    }
  const double ls_thr = nonmem_ls.empty() ? -50.0 : quantile(nonmem_ls, 0.05);
  const double trig_masked = trigger_threshold(nonmem_masked);
  const double trig_base = trigger_threshold(nonmem_base);
  m.thresholds["ls_decision"] = ls_thr;
  m.thresholds["trigger_masked"] = trig_masked;
  m.thresholds["trigger_baseline"] = trig_base;
  m.thresholds["sscd"] = kSscdThreshold;

  std::vector<std::string> header = {"prompt", "stratum", "generation", "be_score", "be_max", "mask_floored"};
  for (int b : cfg.eval.budgets) header.push_back("d_baseline_" + budget_label(b));
  for (int b : cfg.eval.budgets) header.push_back("d_masked_" + budget_label(b));
  for (const char* h : {"reference", "sscd_sub", "s", "ls", "ls_flag", "utility", "template_rmse", "variable_rmse",
                        "localization_auc", "triggered"})
    header.push_back(h);
  Table st(run / paths::kScores, header);
  for (const auto& s : scores) {
    if (!keep(opt, s.stratum)) continue;
    std::vector<std::string> row = {std::to_string(s.prompt), stratum_name(s.stratum), std::to_string(s.generation),
                                    num(s.be), num(s.be_max), s.mask_floored ? "1" : "0"};
    for (double v : s.baseline) row.push_back(num(v));
    for (double v : s.masked) row.push_back(num(v));
    row.insert(row.end(), {std::to_string(s.reference), num(s.sscd), num(s.s), num(s.ls), s.ls < ls_thr ? "1" : "0",
                           num(s.utility), num(s.template_rmse), num(s.variable_rmse), num(s.localization_auc),
                           s.masked.front() > trig_masked ? "1" : "0"});
    st.row(row);
    if (s.generation == 0) {
      const std::string stem = "detect/masks/p" + std::to_string(s.prompt);
      export_mask_pgm(s.mask, run / (stem + ".pgm"));
      export_mask_values(s.mask, run / (stem + ".txt"));
      files.push_back(stem + ".pgm");
      files.push_back(stem + ".txt");
    }
  }

  Table mt(run / paths::kMetrics, {"method", "budget", "stratum", "auc", "f1", "tpr_at_1pct_fpr", "f1_at_1pct_fpr",
                                  "positives", "negatives"});
  Table rt(run / paths::kRoc, {"method", "budget", "stratum", "threshold", "fpr", "tpr"});
  auto emit = [&](const std::string& method, const std::string& budget, const std::string& label,
                  const std::function<bool(Stratum)>& positive, const std::function<double(const GenerationScore&)>& f) {
    std::vector<double> sc;
    std::vector<int> lab;
    for (const auto& s : scores) {
      if (s.stratum != Stratum::NonMem && !positive(s.stratum)) continue;
      sc.push_back(f(s));
      lab.push_back(s.stratum == Stratum::NonMem ? 0 : 1);
    }
    if (std::count(lab.begin(), lab.end(), 1) == 0 || std::count(lab.begin(), lab.end(), 0) == 0) return;
    const auto r = roc_metrics(sc, lab);
    mt.row({method, budget, label, num(r.auc), num(r.f1), num(r.tpr_at_1pct_fpr), num(r.f1_at_1pct),
            std::to_string(r.positives), std::to_string(r.negatives)});
    for (const auto& pt : r.curve) rt.row({method, budget, label, num(pt.threshold), num(pt.fpr), num(pt.tpr)});
  };
  struct Group {
    std::string label;
    std::function<bool(Stratum)> positive;
  };
  std::vector<Group> groups;
  for (Stratum s : {Stratum::GlobalMem, Stratum::LocalMem})
    if (keep(opt, s)) groups.push_back({stratum_name(s), [s](Stratum x) { return x == s; }});
  if (!opt.stratum) groups.push_back({"MEMORIZED", [](Stratum x) { return x != Stratum::NonMem; }});
  for (const auto& g : groups) {
    for (std::size_t b = 0; b < cfg.eval.budgets.size(); ++b) {
      const std::string bl = budget_label(cfg.eval.budgets[b]);
      emit("baseline", bl, g.label, g.positive, [b](const GenerationScore& s) { return s.baseline[b]; });
      emit("masked", bl, g.label, g.positive, [b](const GenerationScore& s) { return s.masked[b]; });
    }
    emit("be_score", "final", g.label, g.positive, [](const GenerationScore& s) { return s.be; });
    emit("be_max", "final", g.label, g.positive, [](const GenerationScore& s) { return s.be_max; });
  }
  st.close();
  mt.close();
  rt.close();
  complete_stage(m, run, "detect", files);
  log_of(opt) << "detect: scored " << scores.size() << " generations\n";
}

void cmd_mitigate(const RunConfig& cfg, const fs::path& run, const PipelineOptions& opt) {
  auto m = require_stages(run, cfg, {"forge", "train", "generate", "detect"});
  const Corpus c = load_run_corpus(run);
  const auto params = load_checkpoint(run / paths::kCheckpoint);
  const auto sched = schedule_of(cfg);
  const auto gens = load_trajectories(run / paths::kTrajectories);
  const auto scores = score_generations(c, cfg, gens);
  ensure_dir(run, "mitigate");
  SamplerConfig sc;
  sc.steps = cfg.eval.sampler_steps;
  sc.guidance = cfg.eval.guidance;

  const double trig_masked = m.thresholds.at("trigger_masked");
  const double trig_base = m.thresholds.at("trigger_baseline");
  std::vector<double> nm_m, nm_b, mem_m, mem_b;
  for (const auto& s : scores) {
    auto& dm = s.stratum == Stratum::NonMem ? nm_m : mem_m;
    auto& db = s.stratum == Stratum::NonMem ? nm_b : mem_b;
    dm.push_back(s.masked.front());
    db.push_back(s.baseline.front());
  }
  if (nm_m.empty() || mem_m.empty()) throw PrerequisiteError("mitigate: needs NON_MEM and memorised generations");
  const double lo_m = median(nm_m), hi_m = median(mem_m), lo_b = median(nm_b), hi_b = median(mem_b);
  auto level_target = [&](int level, bool masked) {
    const double frac = cfg.mitigate.levels == 1 ? 0.5 : static_cast<double>(level) / (cfg.mitigate.levels - 1);
    return masked ? lo_m + frac * (hi_m - lo_m) : lo_b + frac * (hi_b - lo_b);
  };
  m.thresholds["mitigate_lo_masked"] = lo_m;
  m.thresholds["mitigate_hi_masked"] = hi_m;
  m.thresholds["mitigate_lo_baseline"] = lo_b;
  m.thresholds["mitigate_hi_baseline"] = hi_b;

  Table sw(run / paths::kSweep, {"method", "level", "target", "utility", "sscd_sub", "s", "ls", "stratum", "prompt",
                                 "generation", "triggered", "iterations", "reached_target", "final_loss"});
  std::map<Stratum, int> taken;
  int done = 0;
  for (const auto& s : scores) {
    if (!keep(opt, s.stratum) || s.generation >= cfg.mitigate.generations) continue;
    const auto& p = c.prompts[static_cast<std::size_t>(s.prompt)];
    if (s.generation == 0 && taken[s.stratum]++ >= cfg.mitigate.prompts_per_stratum) continue;
    if (taken[s.stratum] > cfg.mitigate.prompts_per_stratum) continue;
    const auto& traj = gens[static_cast<std::size_t>(&s - scores.data())].traj;
    const auto e_p = embed_prompt(params, p.tokens);
    MitigationReference ref{&c.train[static_cast<std::size_t>(s.reference)].image, p.attribute_id,
                            c.spec.render.region, s.mask};
    const std::string base_cols[] = {stratum_name(s.stratum), std::to_string(s.prompt), std::to_string(s.generation)};
    sw.row({"none", "-1", "inf", num(s.utility), num(s.sscd), num(s.s), num(s.ls), base_cols[0], base_cols[1],
            base_cols[2], "0", "0", "1", "nan"});
    for (const bool masked : {true, false}) {
      const bool triggered = masked ? s.masked.front() > trig_masked : s.baseline.front() > trig_base;
      for (int level = 0; level < cfg.mitigate.levels; ++level) {
        MitigationConfig mc;
        mc.target = level_target(level, masked);
        mc.max_iters = cfg.mitigate.max_iters;
        mc.lr = cfg.mitigate.lr;
        mc.noise_samples = cfg.mitigate.noise_samples;
        const std::string method = masked ? "masked" : "baseline";
        if (!triggered) {
          sw.row({method, std::to_string(level), num(mc.target), num(s.utility), num(s.sscd), num(s.s), num(s.ls),
                  base_cols[0], base_cols[1], base_cols[2], "0", "0", "0", "nan"});
          continue;
        }
        const std::uint64_t seed = derive_seed(cfg.seed, "mitigate",
                                               static_cast<std::uint64_t>(s.prompt) * 1000 + static_cast<std::uint64_t>(s.generation));
        const auto r = masked ? mitigate_prompt(params, e_p, s.mask, sched, sc, mc, seed, traj.seed, ref)
                              : mitigate_prompt_baseline(params, e_p, sched, sc, mc, seed, traj.seed, ref);
        sw.row({method, std::to_string(level), num(mc.target), num(r.utility), num(r.sscd), num(r.s), num(r.ls),
                base_cols[0], base_cols[1], base_cols[2], "1", std::to_string(r.iterations),
                r.reached_target ? "1" : "0", num(r.loss_trace.back())});
      }
    }
    ++done;
    log_of(opt) << "mitigate: " << done << " generations (" << stratum_name(s.stratum) << " prompt " << s.prompt
                << ")\n";
  }
  sw.close();
  complete_stage(m, run, "mitigate", {paths::kSweep});
}

void cmd_report(const RunConfig& cfg, const fs::path& run, const PipelineOptions& opt) {
  auto m = require_stages(run, cfg, {"forge", "train", "generate", "detect"});
  const Corpus c = load_run_corpus(run);
  const auto scores = score_generations(c, cfg, load_trajectories(run / paths::kTrajectories));
  ensure_dir(run, "report");
  std::vector<std::string> files = {"report/summary.tsv", "report/be_box.tsv", "report/be_patches.tsv",
                                    "report/magnitude_density.tsv", "report/roc_curves.tsv"};

  std::map<Stratum, std::vector<const GenerationScore*>> by;
  for (const auto& s : scores)
    if (keep(opt, s.stratum)) by[s.stratum].push_back(&s);
  auto col = [](const std::vector<const GenerationScore*>& v, auto f) {
    std::vector<double> out;
    for (const auto* s : v) out.push_back(f(*s));
    return out;
  };

  {
    std::vector<std::string> header = {"stratum", "generations", "be_score", "be_max"};
    for (int b : cfg.eval.budgets) header.push_back("d_baseline_" + budget_label(b));
    for (int b : cfg.eval.budgets) header.push_back("d_masked_" + budget_label(b));
    for (const char* h : {"sscd_sub", "frac_sscd_gt_0.9", "s", "ls", "utility", "template_rmse", "variable_rmse",
                          "localization_auc"})
      header.push_back(h);
    Table t(run / "report/summary.tsv", header);
    for (Stratum st : all_strata()) {
      const auto& v = by[st];
      if (v.empty()) continue;
      std::vector<std::string> row = {stratum_name(st), std::to_string(v.size()),
                                      num(median(col(v, [](const auto& s) { return s.be; }))),
                                      num(median(col(v, [](const auto& s) { return s.be_max; })))};
      for (std::size_t b = 0; b < cfg.eval.budgets.size(); ++b)
        row.push_back(num(median(col(v, [b](const auto& s) { return s.baseline[b]; }))));
      for (std::size_t b = 0; b < cfg.eval.budgets.size(); ++b)
        row.push_back(num(median(col(v, [b](const auto& s) { return s.masked[b]; }))));
      const auto sscd = col(v, [](const auto& s) { return s.sscd; });
      row.push_back(num(median(sscd)));
      row.push_back(num(static_cast<double>(std::count_if(sscd.begin(), sscd.end(), [](double x) { return x > 0.9; })) /
                        static_cast<double>(sscd.size())));
      row.push_back(num(median(col(v, [](const auto& s) { return s.s; }))));
      row.push_back(num(median(col(v, [](const auto& s) { return s.ls; }))));
      row.push_back(num(median(col(v, [](const auto& s) { return s.utility; }))));
      row.push_back(num(median(col(v, [](const auto& s) { return s.template_rmse; }))));
      row.push_back(num(median(col(v, [](const auto& s) { return s.variable_rmse; }))));
      row.push_back(st == Stratum::LocalMem ? num(median(col(v, [](const auto& s) { return s.localization_auc; })))
                                            : "nan");
      t.row(row);
    }
  }
  {
    Table t(run / "report/be_box.tsv", {"stratum", "min", "q1", "median", "q3", "max", "mean"});
    for (Stratum st : all_strata()) {
      const auto v = col(by[st], [](const auto& s) { return s.be; });
      if (v.empty()) continue;
      double mean = 0.0;
      for (double x : v) mean += x;
      t.row({stratum_name(st), num(quantile(v, 0)), num(quantile(v, 0.25)), num(quantile(v, 0.5)),
             num(quantile(v, 0.75)), num(quantile(v, 1)), num(mean / static_cast<double>(v.size()))});
    }
  }
  {
    Table t(run / "report/be_patches.tsv", {"stratum", "in_gt_mask", "q1", "median", "q3", "count"});
    for (Stratum st : all_strata()) {
      for (int in : {1, 0}) {
        std::vector<double> v;
        for (const auto* s : by[st]) {
          const auto& gt = c.prompts[static_cast<std::size_t>(s->prompt)].gt_mask;
          for (int q = 0; q < kPatches; ++q)
            if ((gt[patch_pixel(q, 0)] != 0) == (in == 1)) v.push_back(s->mask.patch_weights[q]);
        }
        if (v.empty()) continue;
        t.row({stratum_name(st), std::to_string(in), num(quantile(v, 0.25)), num(quantile(v, 0.5)),
               num(quantile(v, 0.75)), std::to_string(v.size())});
      }
    }
  }
  {
    Table t(run / "report/magnitude_density.tsv", {"method", "budget", "stratum", "bin_lo", "bin_hi", "density"});
    constexpr int kBins = 30;
    for (const bool masked : {false, true})
      for (std::size_t b = 0; b < cfg.eval.budgets.size(); ++b) {
        auto get = [&](const GenerationScore& s) { return masked ? s.masked[b] : s.baseline[b]; };
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& [st, v] : by)
          for (const auto* s : v) {
            lo = std::min(lo, get(*s));
            hi = std::max(hi, get(*s));
          }
        if (!(hi > lo)) continue;
        const double w = (hi - lo) / kBins;
        for (Stratum st : all_strata()) {
          const auto& v = by[st];
          if (v.empty()) continue;
          std::vector<int> h(kBins, 0);
          for (const auto* s : v) h[static_cast<std::size_t>(std::min(kBins - 1, static_cast<int>((get(*s) - lo) / w)))]++;
          for (int i = 0; i < kBins; ++i)
            t.row({masked ? "masked" : "baseline", budget_label(cfg.eval.budgets[b]), stratum_name(st),
                   num(lo + i * w), num(lo + (i + 1) * w),
                   num(h[static_cast<std::size_t>(i)] / (static_cast<double>(v.size()) * w))});
        }
      }
  }
  fs::copy_file(run / paths::kRoc, run / "report/roc_curves.tsv", fs::copy_options::overwrite_existing);

  if (m.stages.count("mitigate")) {
    const auto rows = read_table(run / paths::kSweep);
    std::map<std::tuple<std::string, std::string, int>, std::vector<const std::map<std::string, std::string>*>> groups;
    for (const auto& r : rows) groups[{r.at("method"), r.at("stratum"), std::stoi(r.at("level"))}].push_back(&r);
    Table t(run / paths::kFrontier, {"method", "stratum", "level", "target", "generations", "utility_median",
                                     "abs_ls_q1", "abs_ls_median", "abs_ls_q3", "sscd_median", "abs_s_median"});
    for (const auto& [key, v] : groups) {
      const auto& [method, stratum, level] = key;
      std::vector<double> u, ls, sscd, s;
      for (const auto* r : v) {
        u.push_back(std::stod(r->at("utility")));
        ls.push_back(std::abs(std::stod(r->at("ls"))));
        sscd.push_back(std::stod(r->at("sscd_sub")));
        s.push_back(std::abs(std::stod(r->at("s"))));
      }
      t.row({method, stratum, std::to_string(level), v.front()->at("target"), std::to_string(v.size()), num(median(u)),
             num(quantile(ls, 0.25)), num(median(ls)), num(quantile(ls, 0.75)), num(median(sscd)), num(median(s))});
    }
    files.push_back(paths::kFrontier);
  }
  complete_stage(m, run, "report", files);
  log_of(opt) << "report: wrote " << files.size() << " tables\n";
}

void cmd_run(const RunConfig& cfg, const fs::path& run, const PipelineOptions& opt) {
  using Stage = void (*)(const RunConfig&, const fs::path&, const PipelineOptions&);
  const std::vector<std::pair<std::string, Stage>> stages = {{"forge", cmd_forge},       {"train", cmd_train},
                                                             {"generate", cmd_generate}, {"detect", cmd_detect},
                                                             {"mitigate", cmd_mitigate}, {"report", cmd_report}};
  std::size_t done = 0;
  if (fs::exists(RunManifest::path_in(run))) {
    const auto m = RunManifest::load(run);
    if (m.config_hash == config_hash(cfg) && verify_manifest(m, run).empty())
      while (done < stages.size() && m.stages.count(stages[done].first)) ++done;
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i < done) {
      log_of(opt) << "run: " << stages[i].first << " already complete\n";
      continue;
    }
    stages[i].second(cfg, run, opt);
  }
}

}  // namespace bemem
