// Acceptance suite: one PASS/FAIL line per criterion. Criteria 5-9 read a
// completed reference run; criterion 11 runs a small pipeline twice.

#include "bemem/detect.hpp"
#include "bemem/digest.hpp"
#include "bemem/pipeline.hpp"
#include "bemem/roc.hpp"
#include "bemem/schedule.hpp"
#include "bemem/similarity.hpp"
#include "support/grad_cases.hpp"
#include "support/loss_grad.hpp"
#include "support/synthetic.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace bemem;

namespace {

// pinned tolerances
constexpr int kGradCases = 126;
constexpr double kGradTol = 1e-3;
constexpr double kGradSeconds = 60.0;
constexpr double kMcTol = 0.03;
constexpr int kMcDraws = 100000;
constexpr double kReductionTol = 1e-9;
constexpr int kReductionTrajectories = 100;
constexpr int kRocSets = 50;
constexpr double kGlobalSscd = 0.9;
constexpr double kGlobalFraction = 0.8;
constexpr double kTemplateRmse = 0.1;
constexpr double kVariableRmse = 0.2;
constexpr double kTrainSeconds = 7200.0;
constexpr double kBeAuroc = 0.85;
constexpr double kLocalizationAuc = 0.8;
constexpr double kLocalGain = 0.01;
constexpr double kGlobalAgreement = 0.02;

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Table = std::vector<std::map<std::string, std::string>>;

double cell(const std::map<std::string, std::string>& r, const std::string& k) { return std::stod(r.at(k)); }

double median_of(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

Verdict autodiff_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_op;
  for (int i = 0; i < kGradCases; ++i) {
    const auto c = testing::run_grad_case(i, 2024);
    if (c.result.max_rel_error > worst) {
      worst = c.result.max_rel_error;
      worst_op = c.op;
    }
  }
  const auto loss = testing::full_loss_grad_check(7);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < kGradTol && loss.max_rel_error < kGradTol && secs < kGradSeconds,
          std::to_string(kGradCases) + " op cases max rel err " + fmt(worst) + " (" + worst_op + "), training loss " +
              fmt(loss.max_rel_error) + " over " + std::to_string(loss.coordinates) + " coords, " + fmt(secs) + " s"};
}

Verdict schedule_oracle() {
  const auto s = make_schedule(4, 0.1, 0.4);
  const double betas[4] = {0.1, 0.2, 0.3, 0.4};
  const double alpha_bars[4] = {0.9, 0.72, 0.504, 0.3024};
  bool exact = true;
  double prod = 1.0;
  for (int t = 1; t <= 4; ++t) {
    prod *= s.alpha(t);
    exact = exact && std::abs(s.beta(t) - betas[t - 1]) < 1e-15 &&
            std::abs(s.alpha_bar(t) - alpha_bars[t - 1]) < 1e-15 && s.alpha_bar(t) == prod;
  }
  const auto ref = make_schedule(100, 1e-3, 0.2);
  Rng rng(11);
  double worst = 0.0;
  for (int t : {1, 10, 50, 100}) {
    const MatrixD x0 = MatrixD::Constant(1, 4, 0.5);
    Eigen::RowVector4d sum = Eigen::RowVector4d::Zero(), sq = Eigen::RowVector4d::Zero();
    for (int i = 0; i < kMcDraws; ++i) {
      const MatrixD xt = q_sample(x0, t, rng.normal_matrix<double>(1, 4), ref);
      sum += xt.row(0);
      sq += xt.row(0).cwiseProduct(xt.row(0));
    }
    const Eigen::RowVector4d mean = sum / kMcDraws;
    const Eigen::RowVector4d var = sq / kMcDraws - mean.cwiseProduct(mean);
    for (int j = 0; j < 4; ++j) worst = std::max(worst, std::abs(var(j) / (1.0 - ref.alpha_bar(t)) - 1.0));
  }
  return {exact && worst < kMcTol,
          std::string("T=4 products ") + (exact ? "exact" : "MISMATCH") + ", MC variance max rel dev " + fmt(worst)};
}

Verdict reduction_identity() {
  Rng rng(99);
  double worst = 0.0;
  for (int i = 0; i < kReductionTrajectories; ++i) {
    const auto traj = testing::random_trajectory(rng, 12, i % 2 ? 12 : 0);
    for (double c : {1.0, 0.3}) {
      const auto mask = BEMask::constant(c);
      for (int b : {1, 5, 0}) {
        const double base = detection_stat_baseline(traj, b).value;
        const double masked = detection_stat_masked(traj, b, mask).value;
        worst = std::max(worst, std::abs(masked - base));
      }
    }
  }
  return {worst <= kReductionTol, std::to_string(kReductionTrajectories) +
                                      " trajectories, masks 1.0 and 0.3, max |masked - baseline| " + fmt(worst)};
}

Verdict roc_oracle() {
  Rng rng(5);
  int auc_bad = 0, tpr_bad = 0, f1_bad = 0;
  for (int k = 0; k < kRocSets; ++k) {
    const int n = 20 + static_cast<int>(rng.below(200));
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> l(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      l[i] = i < 3 || (i > 5 && rng.uniform() < 0.4) ? 1 : 0;
      if (i == 4) l[i] = 0;
      // coarse grid forces ties
      s[i] = std::round((rng.normal() + (l[i] ? 0.8 : 0.0)) * (k % 2 ? 4.0 : 1e6)) / (k % 2 ? 4.0 : 1e6);
    }
    double wins = 0.0, pos = 0.0, neg = 0.0;
    for (int i = 0; i < n; ++i) (l[i] ? pos : neg) += 1.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (l[i] && !l[j]) wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    const auto r = roc_metrics(s, l);
    if (r.auc != wins / (pos * neg)) ++auc_bad;

    std::vector<double> thresholds = s;
    std::sort(thresholds.begin(), thresholds.end());
    double best_tpr = 0.0, best_f1 = 0.0;
    for (double thr : thresholds) {
      double tp = 0, fp = 0;
      for (int i = 0; i < n; ++i)
        if (s[i] >= thr) (l[i] ? tp : fp) += 1.0;
      const double fpr = fp / neg, tpr = tp / pos;
      if (fpr <= 0.01) best_tpr = std::max(best_tpr, tpr);
      best_f1 = std::max(best_f1, 2.0 * tp / (2.0 * tp + fp + (pos - tp)));
    }
    if (std::abs(r.tpr_at_1pct_fpr - best_tpr) > 1e-12) ++tpr_bad;
    if (std::abs(r.f1 - best_f1) > 1e-12) ++f1_bad;
  }
  return {auc_bad == 0 && tpr_bad == 0 && f1_bad == 0,
          std::to_string(kRocSets) + " sets, mismatches auc " + std::to_string(auc_bad) + " T@1%F " +
              std::to_string(tpr_bad) + " F1 " + std::to_string(f1_bad)};
}

Table rows_of(const Table& t, const std::string& stratum) {
  Table out;
  for (const auto& r : t)
    if (r.at("stratum") == stratum) out.push_back(r);
  return out;
}

Verdict memorization(const fs::path& run) {
  const Table scores = read_table(run / paths::kScores);
  const Table g = rows_of(scores, "global"), l = rows_of(scores, "local");
  if (g.empty() || l.empty()) return {false, "reference run has no memorized generations"};
  int g_ok = 0, l_ok = 0;
  for (const auto& r : g) g_ok += cell(r, "sscd_sub") > kGlobalSscd;
  for (const auto& r : l) l_ok += cell(r, "template_rmse") < kTemplateRmse && cell(r, "variable_rmse") > kVariableRmse;
  const double gf = static_cast<double>(g_ok) / g.size(), lf = static_cast<double>(l_ok) / l.size();
  const auto m = RunManifest::load(run);
  const double secs = std::stod(m.stages.at("train").notes.at("seconds"));
  return {gf >= kGlobalFraction && lf >= kGlobalFraction && secs < kTrainSeconds,
          "global sscd>0.9 " + fmt(gf) + ", local template/variable split " + fmt(lf) + ", training " +
              fmt(secs / 60.0) + " min"};
}

Verdict bright_ending(const fs::path& run) {
  const Table metrics = read_table(run / paths::kMetrics);
  double auc = std::nan("");
  for (const auto& r : metrics)
    if (r.at("method") == "be_score" && r.at("stratum") == "MEMORIZED") auc = cell(r, "auc");
  const Table scores = read_table(run / paths::kScores);
  std::map<std::string, std::vector<double>> be;
  for (const auto& r : scores) be[r.at("stratum")].push_back(cell(r, "be_score"));
  const double mg = median_of(be["global"]), ml = median_of(be["local"]), mn = median_of(be["none"]);
  return {auc >= kBeAuroc && mg > ml && ml > mn,
          "AUROC " + fmt(auc) + ", medians global " + fmt(mg) + " local " + fmt(ml) + " nonmem " + fmt(mn)};
}

Verdict localization(const fs::path& run) {
  const Table l = rows_of(read_table(run / paths::kScores), "local");
  if (l.empty()) return {false, "no local generations"};
  double sum = 0.0;
  for (const auto& r : l) sum += cell(r, "localization_auc");
  const double mean = sum / l.size();
  return {mean >= kLocalizationAuc, "mean per-patch AUROC " + fmt(mean) + " over " + std::to_string(l.size())};
}

Verdict gap_closure(const fs::path& run) {
  std::map<std::string, std::map<std::string, double>> auc;  // stratum/budget -> method -> auc
  for (const auto& r : read_table(run / paths::kMetrics))
    if (r.at("method") == "baseline" || r.at("method") == "masked")
      auc[r.at("stratum") + "/" + r.at("budget")][r.at("method")] = cell(r, "auc");
  bool ok = true;
  std::string detail;
  int local_budgets = 0;
  for (const auto& [key, m] : auc) {
    const bool local = key.rfind("local/", 0) == 0, global = key.rfind("global/", 0) == 0;
    if (!local && !global) continue;
    const double gain = m.at("masked") - m.at("baseline");
    if (local) {
      ++local_budgets;
      ok = ok && gain >= 0.0;
      if (key == "local/1") ok = ok && gain >= kLocalGain;
    } else {
      ok = ok && std::abs(gain) <= kGlobalAgreement;
    }
    if (!detail.empty()) detail += "; ";
    detail += key + " " + fmt(m.at("baseline")) + "->" + fmt(m.at("masked"));
  }
  return {ok && local_budgets > 0 && auc.count("local/1"), detail};
}

struct FrontierPoint {
  double utility, ls_q1, ls_median, ls_q3;
};

Verdict mitigation_tradeoff(const fs::path& run) {
  if (!fs::exists(run / paths::kFrontier)) return {false, "reference run has no mitigation frontier"};
  std::map<std::string, std::map<int, FrontierPoint>> f;  // method/stratum -> level -> point
  for (const auto& r : read_table(run / paths::kFrontier))
    f[r.at("method") + "/" + r.at("stratum")][std::stoi(r.at("level"))] = {
        cell(r, "utility_median"), cell(r, "abs_ls_q1"), cell(r, "abs_ls_median"), cell(r, "abs_ls_q3")};

  // baseline |ls| interpolated at each masked utility inside the baseline's range
  std::vector<std::pair<double, double>> base;
  for (const auto& [lvl, p] : f["baseline/local"]) base.push_back({p.utility, p.ls_median});
  for (const auto& [lvl, p] : f["none/local"]) base.push_back({p.utility, p.ls_median});
  std::sort(base.begin(), base.end());
  double margin = 0.0;
  int matched = 0;
  for (const auto& [lvl, p] : f["masked/local"]) {
    if (base.empty() || p.utility < base.front().first || p.utility > base.back().first) continue;
    auto hi = std::lower_bound(base.begin(), base.end(), std::make_pair(p.utility, -1e300));
    double b = hi->second;
    if (hi != base.begin() && hi->first != p.utility) {
      const auto lo = hi - 1;
      b = lo->second + (hi->second - lo->second) * (p.utility - lo->first) / (hi->first - lo->first);
    }
    margin += b - p.ls_median;
    ++matched;
  }
  if (matched) margin /= matched;

  int overlapping = 0, levels = 0;
  for (const auto& [lvl, m] : f["masked/global"]) {
    const auto it = f["baseline/global"].find(lvl);
    if (it == f["baseline/global"].end()) continue;
    ++levels;
    overlapping += m.ls_q1 <= it->second.ls_q3 && it->second.ls_q1 <= m.ls_q3;
  }
  return {matched > 0 && margin > 0.0 && levels > 0 && overlapping == levels,
          "local: " + std::to_string(matched) + " matched-utility points, mean |ls| margin " + fmt(margin) +
              "; global: IQRs overlap at " + std::to_string(overlapping) + "/" + std::to_string(levels) + " levels"};
}

Verdict metric_localization() {
  Rng rng(3);
  Image ref(kPixels, 3);
  for (Index i = 0; i < ref.size(); ++i) ref.data()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  Image gen = ref;
  for (Index i = 0; i < gen.size(); ++i) gen.data()[i] += 0.02f * static_cast<float>(rng.normal());
  const auto mask = BEMask::from_patches(testing::top_half_patches());
  Image adv = gen;
  for (Index p = 0; p < kPixels; ++p)
    if (mask.pixel_weights[p] == 0.0)
      for (Index c = 0; c < 3; ++c) adv(p, c) = std::clamp(adv(p, c) + (c == 0 ? 0.6f : -0.5f), -1.0f, 1.0f);
  const double ls0 = ls_metric(gen, ref, mask.pixel_weights), ls1 = ls_metric(adv, ref, mask.pixel_weights);
  const double s0 = s_metric(gen, ref), s1 = s_metric(adv, ref);
  const bool gated = sscd_sub(adv, ref) > kSscdThreshold && sscd_sub(gen, ref) > kSscdThreshold;
  return {gated && std::memcmp(&ls0, &ls1, sizeof(double)) == 0 && s0 != s1,
          "ls " + fmt(ls0) + " -> " + fmt(ls1) + " (bitwise), s " + fmt(s0) + " -> " + fmt(s1)};
}

std::map<std::string, std::string> run_pipeline(const RunConfig& cfg, const fs::path& dir) {
  fs::remove_all(dir);
  std::ostringstream log;
  PipelineOptions opt;
  opt.log = &log;
  cmd_forge(cfg, dir, opt);
  cmd_train(cfg, dir, opt);
  cmd_generate(cfg, dir, opt);
  cmd_detect(cfg, dir, opt);
  cmd_mitigate(cfg, dir, opt);
  cmd_report(cfg, dir, opt);
  std::map<std::string, std::string> digests;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json")
      digests[fs::relative(e.path(), dir).generic_string()] = sha256_file(e.path());
  return digests;
}

Verdict determinism(const fs::path& config, const fs::path& work) {
  const RunConfig cfg = load_config(config);
  const auto a = run_pipeline(cfg, work / "run_a");
  const auto b = run_pipeline(cfg, work / "run_b");
  int differing = 0;
  for (const auto& [k, v] : a) differing += !b.count(k) || b.at(k) != v;
  return {a.size() == b.size() && differing == 0 && !a.empty(),
          std::to_string(a.size()) + " files, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bemem acceptance suite"};
  fs::path run, det_config, work = fs::temp_directory_path() / "bemem_acceptance";
  std::vector<int> only;
  app.add_option("--run", run, "completed reference run directory")->required();
  app.add_option("--determinism-config", det_config, "config for the twice-run pipeline")->required();
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "criteria to evaluate")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const bool have_run = fs::exists(RunManifest::path_in(run));
  auto with_run = [&](std::function<Verdict(const fs::path&)> f) {
    return [=]() -> Verdict {
      if (!have_run) return {false, "no reference run at " + run.string()};
      return f(run);
    };
  };
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"autodiff oracle", autodiff_oracle},
      {"schedule and kernel oracle", schedule_oracle},
      {"masked detector reduces to baseline", reduction_identity},
      {"roc oracle", roc_oracle},
      {"memorization induction", with_run(memorization)},
      {"bright ending separates memorized", with_run(bright_ending)},
      {"mask localization", with_run(localization)},
      {"detection gap closure", with_run(gap_closure)},
      {"mitigation trade-off", with_run(mitigation_tradeoff)},
      {"ls invariance to unmasked pixels", metric_localization},
      {"determinism", [&] { return determinism(det_config, work); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
