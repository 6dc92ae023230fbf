#pragma once

// The six pipeline stages and the per-generation scoring they share.

#include "bemem/config.hpp"
#include "bemem/manifest.hpp"
#include "bemem/mitigate.hpp"
#include "bemem/store.hpp"

#include <iosfwd>
#include <optional>

namespace bemem {

struct PipelineOptions {
  std::optional<Stratum> stratum;  // restricts processed prompts and emitted rows
  std::ostream* log = nullptr;
};

namespace paths {
inline constexpr const char* kCorpus = "corpus/corpus.json";
inline constexpr const char* kImages = "corpus/images.bin";
inline constexpr const char* kCheckpoint = "train/model.ckpt";
inline constexpr const char* kLoss = "train/loss.tsv";
inline constexpr const char* kTrajectories = "generate/trajectories.bin";
inline constexpr const char* kGenerations = "generate/generations.tsv";
inline constexpr const char* kScores = "detect/scores.tsv";
inline constexpr const char* kMetrics = "detect/metrics.tsv";
inline constexpr const char* kRoc = "detect/roc.tsv";
inline constexpr const char* kSweep = "mitigate/sweep.tsv";
inline constexpr const char* kFrontier = "report/frontier.tsv";
}  // namespace paths

NoiseSchedule schedule_of(const RunConfig& cfg);

/// Warmup then cosine decay, as a multiplier of the base rate.
double lr_multiplier(const TrainConfig& t, int step);

/// Indices into corpus.prompts that an evaluation covers.
std::vector<int> evaluation_prompts(const Corpus& corpus, const RunConfig& cfg,
                                    const std::optional<Stratum>& filter = std::nullopt);

std::uint64_t generation_seed(std::uint64_t master, int prompt, int generation);

/// Everything detection, mitigation and reporting need from one generation.
struct GenerationScore {
  int prompt = 0;
  int generation = 0;
  Stratum stratum = Stratum::NonMem;
  BEMask mask;
  double be = 0.0;
  double be_max = 0.0;
  bool mask_floored = false;
  std::vector<double> baseline;  // one per budget
  std::vector<double> masked;
  int reference = -1;  // training item with the highest sscd_sub
  double sscd = 0.0;
  double s = 0.0;
  double ls = 0.0;
  double utility = 0.0;
  double template_rmse = 0.0;   // inside the template region, vs the reference
  double variable_rmse = 0.0;   // outside it, minimum over all references
  double localization_auc = -1.0;  // per-patch mask vs gt_mask, LOCAL_MEM only
};

std::vector<GenerationScore> score_generations(const Corpus& corpus, const RunConfig& cfg,
                                               const std::vector<StoredGeneration>& gens);

std::string budget_label(int budget);

void cmd_forge(const RunConfig& cfg, const std::filesystem::path& run, const PipelineOptions& opt);
void cmd_train(const RunConfig& cfg, const std::filesystem::path& run, const PipelineOptions& opt);
void cmd_generate(const RunConfig& cfg, const std::filesystem::path& run, const PipelineOptions& opt);
void cmd_detect(const RunConfig& cfg, const std::filesystem::path& run, const PipelineOptions& opt);
void cmd_mitigate(const RunConfig& cfg, const std::filesystem::path& run, const PipelineOptions& opt);
void cmd_report(const RunConfig& cfg, const std::filesystem::path& run, const PipelineOptions& opt);

/// Every stage in order, skipping those a matching, intact manifest already records.
void cmd_run(const RunConfig& cfg, const std::filesystem::path& run, const PipelineOptions& opt);

/// Rows of a tab-separated table with a header line, as column -> value maps.
std::vector<std::map<std::string, std::string>> read_table(const std::filesystem::path& path);

}  // namespace bemem
