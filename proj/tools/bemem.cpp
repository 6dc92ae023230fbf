// bemem: forge | train | generate | detect | mitigate | report | run

#include "bemem/binary_io.hpp"
#include "bemem/pipeline.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

enum Exit : int { kOk = 0, kConfig = 2, kPrerequisite = 3, kNumerical = 4, kOther = 1 };

}  // namespace

int main(int argc, char** argv) {
  using namespace bemem;
  CLI::App app{"Bright-ending memorisation lab"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir = "run", stratum;
  std::optional<std::uint64_t> seed;

  const std::vector<std::pair<std::string, std::string>> verbs = {
      {"forge", "build the corpus"},
      {"train", "train the denoiser"},
      {"generate", "sample every evaluation prompt"},
      {"detect", "masks, detection statistics, similarity and ROC tables"},
      {"mitigate", "prompt-embedding mitigation sweep"},
      {"report", "consolidated tables and plot data"},
      {"run", "every stage in order, resuming a matching run"}};
  for (const auto& [name, help] : verbs) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "flat key=value config file");
    sub->add_option("--out", out_dir, "run directory")->capture_default_str();
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--stratum", stratum, "GLOBAL_MEM, LOCAL_MEM, NON_MEM or all");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    PipelineOptions opt;
    opt.log = &std::cerr;
    if (!stratum.empty() && stratum != "all") {
      opt.stratum = parse_stratum(stratum);
      if (!opt.stratum) throw ConfigError("unknown stratum '" + stratum + "'");
    }
    std::filesystem::create_directories(out_dir);
    if (verb == "forge") cmd_forge(cfg, out_dir, opt);
    else if (verb == "train") cmd_train(cfg, out_dir, opt);
    else if (verb == "generate") cmd_generate(cfg, out_dir, opt);
    else if (verb == "detect") cmd_detect(cfg, out_dir, opt);
    else if (verb == "mitigate") cmd_mitigate(cfg, out_dir, opt);
    else if (verb == "report") cmd_report(cfg, out_dir, opt);
    else cmd_run(cfg, out_dir, opt);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const CorpusError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const PrerequisiteError& e) {
    std::cerr << "prerequisite error: " << e.what() << "\n";
    return kPrerequisite;
  } catch (const CheckpointError& e) {
    std::cerr << "prerequisite error: " << e.what() << "\n";
    return kPrerequisite;
  } catch (const io::FormatError& e) {
    std::cerr << "prerequisite error: " << e.what() << "\n";
    return kPrerequisite;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const MitigationDiverged& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const TrainingError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
