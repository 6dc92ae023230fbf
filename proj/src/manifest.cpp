#include "bemem/manifest.hpp"

#include "bemem/digest.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>

namespace bemem {

const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> s = {"forge", "train", "generate", "detect", "mitigate", "report"};
  return s;
}

void RunManifest::save(const std::filesystem::path& run) const {
  nlohmann::ordered_json j;
  j["tool_version"] = tool_version;
  j["config_hash"] = config_hash;
  j["config"] = config_text;
  auto& st = j["stages"] = nlohmann::ordered_json::object();
  for (const auto& name : stage_order()) {
    const auto it = stages.find(name);
    if (it == stages.end()) continue;
    st[name]["files"] = it->second.files;
    st[name]["notes"] = it->second.notes;
  }
  j["thresholds"] = thresholds;
  const auto tmp = path_in(run).string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw PrerequisiteError("cannot write manifest in " + run.string());
    f << j.dump(1) << "\n";
  }
  std::filesystem::rename(tmp, path_in(run));
}

RunManifest RunManifest::load(const std::filesystem::path& run) {
  std::ifstream f(path_in(run));
  if (!f) throw PrerequisiteError("no run manifest in " + run.string() + " (run 'forge' first)");
  RunManifest m;
  try {
    const auto j = nlohmann::json::parse(f);
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config_text = j.at("config").get<std::string>();
    for (const auto& [name, rec] : j.at("stages").items()) {
      StageRecord r;
      r.files = rec.at("files").get<std::map<std::string, std::string>>();
      r.notes = rec.at("notes").get<std::map<std::string, std::string>>();
      m.stages[name] = std::move(r);
    }
    m.thresholds = j.at("thresholds").get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    throw PrerequisiteError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

std::string verify_manifest(const RunManifest& m, const std::filesystem::path& run) {
  for (const auto& [stage, rec] : m.stages)
    for (const auto& [file, digest] : rec.files) {
      const auto p = run / file;
      if (!std::filesystem::exists(p)) return stage + ": missing " + file;
      if (sha256_file(p) != digest) return stage + ": digest mismatch for " + file;
    }
  return {};
}

RunManifest require_stages(const std::filesystem::path& run, const RunConfig& cfg,
                           const std::vector<std::string>& prerequisites) {
  auto m = RunManifest::load(run);
  if (m.config_hash != config_hash(cfg))
    throw PrerequisiteError("config hash " + config_hash(cfg).substr(0, 12) + " does not match the run manifest (" +
                            m.config_hash.substr(0, 12) + ")");
  for (const auto& stage : prerequisites) {
    const auto it = m.stages.find(stage);
    if (it == m.stages.end()) throw PrerequisiteError("stage '" + stage + "' has not completed in " + run.string());
    for (const auto& [file, digest] : it->second.files) {
      const auto p = run / file;
      if (!std::filesystem::exists(p)) throw PrerequisiteError(stage + ": missing " + file);
      if (sha256_file(p) != digest) throw PrerequisiteError(stage + ": " + file + " was modified (digest mismatch)");
    }
  }
  return m;
}

void complete_stage(RunManifest& m, const std::filesystem::path& run, const std::string& stage,
                    const std::vector<std::string>& files, std::map<std::string, std::string> notes) {
  const auto& order = stage_order();
  const auto pos = std::find(order.begin(), order.end(), stage);
  if (pos == order.end()) throw std::invalid_argument("unknown stage " + stage);
  for (auto it = pos + 1; it != order.end(); ++it) m.stages.erase(*it);
  StageRecord r;
  for (const auto& f : files) r.files[f] = sha256_file(run / f);
  r.notes = std::move(notes);
  m.stages[stage] = std::move(r);
  m.save(run);
}

}  // namespace bemem
