#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbias/calibration.hpp"
#include "pbias/inference.hpp"

namespace pbias::cli {

/// Bad user input; maps to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoadedCsv {
  ScoredDataset dataset;
  std::string digest;  // fnv1a64 of the raw bytes
};

struct CsvRules {
  Split split = Split::evaluation;
  bool labels_required = false;
  bool both_classes_required = false;
  bool scores_are_probabilities = false;
};

/// Reads a `score,label` CSV (header row required, extra columns ignored).
/// Errors carry `path:line:` prefixes.
LoadedCsv read_scored_csv(const std::filesystem::path& path, const CsvRules& rules);

/// Same as read_scored_csv but from an in-memory buffer; `name` is used in diagnostics.
LoadedCsv parse_scored_csv(const std::string& text, const std::string& name, const CsvRules& rules);

std::string fnv1a64_hex(const std::string& bytes);

struct RunManifest {
  std::string subcommand;
  std::vector<std::string> argv;
  std::map<std::string, std::string> flags;
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> input_digests;
  std::string tool_version;
};

nlohmann::ordered_json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

/// Non-finite numbers are written as the strings "inf", "-inf", "nan".
nlohmann::ordered_json number_to_json(double v);
double number_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const BiasReport& r);
BiasReport report_from_json(const nlohmann::json& j);

/// Writes `contents` to `path` through a temporary file and rename, so a
/// failed run never leaves a partial artifact.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace pbias::cli
