#include "io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>

#include "pbias/simulation.hpp"

namespace pbias::cli {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

std::string where(const std::string& name, std::size_t line) { return name + ":" + std::to_string(line) + ": "; }

}  // namespace

std::string fnv1a64_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

LoadedCsv parse_scored_csv(const std::string& text, const std::string& name, const CsvRules& rules) {
  std::string_view body(text);
  if (body.starts_with("\xEF\xBB\xBF")) body.remove_prefix(3);

  std::vector<std::pair<std::size_t, std::string_view>> lines;
  std::size_t line_no = 0, start = 0;
  while (start <= body.size()) {
    const auto pos = body.find('\n', start);
    const auto len = pos == std::string_view::npos ? body.size() - start : pos - start;
    ++line_no;
    const auto line = trim(body.substr(start, len));
    if (!line.empty()) lines.emplace_back(line_no, line);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  if (lines.empty()) throw InputError(name + ": file is empty (a header row is required)");

  const auto header = split_fields(lines.front().second);
  std::optional<std::size_t> score_col, label_col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "score") score_col = i;
    else if (header[i] == "label") label_col = i;
  }
  const std::size_t header_line = lines.front().first;
  if (!score_col) throw InputError(where(name, header_line) + "missing column 'score'");
  if (rules.labels_required && !label_col) throw InputError(where(name, header_line) + "missing column 'label'");
  if (lines.size() == 1) throw InputError(name + ": no data rows");

  std::vector<ScoredRecord> records;
  records.reserve(lines.size() - 1);
  std::int64_t positives = 0, labeled = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto [ln, line] = lines[li];
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw InputError(where(name, ln) + "expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    ScoredRecord rec;
    const auto sf = fields[*score_col];
    const auto res = std::from_chars(sf.data(), sf.data() + sf.size(), rec.score);
    if (sf.empty() || res.ec != std::errc() || res.ptr != sf.data() + sf.size()) {
      throw InputError(where(name, ln) + "column 'score': non-numeric value '" + std::string(sf) + "'");
    }
    if (!std::isfinite(rec.score)) throw InputError(where(name, ln) + "column 'score': non-finite value");
    if (rules.scores_are_probabilities && !(rec.score >= 0.0 && rec.score <= 1.0)) {
      throw InputError(where(name, ln) + "column 'score': probability outside [0, 1] (use --logits for raw logits)");
    }
    if (label_col) {
      const auto lf = fields[*label_col];
      if (lf.empty()) {
        if (rules.labels_required) throw InputError(where(name, ln) + "column 'label': missing value");
      } else if (lf == "0" || lf == "1") {
        rec.label = lf == "1" ? 1 : 0;
        positives += *rec.label;
        ++labeled;
      } else {
        throw InputError(where(name, ln) + "column 'label': value '" + std::string(lf) + "' is not 0 or 1");
      }
    }
    records.push_back(rec);
  }
  if (rules.both_classes_required && (positives == 0 || positives == labeled)) {
    throw InputError(name + ": column 'label' contains a single class (all " + (positives == 0 ? "0" : "1") +
                     "); both classes are required");
  }

  LoadedCsv out;
  out.dataset.records = std::move(records);
  out.dataset.split = rules.split;
  try {
    out.dataset.validate();
  } catch (const std::invalid_argument& e) {
    throw InputError(name + ": " + e.what());
  }
  out.digest = fnv1a64_hex(text);
  return out;
}

LoadedCsv read_scored_csv(const std::filesystem::path& path, const CsvRules& rules) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scored_csv(ss.str(), path.string(), rules);
}

nlohmann::ordered_json number_to_json(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

double number_from_json(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw std::invalid_argument("not a number: " + s);
}

nlohmann::ordered_json to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["subcommand"] = m.subcommand;
  j["argv"] = m.argv;
  nlohmann::ordered_json flags = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.flags) flags[k] = v;
  j["flags"] = flags;
  if (m.seed) j["seed"] = *m.seed;
  else j["seed"] = nullptr;
  nlohmann::ordered_json digests = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.input_digests) digests[k] = v;
  j["input_digests"] = digests;
  j["tool_version"] = m.tool_version;
  return j;
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.subcommand = j.at("subcommand").get<std::string>();
  m.argv = j.at("argv").get<std::vector<std::string>>();
  for (const auto& [k, v] : j.at("flags").items()) m.flags[k] = v.get<std::string>();
  if (j.contains("seed") && !j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& [k, v] : j.at("input_digests").items()) m.input_digests[k] = v.get<std::string>();
  m.tool_version = j.at("tool_version").get<std::string>();
  return m;
}

nlohmann::ordered_json to_json(const BiasReport& r) {
  nlohmann::ordered_json j;
  j["threshold"] = number_to_json(r.threshold);
  j["p_train"] = number_to_json(r.p_train);
  j["achieved_train_rate"] = number_to_json(r.achieved_train_rate);
  j["validation_mcc"] = number_to_json(r.validation_mcc);
  j["m"] = number_to_json(r.m);
  j["h"] = r.h;
  j["t"] = r.t;
  j["mu_hat"] = number_to_json(r.mu_hat);
  j["expected_under_null"] = number_to_json(r.expected_under_null);
  j["standard_error"] = number_to_json(r.standard_error);
  j["z"] = number_to_json(r.z);
  j["p_value"] = number_to_json(r.p_value);
  j["significance"] = number_to_json(r.significance);
  j["bias_detected"] = r.bias_detected;
  j["map"] = number_to_json(r.map);
  j["posterior_mean"] = number_to_json(r.posterior_mean);
  j["interval_lo"] = number_to_json(r.interval_lo);
  j["interval_hi"] = number_to_json(r.interval_hi);
  j["mass"] = number_to_json(r.mass);
  j["interval_convention"] = "equal-tailed";
  j["prior_alpha"] = number_to_json(r.prior_alpha);
  j["prior_beta"] = number_to_json(r.prior_beta);
  j["grid_points"] = r.grid_points;
  j["uninformative_model"] = r.uninformative_model;
  if (r.evaluation_label_mean) j["evaluation_label_mean"] = number_to_json(*r.evaluation_label_mean);
  j["warnings"] = r.warnings;
  return j;
}

BiasReport report_from_json(const nlohmann::json& j) {
  BiasReport r;
  r.threshold = number_from_json(j.at("threshold"));
  r.p_train = number_from_json(j.at("p_train"));
  r.achieved_train_rate = number_from_json(j.at("achieved_train_rate"));
  r.validation_mcc = number_from_json(j.at("validation_mcc"));
  r.m = number_from_json(j.at("m"));
  r.h = j.at("h").get<std::int64_t>();
  r.t = j.at("t").get<std::int64_t>();
  r.mu_hat = number_from_json(j.at("mu_hat"));
  r.expected_under_null = number_from_json(j.at("expected_under_null"));
  r.standard_error = number_from_json(j.at("standard_error"));
  r.z = number_from_json(j.at("z"));
  r.p_value = number_from_json(j.at("p_value"));
  r.significance = number_from_json(j.at("significance"));
  r.bias_detected = j.at("bias_detected").get<bool>();
  r.map = number_from_json(j.at("map"));
  r.posterior_mean = number_from_json(j.at("posterior_mean"));
  r.interval_lo = number_from_json(j.at("interval_lo"));
  r.interval_hi = number_from_json(j.at("interval_hi"));
  r.mass = number_from_json(j.at("mass"));
  r.prior_alpha = number_from_json(j.at("prior_alpha"));
  r.prior_beta = number_from_json(j.at("prior_beta"));
  r.grid_points = j.at("grid_points").get<std::size_t>();
  r.uninformative_model = j.at("uninformative_model").get<bool>();
  if (j.contains("evaluation_label_mean")) r.evaluation_label_mean = number_from_json(j.at("evaluation_label_mean"));
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << contents;
    if (!out) throw std::runtime_error(path.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace pbias::cli
