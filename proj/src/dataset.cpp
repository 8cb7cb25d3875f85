#include "coughnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "coughnet/error.hpp"
#include "coughnet/util.hpp"

namespace coughnet {
namespace {

namespace fs = std::filesystem;

constexpr std::array kSources = {Source::coswara, Source::coughvid, Source::virufy_crowd,
                                 Source::clinical_1, Source::clinical_2};
constexpr std::array kLabels = {Label::negative, Label::positive};
constexpr std::array<std::string_view, 4> kPatterns = {"00", "01", "10", "11"};

std::set<std::string> parse_terms(std::string_view field) {
  std::set<std::string> out;
  std::size_t start = 0;
  while (start <= field.size()) {
    std::size_t end = field.find(';', start);
    if (end == std::string_view::npos) end = field.size();
    std::string term = canonical_term(field.substr(start, end - start));
    if (!term.empty() && term != "none") out.insert(std::move(term));
    start = end + 1;
  }
  return out;
}

bool truthy(std::string_view value) {
  const std::string v = to_lower(trim(value));
  return v == "true" || v == "1" || v == "yes" || v == "y";
}

std::string cell(const CsvTable& t, std::size_t row, std::size_t col) {
  return trim(t.rows()[row][col]);
}

void read_term_columns(const CsvTable& t, std::size_t row, SampleRecord& rec) {
  if (auto c = t.column("symptoms")) rec.symptoms = parse_terms(t.rows()[row][*c]);
  if (auto c = t.column("conditions")) rec.conditions = parse_terms(t.rows()[row][*c]);
}

// Boolean flag columns in the public dataset exports, mapped onto the
// canonical vocabulary.
void read_boolean_columns(const CsvTable& t, std::size_t row, SampleRecord& rec,
                          std::span<const std::pair<const char*, const char*>> symptom_cols,
                          std::span<const std::pair<const char*, const char*>> condition_cols) {
  for (const auto& [column, term] : symptom_cols) {
    if (auto c = t.column(column); c && truthy(t.rows()[row][*c])) rec.symptoms.insert(term);
  }
  for (const auto& [column, term] : condition_cols) {
    if (auto c = t.column(column); c && truthy(t.rows()[row][*c])) rec.conditions.insert(term);
  }
}

std::string audio_path_for(const CsvTable& t, std::size_t row, const fs::path& root,
                           const std::string& id) {
  if (auto c = t.column("audio_path")) {
    const std::string rel = cell(t, row, *c);
    if (!rel.empty()) return (root / rel).string();
  }
  return (root / (id + ".wav")).string();
}

void require_unique_ids(const std::vector<SampleRecord>& records) {
  std::set<std::string_view> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.id).second) {
      throw Error(Errc::invalid_argument, "duplicate sample id '" + r.id + "'");
    }
  }
}

}  // namespace

std::string_view label_name(Label label) {
  return label == Label::positive ? "positive" : "negative";
}

std::string_view source_name(Source source) {
  switch (source) {
    case Source::coswara: return "coswara";
    case Source::coughvid: return "coughvid";
    case Source::virufy_crowd: return "virufy_crowd";
    case Source::clinical_1: return "clinical_1";
    case Source::clinical_2: return "clinical_2";
  }
  return "unknown";
}

Label parse_label(std::string_view name) {
  for (Label l : kLabels) {
    if (label_name(l) == name) return l;
  }
  throw Error(Errc::invalid_argument, "unknown label '" + std::string(name) + "'");
}

Source parse_source(std::string_view name) {
  for (Source s : kSources) {
    if (source_name(s) == name) return s;
  }
  throw Error(Errc::invalid_argument, "unknown source '" + std::string(name) + "'");
}

std::string canonical_term(std::string_view text) {
  std::string out;
  bool space = false;
  for (char c : trim(text)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

const std::set<std::string>& respiratory_condition_terms() {
  static const std::set<std::string> terms = {"asthma", "chronic tuberculosis", "copd",
                                              "chronic lung disease", "pneumonia"};
  return terms;
}

const std::set<std::string>& fever_or_myalgia_terms() {
  static const std::set<std::string> terms = {"fever and/or chills", "myalgia"};
  return terms;
}

ClinicalFlags derive_flags(const SampleRecord& record) {
  auto any_of = [](const std::set<std::string>& values, const std::set<std::string>& vocab) {
    return std::any_of(values.begin(), values.end(),
                       [&](const std::string& v) { return vocab.contains(canonical_term(v)); });
  };
  return ClinicalFlags{any_of(record.conditions, respiratory_condition_terms()),
                       any_of(record.symptoms, fever_or_myalgia_terms())};
}

LoadResult load_coswara(const CsvTable& manifest, const fs::path& audio_root) {
  LoadResult out;
  if (manifest.header().empty()) return out;
  const std::size_t id_col = manifest.require_column("id");
  const std::size_t status_col = manifest.require_column("covid_status");

  static const std::set<std::string> positive = {"positive_mild", "positive_moderate",
                                                 "positive_asymp"};
  static constexpr std::pair<const char*, const char*> kSymptomCols[] = {
      {"fever", "fever and/or chills"}, {"mp", "myalgia"}};
  static constexpr std::pair<const char*, const char*> kConditionCols[] = {
      {"asthma", "asthma"}, {"cld", "chronic lung disease"}, {"pneumonia", "pneumonia"}};

  for (std::size_t row = 0; row < manifest.size(); ++row) {
    SampleRecord rec;
    rec.id = cell(manifest, row, id_col);
    rec.source = Source::coswara;
    rec.label = positive.contains(cell(manifest, row, status_col)) ? Label::positive
                                                                   : Label::negative;
    const fs::path audio = audio_root / rec.id / "cough-shallow.wav";
    if (!fs::exists(audio)) {
      ++out.missing_audio;
      continue;
    }
    rec.audio_path = audio.string();
    read_term_columns(manifest, row, rec);
    read_boolean_columns(manifest, row, rec, kSymptomCols, kConditionCols);
    rec.flags = derive_flags(rec);
    out.records.push_back(std::move(rec));
  }
  require_unique_ids(out.records);
  return out;
}

LoadResult load_coughvid(const CsvTable& manifest, const fs::path& audio_root,
                         std::uint64_t seed, std::size_t negative_cap) {
  LoadResult out;
  if (manifest.header().empty()) return out;
  const auto uuid = manifest.column("uuid");
  const std::size_t id_col = uuid ? *uuid : manifest.require_column("id");
  const std::size_t status_col = manifest.require_column("status");

  auto is_positive = [](const std::string& status) {
    return status == "COVID-19 Positive" || status == "COVID-19";
  };

  std::vector<std::size_t> positives;
  std::vector<std::size_t> others;
  for (std::size_t row = 0; row < manifest.size(); ++row) {
    (is_positive(cell(manifest, row, status_col)) ? positives : others).push_back(row);
  }
  Rng rng(seed);
  rng.shuffle(others);
  others.resize(std::min(negative_cap, others.size()));

  std::vector<std::pair<std::size_t, Label>> keep;
  for (std::size_t r : positives) keep.emplace_back(r, Label::positive);
  for (std::size_t r : others) keep.emplace_back(r, Label::negative);
  std::sort(keep.begin(), keep.end());

  static constexpr std::pair<const char*, const char*> kSymptomCols[] = {
      {"fever_muscle_pain", "fever and/or chills"}};
  static constexpr std::pair<const char*, const char*> kConditionCols[] = {
      {"respiratory_condition", "chronic lung disease"}};

  for (const auto& [row, label] : keep) {
    SampleRecord rec;
    rec.id = cell(manifest, row, id_col);
    rec.source = Source::coughvid;
    rec.label = label;
    rec.audio_path = audio_path_for(manifest, row, audio_root, rec.id);
    read_term_columns(manifest, row, rec);
    read_boolean_columns(manifest, row, rec, kSymptomCols, kConditionCols);
    rec.flags = derive_flags(rec);
    out.records.push_back(std::move(rec));
  }
  require_unique_ids(out.records);
  return out;
}

LoadResult load_virufy(const CsvTable& manifest, const fs::path& audio_root, Source source) {
  LoadResult out;
  if (manifest.header().empty()) return out;
  const std::size_t id_col = manifest.require_column("id");
  const std::size_t pcr_col = manifest.require_column("pcr_result");
  manifest.require_column("symptoms");
  manifest.require_column("conditions");

  static constexpr const char* kMetaCols[] = {"age", "sex", "smoker", "antibody_result"};

  for (std::size_t row = 0; row < manifest.size(); ++row) {
    const std::string pcr = to_lower(cell(manifest, row, pcr_col));
    SampleRecord rec;
    rec.id = cell(manifest, row, id_col);
    if (pcr.empty()) continue;
    if (pcr == "positive") {
      rec.label = Label::positive;
    } else if (pcr == "negative") {
      rec.label = Label::negative;
    } else {
      throw Error(Errc::unknown_pcr_value,
                  "row '" + rec.id + "': unknown pcr_result '" + pcr + "'");
    }
    rec.source = source;
    rec.audio_path = audio_path_for(manifest, row, audio_root, rec.id);
    read_term_columns(manifest, row, rec);
    for (const char* name : kMetaCols) {
      if (auto c = manifest.column(name)) {
        std::string v = cell(manifest, row, *c);
        if (!v.empty()) rec.demographics[name] = std::move(v);
      }
    }
    rec.flags = derive_flags(rec);
    out.records.push_back(std::move(rec));
  }
  require_unique_ids(out.records);
  return out;
}

std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || *std::min_element(ratios.begin(), ratios.end()) < 0.0) {
    throw Error(Errc::invalid_argument, "split ratios must be non-negative and sum to 1");
  }
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(n) * ratios[i];
    // Small slack so quotas like 20 * 0.15 are not floored to 2.
    sizes[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    remainder[i] = quota - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (remainder[i] > remainder[best] + 1e-12) best = i;
    }
    ++sizes[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  return sizes;
}

SplitIndices split_indices(std::span<const Label> labels, const SplitSpec& spec) {
  if (labels.size() < 10) {
    throw Error(Errc::too_few_records, "need at least 10 records to split, got " +
                                           std::to_string(labels.size()));
  }
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<int>(labels[i])].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw Error(Errc::single_class, "split requires both labels to be present");
  }
  const auto sizes = apportion(labels.size(), spec.ratios);

  Rng rng(spec.seed);
  struct Keyed {
    double key;
    int cls;
    std::size_t index;
  };
  std::vector<Keyed> merged;
  merged.reserve(labels.size());
  for (int cls = 0; cls < 2; ++cls) {
    auto& members = by_class[cls];
    rng.shuffle(members);
    const double n = static_cast<double>(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) {
      merged.push_back({(static_cast<double>(i) + 0.5) / n, cls, members[i]});
    }
  }
  std::sort(merged.begin(), merged.end(), [](const Keyed& a, const Keyed& b) {
    return a.key != b.key ? a.key < b.key : a.cls < b.cls;
  });

  SplitIndices out;
  std::size_t pos = 0;
  for (auto [part, size] : {std::pair{&out.train, sizes[0]}, std::pair{&out.validation, sizes[1]},
                            std::pair{&out.test, sizes[2]}}) {
    for (std::size_t i = 0; i < size; ++i) part->push_back(merged[pos++].index);
  }
  return out;
}

Split split(std::span<const SampleRecord> records, const SplitSpec& spec) {
  std::vector<Label> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.label);
  const SplitIndices idx = split_indices(labels, spec);
  Split out;
  for (std::size_t i : idx.train) out.train.push_back(records[i]);
  for (std::size_t i : idx.validation) out.validation.push_back(records[i]);
  for (std::size_t i : idx.test) out.test.push_back(records[i]);
  return out;
}

std::size_t DistributionReport::count(Source source, Label label) const {
  auto it = by_source.find({source, label});
  return it == by_source.end() ? 0 : it->second;
}

std::size_t DistributionReport::count(Label label, std::string_view pattern) const {
  auto it = by_pattern.find({label, std::string(pattern)});
  return it == by_pattern.end() ? 0 : it->second;
}

std::string DistributionReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(14) << "source" << std::right << std::setw(10) << "positive"
     << std::setw(10) << "negative" << "\n";
  for (Source s : kSources) {
    os << std::left << std::setw(14) << source_name(s) << std::right << std::setw(10)
       << count(s, Label::positive) << std::setw(10) << count(s, Label::negative) << "\n";
  }
  os << "\n"
     << std::left << std::setw(14) << "flags(rf)" << std::right << std::setw(10) << "positive"
     << std::setw(10) << "negative" << "\n";
  for (auto p : kPatterns) {
    os << std::left << std::setw(14) << p << std::right << std::setw(10)
       << count(Label::positive, p) << std::setw(10) << count(Label::negative, p) << "\n";
  }
  return os.str();
}

std::string DistributionReport::to_csv() const {
  std::ostringstream os;
  os << "table,key,label,count\n";
  for (Source s : kSources) {
    for (Label l : kLabels) {
      os << "source," << source_name(s) << "," << label_name(l) << "," << count(s, l) << "\n";
    }
  }
  for (auto p : kPatterns) {
    for (Label l : kLabels) {
      os << "flags," << p << "," << label_name(l) << "," << count(l, p) << "\n";
    }
  }
  return os.str();
}

DistributionReport summarize(std::span<const SampleRecord> records) {
  DistributionReport report;
  for (const auto& r : records) {
    ++report.by_source[{r.source, r.label}];
    std::string pattern;
    pattern.push_back(r.flags.respiratory_condition ? '1' : '0');
    pattern.push_back(r.flags.fever_or_myalgia ? '1' : '0');
    ++report.by_pattern[{r.label, pattern}];
  }
  return report;
}

std::string to_jsonl(std::span<const SampleRecord> records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json meta = {{"symptoms", r.symptoms},
                           {"conditions", r.conditions},
                           {"demographics", r.demographics}};
    nlohmann::json j = {{"id", r.id},
                        {"audio_path", r.audio_path},
                        {"label", label_name(r.label)},
                        {"source", source_name(r.source)},
                        {"flags", {r.flags.respiratory_condition ? 1 : 0,
                                   r.flags.fever_or_myalgia ? 1 : 0}},
                        {"meta", meta}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<SampleRecord> parse_jsonl(std::string_view text) {
  std::vector<SampleRecord> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SampleRecord r;
      r.id = j.at("id").get<std::string>();
      r.audio_path = j.value("audio_path", std::string());
      r.label = parse_label(j.at("label").get<std::string>());
      r.source = parse_source(j.at("source").get<std::string>());
      const auto& flags = j.at("flags");
      r.flags = ClinicalFlags{flags.at(0).get<int>() != 0, flags.at(1).get<int>() != 0};
      if (auto meta = j.find("meta"); meta != j.end()) {
        r.symptoms = meta->value("symptoms", std::set<std::string>());
        r.conditions = meta->value("conditions", std::set<std::string>());
        r.demographics = meta->value("demographics", std::map<std::string, std::string>());
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::invalid_argument,
                  "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  require_unique_ids(out);
  return out;
}

void write_manifest(const fs::path& path, std::span<const SampleRecord> records) {
  write_file(path, to_jsonl(records));
}

std::vector<SampleRecord> read_manifest(const fs::path& path) {
  const auto bytes = read_file(path);
  return parse_jsonl(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace coughnet
