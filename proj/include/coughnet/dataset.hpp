#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "coughnet/csv.hpp"
#include "coughnet/dsp.hpp"

namespace coughnet {

enum class Label { negative = 0, positive = 1 };

enum class Source { coswara, coughvid, virufy_crowd, clinical_1, clinical_2 };

std::string_view label_name(Label label);
std::string_view source_name(Source source);
/// Throws Error(invalid_argument) for unknown names.
Label parse_label(std::string_view name);
Source parse_source(std::string_view name);

/// One labeled recording. Symptom and condition strings are stored in
/// canonical form (lower case, single spaces) so set membership is
/// case-insensitive.
struct SampleRecord {
  std::string id;
  std::string audio_path;
  Label label = Label::negative;
  Source source = Source::coswara;
  std::set<std::string> symptoms;
  std::set<std::string> conditions;
  std::map<std::string, std::string> demographics;
  ClinicalFlags flags;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct LoadResult {
  std::vector<SampleRecord> records;
  /// Rows skipped because their audio file does not exist.
  std::size_t missing_audio = 0;
};

/// Lower-cases, trims and collapses internal whitespace.
std::string canonical_term(std::string_view text);

/// Canonical vocabularies used by derive_flags.
const std::set<std::string>& respiratory_condition_terms();
const std::set<std::string>& fever_or_myalgia_terms();

ClinicalFlags derive_flags(const SampleRecord& record);

/// Coswara: `id`, `covid_status` required. positive_mild, positive_moderate
/// and positive_asymp are positive; every other status is negative. Audio is
/// `<audio_root>/<id>/cough-shallow.wav`; rows without it are skipped and
/// counted. Optional semicolon-separated `symptoms`/`conditions` columns and
/// the native boolean columns fever, mp, asthma, cld, pneumonia feed the
/// clinical flags.
LoadResult load_coswara(const CsvTable& manifest, const std::filesystem::path& audio_root);

/// Coughvid: `uuid` (or `id`) and `status` required. Every COVID-19 positive
/// row is kept as positive; min(1000, available) of the remaining rows are
/// drawn uniformly without replacement with `seed` as negatives; the rest are
/// dropped. Output keeps manifest order.
LoadResult load_coughvid(const CsvTable& manifest, const std::filesystem::path& audio_root,
                         std::uint64_t seed, std::size_t negative_cap = 1000);

/// Virufy-style (crowdsourced and clinical) PCR manifests: `id`,
/// `pcr_result`, `symptoms`, `conditions` required; `age`, `sex`, `smoker`,
/// `antibody_result` carried as metadata. Blank pcr_result rows are dropped
/// as untested; values other than positive/negative/blank throw
/// unknown_pcr_value.
LoadResult load_virufy(const CsvTable& manifest, const std::filesystem::path& audio_root,
                       Source source = Source::virufy_crowd);

struct SplitSpec {
  std::array<double, 3> ratios{0.70, 0.15, 0.15};
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Largest-remainder apportionment of `n` items over `ratios`; ties go to the
/// earlier slot.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios);

/// Stratified split over item labels.
///
/// Each class is shuffled with the seed; items are then merged into one
/// sequence ordered by their relative position (i + 0.5) / n_class inside
/// their class, and that sequence is cut contiguously at the apportioned
/// 70/15/15 sizes. Every split therefore holds each class in proportion,
/// within one item. Throws too_few_records (< 10) or single_class.
SplitIndices split_indices(std::span<const Label> labels, const SplitSpec& spec);

struct Split {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> validation;
  std::vector<SampleRecord> test;
};

Split split(std::span<const SampleRecord> records, const SplitSpec& spec);

/// Sample counts by (source, label) and by (label, flag pattern).
/// Patterns are "<respiratory><fever>", e.g. "10".
struct DistributionReport {
  std::map<std::pair<Source, Label>, std::size_t> by_source;
  std::map<std::pair<Label, std::string>, std::size_t> by_pattern;

  std::size_t count(Source source, Label label) const;
  std::size_t count(Label label, std::string_view pattern) const;

  std::string to_text() const;
  std::string to_csv() const;
};

DistributionReport summarize(std::span<const SampleRecord> records);

/// Processed manifest, one JSON object per line:
/// {"id","audio_path","label","source","flags":[r,f],"meta":{...}}.
std::string to_jsonl(std::span<const SampleRecord> records);
std::vector<SampleRecord> parse_jsonl(std::string_view text);

void write_manifest(const std::filesystem::path& path, std::span<const SampleRecord> records);
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path);

}  // namespace coughnet
