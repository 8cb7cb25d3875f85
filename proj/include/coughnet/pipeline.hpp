#pragma once

#include <span>
#include <string>
#include <vector>

#include "coughnet/dataset.hpp"
#include "coughnet/eval.hpp"
#include "coughnet/feature_cache.hpp"
#include "coughnet/model.hpp"

namespace coughnet {

struct ExtractionFailure {
  std::string id;
  std::string reason;
};

struct ExtractionResult {
  std::vector<CachedFeatures> features;  // sorted by id
  std::vector<ExtractionFailure> failures;  // sorted by id
};

/// Reads, decodes and featurizes each record's audio with the record's
/// clinical flags. Files that cannot be read or decoded are reported, not
/// fatal. Output order is independent of `workers`.
ExtractionResult extract_manifest(std::span<const SampleRecord> records, std::size_t workers = 1);

/// Records paired with their cached features by id, in cache (id) order.
/// Records without features are left out.
std::vector<Example> join_examples(std::span<const SampleRecord> records,
                                   std::span<const CachedFeatures> cache);

/// Scores `examples` with every model (one run each) and builds the report.
/// Throws single_class when the examples hold one label.
EvalReport evaluate_models(std::span<const EnsembleModel> models, std::span<const Example> examples,
                           Alternative alternative = Alternative::greater);

}  // namespace coughnet
