#include "coughnet/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <optional>
#include <thread>

#include "coughnet/error.hpp"
#include "coughnet/util.hpp"

namespace coughnet {

ExtractionResult extract_manifest(std::span<const SampleRecord> records, std::size_t workers) {
  std::vector<std::optional<FeatureVector>> features(records.size());
  std::vector<std::string> reasons(records.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      try {
        features[i] = extract_features(decode_wav(read_file(records[i].audio_path)), records[i].flags);
      } catch (const std::exception& e) {
        reasons[i] = e.what();
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(records.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  ExtractionResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (features[i]) {
      out.features.push_back({records[i].id, std::move(*features[i])});
    } else {
      out.failures.push_back({records[i].id, reasons[i]});
    }
  }
  std::sort(out.features.begin(), out.features.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  std::sort(out.failures.begin(), out.failures.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

std::vector<Example> join_examples(std::span<const SampleRecord> records,
                                   std::span<const CachedFeatures> cache) {
  std::map<std::string_view, const SampleRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  std::vector<Example> out;
  for (const auto& c : cache) {
    auto it = by_id.find(c.id);
    if (it == by_id.end()) continue;
    out.push_back({c.id, c.features, it->second->label == Label::positive ? 1.0 : 0.0});
  }
  return out;
}

EvalReport evaluate_models(std::span<const EnsembleModel> models, std::span<const Example> examples,
                           Alternative alternative) {
  if (models.empty()) throw Error(Errc::invalid_argument, "no models to evaluate");
  std::vector<const FeatureVector*> ptrs;
  std::vector<double> labels;
  for (const auto& ex : examples) {
    ptrs.push_back(&ex.features);
    labels.push_back(ex.label);
  }
  const bool pos = std::count(labels.begin(), labels.end(), 1.0) > 0;
  const bool neg = std::count(labels.begin(), labels.end(), 0.0) > 0;
  if (!pos || !neg) throw Error(Errc::single_class, "evaluation data holds a single class");
  const Batch batch = make_batch(ptrs);
  std::vector<RunScores> runs;
  for (const auto& m : models) runs.push_back({m.predict(batch), labels});
  return build_eval_report(runs, alternative);
}

}  // namespace coughnet
