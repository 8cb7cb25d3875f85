// coughnet: ingest -> features -> train -> eval pipeline, plus predict, serve,
// summarize and a synthetic-corpus generator.
//
// Exit codes: 0 success, 1 I/O, 2 validation or usage, 3 statistical
// degeneracy (single class, zero variance).

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <nlohmann/json.hpp>
#include <thread>

#include "coughnet/error.hpp"
#include "coughnet/pipeline.hpp"
#include "coughnet/serve.hpp"
#include "coughnet/synth.hpp"
#include "coughnet/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace coughnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDegenerate = 3;

std::string read_file_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void log(const std::string& msg) { std::cerr << "coughnet: " << msg << '\n'; }

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::io_failure:
    case Errc::missing_audio:
      return kExitIo;
    case Errc::single_class:
    case Errc::zero_variance:
      return kExitDegenerate;
    default:
      return kExitUsage;
  }
}

std::string option_key(const CLI::Option& opt) {
  std::string key = opt.get_lnames().empty() ? opt.get_name() : opt.get_lnames().front();
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

// Fills options not given on the command line from the config file. Keys
// are long option names with '_' for '-'; a section named after the
// subcommand overrides top-level keys.
void apply_config(CLI::App& sub, const fs::path& path) {
  json cfg;
  try {
    cfg = json::parse(read_file_text(path));
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  if (!cfg.is_object()) throw UsageError("config must be a JSON object");
  json merged = json::object();
  for (const auto& [k, v] : cfg.items()) {
    if (!v.is_object()) merged[k] = v;
  }
  if (cfg.contains(sub.get_name()) && cfg[sub.get_name()].is_object()) {
    for (const auto& [k, v] : cfg[sub.get_name()].items()) merged[k] = v;
  }
  for (CLI::Option* opt : sub.get_options()) {
    if (opt->count() > 0 || opt->get_lnames().empty()) continue;
    const std::string key = option_key(*opt);
    if (key == "config" || key == "help" || !merged.contains(key)) continue;
    const json& v = merged[key];
    if (v.is_array()) {
      for (const auto& item : v) opt->add_result(scalar_text(item));
    } else {
      opt->add_result(scalar_text(v));
    }
    opt->run_callback();
  }
}

void require(const CLI::App& sub, std::initializer_list<const char*> names) {
  for (const char* name : names) {
    if (sub.get_option(name)->count() == 0) {
      throw UsageError(std::string(sub.get_name()) + ": " + name + " is required");
    }
  }
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw Error(Errc::io_failure, std::string(what) + " not found: " + p.string());
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

std::vector<Example> load_examples(const fs::path& manifest, const fs::path& features) {
  require_file(manifest, "manifest");
  require_file(features, "feature cache");
  const auto records = read_manifest(manifest);
  const auto cache = read_feature_cache(features);
  auto examples = join_examples(records, cache);
  if (examples.size() < records.size()) {
    log(std::to_string(records.size() - examples.size()) + " manifest records have no cached features");
  }
  return examples;
}

void write_roc(const EvalReport& report, const fs::path& dir, const std::string& prefix) {
  std::vector<NamedCurve> curves;
  for (std::size_t i = 0; i < report.curves.size(); ++i) {
    curves.push_back({prefix + std::to_string(i + 1), report.curves[i]});
  }
  emit_roc_svg(curves, dir / "roc.svg", dir / "roc.csv");
}

// Subcommands ----------------------------------------------------------------

struct IngestArgs {
  std::string source, csv, audio_root, out;
  std::uint64_t seed = 0;
  std::size_t negative_cap = 1000;
};

int cmd_ingest(const IngestArgs& a) {
  require_file(a.csv, "manifest CSV");
  const CsvTable table = CsvTable::parse(read_file_text(a.csv));
  const fs::path root = a.audio_root.empty() ? fs::path(a.csv).parent_path() : fs::path(a.audio_root);
  LoadResult loaded;
  if (a.source == "coswara") {
    loaded = load_coswara(table, root);
  } else if (a.source == "coughvid") {
    loaded = load_coughvid(table, root, a.seed, a.negative_cap);
  } else {
    const Source s = a.source == "virufy" ? Source::virufy_crowd : parse_source(a.source);
    loaded = load_virufy(table, root, s);
  }
  if (loaded.missing_audio > 0) log(std::to_string(loaded.missing_audio) + " rows skipped: audio file missing");
  write_manifest(a.out, loaded.records);
  std::cout << summarize(loaded.records).to_text();
  log("wrote " + std::to_string(loaded.records.size()) + " records to " + a.out);
  return kExitOk;
}

struct FeaturesArgs {
  std::string manifest, out;
  std::size_t workers = 1;
};

int cmd_features(const FeaturesArgs& a) {
  require_file(a.manifest, "manifest");
  const auto records = read_manifest(a.manifest);
  const ExtractionResult res = extract_manifest(records, a.workers);
  for (const auto& f : res.failures) log("skipped " + f.id + ": " + f.reason);
  if (!records.empty() && res.features.empty()) {
    log("every file failed feature extraction");
    return kExitIo;
  }
  write_feature_cache(a.out, res.features);
  log("wrote " + std::to_string(res.features.size()) + " feature records to " + a.out + "; skipped " +
      std::to_string(res.failures.size()));
  return kExitOk;
}

struct TrainArgs {
  std::string manifest, features, out_dir;
  TrainConfig config;
  std::optional<std::uint64_t> shuffle_labels;
};

int cmd_train(TrainArgs& a) {
  auto examples = load_examples(a.manifest, a.features);
  if (a.shuffle_labels) {
    std::vector<double> labels;
    for (const auto& ex : examples) labels.push_back(ex.label);
    Rng rng(*a.shuffle_labels);
    rng.shuffle(labels);
    for (std::size_t i = 0; i < examples.size(); ++i) examples[i].label = labels[i];
    log("labels shuffled with seed " + std::to_string(*a.shuffle_labels));
  }
  TrainHooks hooks;
  TrainResult result = train(examples, a.config, ArchConfig{}, hooks);

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  json report = result.report.to_json();
  report["models"] = json::array();
  for (std::size_t i = 0; i < result.models.size(); ++i) {
    const std::string name = "model_seed" + std::to_string(result.models[i].seed()) + ".cghm";
    save_model(result.models[i], dir / name);
    report["models"].push_back({{"file", name}, {"version", result.models[i].version_tag()}});
    const RunReport& r = result.report.runs[i];
    log("run seed " + std::to_string(r.seed) + ": best epoch " + std::to_string(r.best_epoch) +
        ", held-out AUC " + format_double(r.test_auc));
  }
  write_json(dir / "train_report.json", report);

  std::vector<RunScores> runs;
  for (const auto& r : result.report.runs) runs.push_back({r.test_scores, r.test_labels});
  try {
    const EvalReport held_out = build_eval_report(runs);
    write_json(dir / "heldout_eval.json", held_out.to_json());
    write_roc(held_out, dir, "run");
    log("mean held-out AUC " + format_double(held_out.mean_auc));
  } catch (const Error& e) {
    log(std::string("held-out report skipped: ") + e.what());
  }
  return kExitOk;
}

struct EvalArgs {
  std::vector<std::string> models;
  std::string manifest, features, out_dir;
  bool two_sided = false;
};

int cmd_eval(const EvalArgs& a) {
  const auto examples = load_examples(a.manifest, a.features);
  std::vector<EnsembleModel> models;
  for (const auto& m : a.models) {
    require_file(m, "model");
    models.push_back(load_model(m));
  }
  const EvalReport report =
      evaluate_models(models, examples, a.two_sided ? Alternative::two_sided : Alternative::greater);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  json j = report.to_json();
  j["models"] = json::array();
  for (const auto& m : models) j["models"].push_back(m.version_tag());
  write_json(dir / "eval_report.json", j);
  write_roc(report, dir, "model");
  std::cout << json{{"mean_auc", report.mean_auc},
                    {"ci95", {report.ci.low, report.ci.high}},
                    {"p_value", report.p_value ? json(*report.p_value) : json()}}
                   .dump()
            << '\n';
  return kExitOk;
}

struct PredictArgs {
  std::string model, wav;
  int resp = 0, fever = 0;
};

int cmd_predict(const PredictArgs& a) {
  require_file(a.model, "model");
  require_file(a.wav, "WAV file");
  const EnsembleModel model = load_model(a.model);
  const double p = predict(model, decode_wav(read_file(a.wav)), {a.resp == 1, a.fever == 1});
  nlohmann::ordered_json out;
  out["probability"] = p;
  out["label"] = p >= 0.5 ? "positive" : "negative";
  std::cout << out.dump() << '\n';
  return kExitOk;
}

struct ServeArgs {
  std::string model, host = "0.0.0.0";
  int port = 8080;
};

int cmd_serve(const ServeArgs& a) {
  if (a.model.empty()) throw UsageError("serve: --model (or COUGHNET_MODEL) is required");
  require_file(a.model, "model");
  InferenceService service(load_model(a.model));
  HttpServer server(service);
  log("serving " + service.health().body + " on " + a.host + ":" + std::to_string(a.port));
  server.listen(a.host, a.port);
  return kExitOk;
}

struct SummarizeArgs {
  std::string manifest, csv;
};

int cmd_summarize(const SummarizeArgs& a) {
  require_file(a.manifest, "manifest");
  const DistributionReport report = summarize(read_manifest(a.manifest));
  std::cout << report.to_text();
  if (!a.csv.empty()) write_file(a.csv, report.to_csv());
  return kExitOk;
}

struct SynthArgs {
  std::string out;
  SynthSpec spec;
};

int cmd_synth(const SynthArgs& a) {
  const fs::path manifest = write_synth_corpus(a.out, a.spec);
  log("wrote " + std::to_string(a.spec.count) + " clips and " + manifest.string());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cough-audio screening pipeline"};
  app.require_subcommand(1);
  std::string config_path;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config; flags override its values");
  };

  IngestArgs ingest;
  auto* s_ingest = app.add_subcommand("ingest", "Apply labeling rules and write a processed manifest");
  s_ingest->add_option("--source", ingest.source, "coswara | coughvid | virufy | clinical_1 | clinical_2")
      ->check(CLI::IsMember({"coswara", "coughvid", "virufy", "virufy_crowd", "clinical_1", "clinical_2"}));
  s_ingest->add_option("--csv", ingest.csv, "Source manifest CSV");
  s_ingest->add_option("--audio-root", ingest.audio_root, "Audio directory (default: CSV directory)");
  s_ingest->add_option("--out", ingest.out, "Output JSON-lines manifest");
  s_ingest->add_option("--seed", ingest.seed, "Negative-subsample seed (coughvid)");
  s_ingest->add_option("--negative-cap", ingest.negative_cap, "Negative cap (coughvid)");
  add_config(s_ingest);

  FeaturesArgs features;
  auto* s_features = app.add_subcommand("features", "Extract features into a cache file");
  s_features->add_option("--manifest", features.manifest, "Processed manifest");
  s_features->add_option("--out", features.out, "Feature cache path");
  s_features->add_option("--workers", features.workers, "Extraction threads");
  add_config(s_features);

  TrainArgs trainargs;
  auto* s_train = app.add_subcommand("train", "Train one model per seed");
  s_train->add_option("--manifest", trainargs.manifest, "Processed manifest");
  s_train->add_option("--features", trainargs.features, "Feature cache");
  s_train->add_option("--out-dir", trainargs.out_dir, "Output directory");
  s_train->add_option("--seeds", trainargs.config.seeds, "One run per seed");
  s_train->add_option("--batch-size", trainargs.config.batch_size);
  s_train->add_option("--max-epochs", trainargs.config.max_epochs);
  s_train->add_option("--patience", trainargs.config.patience);
  s_train->add_option("--lr", trainargs.config.lr);
  s_train->add_option("--workers", trainargs.config.workers, "Runs trained concurrently");
  s_train->add_option("--shuffle-labels", trainargs.shuffle_labels,
                      "Permute labels with this seed (null-model control)");
  add_config(s_train);

  EvalArgs evalargs;
  auto* s_eval = app.add_subcommand("eval", "Score a manifest with trained models");
  s_eval->add_option("--model", evalargs.models, "Model file; repeat for several runs");
  s_eval->add_option("--manifest", evalargs.manifest, "Processed manifest");
  s_eval->add_option("--features", evalargs.features, "Feature cache");
  s_eval->add_option("--out-dir", evalargs.out_dir, "Report directory");
  s_eval->add_flag("--two-sided", evalargs.two_sided, "Two-sided t-test");
  add_config(s_eval);

  PredictArgs predictargs;
  auto* s_predict = app.add_subcommand("predict", "Score one WAV file");
  s_predict->add_option("--model", predictargs.model, "Model file");
  s_predict->add_option("--wav", predictargs.wav, "WAV file");
  s_predict->add_option("--resp", predictargs.resp, "Respiratory condition flag")->check(CLI::Range(0, 1));
  s_predict->add_option("--fever", predictargs.fever, "Fever or myalgia flag")->check(CLI::Range(0, 1));
  add_config(s_predict);

  ServeArgs serve;
  auto* s_serve = app.add_subcommand("serve", "HTTP inference service");
  s_serve->add_option("--model", serve.model, "Model file")->envname("COUGHNET_MODEL");
  s_serve->add_option("--host", serve.host, "Bind address")->envname("COUGHNET_HOST");
  s_serve->add_option("--port", serve.port, "Port")->envname("COUGHNET_PORT");
  add_config(s_serve);

  SummarizeArgs summ;
  auto* s_summ = app.add_subcommand("summarize", "Label and clinical-flag distribution");
  s_summ->add_option("--manifest", summ.manifest, "Processed manifest");
  s_summ->add_option("--csv", summ.csv, "Also write the counts as CSV");
  add_config(s_summ);

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Generate the synthetic band-noise corpus");
  s_synth->add_option("--out", synth.out, "Output directory");
  s_synth->add_option("--count", synth.spec.count, "Number of clips");
  s_synth->add_option("--seed", synth.spec.seed, "Generator seed");
  add_config(s_synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!config_path.empty()) apply_config(*sub, config_path);
    if (sub == s_ingest) {
      require(*sub, {"--source", "--csv", "--out"});
      return cmd_ingest(ingest);
    }
    if (sub == s_features) {
      require(*sub, {"--manifest", "--out"});
      return cmd_features(features);
    }
    if (sub == s_train) {
      require(*sub, {"--manifest", "--features", "--out-dir"});
      return cmd_train(trainargs);
    }
    if (sub == s_eval) {
      require(*sub, {"--model", "--manifest", "--features", "--out-dir"});
      return cmd_eval(evalargs);
    }
    if (sub == s_predict) {
      require(*sub, {"--model", "--wav"});
      return cmd_predict(predictargs);
    }
    if (sub == s_serve) return cmd_serve(serve);
    if (sub == s_summ) {
      require(*sub, {"--manifest"});
      return cmd_summarize(summ);
    }
    require(*sub, {"--out"});
    return cmd_synth(synth);
  } catch (const UsageError& e) {
    log(e.what());
    return kExitUsage;
  } catch (const CLI::Error& e) {
    log(e.what());
    return kExitUsage;
  } catch (const Error& e) {
    log(std::string(errc_name(e.code())) + ": " + e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    log(e.what());
    return kExitIo;
  }
}
