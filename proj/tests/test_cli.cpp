#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "coughnet/audio_io.hpp"
#include "coughnet/dataset.hpp"
#include "coughnet/feature_cache.hpp"
#include "coughnet/util.hpp"
#include "support.hpp"

using namespace coughnet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kCli = COUGHNET_CLI;
const fs::path kFixtures = COUGHNET_FIXTURES;

struct Run {
  int code = -1;
  std::string out;
};

// Runs the binary with stderr discarded; captures stdout and the exit code.
Run cli(const std::string& args) {
  const std::string cmd = "env -u COUGHNET_MODEL -u COUGHNET_PORT -u COUGHNET_HOST '" + kCli + "' " + args +
                          " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return read_file(p); }

std::string text_of(const fs::path& p) {
  const auto b = read_file(p);
  return std::string(b.begin(), b.end());
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("no-such-command").code == 2);
  CHECK(cli("ingest --source nowhere --csv " + q(kFixtures / "virufy_crowd.csv") + " --out /tmp/x.jsonl").code == 2);
  CHECK(cli("ingest --csv " + q(kFixtures / "virufy_crowd.csv")).code == 2);
  CHECK(cli("serve").code == 2);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("ingest") {
  test_support::TempDir dir("cli-ingest");
  const Run r = cli("ingest --source virufy --csv " + q(kFixtures / "virufy_crowd.csv") + " --out " +
                    q(dir / "p.jsonl"));
  CHECK(r.code == 0);
  CHECK(r.out.find("positive") != std::string::npos);
  const auto records = read_manifest(dir / "p.jsonl");
  CHECK(records.size() == 31);

  for (const char* name : {"a.jsonl", "b.jsonl"}) {
    CHECK(cli("ingest --source coughvid --seed 7 --csv " + q(kFixtures / "coughvid_small.csv") + " --out " +
              q(dir / name))
              .code == 0);
  }
  CHECK(bytes_of(dir / "a.jsonl") == bytes_of(dir / "b.jsonl"));

  CHECK(cli("ingest --source virufy --csv " + q(dir / "missing.csv") + " --out " + q(dir / "x.jsonl")).code == 1);

  // A config file supplies values; flags override them.
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << json{{"ingest", {{"source", "virufy"}, {"csv", (kFixtures / "virufy_crowd.csv").string()},
                            {"out", (dir / "from_config.jsonl").string()}}}}
               .dump();
  }
  CHECK(cli("ingest --config " + q(dir / "cfg.json")).code == 0);
  CHECK(read_manifest(dir / "from_config.jsonl").size() == 31);
  CHECK(cli("ingest --config " + q(dir / "cfg.json") + " --out " + q(dir / "override.jsonl")).code == 0);
  CHECK(fs::exists(dir / "override.jsonl"));
}

TEST_CASE("features skip undecodable files and are deterministic") {
  test_support::TempDir dir("cli-features");
  std::vector<SampleRecord> recs(3);
  for (int i = 0; i < 3; ++i) {
    recs[i].id = "clip" + std::to_string(i);
    recs[i].label = i % 2 ? Label::positive : Label::negative;
    recs[i].audio_path = (dir / (recs[i].id + (i == 1 ? ".mp3" : ".wav"))).string();
  }
  Rng rng(3);
  for (int i : {0, 2}) {
    AudioClip c{std::vector<double>(11025), 22050};
    for (double& v : c.samples) v = rng.uniform(-0.3, 0.3);
    write_file(recs[i].audio_path, encode_wav(c));
  }
  write_file(recs[1].audio_path, std::vector<std::uint8_t>{'I', 'D', '3', 4, 0, 0, 0, 0, 0, 0});
  write_manifest(dir / "m.jsonl", recs);

  CHECK(cli("features --manifest " + q(dir / "m.jsonl") + " --out " + q(dir / "a.cache")).code == 0);
  CHECK(cli("features --manifest " + q(dir / "m.jsonl") + " --out " + q(dir / "b.cache") + " --workers 3").code ==
        0);
  const auto cache = read_feature_cache(dir / "a.cache");
  REQUIRE(cache.size() == 2);
  CHECK(cache[0].id == "clip0");
  CHECK(cache[1].id == "clip2");
  CHECK(bytes_of(dir / "a.cache") == bytes_of(dir / "b.cache"));

  write_manifest(dir / "bad.jsonl", std::vector<SampleRecord>{recs[1]});
  CHECK(cli("features --manifest " + q(dir / "bad.jsonl") + " --out " + q(dir / "c.cache")).code == 1);
}

TEST_CASE("synth, train, eval and predict") {
  test_support::TempDir dir("cli-pipeline");
  REQUIRE(cli("synth --out " + q(dir / "corpus") + " --count 40 --seed 5").code == 0);
  REQUIRE(cli("ingest --source virufy --csv " + q(dir / "corpus/manifest.csv") + " --out " + q(dir / "p.jsonl"))
              .code == 0);
  REQUIRE(cli("features --manifest " + q(dir / "p.jsonl") + " --out " + q(dir / "f.cache")).code == 0);
  {
    std::ofstream cfg(dir / "train.json");
    cfg << json{{"max_epochs", 4}, {"patience", 2}, {"train", {{"seeds", {3, 4}}, {"batch_size", 16}}}}.dump();
  }
  const std::string train_args = "train --config " + q(dir / "train.json") + " --batch-size 8 --manifest " +
                                 q(dir / "p.jsonl") + " --features " + q(dir / "f.cache") + " --out-dir ";
  REQUIRE(cli(train_args + q(dir / "run")).code == 0);
  const json report = json::parse(text_of(dir / "run/train_report.json"));
  CHECK(report.at("config").at("batch_size") == 8);
  CHECK(report.at("config").at("max_epochs") == 4);
  CHECK(report.at("runs").size() == 2);
  for (const char* f : {"model_seed3.cghm", "model_seed4.cghm", "heldout_eval.json", "roc.svg", "roc.csv"}) {
    CHECK(fs::exists(dir / "run" / f));
  }

  REQUIRE(cli(train_args + q(dir / "run2")).code == 0);
  CHECK(bytes_of(dir / "run/model_seed3.cghm") == bytes_of(dir / "run2/model_seed3.cghm"));
  CHECK(bytes_of(dir / "run/train_report.json") == bytes_of(dir / "run2/train_report.json"));

  const std::string models = " --model " + q(dir / "run/model_seed3.cghm") + " --model " + q(dir / "run/model_seed4.cghm");
  const Run ev = cli("eval" + models + " --manifest " + q(dir / "p.jsonl") + " --features " + q(dir / "f.cache") +
                     " --out-dir " + q(dir / "eval"));
  CHECK(ev.code == 0);
  CHECK(json::parse(ev.out).contains("mean_auc"));
  CHECK(fs::exists(dir / "eval/eval_report.json"));
  CHECK(fs::exists(dir / "eval/roc.svg"));

  auto positives = read_manifest(dir / "p.jsonl");
  std::erase_if(positives, [](const SampleRecord& r) { return r.label != Label::positive; });
  write_manifest(dir / "pos.jsonl", positives);
  CHECK(cli("eval" + models + " --manifest " + q(dir / "pos.jsonl") + " --features " + q(dir / "f.cache") +
            " --out-dir " + q(dir / "eval1"))
            .code == 3);

  const fs::path wav = dir / "corpus/audio/synth-0000.wav";
  const Run pr = cli("predict --model " + q(dir / "run/model_seed3.cghm") + " --wav " + q(wav) + " --resp 0 --fever 0");
  CHECK(pr.code == 0);
  CHECK(std::count(pr.out.begin(), pr.out.end(), '\n') == 1);
  CHECK(pr.out.starts_with("{\"probability\":"));
  const json pj = json::parse(pr.out);
  const double p = pj.at("probability");
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  CHECK(pj.at("label") == (p >= 0.5 ? "positive" : "negative"));

  CHECK(cli("predict --model " + q(dir / "run/model_seed3.cghm") + " --wav " + q(wav) + " --resp 2").code == 2);
  CHECK(cli("predict --model " + q(dir / "none.cghm") + " --wav " + q(wav)).code == 1);
  CHECK(cli("serve --model " + q(dir / "none.cghm")).code == 1);

  const Run sm = cli("summarize --manifest " + q(dir / "p.jsonl") + " --csv " + q(dir / "summary.csv"));
  CHECK(sm.code == 0);
  CHECK(fs::exists(dir / "summary.csv"));
}
