#include "doctest.h"
#include "cli_fixtures.hpp"
#include "trainer_fixtures.hpp"

#include "cbmi/synthetic.hpp"

#include <json.hpp>

#include <filesystem>

using namespace cbmi;
using namespace cbmi::testing;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path root;
  fs::path data;

  explicit Workspace(const std::string& name) : root(fresh_dir("cli_" + name)), data(root / "data") {
    SubstitutionTask task;
    task.vocab_size = 20;
    task.pairs = 60;
    task.max_len = 6;
    write_corpus(root, make_substitution_corpus(task));
    const auto r = run_cli({"preprocess", "--src", (root / "corpus.src").string(), "--tgt",
                            (root / "corpus.tgt").string(), "--out-dir", data.string()});
    REQUIRE(r.code == 0);
  }
  ~Workspace() { fs::remove_all(root); }

  CliResult train(const std::string& out, std::vector<std::string> extra, const std::string& seed = "7") const {
    auto args = concat({"train", "--data", data.string(), "--out-dir", (root / out).string(), "--phase1-steps", "4",
                        "--phase2-steps", "6", "--seed", seed},
                       tiny_model_flags());
    return run_cli(concat(args, extra));
  }
};

std::vector<nlohmann::json> records(const fs::path& log) {
  std::vector<nlohmann::json> out;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (!j.contains("type")) out.push_back(j);
  }
  return out;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  auto r = run_cli({});
  CHECK(r.code == 2);
  CHECK(r.err.rfind("error: usage: ", 0) == 0);
  r = run_cli({"score", "--hyp", "a", "--ref", "b", "--bogus"});
  CHECK(r.code == 2);
  CHECK(r.err.rfind("error: usage: ", 0) == 0);
  r = run_cli({"frobnicate"});
  CHECK(r.code == 2);
}

TEST_CASE("help lists every flag") {
  const auto r = run_cli({"train", "--help"});
  CHECK(r.code == 0);
  for (const auto& k : config_keys()) CHECK(r.out.find(k.flag()) != std::string::npos);
  CHECK(run_cli({"--help-all"}).code == 0);
}

TEST_CASE("configuration errors exit with code 2 and name the key") {
  Workspace ws("config_error");
  auto r = ws.train("run", {"--scale-t", "-1"});
  CHECK(r.code == 2);
  CHECK(r.err.rfind("error: config: ", 0) == 0);
  CHECK(r.err.find("scale_t") != std::string::npos);
  r = ws.train("run", {"--config", (ws.root / "missing.cfg").string()});
  CHECK(r.code == 1);
  std::ofstream(ws.root / "bad.cfg") << "nonsense_key=1\n";
  r = ws.train("run", {"--config", (ws.root / "bad.cfg").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("nonsense_key") != std::string::npos);
}

TEST_CASE("score reports 100 for identical files and rejects count mismatches") {
  const fs::path dir = fresh_dir("cli_score");
  write_lines(dir / "h.txt", {"the cat sat on the mat", "a b c d"});
  write_lines(dir / "short.txt", {"the cat sat on the mat"});
  auto r = run_cli({"score", "--hyp", (dir / "h.txt").string(), "--ref", (dir / "h.txt").string()});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("BLEU = 100.00", 0) == 0);
  r = run_cli({"score", "--hyp", (dir / "h.txt").string(), "--ref", (dir / "short.txt").string()});
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: input: ", 0) == 0);
  r = run_cli({"score", "--hyp", (dir / "nope.txt").string(), "--ref", (dir / "h.txt").string()});
  CHECK(r.code == 1);
  fs::remove_all(dir);
}

TEST_CASE("preprocess writes the data directory") {
  Workspace ws("preprocess");
  for (const char* f : {"train.src", "train.tgt", "vocab.src.txt", "vocab.tgt.txt", "bmi.txt", "preprocess.txt"})
    CHECK(fs::exists(ws.data / f));
  CHECK(Vocabulary::load(ws.data / "vocab.tgt.txt").size() == 20);
}

TEST_CASE("training twice with the same seed gives byte-identical logs") {
  Workspace ws("determinism");
  const std::vector<std::string> flags{"--scheme", "cbmi", "--scale-t", "0.1", "--scale-s", "0.3"};
  REQUIRE(ws.train("a", flags).code == 0);
  REQUIRE(ws.train("b", flags).code == 0);
  CHECK(slurp(ws.root / "a" / "metrics.jsonl") == slurp(ws.root / "b" / "metrics.jsonl"));
  CHECK(slurp(ws.root / "a" / "final" / "tensors.bin") == slurp(ws.root / "b" / "final" / "tensors.bin"));
  CHECK(records(ws.root / "a" / "metrics.jsonl").size() == 10);
  REQUIRE(ws.train("c", {"--scheme", "cbmi"}, "8").code == 0);
  CHECK(slurp(ws.root / "a" / "metrics.jsonl") != slurp(ws.root / "c" / "metrics.jsonl"));
}

TEST_CASE("cbmi with zero scales matches scheme none") {
  Workspace ws("collapse");
  REQUIRE(ws.train("cbmi", {"--scheme", "cbmi", "--scale-t", "0", "--scale-s", "0"}).code == 0);
  REQUIRE(ws.train("none", {"--scheme", "none"}).code == 0);
  const auto a = records(ws.root / "cbmi" / "metrics.jsonl");
  const auto b = records(ws.root / "none" / "metrics.jsonl");
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(std::abs(a[i]["nmt_loss"].get<double>() - b[i]["nmt_loss"].get<double>()) <= 1e-6);
}

TEST_CASE("the metrics header echoes a config that reproduces the run") {
  Workspace ws("echo");
  REQUIRE(ws.train("a", {"--scheme", "bmi", "--bmi-s", "0.2"}).code == 0);
  std::ifstream in(ws.root / "a" / "metrics.jsonl");
  std::string header;
  std::getline(in, header);
  const auto j = nlohmann::ordered_json::parse(header);
  CHECK(j["type"] == "config");
  CHECK(j["config"]["scheme"] == "bmi");
  CHECK(j["config"]["bmi_s"] == "0.2");
  std::ofstream cfg(ws.root / "echo.cfg");
  for (const auto& [k, v] : j["config"].items()) cfg << k << '=' << v.get<std::string>() << '\n';
  cfg.close();
  REQUIRE(run_cli({"train", "--data", ws.data.string(), "--out-dir", (ws.root / "b").string(), "--config",
                   (ws.root / "echo.cfg").string()})
              .code == 0);
  CHECK(slurp(ws.root / "a" / "metrics.jsonl") == slurp(ws.root / "b" / "metrics.jsonl"));
}

TEST_CASE("resume continues the logs exactly") {
  Workspace ws("resume");
  REQUIRE(ws.train("full", {"--scheme", "cbmi", "--checkpoint-every", "5"}).code == 0);
  REQUIRE(fs::exists(ws.root / "full" / "checkpoints" / "step_5"));
  const auto ck = (ws.root / "full" / "checkpoints" / "step_5").string();
  REQUIRE(ws.train("resumed", {"--scheme", "cbmi", "--checkpoint-every", "5", "--resume", ck}).code == 0);
  const auto full = records(ws.root / "full" / "metrics.jsonl");
  const auto resumed = records(ws.root / "resumed" / "metrics.jsonl");
  REQUIRE(resumed.size() == 5);
  for (std::size_t i = 0; i < resumed.size(); ++i) CHECK(resumed[i].dump() == full[i + 5].dump());
  const auto r = ws.train("other", {"--scheme", "none", "--checkpoint-every", "5", "--resume", ck});
  CHECK(r.code == 1);
  CHECK(r.err.find("configuration differs") != std::string::npos);
}

TEST_CASE("translate, analyze-cbmi and dump-weights run on a trained checkpoint") {
  Workspace ws("downstream");
  REQUIRE(ws.train("run", {"--scheme", "cbmi"}).code == 0);
  const auto ck = (ws.root / "run" / "final").string();
  auto r = run_cli({"translate", "--checkpoint", ck, "--input", (ws.root / "corpus.src").string(), "--output",
                    (ws.root / "hyp.txt").string(), "--beam", "2"});
  CHECK(r.code == 0);
  r = run_cli({"score", "--hyp", (ws.root / "hyp.txt").string(), "--ref", (ws.root / "corpus.tgt").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("BLEU = ") == 0);

  write_lines(ws.root / "empty.src", {"s1 s2", ""});
  r = run_cli({"translate", "--checkpoint", ck, "--input", (ws.root / "empty.src").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("empty source") != std::string::npos);

  r = run_cli({"analyze-cbmi", "--checkpoint", ck, "--data", ws.data.string(), "--bins", "5"});
  CHECK(r.code == 0);
  CHECK(r.out.find("[histogram]") != std::string::npos);
  r = run_cli({"analyze-cbmi", "--checkpoint", ck});
  CHECK(r.code == 2);

  r = run_cli({"dump-weights", "--checkpoint", ck, "--src", (ws.root / "corpus.src").string(), "--tgt",
               (ws.root / "corpus.tgt").string(), "--scheme", "cbmi", "--out", (ws.root / "w.tsv").string()});
  CHECK(r.code == 0);
  CHECK(slurp(ws.root / "w.tsv").rfind("step\tsent_idx\tpos\ttoken_id\tcbmi\tw_t\tw_s\tw_final\n", 0) == 0);
}

TEST_CASE("analysis with a different vocabulary is an error") {
  Workspace ws("vocab_mismatch");
  REQUIRE(ws.train("run", {}).code == 0);
  SubstitutionTask other;
  other.vocab_size = 12;
  other.pairs = 10;
  other.seed = 5;
  write_corpus(ws.root / "other", make_substitution_corpus(other));
  REQUIRE(run_cli({"preprocess", "--src", (ws.root / "other" / "corpus.src").string(), "--tgt",
                   (ws.root / "other" / "corpus.tgt").string(), "--out-dir", (ws.root / "other_data").string()})
              .code == 0);
  const auto r = run_cli({"analyze-cbmi", "--checkpoint", (ws.root / "run" / "final").string(), "--data",
                          (ws.root / "other_data").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("vocabulary") != std::string::npos);
  const auto t = ws.train("resume_other", {"--resume", (ws.root / "run" / "final").string(), "--data",
                                           (ws.root / "other_data").string()});
  CHECK(t.code != 0);
}

TEST_CASE("boolean flags accept a bare form and explicit values") {
  Workspace ws("bools");
  auto r = ws.train("a", {"--scheme", "cbmi", "--use-token", "false", "--train-lm"});
  CHECK(r.code == 0);
  r = ws.train("b", {"--use-sentence", "maybe"});
  CHECK(r.code == 2);
}
