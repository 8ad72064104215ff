#include "doctest.h"
#include "trainer_fixtures.hpp"

#include "cbmi/config.hpp"

#include <fstream>
#include <set>

using namespace cbmi;
namespace fs = std::filesystem;

namespace {

std::string error_key(const Assignments& file, const Assignments& flags) {
  try {
    resolve_config(file, flags);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

}  // namespace

TEST_CASE("no file and no flags gives the documented defaults") {
  const RunConfig c = parse_config({}, {});
  CHECK(c.train.scheme.kind == SchemeKind::none);
  CHECK(c.train.scheme.cbmi.scale_t == 0.1);
  CHECK(c.train.scheme.cbmi.scale_s == 0.3);
  CHECK(c.train.warmup_steps == 4000);
  CHECK(c.beam.beam_size == 4);
  CHECK(c.beam.length_penalty == 0.6);
  CHECK(c.train.base_lr == 7e-4);
  CHECK(c.train.phase1_steps == 1000);
  CHECK(c.train.phase2_steps == 2000);
  CHECK(c.train.scheme.baseline.freq_a == 1.0);
  CHECK(c.train.scheme.baseline.freq_t == 1.75);
  CHECK(c.train.scheme.baseline.bmi_s == 0.15);
  CHECK(c.train.scheme.baseline.bmi_b == 0.8);
  CHECK(c.train.scheme.baseline.lambda == 0.1);
  CHECK(c.train.scheme.baseline.th1 == 0.0);
  CHECK(c.train.scheme.baseline.th2 == 8.0);
  CHECK(c.train.clip_norm == 1.0);
  CHECK(c.profile == "en-de");
  CHECK(c.preset == "desk");
}

TEST_CASE("flags override the file") {
  const fs::path dir = cbmi::testing::fresh_dir("config_precedence");
  std::ofstream(dir / "run.cfg") << "# comment\n\nscale_t = 0.2\nseed=3\n";
  CHECK(parse_config(dir / "run.cfg", {}).train.scheme.cbmi.scale_t == 0.2);
  const RunConfig c = parse_config(dir / "run.cfg", {{"scale_t", "0.05"}});
  CHECK(c.train.scheme.cbmi.scale_t == 0.05);
  CHECK(c.train.seed == 3);
  fs::remove_all(dir);
}

TEST_CASE("invalid values name the offending key") {
  CHECK(error_key({}, {{"scale_t", "-1"}}) == "scale_t");
  CHECK(error_key({}, {{"scale_s", "-0.1"}}) == "scale_s");
  CHECK(error_key({}, {{"seed", "abc"}}) == "seed");
  CHECK(error_key({}, {{"base_lr", "nan"}}) == "base_lr");
  CHECK(error_key({}, {{"use_token", "maybe"}}) == "use_token");
  CHECK(error_key({}, {{"scheme", "bogus"}}) == "scheme");
  CHECK(error_key({}, {{"th1", "9"}}) == "th1");
  CHECK(error_key({}, {{"tau", "0"}}) == "tau");
  CHECK(error_key({}, {{"heads", "3"}}) == "heads");
  CHECK(error_key({}, {{"precision", "16"}}) == "precision");
  CHECK(error_key({}, {{"profile", "fr-en"}}) == "profile");
  CHECK(error_key({}, {{"beam", "0"}}) == "beam");
  CHECK(error_key({}, {{"no_such_key", "1"}}) == "no_such_key");
}

TEST_CASE("unknown keys in a file are errors with the position") {
  const fs::path dir = cbmi::testing::fresh_dir("config_unknown");
  std::ofstream(dir / "bad.cfg") << "seed=1\nscale_q=0.1\n";
  try {
    parse_config(dir / "bad.cfg", {});
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "scale_q");
    CHECK(std::string(e.what()).find("bad.cfg:2") != std::string::npos);
  }
  std::ofstream(dir / "noeq.cfg") << "seed 1\n";
  CHECK_THROWS_AS(parse_config(dir / "noeq.cfg", {}), ConfigError);
  CHECK_THROWS(parse_config(dir / "missing.cfg", {}));
  fs::remove_all(dir);
}

TEST_CASE("profiles set the baseline hyperparameters") {
  CHECK(resolve_config({}, {{"scheme", "freq_exp"}}).train.scheme.baseline.freq_t == 1.75);
  CHECK(resolve_config({}, {{"scheme", "freq_chi"}}).train.scheme.baseline.freq_t == 2.5);
  const RunConfig zh = resolve_config({}, {{"profile", "zh-en"}, {"scheme", "freq_exp"}});
  CHECK(zh.train.scheme.baseline.freq_t == 0.35);
  CHECK(zh.train.scheme.baseline.bmi_s == 0.1);
  CHECK(zh.train.scheme.baseline.bmi_b == 1.0);
  CHECK(resolve_config({}, {{"profile", "zh-en"}, {"scheme", "freq_chi"}}).train.scheme.baseline.freq_t == 1.75);
  // An explicit value wins, whatever the order of the assignments.
  CHECK(resolve_config({{"freq_t", "3"}}, {{"profile", "zh-en"}}).train.scheme.baseline.freq_t == 3.0);
  CHECK(resolve_config({{"bmi_s", "0.5"}}, {{"profile", "zh-en"}}).train.scheme.baseline.bmi_s == 0.5);
}

TEST_CASE("presets set model sizes and learning rates") {
  const RunConfig base = resolve_config({}, {{"preset", "base"}});
  CHECK(base.model.embed_dim == 512);
  CHECK(base.model.enc_layers == 6);
  const RunConfig big = resolve_config({}, {{"preset", "big"}});
  CHECK(big.model.embed_dim == 1024);
  CHECK(big.model.dropout_residual == 0.3);
  CHECK(big.train.base_lr == 5e-4);
  CHECK(resolve_config({{"embed_dim", "256"}}, {{"preset", "base"}}).model.embed_dim == 256);
}

TEST_CASE("every key has a unique flag and the echo reproduces the config") {
  std::set<std::string> flags;
  for (const auto& k : config_keys()) CHECK(flags.insert(k.flag()).second);
  for (const char* f : {"--scheme", "--scale-t", "--scale-s", "--use-token", "--use-sentence", "--freq-a", "--freq-t",
                        "--bmi-s", "--bmi-b", "--alpha", "--gamma", "--lambda", "--tau", "--th1", "--th2", "--beam",
                        "--length-penalty", "--seed"})
    CHECK(flags.count(f) == 1);

  const RunConfig c = resolve_config({}, {{"profile", "zh-en"},
                                          {"scheme", "freq_chi"},
                                          {"scale_t", "0.123456789"},
                                          {"use_sentence", "false"},
                                          {"seed", "42"},
                                          {"base_lr", "0.0003"},
                                          {"beam", "2"}});
  const auto echo = echo_config(c);
  CHECK(echo.size() == config_keys().size());
  const RunConfig again = resolve_config(echo, {});
  CHECK(echo_config(again) == echo);
  CHECK(again.train.scheme.cbmi.scale_t == 0.123456789);
  CHECK(again.train.scheme.cbmi.use_sentence == false);
  CHECK(again.train.scheme.baseline.freq_t == 1.75);
}

TEST_CASE("real values print in shortest round-trip form") {
  CHECK(format_real(0.1) == "0.1");
  CHECK(std::stod(format_real(7e-4)) == 7e-4);
  CHECK(std::stod(format_real(1.0 / 3.0)) == 1.0 / 3.0);
}
