#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rssm/config.hpp"
#include "rssm/eval.hpp"

using namespace rssm;

namespace {

std::string write_tmp(const std::string& name, const std::string& text) {
  const std::string path = "/tmp/" + name;
  std::ofstream f(path);
  f << text;
  return path;
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing: sections, defaults, schema violations") {
  const std::string text =
      "[generate]\n"
      "env = pendulum\n"
      "episodes = 4\n"
      "out = /tmp/rssm_cfg_demo\n"
      "\n"
      "[train]\n"
      "model = mts3\n"
      "data = unused.csv\n"
      "out = /tmp/rssm_cfg_demo\n";

  auto gen = config::parse_config_text(text, "generate");
  CHECK(gen.get("env") == "pendulum");
  CHECK(gen.get_int("episodes") == 4);
  CHECK(gen.get_int("steps") == 240);  // default filled in

  auto tr = config::parse_config_text(text, "train");
  CHECK(tr.get("model") == "mts3");
  CHECK(tr.get("window_len") == "auto");

  // unknown keys are rejected by name
  try {
    config::parse_config_text("[generate]\nenv = pendulum\nout = x\nbogus_key = 1\n", "generate");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
  }

  // missing required keys are named too
  try {
    config::parse_config_text("[generate]\nout = x\n", "generate");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("env") != std::string::npos);
  }

  CHECK_THROWS_AS(config::parse_config_text("[generate]\nenv = moonlander\nout = x\n", "generate"),
                  ConfigError);
  CHECK_THROWS_AS(config::parse_config_text("[generate]\nenv = pendulum\nepisodes = nine\nout = x\n",
                                            "generate"),
                  ConfigError);

  // resolved echo includes every default, deterministically ordered
  const std::string echo = config::print_config(gen);
  CHECK(echo.find("[generate]") == 0);
  CHECK(echo.find("steps = 240") != std::string::npos);
  CHECK(echo.find("dt = 0.05") != std::string::npos);
}

TEST_CASE("window length helpers") {
  CHECK(config::default_window_steps(0.05) == 6);   // 0.3 s at 20 Hz
  CHECK(config::default_window_steps(0.01) == 30);  // 0.3 s at 100 Hz
  CHECK(config::rule_of_thumb_window(900, 2, 1) == 30);
  CHECK(config::rule_of_thumb_window(900, 2, 2) == 900);
  CHECK(config::rule_of_thumb_window(1000, 3, 1) == 10);
}

TEST_CASE("generate: deterministic files, regenerate identical") {
  const std::string dir = "/tmp/rssm_cli_gen";
  std::filesystem::remove_all(dir);
  const std::string cfg_path = write_tmp("rssm_gen.cfg",
                                         "[generate]\n"
                                         "env = pendulum\n"
                                         "episodes = 3\n"
                                         "test_episodes = 2\n"
                                         "steps = 40\n"
                                         "seed = 7\n"
                                         "out = " + dir + "\n");
  auto cfg = config::parse_config_file(cfg_path, "generate");
  CHECK(cli::cmd_generate(cfg) == 0);
  const std::string first = file_bytes(dir + "/train.csv");
  CHECK(cli::cmd_generate(cfg) == 0);
  CHECK(file_bytes(dir + "/train.csv") == first);
  CHECK(std::filesystem::exists(dir + "/test.csv"));
  std::filesystem::remove_all(dir);
  std::filesystem::remove(cfg_path);
}

TEST_CASE("train and eval round trip through the command layer") {
  const std::string dir = "/tmp/rssm_cli_roundtrip";
  std::filesystem::remove_all(dir);

  auto gen_cfg = config::parse_config_text(
      "[generate]\nenv = pendulum\nepisodes = 4\ntest_episodes = 2\nsteps = 24\nseed = 3\nout = " +
          dir + "/data\n",
      "generate");
  REQUIRE(cli::cmd_generate(gen_cfg) == 0);

  const std::string train_text =
      "[train]\n"
      "model = acrkn\n"
      "data = " + dir + "/data/train.csv\n"
      "out = " + dir + "/run\n"
      "lod = 3\nbasis_count = 2\nbandwidth = 1\n"
      "enc_hidden = 8\ndec_hidden = 8\ncontrol_hidden = 8\n"
      "epochs = 2\nbatch = 4\nseed = 5\n";
  auto tr_cfg = config::parse_config_text(train_text, "train");
  REQUIRE(cli::cmd_train(tr_cfg) == 0);
  CHECK(std::filesystem::exists(dir + "/run/best.ckpt"));
  CHECK(std::filesystem::exists(dir + "/run/last.ckpt"));
  CHECK(std::filesystem::exists(dir + "/run/trace.csv"));

  // zero-epoch run: best checkpoint equals the initialization
  auto zero_cfg = config::parse_config_text(
      "[train]\nmodel = acrkn\ndata = " + dir + "/data/train.csv\nout = " + dir +
          "/zero\nlod = 3\nbasis_count = 2\nbandwidth = 1\n"
          "enc_hidden = 8\ndec_hidden = 8\ncontrol_hidden = 8\nepochs = 0\nseed = 5\n",
      "train");
  REQUIRE(cli::cmd_train(zero_cfg) == 0);
  {
    auto ckpt = train::load_checkpoint(dir + "/zero/best.ckpt");
    train::ModelSpec mspec = config::model_spec_from(zero_cfg, 2, 1, 0.05);
    train::Model fresh(mspec);
    for (auto& [name, p] : fresh.params().all())
      CHECK(ckpt.entries.at(name).second == p.data());
  }

  const std::string eval_text =
      "[eval]\n"
      "model = acrkn\n"
      "checkpoint = " + dir + "/run/best.ckpt\n"
      "data = " + dir + "/data/test.csv\n"
      "out = " + dir + "/eval\n"
      "lod = 3\nbasis_count = 2\nbandwidth = 1\n"
      "enc_hidden = 8\ndec_hidden = 8\ncontrol_hidden = 8\n"
      "context = 10\nhorizon = 8\nmetric_window = 4\n";
  auto ev_cfg = config::parse_config_text(eval_text, "eval");
  REQUIRE(cli::cmd_eval(ev_cfg) == 0);
  CHECK(std::filesystem::exists(dir + "/eval/metrics.csv"));
  CHECK(std::filesystem::exists(dir + "/eval/predictions_0.csv"));

  // metrics re-derive from the exported predictions
  auto pred = eval::read_predictions_csv(dir + "/eval/predictions_0.csv");
  auto pred1 = eval::read_predictions_csv(dir + "/eval/predictions_1.csv");
  auto rmse0 = eval::sliding_rmse(pred, 4);
  auto rmse1 = eval::sliding_rmse(pred1, 4);
  std::ifstream mf(dir + "/eval/metrics.csv");
  std::string line;
  std::getline(mf, line);  // header
  std::getline(mf, line);  // first horizon step
  const auto last_comma = line.rfind(',');
  const auto prev_comma = line.rfind(',', last_comma - 1);
  const double row_rmse = std::strtod(line.substr(prev_comma + 1).c_str(), nullptr);
  CHECK(std::abs(row_rmse - 0.5 * (rmse0[0] + rmse1[0])) < 1e-12);

  // checkpoint / model mismatch is a hard error
  auto bad_cfg = config::parse_config_text(
      "[eval]\nmodel = rkn\ncheckpoint = " + dir + "/run/best.ckpt\ndata = " + dir +
          "/data/test.csv\nout = " + dir + "/bad\nlod = 3\n",
      "eval");
  CHECK_THROWS_AS(cli::cmd_eval(bad_cfg), CheckpointMismatch);

  // sweep emits one row per H value
  auto sweep_cfg = config::parse_config_text(
      "[eval]\nmodel = acrkn\ncheckpoint = " + dir + "/run/best.ckpt\ndata = " + dir +
          "/data/test.csv\nout = " + dir + "/sweep\nlod = 3\nbasis_count = 2\nbandwidth = 1\n"
          "enc_hidden = 8\ndec_hidden = 8\ncontrol_hidden = 8\n"
          "context = 10\nhorizon = 8\nsweep_h = 1,2,4\n",
      "eval");
  REQUIRE(cli::cmd_eval(sweep_cfg) == 0);
  std::ifstream sf(dir + "/sweep/metrics.csv");
  int rows = 0;
  while (std::getline(sf, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);  // header + one row per swept H

  std::filesystem::remove_all(dir);
}
