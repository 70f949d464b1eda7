#include "rssm/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rssm/eval.hpp"

namespace rssm::config {

namespace {

using Type = KeySpec::Type;

std::vector<KeySpec> generate_schema() {
  return {
      {"env", Type::String, true, "", {"pendulum", "hip", "two_timescale"}},
      {"episodes", Type::Int, false, "20", {}},
      {"test_episodes", Type::Int, false, "5", {}},
      {"steps", Type::Int, false, "240", {}},
      {"seed", Type::Int, false, "0", {}},
      {"dt", Type::Real, false, "0.05", {}},
      {"mass", Type::Real, false, "1.0", {}},
      {"length", Type::Real, false, "1.0", {}},
      {"damping", Type::Real, false, "0.25", {}},
      {"gravity", Type::Real, false, "9.81", {}},
      {"segment_len", Type::Int, false, "30", {}},
      {"period", Type::Int, false, "120", {}},
      {"drift_amplitude", Type::Real, false, "0.8", {}},
      {"noise", Type::Real, false, "0.01", {}},
      {"out", Type::String, true, "", {}},
  };
}

std::vector<KeySpec> model_keys() {
  return {
      {"model", Type::String, true, "", {"rkn", "acrkn", "hiprssm", "mts3"}},
      {"lod", Type::Int, false, "15", {}},
      {"task_dim", Type::Int, false, "30", {}},
      {"window_len", Type::String, false, "auto", {}},  // auto: H * dt ~= 0.3 s
      {"basis_count", Type::Int, false, "15", {}},
      {"bandwidth", Type::Int, false, "3", {}},
      {"control_kind", Type::String, false, "nonlinear",
       {"linear", "locally_linear", "nonlinear"}},
      {"task_kind", Type::String, false, "nonlinear",
       {"linear", "locally_linear", "nonlinear"}},
      {"enc_hidden", Type::Int, false, "120", {}},
      {"dec_hidden", Type::Int, false, "120", {}},
      {"set_enc_hidden", Type::Int, false, "240", {}},
      {"ctx_hidden", Type::Int, false, "240", {}},
      {"control_hidden", Type::Int, false, "120", {}},
      {"trans_noise_init", Type::Real, false, "0.05", {}},
      {"loss", Type::String, false, "auto", {"auto", "nll", "rmse"}},
      {"init_seed", Type::Int, false, "0", {}},
  };
}

std::vector<KeySpec> train_schema() {
  std::vector<KeySpec> keys = model_keys();
  const std::vector<KeySpec> extra = {
      {"data", Type::String, true, "", {}},
      {"epochs", Type::Int, false, "50", {}},
      {"batch", Type::Int, false, "16", {}},
      {"lr", Type::String, false, "auto", {}},  // auto: per-model default
      {"clip_norm", Type::Real, false, "5.0", {}},
      {"step_mask", Type::Real, false, "0.0", {}},
      {"window_mask", Type::Real, false, "0.0", {}},
      {"resample_masks", Type::Int, false, "1", {}},
      {"tbptt", Type::Int, false, "0", {}},
      {"val_fraction", Type::Real, false, "0.1", {}},
      {"seed", Type::Int, false, "0", {}},
      {"out", Type::String, true, "", {}},
      {"resume", Type::String, false, "", {}},
  };
  keys.insert(keys.end(), extra.begin(), extra.end());
  return keys;
}

std::vector<KeySpec> eval_schema() {
  std::vector<KeySpec> keys = model_keys();
  const std::vector<KeySpec> extra = {
      {"checkpoint", Type::String, true, "", {}},
      {"data", Type::String, true, "", {}},
      {"context", Type::Int, false, "30", {}},
      {"horizon", Type::Int, false, "60", {}},
      {"metric_window", Type::Int, false, "0", {}},  // 0: use the model window
      {"sweep_h", Type::String, false, "", {}},      // comma list, one row per H
      {"episodes", Type::Int, false, "0", {}},       // 0: all test episodes
      {"seed", Type::Int, false, "0", {}},
      {"out", Type::String, true, "", {}},
  };
  keys.insert(keys.end(), extra.begin(), extra.end());
  return keys;
}

bool parses_as_int(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

bool parses_as_real(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

const std::vector<KeySpec>& schema_for(const std::string& command) {
  static const std::vector<KeySpec> gen = generate_schema();
  static const std::vector<KeySpec> tr = train_schema();
  static const std::vector<KeySpec> ev = eval_schema();
  if (command == "generate") return gen;
  if (command == "train") return tr;
  if (command == "eval") return ev;
  throw ConfigError("unknown command: " + command);
}

bool RunConfig::has(const std::string& key) const { return values.count(key) > 0; }

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw ConfigError("missing config key: " + key);
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  return static_cast<int>(std::strtoll(get(key).c_str(), nullptr, 10));
}

double RunConfig::get_real(const std::string& key) const {
  return std::strtod(get(key).c_str(), nullptr);
}

uint64_t RunConfig::get_seed(const std::string& key) const {
  return static_cast<uint64_t>(std::strtoull(get(key).c_str(), nullptr, 10));
}

RunConfig parse_config_text(const std::string& text, const std::string& command) {
  const auto& schema = schema_for(command);
  RunConfig cfg;
  cfg.command = command;

  std::istringstream is(text);
  std::string line, section;
  std::map<std::string, std::string> raw;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    if (section != command) continue;  // other sections belong to other commands
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (raw.count(key) > 0)
      throw ConfigError("duplicate key in [" + command + "]: " + key);
    raw[key] = value;
  }

  for (const auto& [key, value] : raw) {
    const auto spec = std::find_if(schema.begin(), schema.end(),
                                   [&](const KeySpec& k) { return k.name == key; });
    if (spec == schema.end())
      throw ConfigError("unknown key in [" + command + "]: " + key);
    if (spec->type == Type::Int && !parses_as_int(value))
      throw ConfigError("key " + key + " expects an integer, got '" + value + "'");
    if (spec->type == Type::Real && !parses_as_real(value))
      throw ConfigError("key " + key + " expects a real number, got '" + value + "'");
    if (!spec->allowed.empty() &&
        std::find(spec->allowed.begin(), spec->allowed.end(), value) == spec->allowed.end())
      throw ConfigError("key " + key + " does not allow value '" + value + "'");
    cfg.values[key] = value;
  }
  for (const KeySpec& spec : schema) {
    if (cfg.values.count(spec.name) > 0) continue;
    if (spec.required) throw ConfigError("missing required key in [" + command + "]: " + spec.name);
    cfg.values[spec.name] = spec.default_value;
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path, const std::string& command) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << f.rdbuf();
  return parse_config_text(buffer.str(), command);
}

std::string print_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "[" << cfg.command << "]\n";
  for (const auto& [key, value] : cfg.values) os << key << " = " << value << "\n";
  return os.str();
}

int default_window_steps(double dt) {
  return std::max(1, static_cast<int>(std::lround(0.3 / dt)));
}

int rule_of_thumb_window(int horizon_steps, int levels, int level) {
  return std::max(1, static_cast<int>(std::lround(
                         std::pow(static_cast<double>(horizon_steps),
                                  static_cast<double>(level) / static_cast<double>(levels)))));
}

train::ModelSpec model_spec_from(const RunConfig& cfg, int obs_dim, int act_dim, double dt) {
  train::ModelSpec spec;
  spec.kind = cfg.get("model");
  spec.obs_dim = obs_dim;
  spec.act_dim = act_dim;
  spec.lod = cfg.get_int("lod");
  spec.task_dim = cfg.get_int("task_dim");
  spec.window_len = cfg.get("window_len") == "auto" ? default_window_steps(dt)
                                                    : std::stoi(cfg.get("window_len"));
  spec.basis_count = cfg.get_int("basis_count");
  spec.bandwidth = cfg.get_int("bandwidth");
  spec.control_kind = cfg.get("control_kind");
  spec.task_kind = cfg.get("task_kind");
  spec.enc_hidden = {cfg.get_int("enc_hidden")};
  spec.dec_hidden = {cfg.get_int("dec_hidden")};
  spec.set_enc_hidden = {cfg.get_int("set_enc_hidden")};
  spec.ctx_hidden = {cfg.get_int("ctx_hidden")};
  spec.control_hidden = {cfg.get_int("control_hidden")};
  spec.trans_noise_init = cfg.get_real("trans_noise_init");
  spec.task_noise_init = cfg.get_real("trans_noise_init");
  const std::string loss = cfg.get("loss");
  if (loss == "nll")
    spec.loss = train::LossKind::GaussianNll;
  else if (loss == "rmse")
    spec.loss = train::LossKind::RmseDifferences;
  else  // per-model defaults: the two-scale model trains on the likelihood,
        // the single-scale dynamics models on differences
    spec.loss = (spec.kind == "mts3" || spec.kind == "rkn") ? train::LossKind::GaussianNll
                                                            : train::LossKind::RmseDifferences;
  spec.init_seed = cfg.get_seed("init_seed");
  return spec;
}

train::LossSpec loss_spec_from(const RunConfig& cfg) {
  train::LossSpec spec;
  const std::string loss = cfg.get("loss");
  const std::string model = cfg.get("model");
  if (loss == "nll")
    spec.kind = train::LossKind::GaussianNll;
  else if (loss == "rmse")
    spec.kind = train::LossKind::RmseDifferences;
  else
    spec.kind = (model == "mts3" || model == "rkn") ? train::LossKind::GaussianNll
                                                    : train::LossKind::RmseDifferences;
  if (cfg.has("clip_norm")) spec.clip_norm = cfg.get_real("clip_norm");
  return spec;
}

train::MaskSpec mask_spec_from(const RunConfig& cfg) {
  train::MaskSpec spec;
  spec.step_mask_fraction = cfg.get_real("step_mask");
  spec.window_mask_fraction = cfg.get_real("window_mask");
  spec.resample_per_batch = cfg.get_int("resample_masks") != 0;
  return spec;
}

train::OptimSpec optim_spec_from(const RunConfig& cfg) {
  train::OptimSpec spec;
  if (cfg.get("lr") == "auto") {
    const std::string model = cfg.get("model");
    if (model == "mts3")
      spec.lr = 3e-3;
    else if (model == "hiprssm")
      spec.lr = 1e-3;
    else if (model == "acrkn")
      spec.lr = 3.1e-3;
    else
      spec.lr = 1.9e-3;
  } else {
    if (!parses_as_real(cfg.get("lr"))) throw ConfigError("key lr expects a real number or auto");
    spec.lr = cfg.get_real("lr");
  }
  return spec;
}

}  // namespace rssm::config

namespace rssm::cli {

using config::RunConfig;

namespace {

envs::PendulumParams pendulum_params_from(const RunConfig& cfg) {
  envs::PendulumParams p;
  p.mass = cfg.get_real("mass");
  p.length = cfg.get_real("length");
  p.damping = cfg.get_real("damping");
  p.gravity = cfg.get_real("gravity");
  p.dt = cfg.get_real("dt");
  return p;
}

void print_dataset_summary(const envs::EpisodeDataset& ds, const std::string& path) {
  std::cout << path << ": split=" << ds.split << " episodes=" << ds.episodes.size()
            << " steps=" << (ds.episodes.empty() ? 0 : ds.episodes[0].steps)
            << " obs_dim=" << ds.obs_dim << " act_dim=" << ds.act_dim << "\n";
}

}  // namespace

int cmd_generate(const RunConfig& cfg) {
  const std::string env = cfg.get("env");
  const envs::PendulumParams params = pendulum_params_from(cfg);
  const int steps = cfg.get_int("steps");
  const int episodes = cfg.get_int("episodes");
  const int test_episodes = cfg.get_int("test_episodes");
  const uint64_t seed = cfg.get_seed("seed");
  const double noise = cfg.get_real("noise");
  const std::string out = cfg.get("out");
  std::filesystem::create_directories(out);

  envs::EpisodeDataset train_ds, test_ds;
  if (env == "pendulum") {
    train_ds = envs::gen_pendulum(params, steps, episodes, seed, noise);
    test_ds = envs::gen_pendulum(params, steps, test_episodes, seed + 1, noise);
  } else if (env == "hip") {
    const int segment = cfg.get_int("segment_len");
    train_ds = envs::gen_hip_variant(params, segment, steps, episodes, seed, false, noise);
    test_ds = envs::gen_hip_variant(params, segment, steps, test_episodes, seed, true, noise);
  } else {
    const int period = cfg.get_int("period");
    const double amplitude = cfg.get_real("drift_amplitude");
    train_ds = envs::gen_two_timescale(params, period, steps, episodes, seed, noise, amplitude);
    test_ds = envs::gen_two_timescale(params, period, steps, test_episodes, seed + 1, noise,
                                      amplitude);
  }
  envs::normalize_train(train_ds);
  envs::normalize_with(test_ds, train_ds.stats);
  test_ds.split = "test";
  envs::save_dataset(train_ds, out + "/train.csv");
  envs::save_dataset(test_ds, out + "/test.csv");
  print_dataset_summary(train_ds, out + "/train.csv");
  print_dataset_summary(test_ds, out + "/test.csv");
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  envs::EpisodeDataset ds = envs::load_dataset(cfg.get("data"));
  train::ModelSpec mspec = config::model_spec_from(cfg, ds.obs_dim, ds.act_dim, ds.dt);
  train::Model model(mspec);

  train::TrainOptions options;
  options.epochs = cfg.get_int("epochs");
  options.batch_size = cfg.get_int("batch");
  options.tbptt_len = cfg.get_int("tbptt");
  options.seed = cfg.get_seed("seed");
  options.val_fraction = cfg.get_real("val_fraction");
  options.out_dir = cfg.get("out");
  options.resume_from = cfg.get("resume");

  train::TrainTrace trace =
      train::train(model, ds, config::loss_spec_from(cfg), config::mask_spec_from(cfg),
                   config::optim_spec_from(cfg), options);
  std::cout << "epochs=" << trace.epochs.size() << " best_epoch=" << trace.best_epoch
            << " best_val=" << trace.best_val << (trace.diverged ? " DIVERGED" : "") << "\n";
  return trace.diverged ? 3 : 0;
}

int cmd_eval(const RunConfig& cfg) {
  envs::EpisodeDataset ds = envs::load_dataset(cfg.get("data"));
  const std::string out = cfg.get("out");
  std::filesystem::create_directories(out);
  train::Checkpoint ckpt = train::load_checkpoint(cfg.get("checkpoint"));
  if (ckpt.meta.count("model_kind") && ckpt.meta.at("model_kind") != cfg.get("model"))
    throw CheckpointMismatch("checkpoint was written by model kind " +
                             ckpt.meta.at("model_kind"));

  const int context = cfg.get_int("context");
  const int horizon = cfg.get_int("horizon");
  const uint64_t seed = cfg.get_seed("seed");
  int episodes = cfg.get_int("episodes");
  if (episodes <= 0 || episodes > static_cast<int>(ds.episodes.size()))
    episodes = static_cast<int>(ds.episodes.size());

  std::vector<int> sweep;
  if (!cfg.get("sweep_h").empty()) {
    std::istringstream is(cfg.get("sweep_h"));
    std::string tok;
    while (std::getline(is, tok, ',')) sweep.push_back(std::stoi(tok));
  }

  std::vector<eval::MetricsRow> rows;
  auto eval_with_window = [&](int window_len, bool final_row_only) {
    train::ModelSpec mspec = config::model_spec_from(cfg, ds.obs_dim, ds.act_dim, ds.dt);
    if (window_len > 0) mspec.window_len = window_len;
    train::Model model(mspec);
    train::restore_params(model.params(), ckpt);
    const int metric_w =
        cfg.get_int("metric_window") > 0 ? cfg.get_int("metric_window") : model.spec().window_len;

    std::vector<double> rmse_acc, nll_acc;
    for (int e = 0; e < episodes; ++e) {
      eval::RolloutResult r = eval::rollout(model, ds, e, context, horizon);
      eval::write_predictions_csv(out + "/predictions_" + std::to_string(e) +
                                      (window_len > 0 ? "_H" + std::to_string(window_len) : "") +
                                      ".csv",
                                  r);
      auto rm = eval::sliding_rmse(r, metric_w);
      auto nl = eval::sliding_nll(r, metric_w);
      if (rmse_acc.empty()) {
        rmse_acc.assign(rm.size(), 0.0);
        nll_acc.assign(nl.size(), 0.0);
      }
      for (size_t i = 0; i < rm.size(); ++i) {
        rmse_acc[i] += rm[i] / episodes;
        nll_acc[i] += nl[i] / episodes;
      }
    }
    const std::string tag = window_len > 0
                                ? cfg.get("model") + "@H" + std::to_string(window_len)
                                : cfg.get("model");
    if (final_row_only) {
      rows.push_back({tag, ds.split, seed, horizon, rmse_acc.back(), nll_acc.back()});
    } else {
      for (size_t i = 0; i < rmse_acc.size(); ++i)
        rows.push_back({tag, ds.split, seed, static_cast<int>(i + 1), rmse_acc[i], nll_acc[i]});
    }
  };

  if (sweep.empty()) {
    eval_with_window(0, false);
  } else {
    for (int h : sweep) eval_with_window(h, true);
  }
  eval::write_metrics_csv(out + "/metrics.csv", rows);
  std::cout << "episodes=" << episodes << " rows=" << rows.size() << " final_rmse="
            << rows.back().rmse << " final_nll=" << rows.back().nll << "\n";
  return 0;
}

int run_command(const std::string& command, const std::string& config_path,
                const std::string& seed_override, const std::string& out_override,
                bool print_config_only) {
  try {
    RunConfig cfg = config::parse_config_file(config_path, command);
    if (!seed_override.empty()) cfg.values["seed"] = seed_override;
    if (!out_override.empty()) cfg.values["out"] = out_override;
    if (print_config_only) {
      std::cout << config::print_config(cfg);
      return 0;
    }
    if (command == "generate") return cmd_generate(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "eval") return cmd_eval(cfg);
    std::cerr << "unknown command: " << command << "\n";
    return 2;
  } catch (const CheckpointMismatch& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << "\n";
    return 4;
  } catch (const Diverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace rssm::cli
