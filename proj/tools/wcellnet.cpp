// wcellnet: synthetic data, training, evaluation, baselines and interpolation from the shell.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include "wcell/checkpoint.hpp"
#include "wcell/config.hpp"
#include "wcell/data.hpp"
#include "wcell/gradcheck.hpp"
#include "wcell/metrics.hpp"
#include "wcell/model.hpp"
#include "wcell/training.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace wcell;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, sep);) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::pair<Index, Index> parse_cell_range(const std::string& text) {
  const auto dash = text.find('-');
  try {
    if (dash == std::string::npos) {
      const Index n = std::stoll(text);
      return {n, n};
    }
    return {std::stoll(text.substr(0, dash)), std::stoll(text.substr(dash + 1))};
  } catch (const std::exception&) {
    throw UsageError("--cells expects N or MIN-MAX, got '" + text + "'");
  }
}

DatasetSplit<FrameSample> load_split(const std::string& data, Index intermediate, std::uint64_t split_seed) {
  if (data.empty()) throw UsageError("--data is required");
  const auto videos = load_videos(data);
  return split_dataset(build_samples(videos, intermediate), split_seed);
}

const std::vector<FrameSample>& pick_split(const DatasetSplit<FrameSample>& s, const std::string& name,
                                           std::vector<FrameSample>& all) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  if (name == "all") {
    all = s.train;
    all.insert(all.end(), s.val.begin(), s.val.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    return all;
  }
  throw UsageError("--split must be train, val, test or all");
}

void emit_csv(const std::vector<MetricsReport>& reports, MseScale scale, const std::string& out_path) {
  if (out_path.empty()) {
    write_metrics_csv(std::cout, reports, scale);
    return;
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  write_metrics_csv(out, reports, scale);
}

GrayImage to_gray(const TensorF& frame, Index plane_offset, Index h, Index w) {
  GrayImage img{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
  for (Index i = 0; i < h * w; ++i) {
    const double v = std::clamp<double>(std::nearbyint(frame[plane_offset + i]), 0.0, 255.0);
    img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v);
  }
  return img;
}

TensorF to_tensor(const GrayImage& img) {
  TensorF t({img.height, img.width});
  for (Index i = 0; i < t.size(); ++i) t[i] = img.pixels[static_cast<std::size_t>(i)];
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"W-Cell-Net frame interpolation engine"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write synthetic fluorescence time-lapses as CVIP stacks");
  std::size_t synth_videos = 2;
  Index synth_frames = 40, synth_h = 64, synth_w = 64;
  std::string synth_cells = "3-6";
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  SynthParams synth_params;
  synth->add_option("--videos", synth_videos, "Number of videos")->check(CLI::PositiveNumber);
  synth->add_option("--frames", synth_frames, "Frames per video")->check(CLI::PositiveNumber);
  synth->add_option("--height", synth_h, "Frame height (multiple of 16)");
  synth->add_option("--width", synth_w, "Frame width (multiple of 16)");
  synth->add_option("--cells", synth_cells, "Cells per video: N or MIN-MAX");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--drift", synth_params.drift_sigma, "Brownian step std (pixels/frame)");
  synth->add_option("--velocity", synth_params.velocity_max, "Max constant cell speed (pixels/frame)");
  synth->add_option("--bleach", synth_params.bleach_rate, "Photobleaching rate per frame");
  synth->add_option("--burst-prob", synth_params.burst_probability, "Per-frame burst probability per cell");
  synth->add_option("--noise", synth_params.noise_gain, "Shot-noise gain");
  synth->add_option("--background", synth_params.background, "Background level");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a network");
  std::string train_config;
  std::vector<std::string> train_sets;
  std::map<std::string, std::string> flag_values;
  train_cmd->add_option("--config", train_config, "key=value run configuration file");
  const std::vector<std::pair<std::string, std::string>> train_flags = {
      {"--k", "k"},           {"--if", "if"},         {"--iters", "iterations"},
      {"--lr", "lr"},         {"--batch", "batch"},   {"--seed", "seed"},
      {"--out-dir", "out_dir"}, {"--data", "data"},   {"--split-seed", "split_seed"},
      {"--workers", "workers"}, {"--height", "height"}, {"--width", "width"}};
  for (const auto& [flag, key] : train_flags) {
    train_cmd->add_option(flag, flag_values[key], "Overrides config key '" + key + "'");
  }
  train_cmd->add_option("--set", train_sets, "Extra key=value overrides (repeatable)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_scale = "pixel", eval_out;
  std::uint64_t eval_split_seed = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "CVIP file, directory of CVIP files, or PGM directory")->required();
  eval_cmd->add_option("--split", eval_split, "train|val|test|all");
  eval_cmd->add_option("--split-seed", eval_split_seed, "Seed of the 70-15-15 split");
  eval_cmd->add_option("--mse-scale", eval_scale, "pixel ([0,255]) or unit (divided by 255^2)");
  eval_cmd->add_option("--out", eval_out, "Metrics CSV path (default stdout)");

  // baseline
  auto* base_cmd = app.add_subcommand("baseline", "Evaluate FFR/LFR/WF baselines");
  std::string base_data, base_kinds = "FFR,LFR,WF", base_split = "all", base_scale = "pixel", base_out;
  Index base_if = 3;
  std::uint64_t base_split_seed = 0;
  base_cmd->add_option("--data", base_data, "CVIP file, directory of CVIP files, or PGM directory")->required();
  base_cmd->add_option("--if", base_if, "Intermediate frames")->check(CLI::Range(1, 64));
  base_cmd->add_option("--kinds", base_kinds, "Comma-separated subset of FFR,LFR,WF");
  base_cmd->add_option("--split", base_split, "train|val|test|all");
  base_cmd->add_option("--split-seed", base_split_seed, "Seed of the 70-15-15 split");
  base_cmd->add_option("--mse-scale", base_scale, "pixel or unit");
  base_cmd->add_option("--out", base_out, "Metrics CSV path (default stdout)");

  // interpolate
  auto* interp_cmd = app.add_subcommand("interpolate", "Synthesize intermediate frames between two PGM frames");
  std::string interp_ckpt, interp_first, interp_last, interp_prefix;
  interp_cmd->add_option("--checkpoint", interp_ckpt, "Checkpoint file")->required();
  interp_cmd->add_option("--first", interp_first, "First frame (PGM)")->required();
  interp_cmd->add_option("--last", interp_last, "Last frame (PGM)")->required();
  interp_cmd->add_option("--out-prefix", interp_prefix, "Output prefix; writes <prefix>_01.pgm ...")->required();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  std::uint64_t grad_seed = 0;
  grad_cmd->add_option("--seed", grad_seed, "Seed for random inputs");

  // count-params
  auto* count_cmd = app.add_subcommand("count-params", "Print the trainable parameter count");
  ModelConfig count_cfg;
  std::string count_upsample = "transposed";
  count_cmd->add_option("--k", count_cfg.k, "Base channel count")->check(CLI::PositiveNumber);
  count_cmd->add_option("--if", count_cfg.frames, "Intermediate frames")->check(CLI::Range(1, 7));
  count_cmd->add_option("--head-kernel", count_cfg.head_kernel, "Head kernel size")->check(CLI::IsMember({1, 3}));
  count_cmd->add_option("--upsample-mode", count_upsample, "transposed|nearest")
      ->check(CLI::IsMember({"transposed", "nearest"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) {
      const auto [lo, hi] = parse_cell_range(synth_cells);
      if (synth_h % 16 != 0 || synth_w % 16 != 0) throw UsageError("--height and --width must be multiples of 16");
      const auto videos =
          synth_generate(synth_videos, synth_frames, synth_h, synth_w, lo, hi, synth_seed, synth_params);
      fs::create_directories(synth_out);
      for (std::size_t i = 0; i < videos.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "video_%03zu.cvip", i);
        const fs::path path = fs::path(synth_out) / name;
        save_stack(videos[i], path);
        std::cout << path.string() << " frames=" << videos[i].frames << " height=" << videos[i].height
                  << " width=" << videos[i].width << " bytes=" << fs::file_size(path) << "\n";
      }
    } else if (*train_cmd) {
      RunConfig cfg = train_config.empty() ? RunConfig{} : load_run_config(train_config);
      for (const auto& [flag, key] : train_flags) {
        if (train_cmd->count(flag) > 0) cfg.set(key, flag_values[key]);
      }
      for (const auto& kv : train_sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      cfg.validate();
      const auto split = load_split(cfg.data, cfg.model.frames, cfg.split_seed);
      if (split.train.empty()) throw std::runtime_error("training split is empty");
      const FrameSample& probe = split.train.front();
      // Frame size defaults to the data's unless pinned by the config or a flag.
      if (cfg.assigned.count("height") == 0) cfg.model.input_h = probe.height();
      if (cfg.assigned.count("width") == 0) cfg.model.input_w = probe.width();
      cfg.model.validate();
      fs::create_directories(cfg.out_dir);
      TrainOutputs outputs;
      outputs.out_dir = fs::path(cfg.out_dir);
      if (!split.val.empty()) outputs.validation = &split.val;
      const TrainResult result = train(cfg.model, cfg.loss, cfg.train, split.train, outputs);
      std::vector<MetricsReport> reports;
      if (!split.val.empty()) reports.push_back(evaluate(result.net, split.val, "val"));
      if (!split.test.empty()) reports.push_back(evaluate(result.net, split.test, "test"));
      emit_csv(reports, MseScale::kPixel, (fs::path(cfg.out_dir) / "metrics.csv").string());
      const auto& last = result.log.empty() ? TrainLogRow{} : result.log.back();
      std::cout << "trained " << result.log.size() << " iterations, final loss " << last.total << ", "
                << count_parameters(cfg.model) << " parameters -> " << cfg.out_dir << "\n";
    } else if (*eval_cmd) {
      const MseScale scale = parse_mse_scale(eval_scale);
      const WCellNet<float> net = load_checkpoint(eval_ckpt);
      const auto split = load_split(eval_data, net.config().frames, eval_split_seed);
      std::vector<FrameSample> all;
      const auto& samples = pick_split(split, eval_split, all);
      if (samples.empty()) throw std::runtime_error("split '" + eval_split + "' is empty");
      emit_csv({evaluate(net, samples, eval_split)}, scale, eval_out);
    } else if (*base_cmd) {
      const MseScale scale = parse_mse_scale(base_scale);
      std::vector<BaselineKind> kinds;
      for (const auto& k : split_list(base_kinds, ',')) kinds.push_back(parse_baseline(k));
      if (kinds.empty()) throw UsageError("--kinds is empty");
      const auto split = load_split(base_data, base_if, base_split_seed);
      std::vector<FrameSample> all;
      const auto& samples = pick_split(split, base_split, all);
      if (samples.empty()) throw std::runtime_error("split '" + base_split + "' is empty");
      emit_csv(evaluate_baselines(samples, base_split, kinds), scale, base_out);
    } else if (*interp_cmd) {
      const WCellNet<float> net = load_checkpoint(interp_ckpt);
      const GrayImage first = read_pgm(interp_first);
      const GrayImage last = read_pgm(interp_last);
      const TensorF frames = interpolate(net, to_tensor(first), to_tensor(last));
      const Index h = frames.dim(1), w = frames.dim(2);
      for (Index j = 0; j < frames.dim(0); ++j) {
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, "_%02lld.pgm", static_cast<long long>(j + 1));
        const std::string path = interp_prefix + suffix;
        write_pgm(path, to_gray(frames, j * h * w, h, w));
        std::cout << path << "\n";
      }
    } else if (*grad_cmd) {
      bool ok = true;
      for (const auto& r : run_gradcheck_suite(grad_seed)) {
        std::printf("%-26s %s checked=%zu failed=%zu worst=%.3f\n", r.name.c_str(), r.ok() ? "ok  " : "FAIL",
                    r.checked, r.failed, r.worst_excess);
        ok = ok && r.ok();
      }
      return ok ? 0 : 1;
    } else if (*count_cmd) {
      count_cfg.upsample = count_upsample == "nearest" ? UpsampleMode::kNearest : UpsampleMode::kTransposed;
      count_cfg.validate();
      std::cout << count_parameters(count_cfg) << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
