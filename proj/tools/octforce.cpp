// Command-line front end: simulation, dataset construction, training,
// evaluation, model comparison, and insertion plot-data export.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "octforce/octforce.hpp"

namespace {

using namespace octforce;

// training runs at sensor-grade precision; tests pin gradients at 64 bits
using Scalar = float;

struct OpticsFlags {
  sim::OpticalParams optics;

  void attach(CLI::App* cmd) {
    cmd->add_option("--depth-px", optics.depth_px, "Rendered A-scan length in pixels")
        ->capture_default_str();
    cmd->add_option("--px-per-um", optics.px_per_um, "Pixels per micrometer of deformation")
        ->capture_default_str();
    cmd->add_option("--tip-base-idx", optics.tip_base_idx,
                    "Tip lower-surface pixel at zero force")
        ->capture_default_str();
    cmd->add_option("--epoxy-top-idx", optics.epoxy_top_idx, "Fixed epoxy upper-surface pixel")
        ->capture_default_str();
    cmd->add_option("--peak-amp", optics.peak_amp, "Surface peak amplitude")
        ->capture_default_str();
    cmd->add_option("--peak-width-px", optics.peak_width_px, "Gaussian peak half-width in pixels")
        ->capture_default_str();
    cmd->add_option("--speckle-sigma", optics.speckle_sigma, "Multiplicative speckle sigma")
        ->capture_default_str();
    cmd->add_option("--noise-floor", optics.noise_floor, "Additive noise sigma")
        ->capture_default_str();
  }
};

struct ArchFlags {
  std::string groups_text = "2x16,2x32,2x64";
  nets::LayerSpec spec;

  void attach(CLI::App* cmd) {
    cmd->add_option("--groups", groups_text,
                    "ResBlock groups as blocksxfeatures, e.g. 2x16,2x32,2x64")
        ->capture_default_str();
    cmd->add_option("--kernel", spec.kernel, "Trunk convolution kernel size")
        ->capture_default_str();
    cmd->add_option("--convgru-layers", spec.convgru_layers, "Convolutional GRU stack depth")
        ->capture_default_str();
    cmd->add_option("--convgru-maps", spec.convgru_features,
                    "Feature maps per convolutional GRU layer")
        ->capture_default_str();
    cmd->add_option("--convgru-kernel", spec.convgru_kernel, "Convolutional GRU kernel size")
        ->capture_default_str();
    cmd->add_option("--gru-layers", spec.gru_layers, "Recurrent depth of the pure GRU model")
        ->capture_default_str();
    cmd->add_option("--gru-hidden", spec.gru_hidden, "Hidden units per GRU layer")
        ->capture_default_str();
  }

  nets::LayerSpec resolve() const {
    nets::LayerSpec out = spec;
    out.groups.clear();
    std::istringstream ss(groups_text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto x = item.find('x');
      if (x == std::string::npos)
        throw InvalidArgument("--groups: expected blocksxfeatures, got '" + item + "'");
      nets::ResGroup g;
      g.blocks = std::stoi(item.substr(0, x));
      g.features = std::stoi(item.substr(x + 1));
      out.groups.push_back(g);
    }
    out.validate();
    return out;
  }
};

struct TrainFlags {
  train::TrainConfig cfg;
  data::SplitSpec split;
  bool no_label_scaling = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size, "Mini-batch size")->capture_default_str();
    cmd->add_option("--lr", cfg.learning_rate, "Adam learning rate")->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "Run seed")->capture_default_str();
    cmd->add_flag("--no-label-scaling", no_label_scaling,
                  "Train on raw millinewton labels instead of [0,1]-scaled ones");
    cmd->add_option("--train-frac", split.train_frac, "Training fraction")
        ->capture_default_str();
    cmd->add_option("--val-frac", split.val_frac, "Validation fraction")->capture_default_str();
    cmd->add_option("--test-frac", split.test_frac, "Test fraction")->capture_default_str();
  }

  train::TrainConfig resolve() const {
    train::TrainConfig out = cfg;
    out.scale_labels = !no_label_scaling;
    return out;
  }
};

void echo_config(const CLI::App* cmd) {
  std::cout << "# resolved configuration (" << cmd->get_name() << ")\n";
  std::istringstream ss(cmd->config_to_str(true, false));
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) std::cout << "# " << line << "\n";
}

sim::NeedlePreset resolve_preset(const std::string& name, const std::string& file) {
  if (!file.empty()) return sim::NeedlePreset::from_file(file);
  return sim::NeedlePreset::by_name(name);
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string preset_name = "needle1";
  std::string preset_file;
  std::string mode = "calibration";
  double duration = 60.0;
  std::string profile_file;
  bool shielded = false;
  std::uint64_t seed = 1;
  int t_s = 50;
  int d_c = 70;
  int stride = 1;
  std::string out;
  std::string truth_out;
  OpticsFlags optics;
};

int run_simulate(SimulateArgs& a) {
  const auto preset = resolve_preset(a.preset_name, a.preset_file);
  sim::OpticalParams optics = a.optics.optics;
  optics.validate();
  if (a.t_s < 1) throw InvalidArgument("--t-s must be >= 1");
  if (a.stride < 1) throw InvalidArgument("--stride must be >= 1");
  if (a.d_c > optics.depth_px)
    throw InvalidArgument("--d-c " + std::to_string(a.d_c) + " exceeds --depth-px " +
                          std::to_string(optics.depth_px));
  if (static_cast<double>(a.d_c) <= optics.tip_base_idx)
    throw InvalidArgument("--d-c " + std::to_string(a.d_c) +
                          " would crop away the tip surface at pixel " +
                          std::to_string(optics.tip_base_idx));
  if (a.out.empty()) throw InvalidArgument("--out is required");

  // pixels at or beyond d_c never reach the container, and the per-pixel
  // noise draws are ordered front-to-back, so rendering can stop at the crop
  if (a.d_c < optics.depth_px) optics.depth_px = a.d_c;

  data::DatasetHeader header;
  header.t_s = static_cast<std::uint32_t>(a.t_s);
  header.d_c = static_cast<std::uint32_t>(a.d_c);
  header.stride = static_cast<std::uint32_t>(a.stride);
  header.seed = a.seed;
  header.preset_name = preset.name;

  std::vector<streams::LabeledScan> labeled;
  std::vector<streams::LabeledScan> truth_labeled;
  if (a.mode == "calibration") {
    auto res = sim::simulate_calibration(preset, optics, a.duration, a.seed);
    labeled = streams::match_streams(res.oct, res.force);
  } else if (a.mode == "insertion") {
    const auto profile = a.profile_file.empty() ? sim::InsertionProfile::demo()
                                                : sim::InsertionProfile::from_file(a.profile_file);
    auto res = sim::simulate_insertion(preset, optics, profile, a.shielded, a.seed);
    labeled = streams::match_streams(res.oct, res.base_force);
    truth_labeled = streams::match_streams(res.oct, res.tip_truth);
  } else {
    throw InvalidArgument("--mode must be calibration or insertion, got '" + a.mode + "'");
  }
  labeled = streams::crop_scans(std::move(labeled), a.d_c);

  data::DatasetWriter writer(a.out, header);
  double f_lo = labeled.front().f, f_hi = f_lo;
  for (std::size_t start = 0; start + static_cast<std::size_t>(a.t_s) <= labeled.size();
       start += static_cast<std::size_t>(a.stride)) {
    const auto sample = streams::window_at(labeled, start, a.t_s);
    f_lo = std::min(f_lo, sample.label);
    f_hi = std::max(f_hi, sample.label);
    writer.append(sample);
  }
  const auto n = writer.count();
  writer.finalize();

  if (a.mode == "insertion") {
    const std::string truth_path = a.truth_out.empty() ? a.out + ".truth.csv" : a.truth_out;
    std::ofstream tf(truth_path);
    if (!tf) throw DataError("cannot open for writing: " + truth_path);
    tf << "t,measured_mN,tip_truth_mN\n";
    tf.precision(12);
    for (std::size_t start = 0; start + static_cast<std::size_t>(a.t_s) <= labeled.size();
         start += static_cast<std::size_t>(a.stride)) {
      const auto& last_base = labeled[start + static_cast<std::size_t>(a.t_s) - 1];
      const auto& last_truth = truth_labeled[start + static_cast<std::size_t>(a.t_s) - 1];
      tf << last_base.t << ',' << last_base.f << ',' << last_truth.f << '\n';
    }
    std::cout << "truth series: " << truth_path << "\n";
  }

  std::cout << "dataset: " << a.out << "\n"
            << "samples: " << n << " (t_s=" << a.t_s << ", d_c=" << a.d_c
            << ", stride=" << a.stride << ")\n"
            << "force range: [" << f_lo << ", " << f_hi << "] mN\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string arch = "convgru-cnn";
  std::string out;
  std::string history;
  ArchFlags arch_flags;
  TrainFlags train_flags;
};

int run_train(TrainArgs& a) {
  if (a.out.empty()) throw InvalidArgument("--out is required");
  auto [header, samples] = data::load_dataset(a.data);
  auto splits = data::split(samples, a.train_flags.split);
  const auto spec = a.arch_flags.resolve();
  const auto cfg = a.train_flags.resolve();
  const auto arch = nets::parse_arch(a.arch);

  auto result = train::train<Scalar>(arch, spec, splits.train, splits.val, cfg);
  nets::save_checkpoint(result.model, a.out);

  const std::string history_path = a.history.empty() ? a.out + ".history.csv" : a.history;
  std::ofstream hf(history_path);
  if (!hf) throw DataError("cannot open for writing: " + history_path);
  train::write_history_csv(result.history, hf);

  std::cout << "checkpoint: " << a.out << "\n"
            << "history: " << history_path << "\n"
            << "best epoch: " << result.best_epoch << " (val mse "
            << result.history[static_cast<std::size_t>(result.best_epoch - 1)].val_loss << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split_name = "test";
  std::string out;
  data::SplitSpec split;
};

void check_compat(const nets::Model<Scalar>& model, const data::DatasetHeader& header) {
  if (model.t_s != static_cast<int>(header.t_s) || model.d_c != static_cast<int>(header.d_c))
    throw DataError("checkpoint expects t_s=" + std::to_string(model.t_s) +
                    ", d_c=" + std::to_string(model.d_c) + " but the dataset has t_s=" +
                    std::to_string(header.t_s) + ", d_c=" + std::to_string(header.d_c));
}

int run_eval(EvalArgs& a) {
  auto model = nets::load_checkpoint<Scalar>(a.checkpoint);
  auto [header, samples] = data::load_dataset(a.data);
  check_compat(model, header);

  std::vector<streams::SequenceSample> subject;
  if (a.split_name == "all") {
    subject = std::move(samples);
  } else {
    auto splits = data::split(samples, a.split);
    if (a.split_name == "train")
      subject = std::move(splits.train);
    else if (a.split_name == "val")
      subject = std::move(splits.val);
    else if (a.split_name == "test")
      subject = std::move(splits.test);
    else
      throw InvalidArgument("--split must be train, val, test or all");
  }

  const auto metrics = train::evaluate(model, subject);
  std::ostringstream report;
  report << train::metrics_csv_header() << "\n" << train::metrics_csv_row(metrics) << "\n";
  std::cout << report.str();
  if (!a.out.empty()) {
    std::ofstream of(a.out);
    if (!of) throw DataError("cannot open for writing: " + a.out);
    of << report.str();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareArgs {
  std::string data;
  std::string archs_text = "convgru-cnn,cnn-gru,2d-cnn,1d-cnn,gru";
  int seeds = 3;
  std::string out;
  ArchFlags arch_flags;
  TrainFlags train_flags;
};

int run_compare(CompareArgs& a) {
  auto [header, samples] = data::load_dataset(a.data);
  auto splits = data::split(samples, a.train_flags.split);
  const auto spec = a.arch_flags.resolve();
  const auto cfg = a.train_flags.resolve();

  std::vector<nets::ArchId> archs;
  std::istringstream ss(a.archs_text);
  std::string item;
  while (std::getline(ss, item, ',')) archs.push_back(nets::parse_arch(item));
  if (archs.empty()) throw InvalidArgument("--archs is empty");

  const auto rows = train::compare_models<Scalar>(splits, archs, spec, cfg, a.seeds);
  std::ostringstream report;
  train::write_compare_csv(rows, report);
  std::cout << report.str();
  if (!a.out.empty()) {
    std::ofstream of(a.out);
    if (!of) throw DataError("cannot open for writing: " + a.out);
    of << report.str();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

struct PlotArgs {
  std::string checkpoint;
  std::string data;
  std::string truth;
  std::string out;
};

int run_plot(PlotArgs& a) {
  auto model = nets::load_checkpoint<Scalar>(a.checkpoint);
  auto [header, samples] = data::load_dataset(a.data);
  check_compat(model, header);

  const std::string truth_path = a.truth.empty() ? a.data + ".truth.csv" : a.truth;
  std::ifstream tf(truth_path);
  if (!tf) throw DataError("cannot open: " + truth_path);
  std::string line;
  if (!std::getline(tf, line) || line != "t,measured_mN,tip_truth_mN")
    throw DataError(truth_path + ": missing 't,measured_mN,tip_truth_mN' header");
  std::vector<double> t, measured, truth;
  while (std::getline(tf, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string c1, c2, c3;
    if (!std::getline(ls, c1, ',') || !std::getline(ls, c2, ',') || !std::getline(ls, c3))
      throw DataError(truth_path + ": malformed row '" + line + "'");
    t.push_back(std::stod(c1));
    measured.push_back(std::stod(c2));
    truth.push_back(std::stod(c3));
  }
  if (t.size() != samples.size())
    throw DataError("truth series has " + std::to_string(t.size()) + " rows but the dataset has " +
                    std::to_string(samples.size()) + " samples");

  const auto predictions = train::predict(model, samples);
  if (a.out.empty()) throw InvalidArgument("--out is required");
  std::ofstream of(a.out);
  if (!of) throw DataError("cannot open for writing: " + a.out);
  of << "t,predicted_mN,measured_mN,tip_truth_mN\n";
  of.precision(12);
  for (std::size_t i = 0; i < t.size(); ++i)
    of << t[i] << ',' << predictions[i] << ',' << measured[i] << ',' << truth[i] << '\n';
  std::cout << "plot data: " << a.out << " (" << t.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OCT needle-tip force estimation: simulation, training, evaluation"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a calibration or insertion dataset");
  sim_cmd->set_config("--config", "", "Key=value file with defaults; flags win");
  sim_cmd->add_option("--preset", sim_args.preset_name, "Builtin needle preset")
      ->capture_default_str();
  sim_cmd->add_option("--preset-file", sim_args.preset_file, "Key=value needle preset file");
  sim_cmd->add_option("--mode", sim_args.mode, "calibration or insertion")
      ->check(CLI::IsMember({"calibration", "insertion"}))
      ->capture_default_str();
  sim_cmd->add_option("--duration", sim_args.duration, "Calibration duration in seconds")
      ->capture_default_str();
  sim_cmd->add_option("--profile", sim_args.profile_file,
                      "Insertion profile file (default: builtin demo profile)");
  sim_cmd->add_flag("--shielded", sim_args.shielded,
                    "Decouple shaft friction from the base sensor");
  sim_cmd->add_option("--seed", sim_args.seed, "Master seed")->capture_default_str();
  sim_cmd->add_option("--t-s", sim_args.t_s, "Window length in scans")->capture_default_str();
  sim_cmd->add_option("--d-c", sim_args.d_c, "Depth crop in pixels")->capture_default_str();
  sim_cmd->add_option("--stride", sim_args.stride, "Window stride in scans")
      ->capture_default_str();
  sim_cmd->add_option("--out", sim_args.out, "Output dataset path");
  sim_cmd->add_option("--truth-out", sim_args.truth_out,
                      "Tip-truth series path (insertion mode; default <out>.truth.csv)");
  sim_args.optics.attach(sim_cmd);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train one architecture on a dataset");
  train_cmd->set_config("--config", "", "Key=value file with defaults; flags win");
  train_cmd->add_option("--data", train_args.data, "Dataset path")->required();
  train_cmd->add_option("--arch", train_args.arch, "Architecture")
      ->check(CLI::IsMember({"convgru-cnn", "cnn-gru", "2d-cnn", "1d-cnn", "gru"}))
      ->capture_default_str();
  train_cmd->add_option("--out", train_args.out, "Checkpoint output path");
  train_cmd->add_option("--history", train_args.history,
                        "History table path (default <out>.history.csv)");
  train_args.arch_flags.attach(train_cmd);
  train_args.train_flags.attach(train_cmd);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_cmd->set_config("--config", "", "Key=value file with defaults; flags win");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path")->required();
  eval_cmd->add_option("--data", eval_args.data, "Dataset path")->required();
  eval_cmd->add_option("--split", eval_args.split_name, "train, val, test or all")
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_args.out, "Also write the metrics table here");
  eval_cmd->add_option("--train-frac", eval_args.split.train_frac, "Training fraction")
      ->capture_default_str();
  eval_cmd->add_option("--val-frac", eval_args.split.val_frac, "Validation fraction")
      ->capture_default_str();
  eval_cmd->add_option("--test-frac", eval_args.split.test_frac, "Test fraction")
      ->capture_default_str();

  CompareArgs compare_args;
  auto* compare_cmd =
      app.add_subcommand("compare", "Train several architectures and rank their test metrics");
  compare_cmd->set_config("--config", "", "Key=value file with defaults; flags win");
  compare_cmd->add_option("--data", compare_args.data, "Dataset path")->required();
  compare_cmd->add_option("--archs", compare_args.archs_text, "Comma-separated architectures")
      ->capture_default_str();
  compare_cmd->add_option("--seeds", compare_args.seeds, "Runs per architecture")
      ->capture_default_str();
  compare_cmd->add_option("--out", compare_args.out, "Also write the ranking table here");
  compare_args.arch_flags.attach(compare_cmd);
  compare_args.train_flags.attach(compare_cmd);

  PlotArgs plot_args;
  auto* plot_cmd = app.add_subcommand(
      "plot", "Export (t, predicted, measured, tip truth) columns for an insertion dataset");
  plot_cmd->set_config("--config", "", "Key=value file with defaults; flags win");
  plot_cmd->add_option("--checkpoint", plot_args.checkpoint, "Checkpoint path")->required();
  plot_cmd->add_option("--data", plot_args.data, "Insertion dataset path")->required();
  plot_cmd->add_option("--truth", plot_args.truth,
                       "Tip-truth series path (default <data>.truth.csv)");
  plot_cmd->add_option("--out", plot_args.out, "Output columns path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (sim_cmd->parsed()) {
      echo_config(sim_cmd);
      return run_simulate(sim_args);
    }
    if (train_cmd->parsed()) {
      echo_config(train_cmd);
      return run_train(train_args);
    }
    if (eval_cmd->parsed()) {
      echo_config(eval_cmd);
      return run_eval(eval_args);
    }
    if (compare_cmd->parsed()) {
      echo_config(compare_cmd);
      return run_compare(compare_args);
    }
    if (plot_cmd->parsed()) {
      echo_config(plot_cmd);
      return run_plot(plot_args);
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
