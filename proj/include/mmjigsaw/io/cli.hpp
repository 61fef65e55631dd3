#pragma once

// Command-line pipeline. cli_dispatch returns the process exit code:
// 0 success, 1 usage or config error, 2 data error, 3 numeric failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mmjigsaw/core/error.hpp"
#include "mmjigsaw/crossmodal/sweep.hpp"
#include "mmjigsaw/crossmodal/translator.hpp"
#include "mmjigsaw/io/config.hpp"
#include "mmjigsaw/io/formats.hpp"
#include "mmjigsaw/io/manifest.hpp"
#include "mmjigsaw/puzzle/synth.hpp"
#include "mmjigsaw/transfer/experiments.hpp"

namespace mmjigsaw {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

namespace cli {

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;  // section.key=value
  std::int64_t seed = -1;               // <0: keep the config's seed
  std::string out = "out";
};

inline ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig cfg = load_config(g.config_path);
  for (const auto& o : g.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got \"" + o + "\"");
    set_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
  if (g.seed >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed);
  validate_config(cfg);
  return cfg;
}

inline std::vector<MultimodalVolume> load_volumes(const std::vector<std::string>& paths) {
  if (paths.empty()) throw DataError("no input volumes given");
  std::vector<MultimodalVolume> out;
  for (const auto& p : paths) out.push_back(read_mmv(p));
  return out;
}

// Each "x.mmv" needs a sibling "x.msk".
inline std::vector<SynthCase> load_cases(const std::vector<std::string>& paths) {
  if (paths.empty()) throw DataError("no input volumes given");
  std::vector<SynthCase> out;
  for (const auto& p : paths) {
    SynthCase c{read_mmv(p), read_msk(fs::path(p).replace_extension(".msk"))};
    if (!(c.mask.dims == c.volume.dims())) {
      throw DataError("mask " + dims_str(c.mask.dims) + " does not match volume " + dims_str(c.volume.dims()) + " for " + p);
    }
    out.push_back(std::move(c));
  }
  return out;
}

// The trailing ceil(test_fraction * n) cases are held out.
inline DownstreamData split_cases(const std::vector<SynthCase>& cases, double test_fraction,
                                  const ExperimentConfig& cfg) {
  if (cases.size() < 2) throw DataError("fine-tuning needs at least 2 labelled volumes");
  auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(cases.size()) - 1e-9));
  n_test = std::clamp<std::size_t>(n_test, 1, cases.size() - 1);
  const std::span<const SynthCase> all(cases);
  DownstreamData d;
  d.train = labeled_slices(all.subspan(0, cases.size() - n_test), cfg.min_foreground, cfg.slice_stride);
  d.test = labeled_slices(all.subspan(cases.size() - n_test), cfg.min_foreground, cfg.slice_stride);
  if (d.train.empty() || d.test.empty()) throw DataError("no labelled slices pass the foreground threshold");
  return d;
}

inline std::vector<double> parse_doubles(const std::string& what, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(detail::parse_double(what, item));
  if (out.empty()) throw ConfigError("--" + what + " is empty");
  return out;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(detail::parse_int<std::uint64_t>("seeds", item));
  if (out.empty()) throw ConfigError("--seeds is empty");
  return out;
}

inline std::vector<std::size_t> parse_sizes(const std::string& what, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(detail::parse_int<std::size_t>(what, item));
  if (out.empty()) throw ConfigError("--" + what + " is empty");
  return out;
}

inline std::string case_name(std::size_t i) {
  std::ostringstream os;
  os << "case_" << std::setw(3) << std::setfill('0') << i;
  return os.str();
}

}  // namespace cli

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  using namespace cli;
  CLI::App app{"Multimodal jigsaw pretraining pipeline", "mmjigsaw"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "INI experiment config");
  app.add_option("--set", g.overrides, "override one config key, section.key=value");
  app.add_option("--seed", g.seed, "seed, replacing the config's");
  app.add_option("--out", g.out, "output directory (MMJIGSAW_OUT overrides)");

  std::vector<std::string> inputs;
  std::string solver_path, translator_path, seg_path, puzzles_path;
  std::string fractions = "0.01,0.1,1", seeds = "0,1,2", grids = "2,3,4,5";
  std::size_t count = 0;
  double test_fraction = 0.25;
  bool timing = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic multimodal dataset (MMV + MSK)");
  synth->add_option("--count", count, "number of volumes (default data.volumes)");

  auto* puzzles = app.add_subcommand("puzzles", "cut jigsaw puzzles from MMV volumes");
  puzzles->add_option("inputs", inputs, "MMV files")->required();

  auto* pretrain = app.add_subcommand("pretrain", "train the puzzle solver");
  pretrain->add_option("inputs", inputs, "MMV files");
  pretrain->add_option("--puzzles", puzzles_path, "PZL file used instead of MMV inputs");
  pretrain->add_flag("--timing", timing, "record wall-clock seconds in the report");

  auto* xtrain = app.add_subcommand("crossmodal-train", "train the modality translator on paired volumes");
  xtrain->add_option("inputs", inputs, "MMV files")->required();

  auto* synthesize_cmd = app.add_subcommand("synthesize", "replace the target modality with its translation");
  synthesize_cmd->add_option("inputs", inputs, "MMV files")->required();
  synthesize_cmd->add_option("--translator", translator_path, "translator checkpoint")->required();

  auto* finetune_cmd = app.add_subcommand("finetune", "fine-tune a segmentation model");
  finetune_cmd->add_option("inputs", inputs, "MMV files with sibling MSK masks")->required();
  finetune_cmd->add_option("--solver", solver_path, "pretrained solver checkpoint (default: from scratch)");
  finetune_cmd->add_option("--test-fraction", test_fraction, "held-out share of volumes");
  finetune_cmd->add_flag("--timing", timing, "record wall-clock seconds in the report");

  auto* lowshot = app.add_subcommand("lowshot", "pretrained vs scratch over label fractions");
  lowshot->add_option("inputs", inputs, "MMV files with sibling MSK masks")->required();
  lowshot->add_option("--solver", solver_path, "pretrained solver checkpoint")->required();
  lowshot->add_option("--fractions", fractions, "comma-separated label fractions");
  lowshot->add_option("--seeds", seeds, "comma-separated seeds");
  lowshot->add_option("--test-fraction", test_fraction, "held-out share of volumes");

  auto* ablate = app.add_subcommand("ablate-complexity", "downstream dice per pretraining grid size");
  ablate->add_option("inputs", inputs, "MMV files with sibling MSK masks")->required();
  ablate->add_option("--grids", grids, "comma-separated grid sizes");
  ablate->add_option("--seeds", seeds, "comma-separated seeds");
  ablate->add_option("--test-fraction", test_fraction, "held-out share of volumes");

  auto* sweep = app.add_subcommand("sweep-crossmodal", "downstream metric per translator training fraction");
  sweep->add_option("inputs", inputs, "MMV files with sibling MSK masks")->required();
  sweep->add_option("--fractions", fractions, "comma-separated paired fractions");
  sweep->add_option("--seeds", seeds, "comma-separated seeds");
  sweep->add_option("--test-fraction", test_fraction, "held-out share of volumes");

  auto* eval = app.add_subcommand("eval", "evaluate a solver on puzzles or a segmentation model on masks");
  eval->add_option("inputs", inputs, "MMV files (with MSK masks for --seg)");
  eval->add_option("--solver", solver_path, "solver checkpoint");
  eval->add_option("--puzzles", puzzles_path, "PZL file");
  eval->add_option("--seg", seg_path, "segmentation checkpoint");

  if (argc <= 1) {
    err << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  auto* cmd = app.get_subcommands().front();
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    const ExperimentConfig cfg = resolve_config(g);
    const fs::path dir = resolve_output_dir(g.out);
    fs::create_directories(dir);
    write_manifest(dir, cfg, cmd->get_name(), args);
    const Rng root(cfg.seed);

    if (cmd == synth) {
      const std::size_t n = count ? count : cfg.volumes;
      const auto cases = synth_dataset(n, volume_dims(cfg), cfg.modalities, root.substream(0), synth_options(cfg));
      for (std::size_t i = 0; i < cases.size(); ++i) {
        write_mmv(dir / (case_name(i) + ".mmv"), cases[i].volume);
        write_msk(dir / (case_name(i) + ".msk"), cases[i].mask);
      }
      out << "wrote " << cases.size() << " volumes to " << dir.string() << '\n';
    } else if (cmd == puzzles) {
      const auto vols = load_volumes(inputs);
      const auto pz = build_puzzles(vols, pretrain_config(cfg).puzzle, root.substream(1));
      write_file_atomic(dir / "puzzles.pzl", encode_puzzles(pz));
      out << "wrote " << pz.size() << " puzzles\n";
    } else if (cmd == pretrain) {
      const PretrainConfig pc = pretrain_config(cfg);
      PretrainResult r;
      if (!puzzles_path.empty()) {
        const auto pz = decode_puzzles(read_file(puzzles_path));
        if (pz.empty()) throw DataError("puzzle file holds no puzzles");
        auto n_train = pz.size() - static_cast<std::size_t>(std::floor(cfg.heldout_fraction * static_cast<double>(pz.size())));
        const std::span<const Puzzle> all(pz);
        r.params = init_params(pc.arch, pz.front().n(), root.substream(3), pc.init);
        r.report = train_solver(r.params, all.subspan(0, n_train), all.subspan(n_train), pc.solver, pc.train,
                                root.substream(4));
        r.train_puzzles = n_train;
      } else {
        r = pretrain_solver(load_volumes(inputs), pc, root);
      }
      const std::string csv = r.report.to_csv(timing);
      write_file_atomic(dir / "solver.ckpt", encode_solver_checkpoint(r.params, csv));
      write_text_atomic(dir / "pretrain.csv", csv);
      out << "trained on " << r.train_puzzles << " puzzles, final loss " << r.report.rows.back().loss << '\n';
    } else if (cmd == xtrain) {
      const auto vols = load_volumes(inputs);
      std::vector<PairedSlices> pairs;
      for (const auto& v : vols)
        for (auto& p : slice_pairs(v, cfg.source, cfg.target)) pairs.push_back(std::move(p));
      const auto [params, curves] =
          train_translator<float>(std::span<const PairedSlices>(pairs), translator_config(cfg), root.substream(7));
      write_file_atomic(dir / "translator.xmod", encode_translator(params));
      write_text_atomic(dir / "translator.csv", curves.to_csv());
      out << "trained on " << pairs.size() << " slice pairs\n";
    } else if (cmd == synthesize_cmd) {
      const auto params = decode_translator(read_file(translator_path));
      for (const auto& p : inputs) {
        write_mmv(dir / fs::path(p).filename(), synthesize(params, read_mmv(p), cfg.source, cfg.target));
      }
      out << "synthesized " << inputs.size() << " volumes\n";
    } else if (cmd == finetune_cmd) {
      const auto data = split_cases(load_cases(inputs), test_fraction, cfg);
      const DownstreamConfig dc = downstream_config(cfg);
      const EncoderArch arch = encoder_arch(cfg);
      const Rng rng = root.substream(100);
      SegModel model = init_seg_model(arch, data.train.slices.front().image.dim(0), data.train.classes,
                                      rng.substream(0), dc.init);
      if (!solver_path.empty()) {
        model = transplant(decode_solver_checkpoint(read_file(solver_path)).params, std::move(model), dc.adapt);
      }
      const auto report = finetune(model, data.train, data.test, dc.finetune, rng.substream(1));
      const std::string csv = report.to_csv(timing);
      write_file_atomic(dir / "seg.ckpt", encode_seg_checkpoint(model, csv));
      write_text_atomic(dir / "finetune.csv", csv);
      std::vector<MetricRow> rows;
      push_dice_rows(rows, "finetune", solver_path.empty() ? "scratch" : "pretrained", 1.0, cfg.seed,
                     report.final_dice());
      write_text_atomic(dir / "metrics.csv", metrics_csv(rows));
      out << "mean foreground dice " << mean_foreground_dice(report.final_dice()) << '\n';
    } else if (cmd == lowshot) {
      const auto data = split_cases(load_cases(inputs), test_fraction, cfg);
      const auto solver = decode_solver_checkpoint(read_file(solver_path)).params;
      const auto fr = parse_doubles("fractions", fractions);
      const auto sd = parse_seeds(seeds);
      const auto rows = lowshot_sweep(solver, encoder_arch(cfg), data, fr, sd, downstream_config(cfg));
      write_text_atomic(dir / "metrics.csv", metrics_csv(rows));
      out << "wrote " << rows.size() << " metric rows\n";
    } else if (cmd == ablate) {
      const auto cases = load_cases(inputs);
      const auto data = split_cases(cases, test_fraction, cfg);
      std::vector<MultimodalVolume> vols;
      for (const auto& c : cases) vols.push_back(c.volume);
      const auto rows = complexity_ablation(vols, parse_sizes("grids", grids), pretrain_config(cfg), data,
                                            downstream_config(cfg), parse_seeds(seeds));
      write_text_atomic(dir / "metrics.csv", metrics_csv(rows));
      out << "wrote " << rows.size() << " metric rows\n";
    } else if (cmd == sweep) {
      const auto cases = load_cases(inputs);
      const auto data = split_cases(cases, test_fraction, cfg);
      std::vector<MultimodalVolume> vols;
      for (const auto& c : cases) vols.push_back(c.volume);
      const auto rows = semi_supervised_sweep(vols, parse_doubles("fractions", fractions), data, sweep_config(cfg),
                                              parse_seeds(seeds));
      write_text_atomic(dir / "sweep.csv", sweep_csv(rows));
      out << "wrote " << rows.size() << " sweep rows\n";
    } else if (cmd == eval) {
      std::ostringstream csv;
      csv.precision(9);
      if (!seg_path.empty()) {
        const auto model = decode_seg_checkpoint(read_file(seg_path)).model;
        const auto ds = labeled_slices(load_cases(inputs), cfg.min_foreground, cfg.slice_stride);
        if (ds.empty()) throw DataError("no labelled slices pass the foreground threshold");
        const auto dice = evaluate_dice(model, ds);
        csv << "class,dice\n";
        for (std::size_t c = 0; c < dice.size(); ++c) csv << c << ',' << dice[c] << '\n';
        csv << "mean," << mean_foreground_dice(dice) << '\n';
      } else if (!solver_path.empty()) {
        const auto params = decode_solver_checkpoint(read_file(solver_path)).params;
        const auto pz = puzzles_path.empty()
                            ? build_puzzles(load_volumes(inputs), pretrain_config(cfg).puzzle, root.substream(2))
                            : decode_puzzles(read_file(puzzles_path));
        const auto r = evaluate(params, std::span<const Puzzle>(pz), solver_config(cfg));
        csv << "puzzles,accuracy,loss\n" << pz.size() << ',' << r.accuracy << ',' << r.loss << '\n';
      } else {
        throw ConfigError("eval needs --solver or --seg");
      }
      write_text_atomic(dir / "eval.csv", csv.str());
      out << csv.str();
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace mmjigsaw
