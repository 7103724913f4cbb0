// mer: synthetic micro-expression recognition pipeline.
#include <malloc.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mer/ablation.hpp"
#include "mer/config.hpp"
#include "mer/dataset.hpp"
#include "mer/error.hpp"
#include "mer/eval.hpp"
#include "mer/flow.hpp"
#include "mer/image.hpp"
#include "mer/seed.hpp"
#include "mer/train.hpp"
#include "mer/tsr.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "flat key=value config file");
    cmd->add_option("--set", overrides, "key=value override (repeatable)");
    cmd->add_option("--seed", seed, "base seed (overrides the config)");
  }

  mer::RunConfig resolve() const {
    mer::RunConfig cfg;
    if (!config_file.empty()) mer::apply_config_file(cfg, config_file);
    for (const auto& o : overrides) mer::apply_override(cfg, o);
    if (seed) cfg.seed = *seed;
    cfg.schedule.seed = cfg.seed;
    cfg.model.validate();
    return cfg;
  }
};

void make_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw mer::IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw mer::IoError("cannot write " + path.string());
  f << text;
  if (!f) throw mer::IoError("failed writing " + path.string());
}

mer::Dataset open_dataset(const fs::path& dir, const mer::RunConfig& cfg) {
  const auto manifest = mer::load_manifest(dir);
  mer::validate_manifest(manifest);
  mer::PrepOptions prep = cfg.prep;
  prep.grid = cfg.model.grid;
  prep.input_size = cfg.model.input_size;
  spdlog::info("loading {} samples from {}", manifest.entries.size(), dir.string());
  return mer::load_dataset(manifest, prep);
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("mer");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("MER_LOG")) {
    const std::string level = env;
    if (level == "debug") spdlog::set_level(spdlog::level::debug);
    else if (level == "warn") spdlog::set_level(spdlog::level::warn);
    else if (level == "error" || level == "quiet") spdlog::set_level(spdlog::level::err);
  }
}

}  // namespace

int main(int argc, char** argv) {
  // Keep large tensor buffers in the heap between steps instead of remapping them.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  setup_logging();
  CLI::App app{"Micro-expression recognition: data generation, training, evaluation"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(40);

  // gen-data
  mer::SynthOptions synth;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic micro-expression dataset");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--classes", synth.num_classes, "number of classes (at most 16)")->capture_default_str();
  gen->add_option("--subjects", synth.subjects, "number of subjects")->capture_default_str();
  gen->add_option("--per-class", synth.per_subject_per_class, "samples per subject and class")->capture_default_str();
  gen->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  gen->add_option("--magnitude", synth.magnitude, "peak apex displacement in pixels")->capture_default_str();
  gen->add_option("--size", synth.frame_size, "frame size in pixels")->capture_default_str();

  // train
  ConfigArgs train_cfg;
  std::string train_data, train_out, warm_data;
  bool train_ab = false;
  auto* tr = app.add_subcommand("train", "Train one model on every subject of a dataset");
  tr->add_option("--data", train_data, "dataset directory")->required();
  tr->add_option("--out", train_out, "output directory")->required();
  tr->add_option("--warm-start", warm_data, "macro-expression dataset used for pre-training");
  tr->add_flag("--ab", train_ab, "also train from a cold start and log both runs");
  train_cfg.attach(tr);

  // eval
  ConfigArgs eval_cfg;
  std::string eval_data, eval_out, protocol = "loso", classifier = "all", test_subjects;
  std::size_t jobs = 1;
  bool shuffle = false;
  auto* ev = app.add_subcommand("eval", "Cross-validated evaluation");
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--out", eval_out, "output directory")->required();
  ev->add_option("--protocol", protocol, "loso or holdout")
      ->check(CLI::IsMember({"loso", "holdout"}))
      ->capture_default_str();
  ev->add_option("--classifier", classifier, "ac1, ac2, deep or all")
      ->check(CLI::IsMember({"ac1", "ac2", "deep", "all"}))
      ->capture_default_str();
  ev->add_option("--test-subjects", test_subjects, "comma-separated test subjects for holdout");
  ev->add_option("--jobs", jobs, "folds trained in parallel")->check(CLI::PositiveNumber)->capture_default_str();
  ev->add_flag("--shuffle-labels", shuffle, "permute labels across samples (chance control)");
  eval_cfg.attach(ev);

  // ablate
  ConfigArgs abl_cfg;
  std::string abl_data, abl_out;
  std::size_t abl_seeds = 3, abl_jobs = 1;
  auto* ab = app.add_subcommand("ablate", "Module ablation lattice under LOSO");
  ab->add_option("--data", abl_data, "dataset directory")->required();
  ab->add_option("--out", abl_out, "output directory")->required();
  ab->add_option("--seeds", abl_seeds, "seeds per row")->check(CLI::PositiveNumber)->capture_default_str();
  ab->add_option("--jobs", abl_jobs, "folds trained in parallel")->check(CLI::PositiveNumber)->capture_default_str();
  abl_cfg.attach(ab);

  // flow
  std::string flow_a, flow_b, flow_out;
  int flow_iters = 200;
  float flow_lambda = 0.1f;
  auto* fl = app.add_subcommand("flow", "Horn-Schunck optical flow between two PGM frames");
  fl->add_option("--a", flow_a, "first frame (PGM)")->required();
  fl->add_option("--b", flow_b, "second frame (PGM)")->required();
  fl->add_option("--out", flow_out, "output TSR file")->required();
  fl->add_option("--iterations", flow_iters, "solver iterations")->capture_default_str();
  fl->add_option("--lambda", flow_lambda, "smoothness weight")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const auto m = mer::generate_synthetic_dataset(synth, gen_out);
      spdlog::info("wrote {} samples to {}", m.entries.size(), gen_out);
    } else if (tr->parsed()) {
      const auto cfg = train_cfg.resolve();
      make_out_dir(train_out);
      write_text(fs::path(train_out) / "config.txt", cfg.to_text());
      const auto ds = open_dataset(train_data, cfg);
      std::vector<std::size_t> all(ds.samples.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      const auto split = mer::split_train_val(ds, all, cfg.schedule.val_fraction, cfg.seed);

      mer::ModelConfig mc = cfg.model;
      mc.num_classes = ds.num_classes;
      auto run = [&](bool warm, const std::string& log_name) {
        mer::Model model(mc, cfg.seed);
        std::vector<mer::TrainLogRow> log;
        if (warm) {
          const auto macro = open_dataset(warm_data, cfg);
          auto pre = mer::warm_start(model, macro, cfg.warm_start_steps, ds.num_classes, cfg.schedule);
          mer::write_train_log(pre.log, fs::path(train_out) / ("warm_" + log_name));
        }
        const auto result = mer::train(model, ds, split, cfg.schedule);
        mer::write_train_log(result.log, fs::path(train_out) / log_name);
        spdlog::info("{}: {} steps, best val UAR {:.4f} at step {}", warm ? "warm start" : "cold start", result.steps,
                     result.best_val_uar, result.best_step);
        return std::pair{std::move(model), result};
      };
      const bool warm = !warm_data.empty();
      auto [model, result] = run(warm, "train_log.csv");
      model.params().save(fs::path(train_out) / "checkpoint.bin");
      if (train_ab) {
        if (!warm) throw mer::ParameterError("--ab needs --warm-start");
        auto cold = run(false, "train_log_cold.csv");
        write_text(fs::path(train_out) / "ab.csv",
                   "run,steps,best_step,best_val_uar\nwarm," + std::to_string(result.steps) + "," +
                       std::to_string(result.best_step) + "," + std::to_string(result.best_val_uar) + "\ncold," +
                       std::to_string(cold.second.steps) + "," + std::to_string(cold.second.best_step) + "," +
                       std::to_string(cold.second.best_val_uar) + "\n");
      }
    } else if (ev->parsed()) {
      const auto cfg = eval_cfg.resolve();
      make_out_dir(eval_out);
      write_text(fs::path(eval_out) / "config.txt", cfg.to_text());
      auto ds = open_dataset(eval_data, cfg);
      if (shuffle) mer::shuffle_labels(ds, mer::derive_seed(cfg.seed, 0x5f1e));
      mer::ProtocolOptions po;
      po.base_seed = cfg.seed;
      po.jobs = jobs;
      po.uf1_literal = cfg.uf1_literal;
      po.log_dir = eval_out;
      if (classifier != "all") po.classifiers = {mer::parse_classifier(classifier)};
      mer::EvalReport report;
      if (protocol == "loso") {
        report = mer::run_loso(ds, cfg.model, cfg.schedule, po);
      } else {
        std::vector<std::string> subjects;
        std::stringstream ss(test_subjects);
        for (std::string s; std::getline(ss, s, ',');)
          if (!s.empty()) subjects.push_back(s);
        report = mer::run_holdout(ds, cfg.model, cfg.schedule, subjects, po);
      }
      mer::write_report(report, eval_out);
      std::cout << mer::report_text(report);
    } else if (ab->parsed()) {
      const auto cfg = abl_cfg.resolve();
      make_out_dir(abl_out);
      write_text(fs::path(abl_out) / "config.txt", cfg.to_text());
      const auto ds = open_dataset(abl_data, cfg);
      mer::ProtocolOptions po;
      po.base_seed = cfg.seed;
      po.jobs = abl_jobs;
      po.uf1_literal = cfg.uf1_literal;
      const auto rows = mer::run_ablation(ds, cfg.model, cfg.schedule, abl_seeds, po);
      write_text(fs::path(abl_out) / "ablation.csv", mer::ablation_csv(rows));
      write_text(fs::path(abl_out) / "ablation.txt", mer::ablation_text(rows));
      std::cout << mer::ablation_text(rows);
    } else if (fl->parsed()) {
      const auto a = mer::load_pgm(flow_a);
      const auto b = mer::load_pgm(flow_b);
      mer::save_tsr(flow_out, mer::horn_schunck_flow(a, b, flow_lambda, flow_iters));
    }
  } catch (const mer::IoError& e) {
    spdlog::error("{}", e.what());
    return kExitIo;
  } catch (const mer::ParseError& e) {
    spdlog::error("{}", e.what());
    return kExitIo;
  } catch (const mer::NumericalError& e) {
    spdlog::error("{}", e.what());
    return kExitNumerical;
  } catch (const mer::Error& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  }
  return 0;
}
