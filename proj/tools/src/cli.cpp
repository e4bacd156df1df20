#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"

#include "config.hpp"
#include "instformer/checkpoint.hpp"
#include "instformer/dataset_io.hpp"
#include "instformer/error.hpp"
#include "instformer/grad_suite.hpp"
#include "instformer/synthetic.hpp"
#include "instformer/train.hpp"
#include "ply.hpp"

namespace instformer::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string default_run_dir() {
  if (const char* env = std::getenv("INSTFORMER_RUN_DIR"); env && *env) return env;
  return "instformer_run";
}

struct Common {
  std::string config = "desk";
  std::vector<std::string> overrides;
  std::string run_dir = default_run_dir();
};

void add_common(CLI::App& app, Common& c) {
  app.add_option("--config", c.config, "Preset (tiny|desk|full) or JSON config file")->capture_default_str();
  app.add_option("--set", c.overrides, "Override a config value, e.g. --set train.lr=0.001");
  app.add_option("--run-dir", c.run_dir, "Directory for records, checkpoints and the config echo")->capture_default_str();
}

/// A flag value that parsed but makes no sense; reported like a parse error.
struct UsageError : Error {
  using Error::Error;
};

CliConfig resolve(const Common& common) {
  CliConfig c = load_config(common.config);
  for (const auto& o : common.overrides) {
    try {
      apply_override(c, o);
    } catch (const Error& e) {
      throw UsageError(std::string("--set ") + e.what());
    }
  }
  c.generator.n_pc = c.model.n_pc;
  c.finetune.weights = c.train.weights;
  c.validate();
  return c;
}

void echo_config(const Common& common, const CliConfig& config, const std::string& command, const json& args) {
  fs::create_directories(common.run_dir);
  std::ofstream out(fs::path(common.run_dir) / "config.json");
  out << json{{"command", command}, {"args", args}, {"config", to_json(config)}}.dump(2) << '\n';
  if (!out) throw Error("cannot write config echo into " + common.run_dir);
}

std::vector<AssemblySample> select_split(const std::vector<AssemblySample>& data, const std::string& split) {
  if (split == "all") return data;
  return filter_split(data, split_from_string(split));
}

AssemblyModel open_model(const std::string& ckpt, const CliConfig& config) {
  if (ckpt == "untrained") return AssemblyModel(config.model, config.train.seed);
  return load_checkpoint(ckpt);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

const CLI::Validator kSplit = CLI::IsMember({"train", "val", "test", "all"});

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Part assembly with instance-encoded transformers", "instformer"};
  app.require_subcommand(1);

  // gen-data
  Common gen_common;
  std::string gen_category = "chair", gen_out;
  std::size_t gen_count = 64;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic furniture dataset");
  add_common(*gen, gen_common);
  gen->add_option("--category", gen_category, "chair|table|lamp|all")
      ->check(CLI::IsMember({"chair", "table", "lamp", "all"}))
      ->capture_default_str();
  gen->add_option("--count", gen_count, "Samples per category")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Dataset file")->required();

  // train
  Common train_common;
  std::string train_data, train_ckpt, train_split = "train", val_split = "val";
  bool train_inprocess = false;
  auto* train = app.add_subcommand("train", "Train a model, or fine-tune its decoder with --inprocess");
  add_common(*train, train_common);
  train->add_option("--data", train_data, "Dataset file")->required();
  train->add_option("--ckpt", train_ckpt, "Initial checkpoint (required with --inprocess)");
  train->add_option("--split", train_split, "Training split")->check(kSplit)->capture_default_str();
  train->add_option("--val-split", val_split, "Validation split")->check(kSplit)->capture_default_str();
  train->add_flag("--inprocess", train_inprocess, "Fine-tune the in-process decoder of --ckpt");

  // eval
  Common eval_common;
  std::string eval_data, eval_ckpt, eval_split = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with MMD selection");
  add_common(*eval, eval_common);
  eval->add_option("--data", eval_data, "Dataset file")->required();
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint file or 'untrained'")->required();
  eval->add_option("--split", eval_split, "Split to evaluate")->check(kSplit)->capture_default_str();

  // assemble
  Common asm_common;
  std::string asm_data, asm_ckpt, asm_out = "assembly";
  std::size_t asm_index = 0;
  auto* assemble = app.add_subcommand("assemble", "Assemble one shape and export predicted and GT point clouds");
  add_common(*assemble, asm_common);
  assemble->add_option("--data", asm_data, "Dataset file")->required();
  assemble->add_option("--ckpt", asm_ckpt, "Checkpoint file or 'untrained'")->required();
  assemble->add_option("--index", asm_index, "Sample index in the file")->capture_default_str();
  assemble->add_option("--out", asm_out, "Output prefix; writes <out>_pred.ply and <out>_gt.ply")->capture_default_str();

  // inprocess-eval
  Common ip_common;
  std::string ip_data, ip_ckpt, ip_split = "test";
  auto* ip = app.add_subcommand("inprocess-eval", "Place each part next to the others fixed at ground truth");
  add_common(*ip, ip_common);
  ip->add_option("--data", ip_data, "Dataset file")->required();
  ip->add_option("--ckpt", ip_ckpt, "Checkpoint with a decoder")->required();
  ip->add_option("--split", ip_split, "Split to evaluate")->check(kSplit)->capture_default_str();

  // gradcheck
  Common gc_common;
  gc_common.config = "tiny";
  std::size_t gc_entries = 64;
  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op and the full assembly loss");
  add_common(*gc, gc_common);
  gc->add_option("--entries", gc_entries, "Probed entries per parameter tensor (0 = all)")->capture_default_str();
  gc->add_option("--seed", gc_seed, "Fixture seed")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    out << sub->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << "error: " << e.what() << "\n" << sub->help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      CliConfig c = resolve(gen_common);
      c.generator.seed = gen_seed;
      echo_config(gen_common, c, "gen-data",
                  {{"category", gen_category}, {"count", gen_count}, {"seed", gen_seed}, {"out", gen_out}});
      std::vector<AssemblySample> data;
      const std::vector<std::string> cats =
          gen_category == "all" ? std::vector<std::string>{"chair", "table", "lamp"} : std::vector{gen_category};
      for (const auto& cat : cats) {
        GeneratorSpec spec = c.generator;
        spec.category = category_from_string(cat);
        auto part = generate(spec, gen_count);
        data.insert(data.end(), part.begin(), part.end());
      }
      save_dataset(data, gen_out);
      const auto manifest = dataset_manifest(data);
      write_text(gen_out + ".manifest.json", manifest + "\n");
      out << "wrote " << data.size() << " samples to " << gen_out << "\n" << manifest << "\n";
      return kExitOk;
    }

    if (train->parsed()) {
      CliConfig c = resolve(train_common);
      echo_config(train_common, c, "train",
                  {{"data", train_data}, {"ckpt", train_ckpt}, {"split", train_split}, {"val_split", val_split},
                   {"inprocess", train_inprocess}});
      const auto data = load_dataset(train_data);
      const auto train_set = select_split(data, train_split);
      if (train_set.empty()) throw InvalidArgument("split '" + train_split + "' of " + train_data + " is empty");
      if (train_inprocess) {
        if (train_ckpt.empty()) throw InvalidArgument("--inprocess needs --ckpt with a trained base model");
        AssemblyModel model = load_checkpoint(train_ckpt);
        check_compatible(model, train_set);
        FinetuneConfig f = c.finetune;
        f.run_dir = train_common.run_dir;
        const auto losses = inprocess_finetune(model, train_set, f);
        out << "fine-tuned decoder for " << losses.size() << " epochs, final loss " << losses.back() << "\n"
            << "checkpoint: " << (fs::path(f.run_dir) / "decoder.ckpt").string() << "\n";
        return kExitOk;
      }
      AssemblyModel model = train_ckpt.empty() ? AssemblyModel(c.model, c.train.seed) : load_checkpoint(train_ckpt);
      check_compatible(model, train_set);
      const auto val_set = select_split(data, val_split);
      TrainConfig t = c.train;
      t.run_dir = train_common.run_dir;
      const auto record = train_run(model, train_set, val_set, t);
      const auto& last = record.epochs.back();
      out << "trained " << record.epochs.size() << " epochs on " << train_set.size() << " samples, final loss "
          << last.loss << ", best validation PA " << record.best_val_pa << " at epoch " << record.best_epoch << "\n"
          << "checkpoints: " << (fs::path(t.run_dir) / "best.ckpt").string() << ", "
          << (fs::path(t.run_dir) / "last.ckpt").string() << "\n";
      return kExitOk;
    }

    if (eval->parsed()) {
      CliConfig c = resolve(eval_common);
      echo_config(eval_common, c, "eval", {{"data", eval_data}, {"ckpt", eval_ckpt}, {"split", eval_split}});
      const auto samples = select_split(load_dataset(eval_data), eval_split);
      const AssemblyModel model = open_model(eval_ckpt, c);
      check_compatible(model, samples);
      const auto report = evaluate_run(model, samples, c.eval.k, c.eval.seed, c.eval.thresholds);
      std::ofstream records(fs::path(eval_common.run_dir) / "eval.jsonl");
      report.write_jsonl(records, "eval");
      out << report.summary_table();
      return kExitOk;
    }

    if (assemble->parsed()) {
      CliConfig c = resolve(asm_common);
      echo_config(asm_common, c, "assemble",
                  {{"data", asm_data}, {"ckpt", asm_ckpt}, {"index", asm_index}, {"out", asm_out}});
      const auto data = load_dataset(asm_data);
      if (asm_index >= data.size())
        throw InvalidArgument("--index " + std::to_string(asm_index) + " out of range for " +
                              std::to_string(data.size()) + " samples");
      const auto& sample = data[asm_index];
      const AssemblyModel model = open_model(asm_ckpt, c);
      check_compatible(model, {sample});
      const auto mmd = mmd_select(model, sample, c.eval.k, c.eval.seed, c.eval.thresholds);
      for (const auto& [suffix, poses] : {std::pair{"_pred.ply", &mmd.poses}, std::pair{"_gt.ply", &sample.gt_poses}}) {
        std::ofstream file(asm_out + suffix);
        write_ply(file, posed_points(sample.parts, *poses));
        if (!file) throw Error("cannot write " + asm_out + suffix);
      }
      out << "sample " << sample.id << " (" << to_string(sample.category) << ", " << sample.n_parts()
          << " parts): SCD " << mmd.metrics.scd << ", PA " << mmd.metrics.pa;
      if (mmd.metrics.ca) out << ", CA " << *mmd.metrics.ca;
      out << "\nwrote " << asm_out << "_pred.ply and " << asm_out << "_gt.ply\n";
      return kExitOk;
    }

    if (ip->parsed()) {
      CliConfig c = resolve(ip_common);
      echo_config(ip_common, c, "inprocess-eval", {{"data", ip_data}, {"ckpt", ip_ckpt}, {"split", ip_split}});
      const auto samples = select_split(load_dataset(ip_data), ip_split);
      const AssemblyModel model = load_checkpoint(ip_ckpt);
      if (!model.has_decoder()) throw InvalidArgument(ip_ckpt + " has no decoder; fine-tune with train --inprocess");
      check_compatible(model, samples);
      InprocessOptions o;
      o.k = c.eval.k;
      o.seed = c.eval.seed;
      o.memory_drop = c.eval.memory_drop;
      o.thresholds = c.eval.thresholds;
      const auto report = evaluate_inprocess(model, samples, o);
      std::ofstream records(fs::path(ip_common.run_dir) / "inprocess.jsonl");
      report.write_jsonl(records, "inprocess");
      out << report.summary_table();
      return kExitOk;
    }

    if (gc->parsed()) {
      CliConfig c = resolve(gc_common);
      echo_config(gc_common, c, "gradcheck", {{"entries", gc_entries}, {"seed", gc_seed}});
      const auto report = full_grad_suite(c.model, gc_seed, gc_entries);
      out << std::left;
      for (const auto& e : report.entries) {
        out << "  " << std::setw(22) << e.name << std::scientific << std::setprecision(3) << e.max_error
            << std::defaultfloat << "  (" << e.probes << " probes";
        if (e.skipped) out << ", " << e.skipped << " across a kink";
        out << ")\n";
      }
      const double worst = report.worst();
      out << "max relative error: " << std::scientific << std::setprecision(3) << worst << std::defaultfloat << "\n";
      if (!(worst < 1e-3)) {
        err << "error: gradient check failed (max relative error " << worst << " >= 1e-3)\n";
        return kExitFailure;
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.get_subcommands().front()->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace instformer::cli
