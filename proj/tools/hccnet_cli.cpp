// Command-line driver: data generation, both pre-training stages,
// fine-tuning, the from-scratch baseline, evaluation and reporting.

#include "hccnet/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kMissingDependency = 3, kVariantMismatch = 4, kIo = 5 };

struct GlobalFlags {
  std::string config;
  std::string variant;
  std::string out;
  std::uint64_t seed = 0;
  hccnet::Index steps = 0;
  hccnet::Index batch_size = 0;
  bool print_config = false;
};

hccnet::Overrides overrides(const GlobalFlags& g, const CLI::App& app) {
  hccnet::Overrides o;
  if (app.count("--variant")) o.variant = g.variant;
  if (app.count("--seed")) o.seed = g.seed;
  if (app.count("--out")) o.out = g.out;
  if (app.count("--steps")) o.steps = g.steps;
  if (app.count("--batch-size")) o.batch_size = g.batch_size;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace hccnet;
  CLI::App app{"Longitudinal MRI risk model: pre-training, fine-tuning and evaluation"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--variant", g.variant, "Model variant (F, P, N, T)");
  app.add_option("--seed", g.seed, "Seed (data seed for gen-data, run seed for fine-tuning/evaluation)");
  app.add_option("--out", g.out, "Output root directory");
  app.add_option("--steps", g.steps, "Training steps for the selected stage");
  app.add_option("--batch-size", g.batch_size, "Effective batch size for the selected stage");
  app.add_flag("--print-config", g.print_config, "Print the resolved config and exit");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic cohort");
  auto* pre_bb = app.add_subcommand("pretrain-backbone", "Self-distillation pre-training of the CNN backbone");
  auto* pre_enc = app.add_subcommand("pretrain-encoder", "Sequence-order pre-training of the encoder");
  auto* ft = app.add_subcommand("finetune", "Fine-tune from the pre-trained checkpoints (one run per seed)");
  auto* base = app.add_subcommand("baseline", "Train from random initialization (one run per seed)");
  auto* eval = app.add_subcommand("evaluate", "Score fine-tuned and/or baseline runs on the test split");
  auto* rep = app.add_subcommand("report", "Baseline vs fine-tuned relative-change table");

  std::string eval_stage = "all";
  eval->add_option("--stage", eval_stage, "finetune, baseline or all")
      ->check(CLI::IsMember({"finetune", "baseline", "all"}));
  std::string rep_baseline, rep_finetuned;
  rep->add_option("--baseline", rep_baseline, "Baseline metrics.json or report directory");
  rep->add_option("--finetuned", rep_finetuned, "Fine-tuned metrics.json or report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  Stage stage = Stage::GenData;
  if (*pre_bb) stage = Stage::PretrainBackbone;
  if (*pre_enc) stage = Stage::PretrainEncoder;
  if (*ft) stage = Stage::Finetune;
  if (*base) stage = Stage::Baseline;
  if (*eval) stage = Stage::Evaluate;
  if (*rep) stage = Stage::Report;

  try {
    std::optional<std::filesystem::path> config_file;
    if (!g.config.empty()) config_file = g.config;
    const RunConfig cfg = resolve_config(config_file, overrides(g, app), stage);
    if (g.print_config) {
      std::cout << to_json(cfg).dump(2) << "\n";
      return kOk;
    }

    if (*gen) {
      const CohortSummary s = run_gen_data(cfg);
      std::cout << "cohort: " << s.patients << " patients, " << s.positives << " positive, written to "
                << cfg.cohort_path().string() << "\nvisits per patient:";
      for (const auto& [visits, count] : s.visit_histogram) std::cout << " " << visits << ":" << count;
      std::cout << "\n";
    } else if (*pre_bb) {
      run_pretrain_backbone(cfg, std::cout);
    } else if (*pre_enc) {
      run_pretrain_encoder(cfg, std::cout);
    } else if (*ft || *base) {
      run_finetune(cfg, bool(*base), std::cout);
    } else if (*eval) {
      if (eval_stage == "all") {
        bool any = false;
        for (const char* s : {"baseline", "finetune"})
          if (std::filesystem::exists(seed_checkpoint(cfg, s, cfg.finetune.seeds.front()))) {
            run_evaluate(cfg, s, std::cout);
            any = true;
          }
        if (!any) throw MissingDependencyError("no fine-tuned or baseline checkpoints under " + cfg.checkpoint_path().string());
      } else {
        run_evaluate(cfg, eval_stage, std::cout);
      }
    } else if (*rep) {
      const auto b = rep_baseline.empty() ? cfg.report_path() / "baseline" : std::filesystem::path(rep_baseline);
      const auto f = rep_finetuned.empty() ? cfg.report_path() / "finetune" : std::filesystem::path(rep_finetuned);
      for (const auto& p : {b, f})
        if (!std::filesystem::exists(p)) throw MissingDependencyError("missing report " + p.string() + " (run evaluate first)");
      run_report(cfg, b, f, std::cout);
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const MissingDependencyError& e) {
    std::cerr << "missing dependency: " << e.what() << "\n";
    return kMissingDependency;
  } catch (const VariantMismatchError& e) {
    std::cerr << "variant mismatch: " << e.what() << "\n";
    return kVariantMismatch;
  } catch (const ShapeConflictError& e) {
    std::cerr << "variant mismatch: " << e.what() << "\n";
    return kVariantMismatch;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const VolumeFormatError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const CheckpointError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const ReportSchemaError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
