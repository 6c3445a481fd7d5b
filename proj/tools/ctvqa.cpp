#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "ctvqa/cli/commands.hpp"

namespace cli = ctvqa::cli;

namespace {

std::string flag_name(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return "--" + key;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal graph VQA on synthetic CT volumes"};
  app.require_subcommand(1);

  cli::GenerateOptions gen;
  int volumes = 0;
  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset");
  generate->add_option("--seed", gen.seed, "Generator seed")->required();
  generate->add_option("--out", gen.out, "Output directory")->required();
  auto* volumes_opt =
      generate->add_option("--volumes", volumes, "Total volumes over train/dev/test (default 600)");
  generate->add_flag("--force", gen.force, "Replace a non-empty output directory");

  cli::TrainOptions tr;
  std::string train_config;
  std::map<std::string, std::string> override_values;
  std::map<std::string, CLI::Option*> override_opts;
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--data", tr.data, "Dataset directory")->required();
  train->add_option("--config", train_config, "JSON run config");
  train->add_option("--out", tr.out, "Checkpoint path")->required();
  for (const std::string& key : ctvqa::run_config_keys()) {
    if (key == "data" || key == "out") continue;
    override_opts[key] =
        train->add_option(flag_name(key), override_values[key], "Override config key " + key);
  }

  cli::EvaluateOptions ev;
  std::string eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "Score greedy answers on a split");
  evaluate->add_option("--data", ev.data, "Dataset directory")->required();
  evaluate->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
  evaluate->add_option("--split", ev.split, "train|dev|test")->capture_default_str();
  evaluate->add_option("--out", eval_out, "Report prefix (default <ckpt>.<split>)");

  cli::AnswerOptions an;
  auto* answer = app.add_subcommand("answer", "Answer one question about one volume");
  answer->add_option("--ckpt", an.ckpt, "Checkpoint path")->required();
  answer->add_option("--volume", an.volume, "Volume file")->required();
  answer->add_option("--question", an.question, "Question text")->required();
  answer->add_option("--top-k", an.top_k, "Print the k most probable tokens per step");

  cli::DumpAttentionOptions da;
  auto* dump = app.add_subcommand("dump-attention", "Export graph attention weights");
  dump->add_option("--ckpt", da.ckpt, "Checkpoint path")->required();
  dump->add_option("--volume", da.volume, "Volume file")->required();
  dump->add_option("--question", da.question, "Question text")->required();
  dump->add_option("--out", da.out, "Output file (.json or .csv)")->required();
  dump->add_option("--format", da.format, "json|csv (default: by extension)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  try {
    if (generate->parsed()) {
      if (volumes_opt->count() > 0) gen.volumes = volumes;
      cli::run_generate(gen, std::cout);
    } else if (train->parsed()) {
      if (!train_config.empty()) tr.config = train_config;
      for (const auto& [key, opt] : override_opts) {
        if (opt->count() > 0) tr.overrides[key] = override_values[key];
      }
      cli::run_train(tr, std::cout);
    } else if (evaluate->parsed()) {
      if (!eval_out.empty()) ev.out_prefix = eval_out;
      cli::run_evaluate(ev, std::cout);
    } else if (answer->parsed()) {
      cli::run_answer(an, std::cout, std::cerr);
    } else if (dump->parsed()) {
      cli::run_dump_attention(da, std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e);
  }
  return cli::kExitOk;
}
