// rar: command-line driver.
//
//   rar <ingest|embed|preprocess|pretrain|train|eval|simulate> [--config PATH] [--key.name VALUE ...]
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rar/commands.hpp"

namespace {

// Turns leftover "--a.b value" / "--a.b=value" pairs into config overrides.
void apply_overrides(rar::RunConfig& cfg, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw rar::ConfigError("unexpected argument '" + arg + "'");
    std::string key = arg.substr(2), value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw rar::ConfigError("missing value for --" + key);
      value = extras[++i];
    }
    if (key.find('.') == std::string::npos && key != "seed") throw rar::ConfigError("unknown option --" + key);
    cfg.set(key, value);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented recommendation with preference-optimized retrievers"};
  app.require_subcommand(1);
  app.allow_extras();

  std::string config_path;
  std::string algorithm, generator, checkpoint, report;
  bool resume = false;
  std::size_t stop_after = 0;

  auto add = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Config file (dotted key = value lines)");
    sub->allow_extras();
    return sub;
  };
  add("ingest", "Merge metadata sources into a corpus");
  add("embed", "Embed every corpus entry");
  add("preprocess", "Link mentions, build examples and splits, sessionize interactions");
  CLI::App* pre = add("pretrain", "Supervised retriever pretraining");
  pre->add_flag("--resume", resume, "Continue from the saved pretraining checkpoint");
  pre->add_option("--stop-after", stop_after, "Stop after this many total steps");
  CLI::App* tr = add("train", "Preference optimization against the generator");
  tr->add_option("--algorithm", algorithm, "dpo, simpo, grpo or sft");
  tr->add_option("--generator", generator, "mock or http");
  CLI::App* ev = add("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate (default paths.checkpoint)");
  ev->add_option("--report", report, "Report path (default paths.report)");
  ev->add_option("--generator", generator, "mock or http");
  add("simulate", "Synthetic world end to end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    rar::RunConfig cfg;
    if (!config_path.empty()) cfg = rar::RunConfig::load(config_path);
    CLI::App* sub = app.get_subcommands().front();
    std::vector<std::string> extras = app.remaining();
    for (const auto& e : sub->remaining()) extras.push_back(e);
    apply_overrides(cfg, extras);
    if (!algorithm.empty()) cfg.set("train.algorithm", algorithm);
    if (!generator.empty()) cfg.set("generator.kind", generator);

    const std::string name = sub->get_name();
    if (name == "ingest") {
      rar::cmd::ingest(cfg, std::cout);
    } else if (name == "embed") {
      rar::cmd::embed(cfg, std::cout);
    } else if (name == "preprocess") {
      rar::cmd::preprocess(cfg, std::cout);
    } else if (name == "pretrain") {
      rar::cmd::pretrain(cfg, resume, stop_after, std::cout);
    } else if (name == "train") {
      rar::cmd::train(cfg, std::cout);
    } else if (name == "eval") {
      rar::cmd::evaluate(cfg, checkpoint.empty() ? cfg.path("checkpoint") : std::filesystem::path(checkpoint),
                         report.empty() ? cfg.path("report") : std::filesystem::path(report), std::cout);
    } else if (name == "simulate") {
      const auto s = rar::cmd::simulate(cfg, std::cout);
      std::cout << s.to_json() << "\n";
    }
    return 0;
  } catch (const rar::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == rar::Error::Kind::kUsage ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
