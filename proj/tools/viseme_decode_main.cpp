// viseme-decode: staged EEG/EMG viseme decoding pipeline.
//
// Usage: viseme-decode <stage> --config pipeline.json [--set key=value ...]
//
// Exit codes: 0 success, 1 configuration or validation failure, 2 I/O failure.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "viseme/errors.hpp"
#include "viseme/pipeline.hpp"
#include "viseme/text_io.hpp"

namespace {

int exit_code_for(const viseme::Error& e) {
  return e.kind() == viseme::ErrKind::Io ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline viseme decoding pipeline: corpus synthesis, preprocessing, epoching, "
               "decoder training, evaluation and sentence reconstruction"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<std::string> stage_names;
  for (viseme::pipeline::Stage s : viseme::pipeline::stage_order())
    stage_names.push_back(viseme::pipeline::stage_name(s));
  stage_names.push_back("all");

  for (const std::string& name : stage_names) {
    CLI::App* sub = app.add_subcommand(
        name, name == "all" ? "run every stage in order" : "run the " + name + " stage");
    sub->add_option("--config", config_path, "pipeline config JSON")->required();
    sub->add_option("--set", overrides,
                    "override a config value by dotted key, e.g. --set train.lr=0.01");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const std::string stage_arg = app.get_subcommands().front()->get_name();
    const viseme::pipeline::Stage stage = viseme::pipeline::stage_from_name(stage_arg);

    nlohmann::json raw;
    try {
      raw = nlohmann::json::parse(viseme::read_file(config_path));
    } catch (const nlohmann::json::exception& ex) {
      throw viseme::Error(viseme::ErrKind::Parse, config_path + ": " + ex.what());
    }
    for (const std::string& kv : overrides) {
      const size_t eq = kv.find('=');
      if (eq == std::string::npos || eq == 0)
        throw viseme::config_error("--set expects key=value, got '" + kv + "'");
      viseme::pipeline::apply_override(raw, kv.substr(0, eq), kv.substr(eq + 1));
    }

    const auto cfg = viseme::pipeline::PipelineConfig::from_json(raw);
    const int threads = viseme::pipeline::thread_cap_from_env();
    viseme::pipeline::run(cfg, stage, threads);
    return 0;
  } catch (const viseme::Error& e) {
    std::fprintf(stderr, "viseme-decode: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "viseme-decode: %s\n", e.what());
    return 2;
  }
}
