// mvsc <command> [--config path] [--key value ...]
//
// Commands: select, synth, train, eval, export-surrogate, bench-baselines.
// Flag keys mirror config-file keys; flags override file values. The
// environment variable MVSC_SEED supplies a default seed.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mvsc/mvsc.hpp"

namespace {

void print_usage() {
  std::cerr
      << "usage: mvsc <command> [--config path] [--key value ...]\n"
         "commands:\n"
         "  synth             generate synthetic volumes, manifests, and\n"
         "                    embedding files under out_dir\n"
         "  select            write per-volume slice score tables\n"
         "  train             train and write checkpoint + metrics\n"
         "  eval              evaluate a checkpoint, write metrics_report\n"
         "  export-surrogate  write one compressed image per manifest row\n"
         "  bench-baselines   compare learned vs mean/max pooling\n"
         "common keys: preset seed manifest val_manifest out_dir checkpoint\n"
         "             top_k dim global_tokens patch text_dim epochs lr ...\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    print_usage();
    return 2;
  }
  const std::string command = argv[1];
  if (command == "--help" || command == "-h" || command == "help") {
    print_usage();
    return 0;
  }
  try {
    std::optional<std::filesystem::path> config_path;
    std::vector<std::pair<std::string, std::string>> flags;
    for (int i = 2; i < argc; ++i) {
      std::string arg = argv[i];
      if (arg.rfind("--", 0) != 0) {
        throw mvsc::ConfigError("expected --key, got '" + arg + "'");
      }
      if (i + 1 >= argc) {
        throw mvsc::ConfigError("flag '" + arg + "' is missing its value");
      }
      const std::string key = arg.substr(2);
      const std::string value = argv[++i];
      if (key == "config") {
        config_path = value;
      } else {
        flags.emplace_back(key, value);
      }
    }
    const mvsc::RunConfig cfg = mvsc::parse_config(config_path, flags);
    return mvsc::run_pipeline(command, cfg);
  } catch (const mvsc::Error& e) {
    std::cerr << "mvsc: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "mvsc: unexpected error: " << e.what() << "\n";
    return 1;
  }
}
