// Copyright 2026 The Pacmac Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// pacmac <command> --config <path> [--set key=value ...] --out <dir> [--seed N]

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pacmac/pacmac.h"

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  long long seed = -1;
};

const char* const kCommands[][2] = {
    {"gen-data", "Render the source and target datasets"},
    {"pretrain", "Masked-patch reconstruction on pooled source and target images"},
    {"finetune", "Supervised training on the labeled source"},
    {"adapt", "Selective self-training on the unlabeled target"},
    {"eval", "Accuracy, calibration, kNN and masked-embedding distances"},
    {"probe", "Linear probes and domain alignment score"},
    {"mask-dump", "Masks, per-view predictions and the verdict for one image"},
    {"ablate", "Run adapt over a grid of overrides and tabulate the results"},
};

std::string json_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

int report(pacmac_status status, const std::string& context) {
  // The message already starts with the status name.
  std::fprintf(stderr, "pacmac %s: %s\n", context.c_str(), pacmac_last_error());
  return static_cast<int>(status) > 125 ? 125 : static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-view self-training for domain adaptation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pacmac_version());

  Options opts;
  std::string command;
  for (const auto& [name, help] : kCommands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "JSON config; omitted keys keep their defaults");
    sub->add_option("--set", opts.sets, "Override as dotted.key=value (repeatable)");
    sub->add_option("--out", opts.out, "Output directory");
    sub->add_option("--seed", opts.seed, "Run seed")->check(CLI::NonNegativeNumber);
    sub->callback([&command, n = std::string(name)] { command = n; });
  }
  CLI11_PARSE(app, argc, argv);

  std::vector<const char*> sets;
  for (const auto& s : opts.sets) sets.push_back(s.c_str());
  pacmac_config* cfg = nullptr;
  pacmac_status st = pacmac_config_load(opts.config.c_str(), sets.data(), sets.size(), &cfg);
  if (st != PACMAC_OK) return report(st, command);

  // Flags win over the file and --set.
  if (!opts.out.empty()) st = pacmac_config_set(cfg, ("out=" + json_string(opts.out)).c_str());
  if (st == PACMAC_OK && opts.seed >= 0)
    st = pacmac_config_set(cfg, ("seed=" + std::to_string(opts.seed)).c_str());

  char* summary = nullptr;
  if (st == PACMAC_OK) st = pacmac_run(command.c_str(), cfg, &summary);
  pacmac_config_free(cfg);
  if (st != PACMAC_OK) return report(st, command);
  std::printf("%s\n", summary);
  pacmac_string_free(summary);
  return 0;
}
