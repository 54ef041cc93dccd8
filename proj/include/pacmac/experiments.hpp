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

// The pipeline commands. Stages talk to each other only through files:
// datasets from gen-data, checkpoints from pretrain/finetune/adapt.

#pragma once

#include <array>
#include <string>
#include <string_view>

#include "json.hpp"
#include "pacmac/config.hpp"
#include "pacmac/metrics.hpp"

namespace pacmac::experiments {

inline constexpr std::array<std::string_view, 8> kCommands = {
    "gen-data", "pretrain", "finetune", "adapt", "eval", "probe", "mask-dump", "ablate"};

bool is_command(std::string_view name);

/// Runs one command with artifacts under config.out (created if needed) and
/// resolved.json echoed there. Returns the command's summary, which is also
/// written to summary.json. Errors carry the command name; UnknownCommand for
/// anything outside kCommands.
nlohmann::json run(std::string_view command, const config::RunConfig& config);

/// Cross-domain kNN on class-token embeddings.
double knn_accuracy(const vit::ViTParams& params, const data::Dataset& source,
                    const data::Dataset& target, std::size_t k);

}  // namespace pacmac::experiments
