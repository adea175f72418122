/*
 * Copyright 2026 The muscap Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Run configuration: one JSON document describing the encoder, projector,
// language model, vocabularies, datasets, training phases, captioning and the
// chat service. String values may reference environment variables as
// ${NAME}; relative paths resolve against the config file's directory.

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "muscap/chat_client.hpp"
#include "muscap/data.hpp"
#include "muscap/encoder.hpp"
#include "muscap/lm_bridge.hpp"
#include "muscap/projector.hpp"
#include "muscap/training.hpp"

namespace muscap {

struct LmSettings {
    std::string kind = "toy"; // "toy" or "subprocess"
    ToyLmConfig toy;
    std::vector<std::string> command; // subprocess argv

    nlohmann::json to_json() const;
    static LmSettings from_json(const nlohmann::json &j, const std::string &field = "lm");
};

std::unique_ptr<LanguageModel> make_language_model(const LmSettings &settings);

struct RunConfig {
    std::filesystem::path base_dir;

    EncoderConfig encoder;
    /// Heads and class counts come from the vocabularies; lm_dim is 0 until
    /// resolved against a language model unless set explicitly.
    ProjectorConfig projector;
    LmSettings lm;
    VocabularySet vocabularies;

    std::map<std::string, std::filesystem::path> datasets;
    std::vector<PhaseSpec> phases;

    std::string query = std::string(kDefaultQuery);
    double chunk_seconds = 10.0;
    int caption_max_tokens = 24;
    unsigned workers = 0;

    ChatConfig chat;
    RetryPolicy retry;

    std::filesystem::path output_dir;

    /// Projector config with lm_dim taken from (and checked against) `lm`.
    ProjectorConfig resolved_projector(const LanguageModel &lm) const;

    /// Fingerprint of everything that must agree between training and
    /// inference: projector layout, vocabularies, encoder, LM and query.
    std::string digest(const ProjectorConfig &resolved) const;

    /// Inference-relevant settings, stored alongside checkpoints.
    nlohmann::json inference_json() const;
};

/// Replaces ${NAME} with the environment value; ConfigError naming `field`
/// when a variable is unset. "$$" yields a literal "$".
std::string interpolate_env(std::string_view text, const std::string &field);

RunConfig parse_run_config(const nlohmann::json &j, const std::filesystem::path &base_dir);
/// Throws ConfigError (bad values or missing fields) or IoError.
RunConfig load_run_config(const std::filesystem::path &path);

/// Rebuilds the inference part of a RunConfig from checkpoint metadata.
RunConfig inference_config_from_json(const nlohmann::json &j);

} // namespace muscap
