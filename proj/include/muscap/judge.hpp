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

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "muscap/chat_client.hpp"

namespace muscap {

enum class Verdict { yes, no, not_applicable };

const char *to_string(Verdict v);

inline constexpr std::array<std::string_view, 6> kJudgeKeys = {
    "key_match", "instrument_match", "genre_match", "mood_match", "vocal_presence_match", "vocal_gender_match",
};

struct JudgeVerdict {
    std::array<Verdict, 6> values{}; // parallel to kJudgeKeys

    Verdict get(std::string_view key) const;
    bool operator==(const JudgeVerdict &) const = default;
};

/// The judge prompt with both texts substituted. Throws InvalidInput when
/// either text is blank.
std::string render_judge_prompt(std::string_view prediction, std::string_view reference);

/// Extracts the first well-formed JSON object from `response` and reads the
/// six keys. Values are case-insensitive; "n/a", "na" and "not applicable"
/// map to not_applicable. Throws JudgeParseError.
JudgeVerdict parse_judge_response(std::string_view response);

JudgeVerdict judge_pair(std::string_view prediction, std::string_view reference, ChatClient &client,
                        const RetryPolicy &retry = {}, AuditLog *audit = nullptr);

/// yes / (yes + no) per key; keys with no yes/no verdicts are left out.
std::map<std::string, double> feature_accuracy(std::span<const JudgeVerdict> verdicts);

struct JudgeResults {
    std::vector<std::optional<JudgeVerdict>> verdicts; // by pair index; empty when the judge failed
    std::size_t failures = 0;
    std::map<std::string, double> accuracy;
};

/// Judges every pair on up to `workers` threads. Parse failures and service
/// failures are counted and excluded.
JudgeResults judge_corpus(const std::vector<std::string> &predictions, const std::vector<std::string> &references,
                          ChatClient &client, const RetryPolicy &retry = {}, AuditLog *audit = nullptr,
                          unsigned workers = 4);

} // namespace muscap
