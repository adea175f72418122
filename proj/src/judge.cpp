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

#include "muscap/judge.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <thread>

#include <json.hpp>

#include "muscap/error.hpp"
#include "muscap/log.hpp"

namespace muscap {

namespace {

// Trailing spaces are part of the template.
constexpr std::string_view kPromptBeforePrediction =
    "You are tasked with comparing two descriptions of a musical piece. \n"
    "Evaluate the following aspects:\n"
    "\n"
    "1. Key Match: Does the musical key specified in the prediction match that \n"
    "in the reference? If missing in reference, respond 'n/a'.\n"
    "2. Instrumentation Match: Do the instruments described in the prediction \n"
    "correspond to those in the reference? If missing in reference, respond 'n/a'.\n"
    "3. Genre Match: Does the genre implied by the description in the prediction \n"
    "match that in the reference? If missing in reference, respond 'n/a'.\n"
    "4. Mood/Theme Match: Does the mood or theme of the music in the prediction \n"
    "match that in the reference? If missing in reference, respond 'n/a'.\n"
    "5. Vocal Presence Match: Does the presence or absence of vocals in the \n"
    "prediction match that in the reference? \n"
    "6. Vocal Gender Match: If vocals are present, does the gender of the vocals \n"
    "(male or female) in the prediction match that in the reference? If missing \n"
    "in reference, respond 'n/a'\n"
    "\n"
    "Return your answer as a JSON object with the following keys:\n"
    "    'key_match', 'instrument_match', 'genre_match', \n"
    "    'mood_match', 'vocal_presence_match', 'vocal_gender_match'.\n"
    "\n"
    "Values should be 'yes', 'no', or 'n/a' if the attribute is not applicable.\n"
    "\n"
    "---\n"
    "Prediction:\n";
constexpr std::string_view kPromptBeforeReference = "\n\nReference:\n";

bool is_blank(std::string_view s) {
    return s.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
}

std::string normalise(std::string s) {
    auto b = s.find_first_not_of(" \t\r\n");
    auto e = s.find_last_not_of(" \t\r\n");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// End index (exclusive) of the brace-balanced object starting at `open`, or
// npos. Quotes of either kind delimit strings.
std::size_t balanced_end(std::string_view s, std::size_t open) {
    int depth = 0;
    char quote = 0;
    for (std::size_t i = open; i < s.size(); ++i) {
        char c = s[i];
        if (quote) {
            if (c == '\\') {
                ++i;
            } else if (c == quote) {
                quote = 0;
            }
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) {
                return i + 1;
            }
        }
    }
    return std::string_view::npos;
}

std::optional<nlohmann::json> try_parse_object(std::string_view text) {
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (!j.is_discarded() && j.is_object()) {
        return j;
    }
    // Single-quoted pseudo-JSON, as the prompt itself writes the keys.
    if (text.find('"') == std::string_view::npos) {
        std::string fixed(text);
        std::replace(fixed.begin(), fixed.end(), '\'', '"');
        j = nlohmann::json::parse(fixed, nullptr, false);
        if (!j.is_discarded() && j.is_object()) {
            return j;
        }
    }
    return std::nullopt;
}

} // namespace

const char *to_string(Verdict v) {
    switch (v) {
    case Verdict::yes:
        return "yes";
    case Verdict::no:
        return "no";
    case Verdict::not_applicable:
        return "n/a";
    }
    return "?";
}

Verdict JudgeVerdict::get(std::string_view key) const {
    for (std::size_t i = 0; i < kJudgeKeys.size(); ++i) {
        if (kJudgeKeys[i] == key) {
            return values[i];
        }
    }
    throw InvalidInput("unknown judge key '" + std::string(key) + "'");
}

std::string render_judge_prompt(std::string_view prediction, std::string_view reference) {
    if (is_blank(prediction) || is_blank(reference)) {
        throw InvalidInput("judge prompt: prediction and reference must be non-empty");
    }
    std::string out;
    out += kPromptBeforePrediction;
    out += prediction;
    out += kPromptBeforeReference;
    out += reference;
    return out;
}

JudgeVerdict parse_judge_response(std::string_view response) {
    std::optional<nlohmann::json> obj;
    for (std::size_t open = response.find('{'); open != std::string_view::npos && !obj;
         open = response.find('{', open + 1)) {
        std::size_t end = balanced_end(response, open);
        if (end != std::string_view::npos) {
            obj = try_parse_object(response.substr(open, end - open));
        }
    }
    if (!obj) {
        throw JudgeParseError("judge response contains no JSON object");
    }
    JudgeVerdict v;
    for (std::size_t i = 0; i < kJudgeKeys.size(); ++i) {
        std::string key(kJudgeKeys[i]);
        auto it = obj->find(key);
        if (it == obj->end()) {
            throw JudgeParseError("judge response lacks '" + key + "'");
        }
        if (!it->is_string()) {
            throw JudgeParseError("judge response: '" + key + "' is not a string");
        }
        std::string s = normalise(it->get<std::string>());
        if (s == "yes") {
            v.values[i] = Verdict::yes;
        } else if (s == "no") {
            v.values[i] = Verdict::no;
        } else if (s == "n/a" || s == "na" || s == "not applicable") {
            v.values[i] = Verdict::not_applicable;
        } else {
            throw JudgeParseError("judge response: '" + key + "' has value '" + it->get<std::string>() + "'");
        }
    }
    return v;
}

JudgeVerdict judge_pair(std::string_view prediction, std::string_view reference, ChatClient &client,
                        const RetryPolicy &retry, AuditLog *audit) {
    std::string prompt = render_judge_prompt(prediction, reference);
    return parse_judge_response(complete_with_retry(client, prompt, retry, audit));
}

std::map<std::string, double> feature_accuracy(std::span<const JudgeVerdict> verdicts) {
    std::map<std::string, double> out;
    for (std::size_t k = 0; k < kJudgeKeys.size(); ++k) {
        std::size_t yes = 0, no = 0;
        for (const auto &v : verdicts) {
            yes += v.values[k] == Verdict::yes;
            no += v.values[k] == Verdict::no;
        }
        if (yes + no > 0) {
            out[std::string(kJudgeKeys[k])] = static_cast<double>(yes) / static_cast<double>(yes + no);
        }
    }
    return out;
}

JudgeResults judge_corpus(const std::vector<std::string> &predictions, const std::vector<std::string> &references,
                          ChatClient &client, const RetryPolicy &retry, AuditLog *audit, unsigned workers) {
    if (predictions.size() != references.size()) {
        throw ValidationError("judge: " + std::to_string(predictions.size()) + " predictions but " +
                              std::to_string(references.size()) + " references");
    }
    const std::size_t n = predictions.size();
    JudgeResults res;
    res.verdicts.resize(n);
    std::vector<std::string> errors(n);

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                res.verdicts[i] = judge_pair(predictions[i], references[i], client, retry, audit);
            } catch (const std::exception &e) {
                errors[i] = e.what();
            }
        }
    };
    workers = static_cast<unsigned>(std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1)));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < workers; ++t) {
        pool.emplace_back(work);
    }
    work();
    for (auto &th : pool) {
        th.join();
    }

    std::vector<JudgeVerdict> valid;
    for (std::size_t i = 0; i < n; ++i) {
        if (res.verdicts[i]) {
            valid.push_back(*res.verdicts[i]);
        } else {
            ++res.failures;
            log_warning("judge pair " + std::to_string(i + 1) + " excluded: " + errors[i]);
        }
    }
    res.accuracy = feature_accuracy(valid);
    return res;
}

} // namespace muscap
