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

#include "muscap/chaining.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "muscap/data.hpp"
#include "muscap/error.hpp"
#include "muscap/training.hpp"

namespace muscap {

namespace {

// Byte-exact template text. \xE2\x80\x91 is a non-breaking hyphen,
// \xE2\x80\x94 an em dash and \xE2\x80\x9C a left double quotation mark.
// Trailing spaces are part of the template.
constexpr std::string_view kHeadBeforeName =
    "    Given the following chronological 10\xE2\x80\x91second chunk descriptions of a \n"
    "    single piece, write one flowing, detailed description of the entire song\n"
    "    \xE2\x80\x94its structure, instrumentation, and standout moments. Mention transition \n"
    "    points in terms of time stamps. If the description of certain chunks does \n"
    "    not seem to fit with those for the chunks before and after, treat those \n"
    "    as bad descriptions with lower accuracy and do not incorporate the information. \n"
    "    Retain concrete musical attributes such as key, chords, tempo.\n"
    "\n"
    "    Chunks for \xE2\x80\x9C";
constexpr std::string_view kHeadAfterName = "\" :\n";

const std::string kHeader = std::string(kHeadBeforeName) + "{song_name}" + std::string(kHeadAfterName);

bool is_blank(const std::string &s) {
    return s.find_first_not_of(" \t\r\n\f\v") == std::string::npos;
}

} // namespace

std::string ModelCaptioner::caption(const AudioClip &chunk) const {
    return model_.caption(chunk, max_tokens_);
}

std::vector<ChunkCaption> caption_chunks(const AudioClip &audio, const ChunkCaptioner &captioner,
                                         double clip_len_s, unsigned workers) {
    audio.validate();
    auto windows = clip_windows(audio.samples.size(), audio.sample_rate, clip_len_s);
    std::vector<ChunkCaption> out(windows.size());
    std::vector<std::exception_ptr> errors(windows.size());

    auto run_one = [&](std::size_t i) {
        const auto &w = windows[i];
        ChunkCaption &c = out[i];
        c.index = static_cast<int>(i) + 1;
        c.start_s = static_cast<double>(w.begin) / audio.sample_rate;
        c.end_s = static_cast<double>(w.begin + w.count) / audio.sample_rate;
        try {
            c.text = captioner.caption(slice(audio, w.begin, w.count));
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    if (workers == 0) {
        workers = std::max(1u, std::thread::hardware_concurrency());
    }
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, windows.size()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < windows.size(); ++i) {
            run_one(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < workers; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < windows.size(); i = next++) {
                    run_one(i);
                }
            });
        }
        for (auto &th : pool) {
            th.join();
        }
    }
    for (auto &e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return out;
}

std::string_view chain_prompt_header() { return kHeader; }

ChainPrompt build_prompt(std::string song_name, std::vector<ChunkCaption> chunks) {
    if (chunks.empty()) {
        throw InvalidInput("build_prompt: no chunk captions");
    }
    std::string rendered;
    rendered += kHeadBeforeName;
    rendered += song_name;
    rendered += kHeadAfterName;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        const ChunkCaption &c = chunks[i];
        if (c.index != static_cast<int>(i) + 1) {
            throw ValidationError("build_prompt: chunk " + std::to_string(i + 1) + " carries index " +
                                  std::to_string(c.index));
        }
        if (!(c.end_s > c.start_s)) {
            throw ValidationError("build_prompt: chunk " + std::to_string(c.index) + " has an empty time range");
        }
        if (is_blank(c.text)) {
            throw ValidationError("build_prompt: chunk " + std::to_string(c.index) + " has an empty caption");
        }
        rendered += "    " + std::to_string(c.index) + ". " + std::to_string(std::llround(c.start_s)) + " to " +
                    std::to_string(std::llround(c.end_s)) + " seconds: " + c.text + "\n";
    }
    rendered += kChainPromptFooter;
    return {std::move(song_name), std::move(chunks), std::move(rendered)};
}

std::string chain(const ChainPrompt &prompt, ChatClient &client, const RetryPolicy &retry, AuditLog *audit) {
    return complete_with_retry(client, prompt.rendered, retry, audit);
}

} // namespace muscap
