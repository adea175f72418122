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

#include <string>
#include <string_view>
#include <vector>

#include "muscap/audio.hpp"
#include "muscap/chat_client.hpp"

namespace muscap {

struct CaptionModel;

struct ChunkCaption {
    int index = 1; // 1-based
    double start_s = 0.0;
    double end_s = 0.0;
    std::string text;
};

struct ChainPrompt {
    std::string song_name;
    std::vector<ChunkCaption> chunks;
    std::string rendered;
};

/// Produces the caption for one chunk. Must be callable concurrently.
class ChunkCaptioner {
  public:
    virtual ~ChunkCaptioner() = default;
    virtual std::string caption(const AudioClip &chunk) const = 0;
};

/// Adapts a trained CaptionModel with greedy decoding.
class ModelCaptioner final : public ChunkCaptioner {
  public:
    ModelCaptioner(const CaptionModel &model, int max_tokens) : model_(model), max_tokens_(max_tokens) {}
    std::string caption(const AudioClip &chunk) const override;

  private:
    const CaptionModel &model_;
    int max_tokens_;
};

/// Splits `audio` into windows of `clip_len_s` (trailing remainder kept iff at
/// least half a window) and captions each one. Chunks are captioned on up to
/// `workers` threads (0: hardware concurrency); the result is index-ordered.
std::vector<ChunkCaption> caption_chunks(const AudioClip &audio, const ChunkCaptioner &captioner,
                                         double clip_len_s = 10.0, unsigned workers = 0);

/// The prompt template; "{song_name}" and the chunk lines are filled in by
/// build_prompt.
std::string_view chain_prompt_header();
inline constexpr std::string_view kChainPromptFooter = "    Full song description:";

/// Renders the long-caption prompt. Throws InvalidInput for an empty chunk
/// list and ValidationError for an empty chunk caption.
ChainPrompt build_prompt(std::string song_name, std::vector<ChunkCaption> chunks);

/// Sends the rendered prompt with retries and returns the long caption.
std::string chain(const ChainPrompt &prompt, ChatClient &client, const RetryPolicy &retry = {},
                  AuditLog *audit = nullptr);

} // namespace muscap
