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

// Out-of-process language model adapter.
//
// Wire format: every frame is a little-endian u32 byte count followed by the
// payload. A message is one JSON header frame plus the tensor frames the
// header announces in "tensors". A tensor payload is u32 rows, u32 cols and
// rows*cols little-endian float32 values in row-major order.
//
// Requests: {"op": "info" | "tokenize" | "detokenize" | "embed_query" |
// "caption_nll" | "generate", ...}. Replies carry {"ok": true, ...} or
// {"ok": false, "error": "..."}.

#include <cstdint>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "muscap/lm_bridge.hpp"

namespace muscap::ipc {

void write_frame(std::ostream &out, std::string_view payload);
/// Returns nullopt on end of stream before any byte of the frame.
std::optional<std::string> read_frame(std::istream &in);

std::string encode_tensor(const Matrix &m);
Matrix decode_tensor(std::string_view payload);

struct Message {
    nlohmann::json header;
    std::vector<Matrix> tensors;
};

void write_message(std::ostream &out, const Message &message);
std::optional<Message> read_message(std::istream &in);

/// Serves requests until the input stream ends.
void serve(const LanguageModel &model, std::istream &in, std::ostream &out);

/// Spawns `argv` and talks to it over its standard input and output. Calls are
/// serialised internally, so the adapter is safe to share between threads.
class SubprocessLanguageModel final : public LanguageModel {
  public:
    explicit SubprocessLanguageModel(std::vector<std::string> argv);
    ~SubprocessLanguageModel() override;
    SubprocessLanguageModel(const SubprocessLanguageModel &) = delete;
    SubprocessLanguageModel &operator=(const SubprocessLanguageModel &) = delete;

    int dim() const override { return dim_; }
    std::vector<int> tokenize(std::string_view text) const override;
    std::string detokenize(std::span<const int> ids) const override;
    TokenBlock embed_query(std::string_view text) const override;
    NllResult caption_nll(const Matrix &prefix, const CaptionTarget &target, bool with_grad) const override;
    std::string generate(const Matrix &prefix, int max_tokens) const override;
    std::uint64_t parameter_hash() const override;

  private:
    Message call(const Message &request) const;
    void shutdown();

    struct Pipes;
    Pipes *pipes_ = nullptr;
    int pid_ = -1;
    int dim_ = 0;
    mutable std::mutex mutex_;
};

} // namespace muscap::ipc
