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

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace muscap {

/// Sends one prompt, returns the completion text. Implementations throw
/// TransportError for failures worth retrying and ChainError otherwise.
class ChatClient {
  public:
    virtual ~ChatClient() = default;
    virtual std::string complete(const std::string &prompt) = 0;
};

struct ChatConfig {
    std::string endpoint;                // base URL, e.g. https://host/v1
    std::string auth_env = "OPENAI_API_KEY";
    std::string model = "gpt-4";
    double timeout_s = 60.0;
    std::string audit_log;               // JSONL path; empty disables the file log
};

/// OpenAI-compatible chat completions over HTTP(S).
class HttpChatClient final : public ChatClient {
  public:
    HttpChatClient(ChatConfig config, std::string token);
    std::string complete(const std::string &prompt) override;

  private:
    ChatConfig config_;
    std::string token_;
    std::string scheme_host_;
    std::string base_path_;
};

/// Reads the token from `config.auth_env`; throws ConfigError if unset.
std::unique_ptr<ChatClient> make_chat_client(const ChatConfig &config);

struct AuditEntry {
    std::string prompt;
    std::string completion;
    std::string error;
    int attempt = 0;
    std::string started_at;
    std::string finished_at;
};

/// Request/response records, one per attempt. Thread-safe.
class AuditLog {
  public:
    AuditLog() = default;
    explicit AuditLog(const std::filesystem::path &path);

    void record(AuditEntry entry);
    std::vector<AuditEntry> entries() const;

  private:
    mutable std::mutex mutex_;
    std::vector<AuditEntry> entries_;
    std::optional<std::ofstream> file_;
};

struct RetryPolicy {
    int max_attempts = 3;
    double initial_delay_s = 0.5;
    double multiplier = 2.0;
    std::function<void(double)> sleep; // defaults to a real sleep
};

/// Calls the client until it succeeds or `max_attempts` transport failures
/// have occurred, then throws ChainError. Empty or whitespace-only
/// completions throw ChainError without retrying.
std::string complete_with_retry(ChatClient &client, const std::string &prompt, const RetryPolicy &policy,
                                AuditLog *audit = nullptr);

/// UTC wall clock in ISO 8601 with millisecond precision.
std::string utc_timestamp();

} // namespace muscap
