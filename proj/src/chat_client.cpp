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

#include "muscap/chat_client.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "muscap/error.hpp"
#include "muscap/log.hpp"

namespace muscap {

namespace {

bool is_blank(const std::string &s) {
    return s.find_first_not_of(" \t\r\n\f\v") == std::string::npos;
}

} // namespace

std::string utc_timestamp() {
    using namespace std::chrono;
    auto now = system_clock::now();
    auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
    std::time_t t = system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

HttpChatClient::HttpChatClient(ChatConfig config, std::string token)
    : config_(std::move(config)), token_(std::move(token)) {
    const std::string &url = config_.endpoint;
    auto scheme_end = url.find("://");
    if (url.empty() || scheme_end == std::string::npos) {
        throw ConfigError("chat.endpoint: expected an http:// or https:// URL, got '" + url + "'");
    }
    auto path_start = url.find('/', scheme_end + 3);
    scheme_host_ = url.substr(0, path_start);
    base_path_ = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!base_path_.empty() && base_path_.back() == '/') {
        base_path_.pop_back();
    }
}

std::string HttpChatClient::complete(const std::string &prompt) {
    httplib::Client client(scheme_host_);
    if (!client.is_valid()) {
        throw ConfigError("chat.endpoint: unsupported URL '" + config_.endpoint + "'");
    }
    auto timeout = std::chrono::milliseconds(static_cast<long long>(config_.timeout_s * 1000.0));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    nlohmann::json body = {
        {"model", config_.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
    };
    httplib::Headers headers;
    if (!token_.empty()) {
        headers.emplace("Authorization", "Bearer " + token_);
    }
    auto res = client.Post(base_path_ + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) {
        throw TransportError("chat request failed: " + httplib::to_string(res.error()));
    }
    if (res->status == 429 || res->status >= 500) {
        throw TransportError("chat service returned HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) {
        throw ChainError("chat service returned HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    try {
        auto reply = nlohmann::json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception &e) {
        throw ChainError(std::string("chat service reply is not a chat completion: ") + e.what());
    }
}

std::unique_ptr<ChatClient> make_chat_client(const ChatConfig &config) {
    if (config.auth_env.empty()) {
        throw ConfigError("chat.auth_env: must name an environment variable");
    }
    const char *token = std::getenv(config.auth_env.c_str());
    if (token == nullptr) {
        throw ConfigError("chat.auth_env: environment variable " + config.auth_env + " is not set");
    }
    return std::make_unique<HttpChatClient>(config, token);
}

AuditLog::AuditLog(const std::filesystem::path &path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    file_.emplace(path, std::ios::app);
    if (!*file_) {
        throw IoError("cannot open audit log " + path.string());
    }
}

void AuditLog::record(AuditEntry entry) {
    std::lock_guard lock(mutex_);
    if (file_) {
        nlohmann::json j = {{"prompt", entry.prompt},         {"completion", entry.completion},
                            {"attempt", entry.attempt},       {"started_at", entry.started_at},
                            {"finished_at", entry.finished_at}};
        if (!entry.error.empty()) {
            j["error"] = entry.error;
        }
        *file_ << j.dump() << '\n';
        file_->flush();
    }
    entries_.push_back(std::move(entry));
}

std::vector<AuditEntry> AuditLog::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

std::string complete_with_retry(ChatClient &client, const std::string &prompt, const RetryPolicy &policy,
                                AuditLog *audit) {
    if (policy.max_attempts < 1) {
        throw InvalidInput("retry policy needs at least one attempt");
    }
    double delay = policy.initial_delay_s;
    std::string last_error;
    for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
        AuditEntry entry{prompt, "", "", attempt, utc_timestamp(), ""};
        try {
            std::string completion = client.complete(prompt);
            entry.completion = completion;
            entry.finished_at = utc_timestamp();
            if (audit) audit->record(entry);
            if (is_blank(completion)) {
                throw ChainError("chat service returned an empty completion");
            }
            return completion;
        } catch (const TransportError &e) {
            last_error = e.what();
            entry.error = last_error;
            entry.finished_at = utc_timestamp();
            if (audit) audit->record(entry);
        }
        if (attempt < policy.max_attempts) {
            log_warning("chat attempt " + std::to_string(attempt) + " failed (" + last_error + "), retrying");
            if (policy.sleep) {
                policy.sleep(delay);
            } else {
                std::this_thread::sleep_for(std::chrono::duration<double>(delay));
            }
            delay *= policy.multiplier;
        }
    }
    throw ChainError("chat service failed after " + std::to_string(policy.max_attempts) +
                     " attempts: " + last_error);
}

} // namespace muscap
