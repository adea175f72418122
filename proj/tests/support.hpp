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

// Shared fixtures and test doubles.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "muscap/chat_client.hpp"
#include "muscap/encoder.hpp"
#include "muscap/error.hpp"
#include "muscap/lm_bridge.hpp"
#include "muscap/projector.hpp"
#include "muscap/random.hpp"
#include "muscap/training.hpp"

namespace muscap::testing {

inline std::string read_file(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline void write_file(const std::filesystem::path &p, const std::string &text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / ("muscap_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline AudioClip sine(double freq, double seconds, double rate, double amp = 0.5) {
    AudioClip c;
    c.sample_rate = rate;
    auto n = static_cast<std::size_t>(std::llround(seconds * rate));
    for (std::size_t i = 0; i < n; ++i) {
        c.samples.push_back(amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate));
    }
    return c;
}

// Tiny configuration: 3 layers, 8 channels, 16-wide LM, 4 frames per clip.
struct Tiny {
    EncoderConfig encoder_config;
    ProjectorConfig projector_config;
    std::unique_ptr<ToyEncoder> encoder;
    std::unique_ptr<ToyLanguageModel> lm;
    std::vector<TrainingExample> examples;

    explicit Tiny(int content_tokens = 6, int tokens_per_head = 2) {
        encoder_config.layers = 3;
        encoder_config.dim = 8;
        encoder_config.sample_rate = 800;
        encoder_config.frames_per_second = 4;
        encoder_config.bands = 8;
        encoder = std::make_unique<ToyEncoder>(encoder_config);
        lm = std::make_unique<ToyLanguageModel>();

        projector_config.layers = 3;
        projector_config.input_dim = 8;
        projector_config.lm_dim = 16;
        projector_config.content_tokens = content_tokens;
        for (const auto &name : default_head_order()) {
            projector_config.heads.push_back({name, name == "key" ? 4 : 3, tokens_per_head, ""});
        }
        projector_config.token_budget = content_tokens + 5 * tokens_per_head;

        const char *captions[4] = {"a calm piano piece", "energetic rock song with drums", "sad cello melody",
                                   "happy jazz with saxophone"};
        const double freqs[4] = {50, 120, 200, 330};
        for (int i = 0; i < 4; ++i) {
            AudioClip c;
            c.sample_rate = 800;
            for (int s = 0; s < 800; ++s) {
                double t = s / 800.0;
                c.samples.push_back(0.5 * std::sin(2 * std::numbers::pi * freqs[i] * t) +
                                    0.2 * std::sin(2 * std::numbers::pi * freqs[i] * 1.5 * (i + 1) * t));
            }
            TrainingExample ex;
            ex.id = "clip" + std::to_string(i);
            ex.layer_means = encode(c, *encoder).time_average_per_layer();
            ex.target = lm->make_target(captions[i]);
            for (const auto &h : projector_config.heads) {
                Matrix y = Matrix::Zero(1, h.classes);
                y(0, i % h.classes) = 1.0;
                ex.labels.targets.push_back(y);
            }
            examples.push_back(std::move(ex));
        }
    }
};

/// Relative error between two gradient blocks.
inline double relative_error(const Matrix &a, const Matrix &b) {
    double denom = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / denom;
}

// ---------------------------------------------------------------------------
// Chat-service doubles

class EchoClient final : public ChatClient {
  public:
    std::string complete(const std::string &prompt) override {
        ++calls;
        return prompt;
    }
    std::atomic<int> calls{0};
};

/// Fails with TransportError `failures` times, then returns `reply`.
class FlakyClient final : public ChatClient {
  public:
    FlakyClient(int failures, std::string reply) : failures_(failures), reply_(std::move(reply)) {}
    std::string complete(const std::string &) override {
        std::lock_guard lock(mutex_);
        ++calls;
        if (calls <= failures_) {
            throw TransportError("injected failure " + std::to_string(calls));
        }
        return reply_;
    }
    int calls = 0;

  private:
    int failures_;
    std::string reply_;
    std::mutex mutex_;
};

/// Replies with `respond(prompt)`.
class FunctionClient final : public ChatClient {
  public:
    explicit FunctionClient(std::function<std::string(const std::string &)> f) : f_(std::move(f)) {}
    std::string complete(const std::string &prompt) override { return f_(prompt); }

  private:
    std::function<std::string(const std::string &)> f_;
};

inline RetryPolicy no_sleep_retry(std::vector<double> *delays = nullptr) {
    RetryPolicy p;
    p.sleep = [delays](double d) {
        if (delays) delays->push_back(d);
    };
    return p;
}

} // namespace muscap::testing
