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

#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "muscap/audio.hpp"
#include "muscap/cli.hpp"
#include "muscap/error.hpp"
#include "muscap/random.hpp"

namespace muscap {

namespace {

constexpr double kRate = 16000.0;

struct ToneSpec {
    std::vector<double> freqs;
    double amplitude;
    double noise;     // white noise level
    double pulse_hz;  // amplitude modulation rate, 0 for none
};

AudioClip tone(const ToneSpec &spec, double seconds, std::uint64_t seed) {
    Rng rng(seed);
    AudioClip clip;
    clip.sample_rate = kRate;
    auto n = static_cast<std::size_t>(seconds * kRate);
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double t = static_cast<double>(i) / kRate;
        double v = 0.0;
        for (double f : spec.freqs) {
            v += std::sin(2.0 * std::numbers::pi * f * t);
        }
        v *= spec.amplitude / static_cast<double>(spec.freqs.size());
        if (spec.pulse_hz > 0) {
            v *= 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * spec.pulse_hz * t);
        }
        v += spec.noise * rng.uniform(-1.0, 1.0);
        clip.samples[i] = static_cast<float>(v);
    }
    return clip;
}

void write_text(const std::filesystem::path &path, const std::string &text) {
    std::ofstream out(path);
    if (!(out << text)) {
        throw IoError("cannot write " + path.string());
    }
}

} // namespace

void write_fixture(const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir);

    struct Item {
        std::string file;
        ToneSpec tone;
        std::string caption;
        nlohmann::json features;
    };
    const std::vector<Item> items = {
        {"calm_piano.wav", {{262.0, 330.0, 392.0}, 0.3, 0.0, 0.0}, "a calm piano piece with soft melody",
         {{"key", "C major"}, {"instrument", {"piano"}}, {"mood", {"calm"}}, {"genre", {"classical"}},
          {"vocals", "no_vocals"}}},
        {"rock_drums.wav", {{82.0, 165.0}, 0.8, 0.3, 4.0}, "energetic rock song with electric guitar and drums",
         {{"key", "E minor"}, {"instrument", {"guitar", "drums"}}, {"mood", {"energetic"}}, {"genre", {"rock"}},
          {"vocals", "male_vocals"}}},
        {"sad_cello.wav", {{110.0, 131.0}, 0.5, 0.02, 0.5}, "sad cello melody in a minor key",
         {{"key", "A minor"}, {"instrument", {"cello"}}, {"mood", {"sad"}}, {"genre", {"classical"}},
          {"vocals", "no_vocals"}}},
        {"happy_jazz.wav", {{698.0, 880.0, 1047.0}, 0.6, 0.05, 2.0}, "happy jazz with saxophone and bass",
         {{"key", "F major"}, {"instrument", {"saxophone", "bass"}}, {"mood", {"happy"}}, {"genre", {"jazz"}},
          {"vocals", "female_vocals"}}},
    };

    std::string manifest;
    for (std::size_t i = 0; i < items.size(); ++i) {
        write_wav(dir / items[i].file, tone(items[i].tone, 10.0, 100 + i));
        nlohmann::json rec = {{"audio", items[i].file},
                              {"caption", items[i].caption},
                              {"split", "train"},
                              {"features", items[i].features}};
        manifest += rec.dump() + "\n";
    }
    write_text(dir / "manifest.jsonl", manifest);

    // A 30 s song stitched from three of the tones.
    AudioClip song;
    song.sample_rate = kRate;
    for (std::size_t i : {0u, 1u, 3u}) {
        AudioClip part = tone(items[i].tone, 10.0, 200 + i);
        song.samples.insert(song.samples.end(), part.samples.begin(), part.samples.end());
    }
    write_wav(dir / "song.wav", song);

    write_text(dir / "instrument.txt", "piano\nguitar\ndrums\ncello\nsaxophone\nbass\nviolin\n");
    write_text(dir / "mood.txt", "calm\nenergetic\nsad\nhappy\n");
    write_text(dir / "genre.txt", "classical\nrock\njazz\npop\n");

    nlohmann::json config = {
        {"encoder", {{"sample_rate", kRate}, {"layers", 13}, {"dim", 768}, {"frames_per_second", 75}, {"seed", 7}}},
        {"projector", {{"content_tokens", 35}, {"token_budget", 60}, {"seed", 11}}},
        {"lm", {{"kind", "toy"}, {"dim", 16}, {"ffn", 32}, {"seed", 3}}},
        {"vocabularies",
         {{"key", "default"},
          {"vocals", "default"},
          {"instrument", "instrument.txt"},
          {"mood", "mood.txt"},
          {"genre", "genre.txt"}}},
        {"datasets", {{"toy", "manifest.jsonl"}}},
        {"phases",
         {{{"kind", "feature_pretrain"}, {"epochs", 20}, {"batch_size", 2}, {"learning_rate", 0.01},
           {"optimizer", "adam"}, {"seed", 1}},
          {{"kind", "caption_pretrain"}, {"epochs", 200}, {"batch_size", 4}, {"learning_rate", 0.01},
           {"optimizer", "adam"}, {"seed", 2}},
          {{"kind", "finetune"}, {"epochs", 40}, {"batch_size", 2}, {"learning_rate", 0.003},
           {"optimizer", "adam"}, {"seed", 3}}}},
        {"caption", {{"chunk_seconds", 10.0}, {"max_tokens", 12}}},
        {"chat",
         {{"endpoint", "http://127.0.0.1:8080/v1"},
          {"auth_env", "MUSCAP_CHAT_TOKEN"},
          {"model", "gpt-4"},
          {"timeout_s", 30},
          {"audit_log", "out/chat_audit.jsonl"}}},
        {"output", {{"dir", "out"}}},
    };
    write_text(dir / "config.json", config.dump(2) + "\n");
}

} // namespace muscap
