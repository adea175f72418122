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

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "muscap/audio.hpp"
#include "muscap/autograd.hpp"

namespace muscap {

/// Ordered label list for one task. The order is part of the checkpoint
/// contract and must not change once a model has been trained.
class TaskVocabulary {
  public:
    TaskVocabulary(std::string task, std::vector<std::string> labels, bool multi_label);

    /// One label per line; blank lines and surrounding whitespace are ignored.
    static TaskVocabulary from_file(std::string task, const std::filesystem::path &path, bool multi_label);

    const std::string &task() const { return task_; }
    const std::vector<std::string> &labels() const { return labels_; }
    bool multi_label() const { return multi_label_; }
    int size() const { return static_cast<int>(labels_.size()); }

    std::optional<int> index(const std::string &label) const;
    std::string digest() const;

  private:
    std::string task_;
    std::vector<std::string> labels_;
    bool multi_label_;
    std::map<std::string, int> index_;
};

/// 24 keys: C major, C minor, C# major, C# minor, ... B major, B minor.
TaskVocabulary default_key_vocabulary();
/// no_vocals, male_vocals, female_vocals.
TaskVocabulary default_vocals_vocabulary();

/// Vocabularies in head order.
class VocabularySet {
  public:
    VocabularySet() = default;
    explicit VocabularySet(std::vector<TaskVocabulary> vocabs);

    const std::vector<TaskVocabulary> &tasks() const { return vocabs_; }
    const TaskVocabulary *find(const std::string &task) const;
    std::size_t size() const { return vocabs_.size(); }

  private:
    std::vector<TaskVocabulary> vocabs_;
};

struct ManifestRecord {
    std::filesystem::path audio_path; // resolved against the manifest directory
    std::string caption;
    std::map<std::string, std::vector<std::string>> features;
    std::string split;
    // Stored for downstream use; no head consumes them.
    std::vector<std::string> chords;
    std::vector<double> downbeats;
    std::size_t line = 0;
};

/// Multi-hot targets, parallel to VocabularySet::tasks().
struct FeatureLabelSet {
    std::vector<Matrix> targets; // each 1 x C_k
};

/// One JSON object per line:
///   {"audio": "clip.wav", "caption": "...", "split": "train",
///    "features": {"key": "C major", "instrument": ["piano"], ...},
///    "chords": [...], "downbeats": [...]}
/// Throws ParseError for malformed lines and ValidationError for records
/// that do not match the vocabularies; both name the line number.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path &path, const VocabularySet &vocabs,
                                          std::ostream *warnings = nullptr);

void validate_record(const ManifestRecord &record, const VocabularySet &vocabs);

FeatureLabelSet encode_labels(const ManifestRecord &record, const VocabularySet &vocabs);
std::map<std::string, std::vector<std::string>> decode_labels(const FeatureLabelSet &labels,
                                                              const VocabularySet &vocabs);

/// Sample range of one fixed-length window.
struct ClipWindow {
    std::size_t begin = 0;
    std::size_t count = 0;
};

/// Consecutive non-overlapping windows of `clip_len_s`; a trailing partial
/// window is kept iff it is at least half a window long.
std::vector<ClipWindow> clip_windows(std::size_t samples, double sample_rate, double clip_len_s);
std::vector<AudioClip> make_clips(const AudioClip &clip, double clip_len_s);

} // namespace muscap
