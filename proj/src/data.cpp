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

#include "muscap/data.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "muscap/error.hpp"
#include "muscap/log.hpp"
#include "muscap/hash.hpp"

namespace muscap {

using nlohmann::json;

namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string at_line(const std::filesystem::path &path, std::size_t line) {
    return path.string() + ":" + std::to_string(line) + ": ";
}

std::vector<std::string> label_list(const json &value, const std::string &what) {
    if (value.is_string()) {
        return {value.get<std::string>()};
    }
    if (value.is_null()) {
        return {};
    }
    if (!value.is_array()) {
        throw ParseError(what + " must be a string or a list of strings");
    }
    std::vector<std::string> out;
    for (const auto &v : value) {
        if (!v.is_string()) {
            throw ParseError(what + " must contain only strings");
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

} // namespace

TaskVocabulary::TaskVocabulary(std::string task, std::vector<std::string> labels, bool multi_label)
    : task_(std::move(task)), labels_(std::move(labels)), multi_label_(multi_label) {
    if (labels_.empty()) {
        throw ConfigError("vocabulary for task '" + task_ + "' is empty");
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (!index_.emplace(labels_[i], static_cast<int>(i)).second) {
            throw ConfigError("vocabulary for task '" + task_ + "' repeats label '" + labels_[i] + "'");
        }
    }
}

TaskVocabulary TaskVocabulary::from_file(std::string task, const std::filesystem::path &path,
                                         bool multi_label) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read vocabulary file " + path.string());
    }
    std::vector<std::string> labels;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (!line.empty()) {
            labels.push_back(line);
        }
    }
    return TaskVocabulary(std::move(task), std::move(labels), multi_label);
}

std::optional<int> TaskVocabulary::index(const std::string &label) const {
    const auto it = index_.find(label);
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::string TaskVocabulary::digest() const {
    Fnv1a64 h;
    h.update(task_).update(multi_label_ ? "\x01" : "\x00");
    for (const auto &l : labels_) {
        h.update(l).update("\n");
    }
    return h.hex();
}

TaskVocabulary default_key_vocabulary() {
    std::vector<std::string> labels;
    for (const char *tonic : {"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"}) {
        labels.push_back(std::string(tonic) + " major");
        labels.push_back(std::string(tonic) + " minor");
    }
    return TaskVocabulary("key", std::move(labels), false);
}

TaskVocabulary default_vocals_vocabulary() {
    return TaskVocabulary("vocals", {"no_vocals", "male_vocals", "female_vocals"}, false);
}

VocabularySet::VocabularySet(std::vector<TaskVocabulary> vocabs) : vocabs_(std::move(vocabs)) {
    for (std::size_t i = 0; i < vocabs_.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (vocabs_[i].task() == vocabs_[j].task()) {
                throw ConfigError("duplicate vocabulary for task '" + vocabs_[i].task() + "'");
            }
        }
    }
}

const TaskVocabulary *VocabularySet::find(const std::string &task) const {
    for (const auto &v : vocabs_) {
        if (v.task() == task) {
            return &v;
        }
    }
    return nullptr;
}

// ---------------------------------------------------------------------------

void validate_record(const ManifestRecord &record, const VocabularySet &vocabs) {
    if (trim(record.caption).empty()) {
        throw ValidationError("caption is empty");
    }
    for (const auto &[task, labels] : record.features) {
        const TaskVocabulary *vocab = vocabs.find(task);
        if (vocab == nullptr) {
            throw ValidationError("unknown feature task '" + task + "'");
        }
        for (const auto &label : labels) {
            if (!vocab->index(label)) {
                throw ValidationError("label '" + label + "' is not in the " + task + " vocabulary");
            }
        }
    }
    for (const auto &vocab : vocabs.tasks()) {
        if (vocab.multi_label()) {
            continue;
        }
        const auto it = record.features.find(vocab.task());
        const std::size_t n = it == record.features.end() ? 0 : it->second.size();
        if (n != 1) {
            throw ValidationError("single-label task '" + vocab.task() + "' needs exactly one label, got " +
                                  std::to_string(n));
        }
    }
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path &path, const VocabularySet &vocabs,
                                          std::ostream *warnings) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read manifest " + path.string());
    }
    const std::filesystem::path base = path.parent_path();
    std::vector<ManifestRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error &e) {
            throw ParseError(at_line(path, lineno) + "malformed JSON: " + e.what());
        }
        if (!j.is_object()) {
            throw ParseError(at_line(path, lineno) + "expected a JSON object");
        }
        ManifestRecord r;
        r.line = lineno;
        try {
            const std::filesystem::path audio = j.at("audio").get<std::string>();
            r.audio_path = audio.is_absolute() ? audio : base / audio;
            r.caption = j.at("caption").get<std::string>();
            r.split = j.value("split", std::string());
            if (j.contains("features")) {
                for (const auto &[task, value] : j.at("features").items()) {
                    if (task == "chords") {
                        r.chords = label_list(value, "chords");
                    } else if (task == "downbeats") {
                        r.downbeats = value.get<std::vector<double>>();
                    } else {
                        r.features[task] = label_list(value, "feature '" + task + "'");
                    }
                }
            }
            if (j.contains("chords")) {
                r.chords = label_list(j.at("chords"), "chords");
            }
            if (j.contains("downbeats")) {
                r.downbeats = j.at("downbeats").get<std::vector<double>>();
            }
        } catch (const json::exception &e) {
            throw ParseError(at_line(path, lineno) + e.what());
        } catch (const ParseError &e) {
            throw ParseError(at_line(path, lineno) + e.what());
        }
        try {
            validate_record(r, vocabs);
        } catch (const ValidationError &e) {
            throw ValidationError(at_line(path, lineno) + e.what());
        }
        records.push_back(std::move(r));
    }
    if (records.empty()) {
        std::string msg = "manifest " + path.string() + " contains no records";
        if (warnings != nullptr) {
            *warnings << "warning: " << msg << '\n';
        } else {
            log_warning(msg);
        }
    }
    return records;
}

FeatureLabelSet encode_labels(const ManifestRecord &record, const VocabularySet &vocabs) {
    FeatureLabelSet out;
    for (const auto &vocab : vocabs.tasks()) {
        Matrix y = Matrix::Zero(1, vocab.size());
        const auto it = record.features.find(vocab.task());
        if (it != record.features.end()) {
            for (const auto &label : it->second) {
                const auto idx = vocab.index(label);
                if (!idx) {
                    throw ValidationError("label '" + label + "' is not in the " + vocab.task() + " vocabulary");
                }
                y(0, *idx) = 1.0;
            }
        }
        out.targets.push_back(std::move(y));
    }
    return out;
}

std::map<std::string, std::vector<std::string>> decode_labels(const FeatureLabelSet &labels,
                                                              const VocabularySet &vocabs) {
    if (labels.targets.size() != vocabs.size()) {
        throw ShapeError("decode_labels: label set does not match the vocabularies");
    }
    std::map<std::string, std::vector<std::string>> out;
    for (std::size_t k = 0; k < vocabs.size(); ++k) {
        const auto &vocab = vocabs.tasks()[k];
        std::vector<std::string> names;
        for (int c = 0; c < vocab.size(); ++c) {
            if (labels.targets[k](0, c) > 0.5) {
                names.push_back(vocab.labels()[static_cast<std::size_t>(c)]);
            }
        }
        if (!names.empty() || !vocab.multi_label()) {
            out[vocab.task()] = std::move(names);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<ClipWindow> clip_windows(std::size_t samples, double sample_rate, double clip_len_s) {
    if (!(clip_len_s > 0)) {
        throw InvalidInput("clip length must be positive");
    }
    if (!(sample_rate > 0)) {
        throw InvalidInput("sample rate must be positive");
    }
    const auto window = static_cast<std::size_t>(std::max(1.0, std::round(clip_len_s * sample_rate)));
    std::vector<ClipWindow> out;
    std::size_t begin = 0;
    while (begin + window <= samples) {
        out.push_back({begin, window});
        begin += window;
    }
    const std::size_t rest = samples - begin;
    if (rest > 0 && 2 * rest >= window) {
        out.push_back({begin, rest});
    }
    return out;
}

std::vector<AudioClip> make_clips(const AudioClip &clip, double clip_len_s) {
    std::vector<AudioClip> out;
    for (const auto &w : clip_windows(clip.samples.size(), clip.sample_rate, clip_len_s)) {
        out.push_back(slice(clip, w.begin, w.count));
    }
    return out;
}

} // namespace muscap
