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

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "muscap/data.hpp"
#include "muscap/encoder.hpp"
#include "muscap/lm_bridge.hpp"
#include "muscap/projector.hpp"

namespace muscap {

struct LossWeights {
    double caption = 1.0;
    // Per-task weights; tasks not listed fall back to `default_task`.
    std::map<std::string, double> tasks;
    double default_task = 0.0;

    double task(const std::string &name) const;
    /// All weights >= 0 and at least one positive for the given heads.
    void validate(const std::vector<std::string> &head_names) const;
};

enum class PhaseKind { feature_pretrain, caption_pretrain, finetune };

const char *to_string(PhaseKind kind);
PhaseKind phase_kind_from_string(const std::string &name);

enum class OptimizerKind { sgd, adam };

struct PhaseSpec {
    PhaseKind kind = PhaseKind::caption_pretrain;
    LossWeights weights;
    std::string dataset_id;
    int epochs = 1;
    int max_steps = 0; // 0: run all epochs
    int batch_size = 1;
    double learning_rate = 0.1;
    OptimizerKind optimizer = OptimizerKind::sgd;
    std::uint64_t seed = 0;

    void validate(const std::vector<std::string> &head_names) const;
};

/// Three phases: feature pretraining (caption 0, tasks 0.2), caption
/// pretraining (caption 1.0, tasks 0.1) and finetuning with the caption
/// pretraining weights.
std::vector<PhaseSpec> default_schedule();

/// Mean elementwise binary cross-entropy from logits.
double task_loss(const FeaturePrediction &pred, const Matrix &target);
double task_loss(const RowVector &logits, const Matrix &target);

/// lambda_cap * caption + sum_k lambda_k * task_k.
double total_loss(double caption_loss, const std::map<std::string, double> &task_losses, const LossWeights &w);

// ---------------------------------------------------------------------------

/// Everything a training step needs for one clip, with the frozen encoder
/// output cached as per-layer time averages.
struct TrainingExample {
    std::string id;
    Matrix layer_means; // layers x D
    CaptionTarget target;
    FeatureLabelSet labels;
};

std::vector<TrainingExample> prepare_examples(std::span<const ManifestRecord> records, const VocabularySet &vocabs,
                                              const AudioEncoder &encoder, const LanguageModel &lm);

/// The trainable projector together with the frozen modules around it.
struct CaptionModel {
    const AudioEncoder *encoder = nullptr;
    Projector *projector = nullptr;
    const LanguageModel *lm = nullptr;
    std::string query = std::string(kDefaultQuery);

    /// Full LM input for one clip: content, feature and query rows.
    Matrix prefix(const LayeredEmbedding &h) const;
    std::string caption(const AudioClip &clip, int max_tokens) const;
    TokenBlock query_block() const;
};

struct ExampleLoss {
    std::optional<double> caption; // absent when lambda_cap == 0
    std::vector<double> tasks;     // per head
    double total = 0.0;
    std::vector<Matrix> grads; // parallel to projector parameters, when requested
};

/// Loss of one example under `w`; the LM is only consulted when
/// w.caption > 0.
ExampleLoss evaluate_example(const CaptionModel &model, const TrainingExample &example, const LossWeights &w,
                             bool with_grad);

struct StepRecord {
    std::size_t step = 0;
    std::optional<double> caption;
    std::vector<double> tasks;
    double total = 0.0;
};

struct LossTrace {
    std::string phase;
    std::vector<std::string> tasks;
    std::vector<StepRecord> steps;

    /// "step,L_cap,L_<task>...,total" then one line per step.
    void write_csv(std::ostream &out, bool header = true) const;
};

struct PhaseResult {
    LossTrace trace;
    std::uint64_t encoder_hash_before = 0;
    std::uint64_t encoder_hash_after = 0;
    std::uint64_t lm_hash_before = 0;
    std::uint64_t lm_hash_after = 0;
};

/// Runs one phase over `examples` updating only projector parameters.
/// Batches have a fixed size, are reshuffled every epoch from the phase seed,
/// and a trailing partial batch is dropped. Throws NumericalError naming the
/// step and examples when a loss turns non-finite.
PhaseResult train_phase(const PhaseSpec &spec, CaptionModel &model, std::span<const TrainingExample> examples,
                        std::ostream *trace_stream = nullptr);

} // namespace muscap
