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

#include "muscap/training.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "muscap/error.hpp"
#include "muscap/random.hpp"

namespace muscap {

double LossWeights::task(const std::string &name) const {
    const auto it = tasks.find(name);
    return it == tasks.end() ? default_task : it->second;
}

void LossWeights::validate(const std::vector<std::string> &head_names) const {
    if (!(caption >= 0) || !(default_task >= 0)) {
        throw ConfigError("loss weights must be non-negative");
    }
    bool any = caption > 0;
    for (const auto &[name, w] : tasks) {
        if (!(w >= 0)) {
            throw ConfigError("loss weight for task '" + name + "' must be non-negative");
        }
    }
    for (const auto &h : head_names) {
        any = any || task(h) > 0;
    }
    if (!any) {
        throw ConfigError("at least one loss weight must be positive");
    }
}

const char *to_string(PhaseKind kind) {
    switch (kind) {
    case PhaseKind::feature_pretrain:
        return "feature_pretrain";
    case PhaseKind::caption_pretrain:
        return "caption_pretrain";
    case PhaseKind::finetune:
        return "finetune";
    }
    return "unknown";
}

PhaseKind phase_kind_from_string(const std::string &name) {
    for (PhaseKind k : {PhaseKind::feature_pretrain, PhaseKind::caption_pretrain, PhaseKind::finetune}) {
        if (name == to_string(k)) {
            return k;
        }
    }
    throw ConfigError("unknown phase '" + name + "'");
}

void PhaseSpec::validate(const std::vector<std::string> &head_names) const {
    const std::string where = std::string("phase ") + to_string(kind) + ": ";
    try {
        weights.validate(head_names);
    } catch (const ConfigError &e) {
        throw ConfigError(where + e.what());
    }
    if (kind == PhaseKind::feature_pretrain && weights.caption != 0.0) {
        throw ConfigError(where + "feature pretraining requires a zero caption weight");
    }
    if (epochs < 1) {
        throw ConfigError(where + "epochs must be >= 1");
    }
    if (max_steps < 0) {
        throw ConfigError(where + "max_steps must be >= 0");
    }
    if (batch_size < 1) {
        throw ConfigError(where + "batch_size must be >= 1");
    }
    if (!(learning_rate > 0)) {
        throw ConfigError(where + "learning_rate must be positive");
    }
}

std::vector<PhaseSpec> default_schedule() {
    PhaseSpec features;
    features.kind = PhaseKind::feature_pretrain;
    features.weights.caption = 0.0;
    features.weights.default_task = 0.2;

    PhaseSpec captions;
    captions.kind = PhaseKind::caption_pretrain;
    captions.weights.caption = 1.0;
    captions.weights.default_task = 0.1;

    PhaseSpec finetune = captions;
    finetune.kind = PhaseKind::finetune;
    return {features, captions, finetune};
}

double task_loss(const RowVector &logits, const Matrix &target) {
    if (target.rows() != 1 || target.cols() != logits.size()) {
        std::ostringstream msg;
        msg << "task_loss: " << logits.size() << " logits but " << target.size() << " targets";
        throw ShapeError(msg.str());
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        const double t = target(0, i);
        if (!(t >= 0.0 && t <= 1.0)) {
            throw InvalidInput("task_loss: targets must lie in [0, 1]");
        }
        acc += ad::bce_with_logits_value(logits(i), t);
    }
    return acc / static_cast<double>(logits.size());
}

double task_loss(const FeaturePrediction &pred, const Matrix &target) { return task_loss(pred.logits, target); }

double total_loss(double caption_loss, const std::map<std::string, double> &task_losses, const LossWeights &w) {
    // Accumulate in extended precision and round once, so sums such as
    // 2 + 5 * (0.1 * 0.5) land on the nearest double.
    long double total = static_cast<long double>(w.caption) * caption_loss;
    for (const auto &[name, loss] : task_losses) {
        total += static_cast<long double>(w.task(name)) * loss;
    }
    return static_cast<double>(total);
}

// ---------------------------------------------------------------------------

std::vector<TrainingExample> prepare_examples(std::span<const ManifestRecord> records, const VocabularySet &vocabs,
                                              const AudioEncoder &encoder, const LanguageModel &lm) {
    std::vector<TrainingExample> out;
    out.reserve(records.size());
    for (const auto &r : records) {
        TrainingExample ex;
        ex.id = r.audio_path.filename().string() + "@" + std::to_string(r.line);
        ex.layer_means = encode(read_wav(r.audio_path), encoder).time_average_per_layer();
        ex.target = lm.make_target(r.caption);
        ex.labels = encode_labels(r, vocabs);
        out.push_back(std::move(ex));
    }
    return out;
}

TokenBlock CaptionModel::query_block() const { return lm->embed_query(query); }

Matrix CaptionModel::prefix(const LayeredEmbedding &h) const {
    const Matrix music = projector->music_tokens(h);
    const TokenBlock q = query_block();
    if (q.dim() != music.cols()) {
        throw ShapeError("query embedding width differs from projector output width");
    }
    Matrix out(music.rows() + q.size(), music.cols());
    out.topRows(music.rows()) = music;
    out.bottomRows(q.size()) = q.vectors;
    return out;
}

std::string CaptionModel::caption(const AudioClip &clip, int max_tokens) const {
    return lm->generate(prefix(encode(clip, *encoder)), max_tokens);
}

ExampleLoss evaluate_example(const CaptionModel &model, const TrainingExample &example, const LossWeights &w,
                             bool with_grad) {
    const Projector &proj = *model.projector;
    const auto &heads = proj.config().heads;
    if (example.labels.targets.size() != heads.size()) {
        throw ShapeError("example labels do not match the projector heads");
    }
    ad::Tape tape;
    const Projector::Graph g = proj.build(tape, example.layer_means, with_grad);

    ExampleLoss out;
    std::vector<ad::Var> terms;
    for (std::size_t k = 0; k < heads.size(); ++k) {
        const ad::Var lk = ad::bce_with_logits(g.logits[k], example.labels.targets[k]);
        out.tasks.push_back(lk.value()(0, 0));
        const double lambda = w.task(heads[k].name);
        if (lambda > 0) {
            terms.push_back(ad::scale(lk, lambda));
        }
    }
    if (w.caption > 0) {
        std::vector<ad::Var> parts{g.content};
        if (!heads.empty()) {
            parts.push_back(g.feature);
        }
        parts.push_back(tape.constant(model.query_block().vectors));
        const ad::Var prefix = ad::concat_rows(parts);
        const NllResult nll = model.lm->caption_nll(prefix.value(), example.target, with_grad);
        out.caption = nll.loss;
        const ad::Var cap = with_grad ? ad::external_scalar(prefix, nll.loss, nll.prefix_grad)
                                      : tape.constant(Matrix::Constant(1, 1, nll.loss));
        terms.push_back(ad::scale(cap, w.caption));
    }

    std::map<std::string, double> task_losses;
    for (std::size_t k = 0; k < heads.size(); ++k) {
        task_losses[heads[k].name] = out.tasks[k];
    }
    out.total = total_loss(out.caption.value_or(0.0), task_losses, w);

    if (with_grad) {
        out.grads.reserve(g.params.size());
        if (!terms.empty()) {
            ad::Var root = terms.front();
            for (std::size_t i = 1; i < terms.size(); ++i) {
                root = ad::add(root, terms[i]);
            }
            tape.backward(root);
        }
        for (std::size_t i = 0; i < g.params.size(); ++i) {
            const Matrix &gr = g.params[i].grad();
            const Matrix &pv = proj.parameters()[i].value;
            out.grads.push_back(gr.size() ? gr : Matrix::Zero(pv.rows(), pv.cols()));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

void write_value(std::ostream &out, double v) { out << std::setprecision(10) << v; }

class Optimizer {
  public:
    Optimizer(OptimizerKind kind, double lr, const std::vector<Parameter> &params) : kind_(kind), lr_(lr) {
        if (kind_ == OptimizerKind::adam) {
            for (const auto &p : params) {
                m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
                v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
            }
        }
    }

    void step(std::vector<Parameter> &params, const std::vector<Matrix> &grads) {
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                params[i].value -= lr_ * grads[i];
            }
            return;
        }
        constexpr double b1 = 0.9;
        constexpr double b2 = 0.999;
        constexpr double eps = 1e-8;
        ++t_;
        const double c1 = 1.0 - std::pow(b1, t_);
        const double c2 = 1.0 - std::pow(b2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
            v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i].cwiseProduct(grads[i]);
            params[i].value.array() -=
                lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
        }
    }

  private:
    OptimizerKind kind_;
    double lr_;
    int t_ = 0;
    std::vector<Matrix> m_, v_;
};

} // namespace

void LossTrace::write_csv(std::ostream &out, bool header) const {
    if (header) {
        out << "step,L_cap";
        for (const auto &t : tasks) {
            out << ",L_" << t;
        }
        out << ",total\n";
    }
    for (const auto &s : steps) {
        out << s.step << ',';
        if (s.caption) {
            write_value(out, *s.caption);
        }
        for (double t : s.tasks) {
            out << ',';
            write_value(out, t);
        }
        out << ',';
        write_value(out, s.total);
        out << '\n';
    }
}

PhaseResult train_phase(const PhaseSpec &spec, CaptionModel &model, std::span<const TrainingExample> examples,
                        std::ostream *trace_stream) {
    Projector &proj = *model.projector;
    std::vector<std::string> head_names;
    for (const auto &h : proj.config().heads) {
        head_names.push_back(h.name);
    }
    spec.validate(head_names);
    if (examples.empty()) {
        throw InvalidInput(std::string("phase ") + to_string(spec.kind) + ": dataset is empty");
    }
    const auto batch = static_cast<std::size_t>(spec.batch_size);
    if (examples.size() < batch) {
        throw InvalidInput(std::string("phase ") + to_string(spec.kind) + ": dataset has fewer examples (" +
                           std::to_string(examples.size()) + ") than one batch (" + std::to_string(batch) + ")");
    }
    if (model.lm->dim() != proj.config().lm_dim) {
        throw ConfigError("LM embedding width " + std::to_string(model.lm->dim()) +
                          " differs from projector lm_dim " + std::to_string(proj.config().lm_dim));
    }

    PhaseResult result;
    result.encoder_hash_before = model.encoder->parameter_hash();
    result.lm_hash_before = model.lm->parameter_hash();
    result.trace.phase = to_string(spec.kind);
    result.trace.tasks = head_names;
    if (trace_stream != nullptr) {
        LossTrace header;
        header.tasks = head_names;
        header.write_csv(*trace_stream, true);
    }

    Optimizer optimizer(spec.optimizer, spec.learning_rate, proj.parameters());
    const std::size_t batches_per_epoch = examples.size() / batch;
    std::size_t step = 0;
    bool done = false;
    for (int epoch = 0; epoch < spec.epochs && !done; ++epoch) {
        Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(epoch)));
        const std::vector<std::size_t> order = rng.permutation(examples.size());
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            StepRecord rec;
            rec.step = step;
            rec.tasks.assign(head_names.size(), 0.0);
            std::vector<Matrix> grads;
            double caption = 0.0;
            for (std::size_t i = 0; i < batch; ++i) {
                const TrainingExample &ex = examples[order[b * batch + i]];
                ExampleLoss l = evaluate_example(model, ex, spec.weights, true);
                if (!std::isfinite(l.total)) {
                    std::ostringstream msg;
                    msg << "non-finite loss in phase " << to_string(spec.kind) << " at step " << step << " (epoch "
                        << epoch << ", batch " << b << ", examples";
                    for (std::size_t j = 0; j < batch; ++j) {
                        msg << ' ' << examples[order[b * batch + j]].id;
                    }
                    msg << ')';
                    throw NumericalError(msg.str());
                }
                if (grads.empty()) {
                    grads = std::move(l.grads);
                } else {
                    for (std::size_t p = 0; p < grads.size(); ++p) {
                        grads[p] += l.grads[p];
                    }
                }
                if (l.caption) {
                    caption += *l.caption;
                }
                for (std::size_t k = 0; k < l.tasks.size(); ++k) {
                    rec.tasks[k] += l.tasks[k];
                }
                rec.total += l.total;
            }
            const double inv = 1.0 / static_cast<double>(batch);
            for (auto &g : grads) {
                g *= inv;
            }
            if (spec.weights.caption > 0) {
                rec.caption = caption * inv;
            }
            for (double &t : rec.tasks) {
                t *= inv;
            }
            rec.total *= inv;
            optimizer.step(proj.parameters(), grads);

            if (trace_stream != nullptr) {
                LossTrace one;
                one.steps.push_back(rec);
                one.write_csv(*trace_stream, false);
            }
            result.trace.steps.push_back(std::move(rec));
            ++step;
            if (spec.max_steps > 0 && step >= static_cast<std::size_t>(spec.max_steps)) {
                done = true;
                break;
            }
        }
    }
    result.encoder_hash_after = model.encoder->parameter_hash();
    result.lm_hash_after = model.lm->parameter_hash();
    return result;
}

} // namespace muscap
