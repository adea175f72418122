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

// Acceptance checks. Prints one PASS or FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "muscap/chaining.hpp"
#include "muscap/cli.hpp"
#include "muscap/config.hpp"
#include "muscap/hash.hpp"
#include "muscap/judge.hpp"
#include "muscap/log.hpp"
#include "muscap/metrics.hpp"
#include "muscap/projector.hpp"
#include "muscap/random.hpp"
#include "muscap/training.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace muscap;
using namespace muscap::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// 1: the default layout assembles exactly 60 music tokens plus the query.
Outcome token_budget() {
    auto dir = scratch_dir("acceptance_budget");
    write_fixture(dir);
    RunConfig cfg = load_run_config(dir / "config.json");
    ToyLanguageModel lm(cfg.lm.toy);
    ProjectorConfig pc = cfg.resolved_projector(lm);
    Projector projector(pc);
    CaptionModel model{nullptr, &projector, &lm, cfg.query};
    LayeredEmbedding h = toy_encode(sine(440.0, 10.0, cfg.encoder.sample_rate), 1, cfg.encoder);

    auto start = Clock::now();
    TokenBlock content = projector.content_tokens(h);
    TokenBlock feature = projector.feature_tokens(projector.feature_logits(h));
    TokenBlock query = model.query_block();
    Matrix tokens = assemble_tokens(content, feature, query);
    const double elapsed = seconds_since(start);

    const Eigen::Index expected = 60 + query.size();
    std::ostringstream d;
    d << "rows " << tokens.rows() << " (expected " << expected << " = 35 content + " << feature.size()
      << " feature + " << query.size() << " query), " << std::fixed << std::setprecision(3) << elapsed << " s";
    bool ok = pc.music_tokens() == 60 && content.size() == 35 && feature.size() == 25 && tokens.rows() == expected &&
              tokens.cols() == lm.dim() && elapsed < 1.0;
    return {ok, d.str()};
}

// 2: normalised layer weights lie on the simplex.
Outcome simplex() {
    Rng rng(2024);
    double worst_sum = 0.0, min_entry = 1.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int layers = 1 + static_cast<int>(rng.next() % 24);
        LayerWeights w{RowVector(layers)};
        for (int i = 0; i < layers; ++i) w.raw(i) = rng.uniform(-50.0, 50.0);
        RowVector e = w.effective();
        worst_sum = std::max(worst_sum, std::abs(e.sum() - 1.0));
        min_entry = std::min(min_entry, e.minCoeff());
        if (!e.allFinite()) return {false, "non-finite weights at trial " + std::to_string(trial)};
    }
    std::ostringstream d;
    d << "max |sum - 1| = " << worst_sum << ", min weight = " << min_entry;
    return {worst_sum <= 1e-6 && min_entry >= 0.0, d.str()};
}

// 3: analytic gradients against central differences, per parameter group.
Outcome gradients() {
    auto start = Clock::now();
    Tiny tiny;
    Projector proj(tiny.projector_config);
    CaptionModel model{tiny.encoder.get(), &proj, tiny.lm.get()};
    LossWeights w;
    w.caption = 1.0;
    w.default_task = 0.1;
    const double h = 1e-4;

    // Random raw layer weights so the softmax is away from its symmetric point.
    Rng rng(9);
    for (auto &p : proj.parameters()) {
        if (p.name.find("layer_weights") != std::string::npos) {
            for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value(i) = rng.uniform(-1.0, 1.0);
        }
    }

    std::map<std::string, std::pair<double, double>> per_group; // squared diff, squared norm
    for (const auto &ex : {tiny.examples[0], tiny.examples[2]}) {
        ExampleLoss base = evaluate_example(model, ex, w, true);
        for (std::size_t k = 0; k < proj.parameters().size(); ++k) {
            Matrix &value = proj.parameters()[k].value;
            Matrix numeric(value.rows(), value.cols());
            for (Eigen::Index i = 0; i < value.size(); ++i) {
                const double old = value(i);
                value(i) = old + h;
                const double up = evaluate_example(model, ex, w, false).total;
                value(i) = old - h;
                const double down = evaluate_example(model, ex, w, false).total;
                value(i) = old;
                numeric(i) = (up - down) / (2 * h);
            }
            auto &[diff, norm] = per_group[proj.parameters()[k].group];
            diff += (base.grads[k] - numeric).squaredNorm();
            norm += std::max(base.grads[k].squaredNorm(), numeric.squaredNorm());
        }
    }
    const double elapsed = seconds_since(start);

    double worst = 0.0;
    std::string worst_group;
    for (const auto &[group, dn] : per_group) {
        const double rel = std::sqrt(dn.first) / std::max(std::sqrt(dn.second), 1e-12);
        if (rel >= worst) {
            worst = rel;
            worst_group = group;
        }
    }
    std::ostringstream d;
    d << per_group.size() << " groups, worst relative error " << std::scientific << std::setprecision(2) << worst
      << " (" << worst_group << "), " << std::fixed << std::setprecision(1) << elapsed << " s";
    return {worst < 1e-3 && elapsed < 60.0 && per_group.size() >= 12, d.str()};
}

// 4: the weighted sum on fixed inputs.
Outcome loss_arithmetic() {
    std::map<std::string, double> half, one;
    for (const auto &name : default_head_order()) {
        half[name] = 0.5;
        one[name] = 1.0;
    }
    LossWeights caption_phase;
    caption_phase.caption = 1.0;
    caption_phase.default_task = 0.1;
    LossWeights feature_phase;
    feature_phase.caption = 0.0;
    feature_phase.default_task = 0.2;
    const double a = total_loss(2.0, half, caption_phase);
    const double b = total_loss(0.0, one, feature_phase);
    // The caption term is ignored entirely when its weight is zero.
    const double c = total_loss(123.0, one, feature_phase);
    std::ostringstream d;
    d << std::setprecision(17) << "caption weights: " << a << ", feature weights: " << b;
    return {a == 2.25 && b == 1.0 && c == 1.0, d.str()};
}

PhaseSpec overfit_phase() {
    PhaseSpec s = default_schedule()[1];
    s.epochs = 200;
    s.batch_size = 4;
    s.learning_rate = 1.0;
    s.optimizer = OptimizerKind::sgd;
    s.seed = 13;
    return s;
}

struct OverfitRun {
    PhaseResult result;
    std::string csv;
    std::uint64_t encoder_before, encoder_after, lm_before, lm_after;
};

OverfitRun overfit_run(const Tiny &tiny) {
    Projector proj(tiny.projector_config);
    CaptionModel model{tiny.encoder.get(), &proj, tiny.lm.get()};
    OverfitRun r;
    r.encoder_before = tiny.encoder->parameter_hash();
    r.lm_before = tiny.lm->parameter_hash();
    std::ostringstream csv;
    r.result = train_phase(overfit_phase(), model, tiny.examples, &csv);
    r.csv = csv.str();
    r.encoder_after = tiny.encoder->parameter_hash();
    r.lm_after = tiny.lm->parameter_hash();
    return r;
}

// 5: frozen modules are untouched by a 200-step phase.
Outcome frozen(const OverfitRun &r) {
    std::ostringstream d;
    d << r.result.trace.steps.size() << " steps, encoder " << std::hex << r.encoder_before << " -> " << r.encoder_after
      << ", LM " << r.lm_before << " -> " << r.lm_after;
    bool ok = r.result.trace.steps.size() == 200 && r.encoder_before == r.encoder_after && r.lm_before == r.lm_after &&
              r.result.encoder_hash_before == r.result.encoder_hash_after &&
              r.result.lm_hash_before == r.result.lm_hash_after && r.result.encoder_hash_before == r.encoder_before &&
              r.result.lm_hash_before == r.lm_before;
    return {ok, d.str()};
}

// 6: SGD overfits four examples and repeats bit for bit.
Outcome overfit(const OverfitRun &first, const OverfitRun &second) {
    const auto &steps = first.result.trace.steps;
    if (steps.size() != 200) return {false, std::to_string(steps.size()) + " steps"};
    const double initial = steps.front().total;
    const double final_loss = steps.back().total;
    std::ostringstream d;
    d << "total " << initial << " -> " << final_loss << " (ratio " << final_loss / initial << "), repeat "
      << (first.csv == second.csv ? "identical" : "differs");
    return {final_loss < 0.5 * initial && first.csv == second.csv, d.str()};
}

// 7: chunk counts for 8, 12, 30 and 35 s songs.
Outcome chunking() {
    class Length final : public ChunkCaptioner {
      public:
        std::string caption(const AudioClip &c) const override { return std::to_string(c.samples.size()); }
    };
    std::vector<std::size_t> got;
    for (double seconds : {8.0, 12.0, 30.0, 35.0}) {
        AudioClip a;
        a.sample_rate = 100;
        a.samples.assign(static_cast<std::size_t>(seconds * 100), 0.0);
        got.push_back(caption_chunks(a, Length{}, 10.0, 2).size());
    }
    std::ostringstream d;
    d << "{" << got[0] << ", " << got[1] << ", " << got[2] << ", " << got[3] << "}";
    return {got == std::vector<std::size_t>{1, 1, 3, 4}, d.str()};
}

// 8: rendered prompt equals the golden transcription.
Outcome prompt_golden() {
    const std::filesystem::path golden = MUSCAP_GOLDEN_DIR;
    std::vector<ChunkCaption> chunks = {{1, 0, 10, "a calm piano piece with soft melody"},
                                        {2, 10, 20, "energetic rock song with electric guitar and drums"},
                                        {3, 20, 30, "happy jazz with saxophone and bass"}};
    const std::string rendered = build_prompt("Night Drive", chunks).rendered;
    const std::string expected = read_file(golden / "chain_prompt_3chunks.txt");
    std::size_t at = 0;
    while (at < rendered.size() && at < expected.size() && rendered[at] == expected[at]) ++at;
    std::ostringstream d;
    d << rendered.size() << " bytes, fnv1a64 " << Fnv1a64().update(rendered).hex();
    if (rendered != expected) d << ", first difference at byte " << at;
    return {!expected.empty() && rendered == expected, d.str()};
}

// Index of the relabeling orbit of (c, r): letters renamed in order of first
// appearance across c then r, packed with both lengths.
std::uint32_t orbit_key(const Tokens &c, const Tokens &r) {
    char names[4] = {0, 0, 0, 0};
    int used = 0;
    std::uint32_t key = static_cast<std::uint32_t>(c.size() * 7 + r.size());
    for (const auto *s : {&c, &r}) {
        for (const auto &t : *s) {
            int v = 0;
            while (v < used && names[v] != t[0]) ++v;
            if (v == used) names[used++] = t[0];
            key = key * 4 + static_cast<std::uint32_t>(v);
        }
    }
    return key;
}

// 9: metrics against the brute-force oracles on every pair up to length 6.
Outcome metric_oracles() {
    LogSink old = set_warning_sink([](std::string_view) {});
    auto start = Clock::now();

    // The oracles run once per relabeling orbit (the metrics only compare
    // tokens for equality); the weighted count proves the orbits cover all
    // 5461^2 pairs.
    std::unordered_map<std::uint32_t, std::array<double, 4>> expected;
    std::size_t covered = 0;
    oracle::for_each_canonical_pair(6, [&](const Tokens &c, const Tokens &r) {
        covered += oracle::orbit_size(c, r);
        expected.emplace(orbit_key(c, r), std::array<double, 4>{oracle::bleu(c, {r}, 1), oracle::bleu(c, {r}, 2),
                                                                   oracle::rouge_l(c, r), oracle::meteor(c, r)});
    });

    // The library runs on every literal pair.
    auto sentences = oracle::all_sentences(6);
    std::size_t compared = 0, mismatches = 0;
    std::string first_bad;
    for (const auto &c : sentences) {
        for (const auto &r : sentences) {
            auto it = expected.find(orbit_key(c, r));
            if (it == expected.end()) {
                ++mismatches;
                continue;
            }
            const auto &want = it->second;
            const double got[4] = {bleu(c, {r}, {1, false}), bleu(c, {r}, {2, false}), rouge_l(c, r), meteor_lite(c, r)};
            ++compared;
            for (int m = 0; m < 4; ++m) {
                if (std::abs(got[m] - want[static_cast<std::size_t>(m)]) > 1e-12) {
                    if (mismatches++ == 0) {
                        static const char *names[4] = {"bleu1", "bleu2", "rouge_l", "meteor"};
                        std::ostringstream s;
                        s << names[m] << " on ";
                        for (const auto &t : c) s << t;
                        s << " | ";
                        for (const auto &t : r) s << t;
                        first_bad = s.str();
                    }
                }
            }
        }
    }

    bool identical_ok = true;
    for (const auto &s : sentences) {
        if (s.empty()) continue;
        identical_ok = identical_ok && bleu(s, {s}, {1, false}) == 1.0 && bleu(s, {s}, {2, false}) == 1.0 &&
                       bleu(s, {s}, {4, false}) == 1.0 && rouge_l(s, s) == 1.0;
    }
    const double m3 = meteor_lite("a b c", "a b c");
    set_warning_sink(old);

    const std::size_t all_pairs = sentences.size() * sentences.size();
    std::ostringstream d;
    d << compared << " pairs compared against " << expected.size() << " oracle orbits (covering " << covered
      << " pairs), " << mismatches << " mismatches" << (first_bad.empty() ? "" : " (first: " + first_bad + ")")
      << ", identical -> 1.0 " << (identical_ok ? "yes" : "no") << ", meteor(abc, abc) = " << std::setprecision(6)
      << m3 << ", " << std::fixed << std::setprecision(1) << seconds_since(start) << " s";
    bool ok = compared == all_pairs && covered == all_pairs && all_pairs == 5461u * 5461u && mismatches == 0 &&
              identical_ok && std::abs(m3 - 0.9815) <= 1e-4;
    return {ok, d.str()};
}

// 10: accuracy counts yes over yes plus no.
Outcome judge_accuracy() {
    auto verdict = [](Verdict key) {
        JudgeVerdict v;
        v.values.fill(Verdict::not_applicable);
        v.values[0] = key;
        return v;
    };
    auto acc = feature_accuracy(
        std::vector<JudgeVerdict>{verdict(Verdict::yes), verdict(Verdict::yes), verdict(Verdict::no),
                                  verdict(Verdict::not_applicable)});
    bool ok = acc.size() == 1 && acc.count("key_match") && acc.at("key_match") == 2.0 / 3.0;

    Rng rng(77);
    int stable = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<JudgeVerdict> rows;
        const int n = 1 + static_cast<int>(rng.next() % 8);
        for (int i = 0; i < n; ++i) {
            JudgeVerdict v;
            for (auto &x : v.values) x = static_cast<Verdict>(rng.next() % 3);
            rows.push_back(v);
        }
        auto before = feature_accuracy(rows);
        const int extra = 1 + static_cast<int>(rng.next() % 6);
        for (int i = 0; i < extra; ++i) {
            rows.insert(rows.begin() + static_cast<long>(rng.next() % (rows.size() + 1)),
                        verdict(Verdict::not_applicable));
        }
        if (feature_accuracy(rows) == before) ++stable;
    }
    std::ostringstream d;
    d << "key accuracy " << std::setprecision(17) << (acc.count("key_match") ? acc.at("key_match") : -1.0) << ", "
      << acc.size() << " reported column(s), " << stable << "/100 trials unchanged by n/a rows";
    return {ok && stable == 100, d.str()};
}

// 11: captioning a fixed checkpoint is deterministic across runs.
Outcome caption_determinism() {
    auto dir = scratch_dir("acceptance_e2e");
    std::istringstream in;
    std::ostringstream out, err;
    if (run_cli({"make-fixture", "--dir", dir.string()}, in, out, err) != 0 ||
        run_cli({"train", "--config", (dir / "config.json").string(), "--quiet"}, in, out, err) != 0) {
        return {false, "fixture training failed: " + err.str()};
    }
    std::vector<std::string> outputs;
    for (int run = 0; run < 3; ++run) {
        std::ostringstream o, e;
        int code = run_cli({"caption", "--checkpoint", (dir / "out" / "checkpoint.json").string(), "--audio",
                            (dir / "calm_piano.wav").string()},
                           in, o, e);
        if (code != 0) return {false, "caption failed: " + e.str()};
        outputs.push_back(o.str());
    }
    std::string text = outputs[0];
    while (!text.empty() && text.back() == '\n') text.pop_back();
    bool ok = outputs[0] == outputs[1] && outputs[1] == outputs[2] && !text.empty();
    return {ok, "3 runs " + std::string(ok ? "identical" : "differ") + ": \"" + text + "\""};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"token budget", token_budget},
        {"layer-weight simplex", simplex},
        {"gradient check", gradients},
        {"loss arithmetic", loss_arithmetic},
    };
    int failures = 0;
    int number = 0;
    auto report = [&](const std::string &name, const std::function<Outcome()> &run) {
        ++number;
        Outcome o;
        try {
            o = run();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << number << " (" << name << "): " << o.detail
                  << std::endl;
    };
    for (const auto &[name, run] : criteria) report(name, run);

    Tiny tiny;
    std::optional<OverfitRun> first, second;
    try {
        first = overfit_run(tiny);
        second = overfit_run(tiny);
    } catch (const std::exception &e) {
        std::cout << "training runs failed: " << e.what() << std::endl;
    }
    report("frozen modules", [&] { return first ? frozen(*first) : Outcome{false, "no training run"}; });
    report("overfit smoke test",
           [&] { return first && second ? overfit(*first, *second) : Outcome{false, "no training run"}; });
    report("chunk counts", chunking);
    report("prompt golden file", prompt_golden);
    report("metric oracles", metric_oracles);
    report("judge accuracy", judge_accuracy);
    report("caption determinism", caption_determinism);

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
