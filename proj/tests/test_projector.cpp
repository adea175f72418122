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

#include <doctest.h>

#include <cmath>

#include "muscap/error.hpp"
#include "muscap/projector.hpp"
#include "muscap/random.hpp"
#include "support.hpp"

using namespace muscap;

namespace {

ProjectorConfig default_config(int lm_dim = 16) {
    ProjectorConfig c; // 13 x 768 input, M = 35, budget 60
    c.lm_dim = lm_dim;
    const int classes[5] = {24, 7, 4, 4, 3};
    int k = 0;
    for (const auto &name : default_head_order()) {
        c.heads.push_back({name, classes[k++], 5, ""});
    }
    return c;
}

LayeredEmbedding random_embedding(int layers, int frames, int dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Matrix> ls;
    for (int l = 0; l < layers; ++l) {
        ls.push_back(rng.normal_matrix(frames, dim, 1.0));
    }
    return LayeredEmbedding(std::move(ls));
}

void zero_group(Projector &p, const std::string &group) {
    for (auto &param : p.parameters()) {
        if (param.group == group) param.value.setZero();
    }
}

} // namespace

TEST_CASE("softmax layer weights lie on the simplex") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        RowVector raw = rng.uniform_matrix(1, 13, 50.0);
        RowVector w = LayerWeights{raw}.effective();
        CHECK(w.minCoeff() >= 0.0);
        CHECK(std::abs(w.sum() - 1.0) < 1e-6);
    }
    RowVector extreme(3);
    extreme << 50, -50, 50;
    RowVector w = softmax(extreme);
    CHECK(w.allFinite());
    CHECK(std::abs(w.sum() - 1.0) < 1e-12);
    CHECK(LayerWeights::uniform(4).effective().isApprox(RowVector::Constant(4, 0.25)));
}

TEST_CASE("layer pooling selection, mean and brute force") {
    LayeredEmbedding h = random_embedding(4, 3, 5, 2);
    RowVector onehot = RowVector::Zero(4);
    onehot(3) = 1.0;
    CHECK(pool_layers(h, onehot) == h.layer(3));

    Matrix mean = (h.layer(0) + h.layer(1) + h.layer(2) + h.layer(3)) / 4.0;
    CHECK(pool_layers(h, RowVector::Constant(4, 0.25)).isApprox(mean, 1e-14));

    LayeredEmbedding small = random_embedding(2, 2, 2, 3);
    RowVector w(2);
    w << 0.3, 0.7;
    Matrix got = pool_layers(small, w);
    for (int t = 0; t < 2; ++t) {
        for (int d = 0; d < 2; ++d) {
            double expect = 0.0;
            for (int l = 0; l < 2; ++l) expect += w(l) * small(l, t, d);
            CHECK(got(t, d) == doctest::Approx(expect).epsilon(1e-15));
        }
    }
    CHECK_THROWS_AS(pool_layers(h, RowVector::Constant(3, 1.0 / 3)), ShapeError);
}

TEST_CASE("time average") {
    Matrix m(2, 2);
    m << 1, 2, 3, 4;
    RowVector avg = time_average(m);
    CHECK(avg(0) == 2.0);
    CHECK(avg(1) == 3.0);
    Matrix one(1, 3);
    one << 5, -1, 2;
    CHECK(time_average(one) == one.row(0));
    CHECK(time_average(Matrix::Constant(4, 2, 7.0)) == RowVector::Constant(2, 7.0));
}

TEST_CASE("default projector token counts") {
    ProjectorConfig c = default_config();
    CHECK(c.content_tokens == 35);
    CHECK(c.feature_tokens() == 25);
    CHECK(c.music_tokens() == 60);
    Projector p(c);
    LayeredEmbedding h = random_embedding(13, 4, 768, 4);
    TokenBlock content = p.content_tokens(h);
    CHECK(content.size() == 35);
    CHECK(content.dim() == 16);
    auto preds = p.feature_logits(h);
    REQUIRE(preds.size() == 5);
    TokenBlock feature = p.feature_tokens(preds);
    CHECK(feature.size() == 25);
    CHECK(feature.dim() == 16);
    Matrix music = p.music_tokens(h);
    CHECK(music.rows() == 60);
    CHECK(music.topRows(35) == content.vectors);
    CHECK(music.bottomRows(25).isApprox(feature.vectors, 1e-12));
}

TEST_CASE("budget violations are rejected") {
    ProjectorConfig c = default_config();
    c.token_budget = 61;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(Projector{c}, ConfigError);
    c = default_config();
    c.heads[1].tokens = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = default_config();
    c.heads[2].classes = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = default_config();
    c.heads[3].name = c.heads[0].name;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero final layer gives zero content tokens") {
    Projector p(default_config());
    for (auto &param : p.parameters()) {
        if (param.group == "content_mlps" &&
            (param.name.ends_with(".w2") || param.name.ends_with(".b2"))) {
            param.value.setZero();
        }
    }
    TokenBlock content = p.content_tokens(random_embedding(13, 2, 768, 5));
    CHECK(content.vectors.isZero(0.0));
}

TEST_CASE("zero heads give logits 0 and probabilities 0.5") {
    Projector p(default_config());
    for (const auto &name : default_head_order()) zero_group(p, "head_" + name);
    auto preds = p.feature_logits(random_embedding(13, 2, 768, 6));
    for (const auto &pred : preds) {
        CHECK(pred.logits.isZero(0.0));
        CHECK(pred.probabilities.isApprox(RowVector::Constant(pred.probabilities.size(), 0.5)));
    }
}

TEST_CASE("probabilities are the sigmoid of the logits") {
    Projector p(default_config());
    auto preds = p.feature_logits(random_embedding(13, 3, 768, 7));
    for (const auto &pred : preds) {
        for (Eigen::Index i = 0; i < pred.logits.size(); ++i) {
            double expect = 1.0 / (1.0 + std::exp(-pred.logits(i)));
            CHECK(pred.probabilities(i) == doctest::Approx(expect).epsilon(1e-14));
        }
    }
}

TEST_CASE("raw layer weights influence the content tokens") {
    Projector p(default_config());
    LayeredEmbedding h = random_embedding(13, 3, 768, 8);
    Matrix before = p.content_tokens(h).vectors;
    p.parameter("content_layer_weights.raw").value(0, 2) += 1e-4;
    Matrix after = p.content_tokens(h).vectors;
    CHECK((after - before).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("single head feature block is that head's MLP output") {
    ProjectorConfig c;
    c.layers = 2;
    c.input_dim = 4;
    c.lm_dim = 6;
    c.content_tokens = 2;
    c.heads = {{"genre", 3, 2, ""}};
    c.token_budget = 4;
    Projector p(c);
    FeaturePrediction pred = FeaturePrediction::from_logits(RowVector::LinSpaced(3, -1, 1));
    Matrix block = p.feature_tokens({pred}).vectors;
    REQUIRE(block.rows() == 2);
    for (int j = 0; j < 2; ++j) {
        const std::string pre = "feat_mlp_genre." + std::to_string(j);
        RowVector x = pred.probabilities;
        Matrix h1 = x * p.parameter(pre + ".w1").value + p.parameter(pre + ".b1").value;
        h1 = h1.unaryExpr([](double v) { return ad::gelu_value(v); });
        Matrix y = h1 * p.parameter(pre + ".w2").value + p.parameter(pre + ".b2").value;
        CHECK(block.row(j).isApprox(y.row(0), 1e-12));
    }
}

TEST_CASE("permuting the head order permutes the token blocks") {
    ProjectorConfig a = default_config();
    ProjectorConfig b = a;
    std::reverse(b.heads.begin(), b.heads.end());
    Projector pa(a), pb(b);
    LayeredEmbedding h = random_embedding(13, 2, 768, 9);
    auto la = pa.feature_logits(h);
    auto lb = pb.feature_logits(h);
    Matrix fa = pa.feature_tokens(la).vectors;
    Matrix fb = pb.feature_tokens(lb).vectors;
    for (int k = 0; k < 5; ++k) {
        CHECK(la[k].logits == lb[4 - k].logits);
        CHECK(fa.middleRows(5 * k, 5) == fb.middleRows(5 * (4 - k), 5));
    }
}

TEST_CASE("assemble_tokens concatenates and slices back") {
    Rng rng(10);
    TokenBlock content{rng.normal_matrix(35, 16, 1.0), TokenKind::content};
    TokenBlock feature{rng.normal_matrix(25, 16, 1.0), TokenKind::feature};
    TokenBlock query{rng.normal_matrix(12, 16, 1.0), TokenKind::query};
    Matrix all = assemble_tokens(content, feature, query);
    CHECK(all.rows() == 72);
    CHECK(all.row(0) == content.vectors.row(0));
    CHECK(all.row(60) == query.vectors.row(0));
    CHECK(all.topRows(35) == content.vectors);
    CHECK(all.middleRows(35, 25) == feature.vectors);
    CHECK(all.bottomRows(12) == query.vectors);

    TokenBlock empty{Matrix(0, 16), TokenKind::query};
    CHECK_THROWS(assemble_tokens(content, feature, empty));
    TokenBlock narrow{rng.normal_matrix(2, 8, 1.0), TokenKind::query};
    CHECK_THROWS_AS(assemble_tokens(content, feature, narrow), ShapeError);
}

TEST_CASE("wrong embedding shape is rejected") {
    Projector p(default_config());
    CHECK_THROWS_AS(p.content_tokens(random_embedding(12, 2, 768, 11)), ShapeError);
    CHECK_THROWS_AS(p.content_tokens(random_embedding(13, 2, 512, 11)), ShapeError);
}

TEST_CASE("checkpoint round trip and digest check") {
    ProjectorConfig c = default_config();
    c.seed = 42;
    Projector p(c);
    p.parameter("content_layer_weights.raw").value(0, 0) = 0.75;
    auto dir = muscap::testing::scratch_dir("checkpoint");
    save_checkpoint(dir / "p.json", p, {{"note", "x"}});
    nlohmann::json extra;
    Projector back = load_checkpoint(dir / "p.json", c.digest(), &extra);
    CHECK(back.parameter_hash() == p.parameter_hash());
    CHECK(extra.at("note") == "x");
    CHECK(read_checkpoint_extra(dir / "p.json").at("note") == "x");

    ProjectorConfig other = c;
    other.heads[0].labels_digest = "different";
    CHECK_THROWS_AS(load_checkpoint(dir / "p.json", other.digest()), ConfigError);
    CHECK_THROWS(load_checkpoint(dir / "missing.json", c.digest()));
}

TEST_CASE("seed changes parameters but not the digest") {
    ProjectorConfig a = default_config();
    ProjectorConfig b = a;
    b.seed = 99;
    CHECK(a.digest() == b.digest());
    CHECK(Projector(a).parameter_hash() != Projector(b).parameter_hash());
    CHECK(Projector(a).parameter_hash() == Projector(a).parameter_hash());
}
