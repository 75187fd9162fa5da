#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "grad_check.hpp"
#include "minibert/model.hpp"
#include "minibert/rng.hpp"

using namespace minibert;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab_size = 12;
    c.hidden = 4;
    c.layers = 1;
    c.heads = 2;
    c.intermediate = 8;
    c.max_seq = 8;
    c.dropout = 0.1;
    return c;
}

void scramble_params(ParameterStore& store, uint64_t seed, double scale) {
    Rng rng(seed);
    for (const auto& [name, node] : store.items())
        for (auto& v : node->value.data) v = rng.gaussian(0.0, scale);
}

// Reference layer norm used by the straight-line oracle below.
std::vector<double> oracle_norm(const std::vector<double>& row, const Tensor& gain,
                                const Tensor& bias) {
    size_t h = row.size();
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(h);
    std::vector<double> out(h);
    for (size_t j = 0; j < h; ++j)
        out[j] = gain.data[j] * ((row[j] - mean) / std::sqrt(var + 1e-12)) + bias.data[j];
    return out;
}

double oracle_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("model config validates and round trips") {
    namespace fs = std::filesystem;
    ModelConfig c = tiny_config();
    c.validate();

    fs::path dir = fs::temp_directory_path() / "minibert_model_test";
    fs::create_directories(dir);
    std::string path = (dir / "model.conf").string();
    c.save(path);
    ModelConfig r = ModelConfig::load(path);
    CHECK(r.vocab_size == c.vocab_size);
    CHECK(r.hidden == c.hidden);
    CHECK(r.layers == c.layers);
    CHECK(r.heads == c.heads);
    CHECK(r.intermediate == c.intermediate);
    CHECK(r.max_seq == c.max_seq);
    CHECK(r.dropout == c.dropout);
    CHECK(r.type_vocab == c.type_vocab);

    ModelConfig bad = c;
    bad.hidden = 5;  // not divisible by 2 heads
    CHECK_THROWS_AS(bad.validate(), std::runtime_error);
    bad = c;
    bad.max_seq = 513;
    CHECK_THROWS_AS(bad.validate(), std::runtime_error);
    bad = c;
    bad.layers = 0;
    CHECK_THROWS_AS(bad.validate(), std::runtime_error);

    std::ofstream out(path, std::ios::binary);
    out << "vocab_size 10\nwat 3\n";
    out.close();
    CHECK_THROWS_AS(ModelConfig::load(path), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("parameter count matches the closed form") {
    ModelConfig c;
    c.vocab_size = 10;
    c.hidden = 4;
    c.layers = 1;
    c.heads = 2;
    c.intermediate = 8;
    c.max_seq = 8;
    BertEncoder model(c, 1);
    // Hand total: embeddings 40+32+8+8, layer 4*(16+4)+8+(32+8+32+4)+8,
    // pooler 20, mlm 16+4+8+10, nsp 10.
    CHECK(model.params().parameter_count() == 328);
    CHECK(BertEncoder::expected_parameter_count(c, true) == 328);
    CHECK(model.params().parameter_count() == BertEncoder::expected_parameter_count(c, true));

    BertEncoder headless(c, 1, /*with_pretrain_heads=*/false);
    CHECK(headless.params().parameter_count() ==
          BertEncoder::expected_parameter_count(c, false));
    CHECK(BertEncoder::expected_parameter_count(c, false) == 328 - 38 - 10);
    CHECK_THROWS_AS(headless.mlm_logits(make_leaf(Tensor::zeros({1, 2, 4}))),
                    std::runtime_error);

    ModelConfig bigger = tiny_config();
    bigger.layers = 3;
    bigger.hidden = 8;
    bigger.heads = 4;
    bigger.intermediate = 16;
    BertEncoder big(bigger, 2);
    CHECK(big.params().parameter_count() == BertEncoder::expected_parameter_count(bigger, true));
}

TEST_CASE("initialization is deterministic and respects parameter roles") {
    ModelConfig c = tiny_config();
    BertEncoder a(c, 99), b(c, 99), d(c, 100);
    CHECK(a.params().get("embeddings.token")->value.data ==
          b.params().get("embeddings.token")->value.data);
    CHECK(a.params().get("embeddings.token")->value.data !=
          d.params().get("embeddings.token")->value.data);
    for (double v : a.params().get("embeddings.norm.gain")->value.data) CHECK(v == 1.0);
    for (double v : a.params().get("pooler.bias")->value.data) CHECK(v == 0.0);
    for (double v : a.params().get("mlm.output.bias")->value.data) CHECK(v == 0.0);
}

TEST_CASE("embedding is pure, shape-correct, and segment-sensitive") {
    ModelConfig c = tiny_config();
    BertEncoder model(c, 7);
    std::vector<int64_t> ids = {1, 5, 9, 2, 0, 3, 7, 11, 6, 1, 2, 4, 8, 10};
    std::vector<int64_t> seg0(14, 0), seg1(14, 1);

    NodePtr e1 = model.embed(ids, seg0, 2, 7, false, 0);
    NodePtr e2 = model.embed(ids, seg0, 2, 7, false, 0);
    CHECK(e1->value.shape == std::vector<int64_t>{2, 7, 4});
    CHECK(e1->value.data == e2->value.data);

    NodePtr e3 = model.embed(ids, seg1, 2, 7, false, 0);
    CHECK(e1->value.data != e3->value.data);

    CHECK_THROWS_AS(model.embed(ids, std::vector<int64_t>(14, 2), 2, 7, false, 0),
                    std::runtime_error);
    CHECK_THROWS_AS(model.embed({12, 0}, {0, 0}, 1, 2, false, 0), std::runtime_error);
    CHECK_THROWS_AS(model.embed(std::vector<int64_t>(18, 1), std::vector<int64_t>(18, 0), 2, 9,
                                false, 0),
                    std::runtime_error);
    CHECK_THROWS_AS(model.embed(ids, seg0, 2, 6, false, 0), std::runtime_error);
}

TEST_CASE("masked positions cannot influence unmasked outputs") {
    ModelConfig c = tiny_config();
    c.layers = 2;
    BertEncoder model(c, 13);
    std::vector<int64_t> ids = {1, 5, 9, 2, 0};
    std::vector<int64_t> segs(5, 0);
    std::vector<uint8_t> mask = {1, 1, 1, 0, 0};

    auto out1 = model.forward(ids, segs, mask, 1, 5, false, 0);
    std::vector<int64_t> ids2 = {1, 5, 9, 7, 11};  // padding ids flipped
    auto out2 = model.forward(ids2, segs, mask, 1, 5, false, 0);
    for (int64_t t = 0; t < 3; ++t)
        for (int64_t j = 0; j < 4; ++j)
            CHECK(std::fabs(out1.hidden->value.at(0, t, j) - out2.hidden->value.at(0, t, j)) <
                  1e-9);
    for (int64_t j = 0; j < 4; ++j)
        CHECK(std::fabs(out1.pooled->value.at(0, j) - out2.pooled->value.at(0, j)) < 1e-9);

    std::vector<uint8_t> none(5, 0);
    CHECK_THROWS_AS(model.forward(ids, segs, none, 1, 5, false, 0), std::runtime_error);

    // Single-position sequences are fine: the one key takes all attention.
    auto single = model.forward({3}, {0}, {1}, 1, 1, false, 0);
    CHECK(single.hidden->value.shape == std::vector<int64_t>{1, 1, 4});
    for (double v : single.hidden->value.data) CHECK(std::isfinite(v));
}

TEST_CASE("one transformer layer matches a straight-line oracle") {
    ModelConfig c;
    c.vocab_size = 10;
    c.hidden = 2;
    c.layers = 1;
    c.heads = 1;
    c.intermediate = 4;
    c.max_seq = 4;
    c.dropout = 0.0;
    BertEncoder model(c, 3);
    scramble_params(model.params(), 31337, 0.5);

    const int64_t T = 2, H = 2, I = 4;
    Tensor x({1, T, H});
    x.data = {0.3, -1.1, 0.9, 0.4};
    auto out = model.encoder_forward(make_leaf(x), {1, 1}, false, 0);

    auto P = [&](const std::string& n) -> const Tensor& { return model.params().get(n)->value; };
    auto affine = [&](const std::vector<double>& in, const Tensor& w, const Tensor& b,
                      int64_t nin, int64_t nout) {
        std::vector<double> r(nout, 0.0);
        for (int64_t o = 0; o < nout; ++o) {
            r[o] = b.data[o];
            for (int64_t i = 0; i < nin; ++i) r[o] += in[i] * w.data[i * nout + o];
        }
        return r;
    };

    std::vector<std::vector<double>> rows = {{0.3, -1.1}, {0.9, 0.4}};
    std::vector<std::vector<double>> q, k, v;
    for (auto& r : rows) {
        q.push_back(affine(r, P("layer.0.attn.query.weight"), P("layer.0.attn.query.bias"), H, H));
        k.push_back(affine(r, P("layer.0.attn.key.weight"), P("layer.0.attn.key.bias"), H, H));
        v.push_back(affine(r, P("layer.0.attn.value.weight"), P("layer.0.attn.value.bias"), H, H));
    }
    std::vector<std::vector<double>> hidden_rows;
    for (int64_t i = 0; i < T; ++i) {
        double s0 = (q[i][0] * k[0][0] + q[i][1] * k[0][1]) / std::sqrt(2.0);
        double s1 = (q[i][0] * k[1][0] + q[i][1] * k[1][1]) / std::sqrt(2.0);
        double m = std::max(s0, s1);
        double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
        double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
        std::vector<double> ctx = {p0 * v[0][0] + p1 * v[1][0], p0 * v[0][1] + p1 * v[1][1]};
        std::vector<double> attn =
            affine(ctx, P("layer.0.attn.output.weight"), P("layer.0.attn.output.bias"), H, H);
        std::vector<double> res = {rows[i][0] + attn[0], rows[i][1] + attn[1]};
        std::vector<double> h1 =
            oracle_norm(res, P("layer.0.attn.norm.gain"), P("layer.0.attn.norm.bias"));
        std::vector<double> mid =
            affine(h1, P("layer.0.ffn.in.weight"), P("layer.0.ffn.in.bias"), H, I);
        for (auto& m2 : mid) m2 = oracle_gelu(m2);
        std::vector<double> ffn =
            affine(mid, P("layer.0.ffn.out.weight"), P("layer.0.ffn.out.bias"), I, H);
        std::vector<double> res2 = {h1[0] + ffn[0], h1[1] + ffn[1]};
        hidden_rows.push_back(
            oracle_norm(res2, P("layer.0.ffn.norm.gain"), P("layer.0.ffn.norm.bias")));
    }
    for (int64_t t = 0; t < T; ++t)
        for (int64_t j = 0; j < H; ++j)
            CHECK(out.hidden->value.at(0, t, j) ==
                  doctest::Approx(hidden_rows[t][j]).epsilon(1e-9));

    std::vector<double> pooled = affine(hidden_rows[0], P("pooler.weight"), P("pooler.bias"), H, H);
    for (int64_t j = 0; j < H; ++j)
        CHECK(out.pooled->value.at(0, j) == doctest::Approx(std::tanh(pooled[j])).epsilon(1e-9));
}

TEST_CASE("mlm logits are tied to the token embedding table") {
    ModelConfig c = tiny_config();
    BertEncoder model(c, 5);
    Rng rng(6);
    Tensor h({1, 3, 4});
    for (auto& v : h.data) v = rng.gaussian();
    NodePtr hidden = make_leaf(h);

    NodePtr before = model.mlm_logits(hidden);
    CHECK(before->value.shape == std::vector<int64_t>{1, 3, 12});

    const int64_t k = 7;
    auto table = model.params().get("embeddings.token");
    for (int64_t j = 0; j < 4; ++j) table->value.at(k, j) += 0.25;
    NodePtr after = model.mlm_logits(hidden);

    for (int64_t t = 0; t < 3; ++t)
        for (int64_t vcol = 0; vcol < 12; ++vcol) {
            if (vcol == k)
                CHECK(before->value.at(0, t, vcol) != after->value.at(0, t, vcol));
            else
                CHECK(before->value.at(0, t, vcol) == after->value.at(0, t, vcol));
        }
}

TEST_CASE("nsp head is an affine map to two classes") {
    ModelConfig c = tiny_config();
    BertEncoder model(c, 5);
    model.params().get("nsp.weight")->value.fill(0.0);
    model.params().get("nsp.bias")->value.fill(0.0);
    Tensor pooled({3, 4});
    pooled.fill(0.7);
    NodePtr logits = model.nsp_logits(make_leaf(pooled));
    CHECK(logits->value.shape == std::vector<int64_t>{3, 2});
    for (double v : logits->value.data) CHECK(v == 0.0);
    auto probs = softmax_last(logits);
    for (double p : probs->value.data) CHECK(p == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("sentence embedding means the included positions") {
    ModelConfig c = tiny_config();
    BertEncoder model(c, 5);
    Tensor h({2, 3, 4});
    Rng rng(44);
    for (auto& v : h.data) v = rng.gaussian();
    NodePtr hidden = make_leaf(h);

    std::vector<uint8_t> include = {1, 0, 1, 0, 1, 0};
    NodePtr emb = model.sentence_embedding(hidden, include);
    for (int64_t j = 0; j < 4; ++j) {
        CHECK(emb->value.at(0, j) ==
              doctest::Approx((h.at(0, 0, j) + h.at(0, 2, j)) / 2.0).epsilon(1e-12));
        CHECK(emb->value.at(1, j) == doctest::Approx(h.at(1, 1, j)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(model.sentence_embedding(hidden, {1, 0, 1, 0, 0, 0}), std::runtime_error);
}

TEST_CASE("dropout seeding keeps training forwards reproducible") {
    ModelConfig c = tiny_config();
    BertEncoder model(c, 5);
    std::vector<int64_t> ids = {1, 5, 9, 2};
    std::vector<int64_t> segs(4, 0);
    std::vector<uint8_t> mask(4, 1);
    auto a = model.forward(ids, segs, mask, 1, 4, true, 777);
    auto b = model.forward(ids, segs, mask, 1, 4, true, 777);
    auto d = model.forward(ids, segs, mask, 1, 4, true, 778);
    CHECK(a.hidden->value.data == b.hidden->value.data);
    CHECK(a.hidden->value.data != d.hidden->value.data);
}

TEST_CASE("whole mini model passes a finite-difference sweep") {
    ModelConfig c = tiny_config();
    c.dropout = 0.0;
    BertEncoder model(c, 21);
    std::vector<int64_t> ids = {2, 7, 4, 11};
    std::vector<int64_t> segs = {0, 0, 1, 1};
    std::vector<uint8_t> mask = {1, 1, 1, 1};
    std::vector<int64_t> mlm_targets = {-1, 3, -1, 9};
    std::vector<int64_t> nsp_target = {1};

    auto make_loss = [&]() {
        auto out = model.forward(ids, segs, mask, 1, 4, false, 0);
        NodePtr logits = reshape(model.mlm_logits(out.hidden), {4, c.vocab_size});
        NodePtr mlm = cross_entropy(logits, mlm_targets);
        NodePtr nsp = cross_entropy(model.nsp_logits(out.pooled), nsp_target);
        return add(mlm, nsp);
    };
    std::vector<NodePtr> leaves;
    for (const auto& [name, node] : model.params().items()) leaves.push_back(node);
    CHECK(gradcheck::max_rel_error(leaves, make_loss) < 1e-4);
}
