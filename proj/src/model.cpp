#include "minibert/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "minibert/rng.hpp"

namespace minibert {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string layer_prefix(int64_t i) { return "layer." + std::to_string(i) + "."; }

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size <= 0 || hidden <= 0 || layers <= 0 || heads <= 0 || intermediate <= 0 ||
        type_vocab <= 0)
        fail("model config: all sizes must be positive");
    if (hidden % heads != 0)
        fail("model config: hidden " + std::to_string(hidden) + " not divisible by heads " +
             std::to_string(heads));
    if (max_seq < 2 || max_seq > 512)
        fail("model config: max_seq must be in [2, 512], got " + std::to_string(max_seq));
    if (dropout < 0.0 || dropout >= 1.0)
        fail("model config: dropout must be in [0, 1), got " + std::to_string(dropout));
}

void ModelConfig::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("model config: cannot open " + path + " for writing");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", dropout);
    out << "vocab_size " << vocab_size << "\n"
        << "hidden " << hidden << "\n"
        << "layers " << layers << "\n"
        << "heads " << heads << "\n"
        << "intermediate " << intermediate << "\n"
        << "max_seq " << max_seq << "\n"
        << "dropout " << buf << "\n"
        << "type_vocab " << type_vocab << "\n";
    if (!out) fail("model config: write failed for " + path);
}

ModelConfig ModelConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("model config: cannot open " + path);
    ModelConfig c;
    std::map<std::string, bool> seen;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key, value;
        ls >> key >> value;
        std::string extra;
        if (!ls || (ls >> extra))
            fail("model config: " + path + ":" + std::to_string(lineno) + ": expected key value");
        try {
            if (key == "vocab_size")
                c.vocab_size = std::stoll(value);
            else if (key == "hidden")
                c.hidden = std::stoll(value);
            else if (key == "layers")
                c.layers = std::stoll(value);
            else if (key == "heads")
                c.heads = std::stoll(value);
            else if (key == "intermediate")
                c.intermediate = std::stoll(value);
            else if (key == "max_seq")
                c.max_seq = std::stoll(value);
            else if (key == "dropout")
                c.dropout = std::stod(value);
            else if (key == "type_vocab")
                c.type_vocab = std::stoll(value);
            else
                fail("model config: unknown key \"" + key + "\" in " + path);
        } catch (const std::invalid_argument&) {
            fail("model config: bad value for " + key + " in " + path);
        } catch (const std::out_of_range&) {
            fail("model config: bad value for " + key + " in " + path);
        }
        seen[key] = true;
    }
    for (const char* key : {"vocab_size", "hidden", "layers", "heads", "intermediate", "max_seq",
                            "dropout", "type_vocab"})
        if (!seen.count(key)) fail("model config: missing key \"" + std::string(key) + "\" in " + path);
    c.validate();
    return c;
}

BertEncoder::BertEncoder(ModelConfig config, uint64_t init_seed, bool with_pretrain_heads)
    : config_(config), with_pretrain_heads_(with_pretrain_heads) {
    config_.validate();
    const int64_t h = config_.hidden, v = config_.vocab_size, inter = config_.intermediate;

    params_.create("embeddings.token", {v, h});
    params_.create("embeddings.position", {config_.max_seq, h});
    params_.create("embeddings.segment", {config_.type_vocab, h});
    params_.create("embeddings.norm.gain", {h});
    params_.create("embeddings.norm.bias", {h});
    for (int64_t i = 0; i < config_.layers; ++i) {
        std::string p = layer_prefix(i);
        for (const char* part : {"attn.query", "attn.key", "attn.value", "attn.output"}) {
            params_.create(p + part + ".weight", {h, h});
            params_.create(p + part + ".bias", {h});
        }
        params_.create(p + "attn.norm.gain", {h});
        params_.create(p + "attn.norm.bias", {h});
        params_.create(p + "ffn.in.weight", {h, inter});
        params_.create(p + "ffn.in.bias", {inter});
        params_.create(p + "ffn.out.weight", {inter, h});
        params_.create(p + "ffn.out.bias", {h});
        params_.create(p + "ffn.norm.gain", {h});
        params_.create(p + "ffn.norm.bias", {h});
    }
    params_.create("pooler.weight", {h, h});
    params_.create("pooler.bias", {h});
    if (with_pretrain_heads_) {
        params_.create("mlm.transform.weight", {h, h});
        params_.create("mlm.transform.bias", {h});
        params_.create("mlm.norm.gain", {h});
        params_.create("mlm.norm.bias", {h});
        params_.create("mlm.output.bias", {v});
        params_.create("nsp.weight", {h, 2});
        params_.create("nsp.bias", {2});
    }

    // Gaussian(0, 0.02) weights, zero biases, unit norm gains; one generator
    // consumed in name order keeps initialization reproducible.
    Rng rng(init_seed);
    for (const auto& [name, node] : params_.items()) {
        bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
        bool is_gain = name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
        if (is_bias) continue;  // already zero
        if (is_gain) {
            node->value.fill(1.0);
            continue;
        }
        for (auto& x : node->value.data) x = rng.gaussian(0.0, 0.02);
    }
}

NodePtr BertEncoder::linear(const NodePtr& x, const std::string& name) const {
    return add(matmul(x, params_.get(name + ".weight")), params_.get(name + ".bias"));
}

NodePtr BertEncoder::embed(const std::vector<int64_t>& ids, const std::vector<int64_t>& segments,
                           int64_t batch, int64_t seq, bool train, uint64_t dropout_seed) const {
    if (static_cast<int64_t>(ids.size()) != batch * seq ||
        static_cast<int64_t>(segments.size()) != batch * seq)
        fail("embed: expected " + std::to_string(batch * seq) + " ids and segments, got " +
             std::to_string(ids.size()) + "/" + std::to_string(segments.size()));
    if (seq < 1 || seq > config_.max_seq)
        fail("embed: sequence length " + std::to_string(seq) + " outside [1, " +
             std::to_string(config_.max_seq) + "]");
    for (int64_t s : segments)
        if (s < 0 || s >= config_.type_vocab)
            fail("embed: segment id " + std::to_string(s) + " out of range [0, " +
                 std::to_string(config_.type_vocab) + ")");
    for (int64_t id : ids)
        if (id < 0 || id >= config_.vocab_size)
            fail("embed: token id " + std::to_string(id) + " out of range [0, " +
                 std::to_string(config_.vocab_size) + ")");

    std::vector<int64_t> positions(ids.size());
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t t = 0; t < seq; ++t) positions[b * seq + t] = t;

    NodePtr sum = add(add(embedding(params_.get("embeddings.token"), ids),
                          embedding(params_.get("embeddings.position"), positions)),
                      embedding(params_.get("embeddings.segment"), segments));
    NodePtr normed = layer_norm(sum, params_.get("embeddings.norm.gain"),
                                params_.get("embeddings.norm.bias"));
    normed = dropout(normed, config_.dropout, train, mix_seed(dropout_seed, 0));
    return reshape(normed, {batch, seq, config_.hidden});
}

BertEncoder::Output BertEncoder::encoder_forward(const NodePtr& embedded,
                                                 const std::vector<uint8_t>& attention_mask,
                                                 bool train, uint64_t dropout_seed) const {
    if (embedded->value.rank() != 3 || embedded->value.dim(2) != config_.hidden)
        fail("encoder_forward: expected [batch, seq, " + std::to_string(config_.hidden) +
             "], got " + embedded->value.shape_str());
    const int64_t batch = embedded->value.dim(0);
    const int64_t seq = embedded->value.dim(1);
    const int64_t h = config_.hidden;
    const int64_t heads = config_.heads;
    const double inv_sqrt_head = 1.0 / std::sqrt(static_cast<double>(h / heads));
    if (static_cast<int64_t>(attention_mask.size()) != batch * seq)
        fail("encoder_forward: attention mask size " + std::to_string(attention_mask.size()) +
             " != batch*seq");

    uint64_t salt = 1;  // 0 is used by embed
    NodePtr x = embedded;
    for (int64_t i = 0; i < config_.layers; ++i) {
        std::string p = layer_prefix(i);
        NodePtr flat = reshape(x, {batch * seq, h});

        auto heads_of = [&](const std::string& name) {
            return split_heads(reshape(linear(flat, name), {batch, seq, h}), heads);
        };
        NodePtr q = heads_of(p + "attn.query");
        NodePtr k = heads_of(p + "attn.key");
        NodePtr v = heads_of(p + "attn.value");

        NodePtr scores = scale(bmm(q, k, /*trans_b=*/true), inv_sqrt_head);
        NodePtr probs = attention_softmax(scores, attention_mask, batch, heads);
        probs = dropout(probs, config_.dropout, train, mix_seed(dropout_seed, salt++));
        NodePtr context = reshape(merge_heads(bmm(probs, v), heads), {batch * seq, h});

        NodePtr attn_out = linear(context, p + "attn.output");
        attn_out = dropout(attn_out, config_.dropout, train, mix_seed(dropout_seed, salt++));
        NodePtr h1 = layer_norm(add(flat, attn_out), params_.get(p + "attn.norm.gain"),
                                params_.get(p + "attn.norm.bias"));

        NodePtr ffn = linear(gelu(linear(h1, p + "ffn.in")), p + "ffn.out");
        ffn = dropout(ffn, config_.dropout, train, mix_seed(dropout_seed, salt++));
        NodePtr h2 = layer_norm(add(h1, ffn), params_.get(p + "ffn.norm.gain"),
                                params_.get(p + "ffn.norm.bias"));
        x = reshape(h2, {batch, seq, h});
    }

    Output out;
    out.hidden = x;
    out.pooled = tanh_op(linear(select_first(x), "pooler"));
    return out;
}

BertEncoder::Output BertEncoder::forward(const std::vector<int64_t>& ids,
                                         const std::vector<int64_t>& segments,
                                         const std::vector<uint8_t>& attention_mask, int64_t batch,
                                         int64_t seq, bool train, uint64_t dropout_seed) const {
    return encoder_forward(embed(ids, segments, batch, seq, train, dropout_seed), attention_mask,
                           train, dropout_seed);
}

NodePtr BertEncoder::mlm_logits(const NodePtr& hidden) const {
    if (!with_pretrain_heads_) fail("mlm_logits: model built without pretraining heads");
    const int64_t batch = hidden->value.dim(0);
    const int64_t seq = hidden->value.dim(1);
    NodePtr flat = reshape(hidden, {batch * seq, config_.hidden});
    NodePtr t = layer_norm(gelu(linear(flat, "mlm.transform")), params_.get("mlm.norm.gain"),
                           params_.get("mlm.norm.bias"));
    NodePtr logits = add(matmul(t, params_.get("embeddings.token"), false, /*trans_b=*/true),
                         params_.get("mlm.output.bias"));
    return reshape(logits, {batch, seq, config_.vocab_size});
}

NodePtr BertEncoder::nsp_logits(const NodePtr& pooled) const {
    if (!with_pretrain_heads_) fail("nsp_logits: model built without pretraining heads");
    return linear(pooled, "nsp");
}

NodePtr BertEncoder::sentence_embedding(const NodePtr& hidden,
                                        const std::vector<uint8_t>& include) const {
    return masked_mean(hidden, include);
}

int64_t BertEncoder::expected_parameter_count(const ModelConfig& c, bool with_pretrain_heads) {
    const int64_t h = c.hidden, v = c.vocab_size, inter = c.intermediate;
    int64_t embeddings = v * h + c.max_seq * h + c.type_vocab * h + 2 * h;
    int64_t per_layer = 4 * (h * h + h)      // q/k/v/output projections
                        + 2 * h              // attention norm
                        + (h * inter + inter) + (inter * h + h)  // ffn
                        + 2 * h;             // ffn norm
    int64_t pooler = h * h + h;
    int64_t total = embeddings + c.layers * per_layer + pooler;
    if (with_pretrain_heads) {
        total += h * h + h + 2 * h + v;  // mlm transform + norm + output bias
        total += h * 2 + 2;              // nsp
    }
    return total;
}

}  // namespace minibert
