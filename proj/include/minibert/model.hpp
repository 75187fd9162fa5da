#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "minibert/autograd.hpp"
#include "minibert/params.hpp"

namespace minibert {

struct ModelConfig {
    int64_t vocab_size = 0;
    int64_t hidden = 0;
    int64_t layers = 0;
    int64_t heads = 0;
    int64_t intermediate = 0;
    int64_t max_seq = 512;
    double dropout = 0.1;
    int64_t type_vocab = 2;

    void validate() const;
    void save(const std::string& path) const;  // flat "key value" lines
    static ModelConfig load(const std::string& path);
};

// BERT-style encoder over a ParameterStore. Post-layer-norm transformer
// blocks with learned absolute positions and tied MLM projection.
class BertEncoder {
public:
    struct Output {
        NodePtr hidden;  // [B,T,H]
        NodePtr pooled;  // [B,H], tanh-projected first position
    };

    // with_pretrain_heads controls whether the MLM/NSP head parameters are
    // created; fine-tuning rebuilds the encoder without them.
    BertEncoder(ModelConfig config, uint64_t init_seed, bool with_pretrain_heads = true);

    // ids/segments are row-major [batch, seq]. Token + position + segment
    // embeddings, layer norm, dropout.
    NodePtr embed(const std::vector<int64_t>& ids, const std::vector<int64_t>& segments,
                  int64_t batch, int64_t seq, bool train, uint64_t dropout_seed) const;

    // attention_mask is [batch, seq]; nonzero = attend. Masked keys receive
    // zero attention weight everywhere.
    Output encoder_forward(const NodePtr& embedded, const std::vector<uint8_t>& attention_mask,
                           bool train, uint64_t dropout_seed) const;

    Output forward(const std::vector<int64_t>& ids, const std::vector<int64_t>& segments,
                   const std::vector<uint8_t>& attention_mask, int64_t batch, int64_t seq,
                   bool train, uint64_t dropout_seed) const;

    // [B,T,H] -> [B,T,V]; projection shares the token embedding matrix.
    NodePtr mlm_logits(const NodePtr& hidden) const;
    // [B,H] -> [B,2]
    NodePtr nsp_logits(const NodePtr& pooled) const;
    // Mean of hidden states over positions with include != 0 -> [B,H].
    NodePtr sentence_embedding(const NodePtr& hidden, const std::vector<uint8_t>& include) const;

    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }
    const ModelConfig& config() const { return config_; }
    bool has_pretrain_heads() const { return with_pretrain_heads_; }

    // Closed-form parameter count for a config (with pretraining heads).
    static int64_t expected_parameter_count(const ModelConfig& config, bool with_pretrain_heads);

private:
    NodePtr linear(const NodePtr& x, const std::string& name) const;

    ModelConfig config_;
    bool with_pretrain_heads_;
    ParameterStore params_;
};

}  // namespace minibert
