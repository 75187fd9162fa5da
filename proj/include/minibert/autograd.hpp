#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "minibert/tensor.hpp"

namespace minibert {

// Reverse-mode autodiff over a dynamically recorded graph. Each op returns a
// new node holding its value, its parents, and a closure that pushes the
// node's gradient into the parents' gradients.
class Node {
public:
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::string label;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor::zeros(value.shape);
    }
};

using NodePtr = std::shared_ptr<Node>;

// Leaf holding a constant (no gradient) or a trainable tensor.
NodePtr make_leaf(Tensor value, bool requires_grad = false, std::string label = "");

// Accumulates d(loss)/d(node) into every reachable node that requires grad.
// loss must be scalar and must have been produced by a recorded op.
void backward(const NodePtr& loss);

// ---- primitives -----------------------------------------------------------

// Elementwise add. Shapes must match, or b's shape must be a trailing suffix
// of a's shape (bias broadcast over leading dims).
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);  // same shape
NodePtr scale(const NodePtr& a, double s);

// 2-D matmul with optional transposes: [m,k]x[k,n] -> [m,n].
NodePtr matmul(const NodePtr& a, const NodePtr& b, bool trans_a = false, bool trans_b = false);
// Batched matmul on rank-3 tensors: [n,m,k]x[n,k,p] -> [n,m,p].
NodePtr bmm(const NodePtr& a, const NodePtr& b, bool trans_b = false);

NodePtr reshape(const NodePtr& a, std::vector<int64_t> shape);
// [b,t,h] -> [b*heads, t, h/heads] and back.
NodePtr split_heads(const NodePtr& a, int64_t heads);
NodePtr merge_heads(const NodePtr& a, int64_t heads);
// [b,t,h] -> [b,h], slice at t = 0.
NodePtr select_first(const NodePtr& a);

NodePtr gelu(const NodePtr& a);
NodePtr tanh_op(const NodePtr& a);
NodePtr sigmoid(const NodePtr& a);
NodePtr softmax_last(const NodePtr& a);

// Softmax over the key axis of attention scores [batch*heads, tq, tk] where
// key_mask is [batch, tk]; masked keys get probability exactly 0. A row whose
// keys are all masked is an error.
NodePtr attention_softmax(const NodePtr& scores, const std::vector<uint8_t>& key_mask,
                          int64_t batch, int64_t heads);

// Layer norm over the last axis with affine gain/bias (both [h]).
NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias,
                   double eps = 1e-12);

// Row gather: table [v,h], ids of length n -> [n,h].
NodePtr embedding(const NodePtr& table, const std::vector<int64_t>& ids);

// Mean negative log-likelihood over rows whose target != ignore_index.
// logits [n,v], targets length n.
NodePtr cross_entropy(const NodePtr& logits, const std::vector<int64_t>& targets,
                      int64_t ignore_index = -1);

// Mean over all elements of -(t*log p + (1-t)*log(1-p)), p clamped away from {0,1}.
NodePtr binary_cross_entropy(const NodePtr& probs, const Tensor& targets);

// Inverted dropout. train=false is the identity; the mask is a pure function
// of seed so a forward pass can be replayed exactly.
NodePtr dropout(const NodePtr& a, double p, bool train, uint64_t seed);

// Mean of x [b,t,h] over positions with include[b,t] != 0 -> [b,h].
// A row with nothing included is an error.
NodePtr masked_mean(const NodePtr& x, const std::vector<uint8_t>& include);

NodePtr sum_all(const NodePtr& a);

// Per-row cosine similarity of two same-shape [N,H] inputs -> [N].
// Rejects zero-norm rows.
NodePtr cosine_rows(const NodePtr& a, const NodePtr& b);

}  // namespace minibert
