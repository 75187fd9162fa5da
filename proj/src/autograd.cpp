#include "minibert/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "minibert/rng.hpp"

namespace minibert {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

NodePtr fresh(Tensor value, std::vector<NodePtr> parents) {
    auto out = std::make_shared<Node>();
    out->value = std::move(value);
    out->parents = std::move(parents);
    for (const auto& p : out->parents)
        if (p->requires_grad) out->requires_grad = true;
    return out;
}

// C[m,n] += op(A) * op(B) where op transposes when the flag is set.
// A is [m,k] (or [k,m] transposed), B is [k,n] (or [n,k] transposed).
void gemm_acc(double* c, const double* a, const double* b, bool ta, bool tb,
              int64_t m, int64_t n, int64_t k) {
    if (!ta && !tb) {
        for (int64_t i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (int64_t p = 0; p < k; ++p) {
                double av = arow[p];
                if (av == 0.0) continue;
                const double* brow = b + p * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!ta && tb) {
        for (int64_t i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) {
                const double* brow = b + j * k;
                double acc = 0.0;
                for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] += acc;
            }
        }
    } else if (ta && !tb) {
        for (int64_t p = 0; p < k; ++p) {
            const double* arow = a + p * m;
            const double* brow = b + p * n;
            for (int64_t i = 0; i < m; ++i) {
                double av = arow[i];
                if (av == 0.0) continue;
                double* crow = c + i * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (int64_t i = 0; i < m; ++i) {
            double* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) {
                const double* brow = b + j * k;
                double acc = 0.0;
                for (int64_t p = 0; p < k; ++p) acc += a[p * m + i] * brow[p];
                crow[j] += acc;
            }
        }
    }
}

}  // namespace

NodePtr make_leaf(Tensor value, bool requires_grad, std::string label) {
    auto out = std::make_shared<Node>();
    out->value = std::move(value);
    out->requires_grad = requires_grad;
    out->label = std::move(label);
    return out;
}

void backward(const NodePtr& loss) {
    require(loss != nullptr, "backward: null node");
    require(loss->value.numel() == 1, "backward: loss must be a scalar, got " + loss->value.shape_str());
    require(!loss->parents.empty(), "backward: no recorded graph");

    // Iterative postorder DFS; reversing it yields a valid topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad.data[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop();
    }
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    const auto& as = a->value.shape;
    const auto& bs = b->value.shape;
    bool same = as == bs;
    bool suffix = !same && bs.size() <= as.size() &&
                  std::equal(bs.rbegin(), bs.rend(), as.rbegin());
    require(same || suffix,
            "add: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());

    Tensor v(as);
    int64_t bn = b->value.numel();
    for (int64_t i = 0; i < v.numel(); ++i)
        v.data[i] = a->value.data[i] + b->value.data[i % bn];
    auto out = fresh(std::move(v), {a, b});
    Node* o = out.get();
    Node* pa = a.get();
    Node* pb = b.get();
    out->backprop = [o, pa, pb, bn]() {
        pa->ensure_grad();
        pb->ensure_grad();
        int64_t n = o->grad.numel();
        for (int64_t i = 0; i < n; ++i) {
            double g = o->grad.data[i];
            pa->grad.data[i] += g;
            pb->grad.data[i % bn] += g;
        }
    };
    return out;
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    require(a->value.shape == b->value.shape,
            "mul: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor v(a->value.shape);
    for (int64_t i = 0; i < v.numel(); ++i)
        v.data[i] = a->value.data[i] * b->value.data[i];
    auto out = fresh(std::move(v), {a, b});
    Node* o = out.get();
    Node* pa = a.get();
    Node* pb = b.get();
    out->backprop = [o, pa, pb]() {
        pa->ensure_grad();
        pb->ensure_grad();
        for (int64_t i = 0; i < o->grad.numel(); ++i) {
            double g = o->grad.data[i];
            pa->grad.data[i] += g * pb->value.data[i];
            pb->grad.data[i] += g * pa->value.data[i];
        }
    };
    return out;
}

NodePtr scale(const NodePtr& a, double s) {
    Tensor v(a->value.shape);
    for (int64_t i = 0; i < v.numel(); ++i) v.data[i] = a->value.data[i] * s;
    auto out = fresh(std::move(v), {a});
    Node* o = out.get();
    Node* pa = a.get();
    out->backprop = [o, pa, s]() {
        pa->ensure_grad();
        for (int64_t i = 0; i < o->grad.numel(); ++i)
            pa->grad.data[i] += o->grad.data[i] * s;
    };
    return out;
}

NodePtr matmul(const NodePtr& a, const NodePtr& b, bool trans_a, bool trans_b) {
    require(a->value.rank() == 2 && b->value.rank() == 2,
            "matmul: rank-2 operands required, got " + a->value.shape_str() + " and " +
                b->value.shape_str());
    int64_t m = trans_a ? a->value.dim(1) : a->value.dim(0);
    int64_t k = trans_a ? a->value.dim(0) : a->value.dim(1);
    int64_t kb = trans_b ? b->value.dim(1) : b->value.dim(0);
    int64_t n = trans_b ? b->value.dim(0) : b->value.dim(1);
    require(k == kb, "matmul: inner dimension mismatch " + a->value.shape_str() + " vs " +
                         b->value.shape_str());

    Tensor v({m, n});
    gemm_acc(v.data.data(), a->value.data.data(), b->value.data.data(), trans_a, trans_b, m, n, k);
    auto out = fresh(std::move(v), {a, b});
    Node* o = out.get();
    Node* pa = a.get();
    Node* pb = b.get();
    out->backprop = [o, pa, pb, trans_a, trans_b, m, n, k]() {
        pa->ensure_grad();
        pb->ensure_grad();
        const double* dc = o->grad.data.data();
        if (!trans_a) {
            // dA = dC * op(B)^T
            gemm_acc(pa->grad.data.data(), dc, pb->value.data.data(), false, !trans_b, m, k, n);
        } else {
            // dA = op(B) * dC^T  (A stored [k,m])
            gemm_acc(pa->grad.data.data(), pb->value.data.data(), dc, trans_b, true, k, m, n);
        }
        if (!trans_b) {
            // dB = op(A)^T * dC
            gemm_acc(pb->grad.data.data(), pa->value.data.data(), dc, !trans_a, false, k, n, m);
        } else {
            // dB = dC^T * op(A)  (B stored [n,k])
            gemm_acc(pb->grad.data.data(), dc, pa->value.data.data(), true, trans_a, n, k, m);
        }
    };
    return out;
}

NodePtr bmm(const NodePtr& a, const NodePtr& b, bool trans_b) {
    require(a->value.rank() == 3 && b->value.rank() == 3,
            "bmm: rank-3 operands required, got " + a->value.shape_str() + " and " +
                b->value.shape_str());
    int64_t nb = a->value.dim(0);
    require(b->value.dim(0) == nb, "bmm: batch mismatch " + a->value.shape_str() + " vs " +
                                       b->value.shape_str());
    int64_t m = a->value.dim(1);
    int64_t k = a->value.dim(2);
    int64_t kb = trans_b ? b->value.dim(2) : b->value.dim(1);
    int64_t p = trans_b ? b->value.dim(1) : b->value.dim(2);
    require(k == kb, "bmm: inner dimension mismatch " + a->value.shape_str() + " vs " +
                         b->value.shape_str());

    Tensor v({nb, m, p});
    for (int64_t s = 0; s < nb; ++s) {
        gemm_acc(v.data.data() + s * m * p, a->value.data.data() + s * m * k,
                 b->value.data.data() + s * k * p, false, trans_b, m, p, k);
    }
    auto out = fresh(std::move(v), {a, b});
    Node* o = out.get();
    Node* pa = a.get();
    Node* pb = b.get();
    out->backprop = [o, pa, pb, trans_b, nb, m, k, p]() {
        pa->ensure_grad();
        pb->ensure_grad();
        for (int64_t s = 0; s < nb; ++s) {
            const double* dc = o->grad.data.data() + s * m * p;
            const double* av = pa->value.data.data() + s * m * k;
            const double* bv = pb->value.data.data() + s * k * p;
            double* da = pa->grad.data.data() + s * m * k;
            double* db = pb->grad.data.data() + s * k * p;
            // dA = dC * op(B)^T
            gemm_acc(da, dc, bv, false, !trans_b, m, k, p);
            if (!trans_b) {
                gemm_acc(db, av, dc, true, false, k, p, m);  // dB = A^T * dC
            } else {
                gemm_acc(db, dc, av, true, false, p, k, m);  // dB = dC^T * A
            }
        }
    };
    return out;
}

NodePtr reshape(const NodePtr& a, std::vector<int64_t> shape) {
    require(Tensor::numel_of(shape) == a->value.numel(),
            "reshape: element count mismatch " + a->value.shape_str() + " -> " +
                Tensor::shape_str(shape));
    Tensor v(shape);
    v.data = a->value.data;
    auto out = fresh(std::move(v), {a});
    Node* o = out.get();
    Node* pa = a.get();
    out->backprop = [o, pa]() {
        pa->ensure_grad();
        for (int64_t i = 0; i < o->grad.numel(); ++i) pa->grad.data[i] += o->grad.data[i];
    };
    return out;
}

NodePtr split_heads(const NodePtr& a, int64_t heads) {
    require(a->value.rank() == 3, "split_heads: rank-3 input required, got " + a->value.shape_str());
    int64_t b = a->value.dim(0), t = a->value.dim(1), h = a->value.dim(2);
    require(heads > 0 && h % heads == 0,
            "split_heads: width " + std::to_string(h) + " not divisible by " + std::to_string(heads));
    int64_t hd = h / heads;
    Tensor v({b * heads, t, hd});
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ti = 0; ti < t; ++ti)
            for (int64_t ai = 0; ai < heads; ++ai) {
                const double* src = a->value.data.data() + (bi * t + ti) * h + ai * hd;
                double* dst = v.data.data() + ((bi * heads + ai) * t + ti) * hd;
                std::copy(src, src + hd, dst);
            }
    auto out = fresh(std::move(v), {a});
    Node* o = out.get();
    Node* pa = a.get();
    out->backprop = [o, pa, b, t, h, heads, hd]() {
        pa->ensure_grad();
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ti = 0; ti < t; ++ti)
                for (int64_t ai = 0; ai < heads; ++ai) {
                    const double* src = o->grad.data.data() + ((bi * heads + ai) * t + ti) * hd;
                    double* dst = pa->grad.data.data() + (bi * t + ti) * h + ai * hd;
                    for (int64_t d = 0; d < hd; ++d) dst[d] += src[d];
                }
    };
    return out;
}

NodePtr merge_heads(const NodePtr& a, int64_t heads) {
    require(a->value.rank() == 3, "merge_heads: rank-3 input required, got " + a->value.shape_str());
    int64_t bh = a->value.dim(0), t = a->value.dim(1), hd = a->value.dim(2);
    require(heads > 0 && bh % heads == 0,
            "merge_heads: batch " + std::to_string(bh) + " not divisible by " + std::to_string(heads));
    int64_t b = bh / heads, h = heads * hd;
    Tensor v({b, t, h});
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ti = 0; ti < t; ++ti)
            for (int64_t ai = 0; ai < heads; ++ai) {
                const double* src = a->value.data.data() + ((bi * heads + ai) * t + ti) * hd;
                double* dst = v.data.data() + (bi * t + ti) * h + ai * hd;
                std::copy(src, src + hd, dst);
            }
    auto out = fresh(std::move(v), {a});
    Node* o = out.get();
    Node* pa = a.get();
    out->backprop = [o, pa, b, t, h, heads, hd]() {
        pa->ensure_grad();
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ti = 0; ti < t; ++ti)
                for (int64_t ai = 0; ai < heads; ++ai) {
                    const double* src = o->grad.data.data() + (bi * t + ti) * h + ai * hd;
                    double* dst = pa->grad.data.data() + ((bi * heads + ai) * t + ti) * hd;
                    for (int64_t d = 0; d < hd; ++d) dst[d] += src[d];
                }
    };
    return out;
}

NodePtr select_first(const NodePtr& a) {
    require(a->value.rank() == 3, "select_first: rank-3 input required, got " + a->value.shape_str());
    int64_t b = a->value.dim(0), t = a->value.dim(1), h = a->value.dim(2);
    Tensor v({b, h});
    for (int64_t bi = 0; bi < b; ++bi) {
        const double* src = a->value.data.data() + bi * t * h;
        std::copy(src, src + h, v.data.data() + bi * h);
    }
    auto out = fresh(std::move(v), {a});
    Node* o = out.get();
    Node* pa = a.get();
    out->backprop = [o, pa, b, t, h]() {
        pa->ensure_grad();
        for (int64_t bi = 0; bi < b; ++bi) {
            const double* src = o->grad.data.data() + bi * h;
            double* dst = pa->grad.data.data() + bi * t * h;
            for (int64_t j = 0; j < h; ++j) dst[j] += src[j];
        }
    };
    return out;
}

NodePtr gelu(const NodePtr& a) {
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
    Tensor v(a->value.shape);
    for (int64_t i = 0; i < v.numel(); ++i) {
        double x = a->value.data[i];
        v.data[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    auto out = fresh(std::move(v), {a});
    Node* o = out.get();
    Node* pa = a.get();
    out->backprop = [o, pa]() {
        pa->ensure_grad();
        for (int64_t i = 0; i < o->grad.numel(); ++i) {
            double x = pa->value.data[i];
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = std::exp(-0.5 * x * x) * inv_sqrt2pi;
            pa->grad.data[i] += o->grad.data[i] * (cdf + x * pdf);
        }
    };
    return out;
}

NodePtr tanh_op(const NodePtr& a) {
    Tensor v(a->value.shape);
    for (int64_t i = 0; i < v.numel(); ++i) v.data[i] = std::tanh(a->value.data[i]);
    auto out = fresh(std::move(v), {a});
    Node* o = out.get();
    Node* pa = a.get();
    out->backprop = [o, pa]() {
        pa->ensure_grad();
        for (int64_t i = 0; i < o->grad.numel(); ++i) {
            double y = o->value.data[i];
            pa->grad.data[i] += o->grad.data[i] * (1.0 - y * y);
        }
    };
    return out;
}

NodePtr sigmoid(const NodePtr& a) {
    Tensor v(a->value.shape);
    for (int64_t i = 0; i < v.numel(); ++i) {
        double x = a->value.data[i];
        v.data[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                             : std::exp(x) / (1.0 + std::exp(x));
    }
    auto out = fresh(std::move(v), {a});
    Node* o = out.get();
    Node* pa = a.get();
    out->backprop = [o, pa]() {
        pa->ensure_grad();
        for (int64_t i = 0; i < o->grad.numel(); ++i) {
            double y = o->value.data[i];
            pa->grad.data[i] += o->grad.data[i] * y * (1.0 - y);
        }
    };
    return out;
}

NodePtr softmax_last(const NodePtr& a) {
    require(a->value.rank() >= 1, "softmax_last: rank >= 1 required");
    int64_t w = a->value.dim(a->value.rank() - 1);
    int64_t rows = a->value.numel() / w;
    Tensor v(a->value.shape);
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a->value.data.data() + r * w;
        double* y = v.data.data() + r * w;
        double mx = x[0];
        for (int64_t j = 1; j < w; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < w; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (int64_t j = 0; j < w; ++j) y[j] /= z;
    }
    auto out = fresh(std::move(v), {a});
    Node* o = out.get();
    Node* pa = a.get();
    out->backprop = [o, pa, rows, w]() {
        pa->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = o->value.data.data() + r * w;
            const double* dy = o->grad.data.data() + r * w;
            double* dx = pa->grad.data.data() + r * w;
            double s = 0.0;
            for (int64_t j = 0; j < w; ++j) s += dy[j] * y[j];
            for (int64_t j = 0; j < w; ++j) dx[j] += (dy[j] - s) * y[j];
        }
    };
    return out;
}

NodePtr attention_softmax(const NodePtr& scores, const std::vector<uint8_t>& key_mask,
                          int64_t batch, int64_t heads) {
    require(scores->value.rank() == 3,
            "attention_softmax: rank-3 scores required, got " + scores->value.shape_str());
    int64_t groups = scores->value.dim(0);
    int64_t tq = scores->value.dim(1);
    int64_t tk = scores->value.dim(2);
    require(batch > 0 && heads > 0 && groups == batch * heads,
            "attention_softmax: leading dim " + std::to_string(groups) + " != batch*heads");
    require(static_cast<int64_t>(key_mask.size()) == batch * tk,
            "attention_softmax: mask size " + std::to_string(key_mask.size()) + " != batch*keys");

    Tensor v(scores->value.shape);
    for (int64_t g = 0; g < groups; ++g) {
        const uint8_t* mask = key_mask.data() + (g / heads) * tk;
        for (int64_t q = 0; q < tq; ++q) {
            const double* x = scores->value.data.data() + (g * tq + q) * tk;
            double* y = v.data.data() + (g * tq + q) * tk;
            double mx = -std::numeric_limits<double>::infinity();
            bool any_unmasked = false;
            for (int64_t j = 0; j < tk; ++j) {
                if (mask[j]) {
                    any_unmasked = true;
                    mx = std::max(mx, x[j]);
                }
            }
            // The all-masked check is structural: non-finite scores (e.g. a
            // diverging training run) must flow through as NaN instead of
            // being misreported as a masking error.
            if (!any_unmasked) fail("attention_softmax: row has no unmasked keys");
            double z = 0.0;
            for (int64_t j = 0; j < tk; ++j) {
                if (mask[j]) {
                    y[j] = std::exp(x[j] - mx);
                    z += y[j];
                } else {
                    y[j] = 0.0;
                }
            }
            for (int64_t j = 0; j < tk; ++j) y[j] /= z;
        }
    }
    auto out = fresh(std::move(v), {scores});
    Node* o = out.get();
    Node* pa = scores.get();
    int64_t rows = groups * tq;
    out->backprop = [o, pa, rows, tk]() {
        pa->ensure_grad();
        // Masked entries have y == 0, so they receive zero gradient for free.
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = o->value.data.data() + r * tk;
            const double* dy = o->grad.data.data() + r * tk;
            double* dx = pa->grad.data.data() + r * tk;
            double s = 0.0;
            for (int64_t j = 0; j < tk; ++j) s += dy[j] * y[j];
            for (int64_t j = 0; j < tk; ++j) dx[j] += (dy[j] - s) * y[j];
        }
    };
    return out;
}

NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias, double eps) {
    require(x->value.rank() >= 1, "layer_norm: rank >= 1 required");
    int64_t h = x->value.dim(x->value.rank() - 1);
    require(gain->value.shape == std::vector<int64_t>{h} &&
                bias->value.shape == std::vector<int64_t>{h},
            "layer_norm: gain/bias must be [" + std::to_string(h) + "]");
    int64_t rows = x->value.numel() / h;

    Tensor v(x->value.shape);
    // Keep normalized rows and inverse stddevs around for the backward pass.
    auto xhat = std::make_shared<std::vector<double>>(x->value.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const double* px = x->value.data.data() + r * h;
        double mean = 0.0;
        for (int64_t j = 0; j < h; ++j) mean += px[j];
        mean /= static_cast<double>(h);
        double var = 0.0;
        for (int64_t j = 0; j < h; ++j) {
            double d = px[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(h);
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (int64_t j = 0; j < h; ++j) {
            double xn = (px[j] - mean) * is;
            (*xhat)[r * h + j] = xn;
            v.data[r * h + j] = gain->value.data[j] * xn + bias->value.data[j];
        }
    }
    auto out = fresh(std::move(v), {x, gain, bias});
    Node* o = out.get();
    Node* px_ = x.get();
    Node* pg = gain.get();
    Node* pb = bias.get();
    out->backprop = [o, px_, pg, pb, xhat, inv_std, rows, h]() {
        px_->ensure_grad();
        pg->ensure_grad();
        pb->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* dy = o->grad.data.data() + r * h;
            const double* xn = xhat->data() + r * h;
            double is = (*inv_std)[r];
            double mean_dxhat = 0.0, mean_dxhat_xn = 0.0;
            for (int64_t j = 0; j < h; ++j) {
                double dxhat = dy[j] * pg->value.data[j];
                mean_dxhat += dxhat;
                mean_dxhat_xn += dxhat * xn[j];
                pg->grad.data[j] += dy[j] * xn[j];
                pb->grad.data[j] += dy[j];
            }
            mean_dxhat /= static_cast<double>(h);
            mean_dxhat_xn /= static_cast<double>(h);
            double* dx = px_->grad.data.data() + r * h;
            for (int64_t j = 0; j < h; ++j) {
                double dxhat = dy[j] * pg->value.data[j];
                dx[j] += (dxhat - mean_dxhat - xn[j] * mean_dxhat_xn) * is;
            }
        }
    };
    return out;
}

NodePtr embedding(const NodePtr& table, const std::vector<int64_t>& ids) {
    require(table->value.rank() == 2,
            "embedding: rank-2 table required, got " + table->value.shape_str());
    int64_t vsize = table->value.dim(0);
    int64_t h = table->value.dim(1);
    int64_t n = static_cast<int64_t>(ids.size());
    for (int64_t i = 0; i < n; ++i)
        require(ids[i] >= 0 && ids[i] < vsize,
                "embedding: id " + std::to_string(ids[i]) + " out of range [0," +
                    std::to_string(vsize) + ")");
    Tensor v({n, h});
    for (int64_t i = 0; i < n; ++i) {
        const double* src = table->value.data.data() + ids[i] * h;
        std::copy(src, src + h, v.data.data() + i * h);
    }
    auto out = fresh(std::move(v), {table});
    Node* o = out.get();
    Node* pt = table.get();
    auto ids_copy = std::make_shared<std::vector<int64_t>>(ids);
    out->backprop = [o, pt, ids_copy, h]() {
        pt->ensure_grad();
        int64_t n = static_cast<int64_t>(ids_copy->size());
        for (int64_t i = 0; i < n; ++i) {
            const double* src = o->grad.data.data() + i * h;
            double* dst = pt->grad.data.data() + (*ids_copy)[i] * h;
            for (int64_t j = 0; j < h; ++j) dst[j] += src[j];
        }
    };
    return out;
}

NodePtr cross_entropy(const NodePtr& logits, const std::vector<int64_t>& targets,
                      int64_t ignore_index) {
    require(logits->value.rank() == 2,
            "cross_entropy: rank-2 logits required, got " + logits->value.shape_str());
    int64_t n = logits->value.dim(0);
    int64_t vsize = logits->value.dim(1);
    require(static_cast<int64_t>(targets.size()) == n,
            "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                std::to_string(n) + " rows");

    int64_t valid = 0;
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        if (targets[i] == ignore_index) continue;
        require(targets[i] >= 0 && targets[i] < vsize,
                "cross_entropy: target " + std::to_string(targets[i]) + " out of range [0," +
                    std::to_string(vsize) + ")");
        const double* x = logits->value.data.data() + i * vsize;
        double mx = x[0];
        for (int64_t j = 1; j < vsize; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < vsize; ++j) z += std::exp(x[j] - mx);
        total += mx + std::log(z) - x[targets[i]];
        ++valid;
    }
    require(valid > 0, "cross_entropy: no rows with a real target");
    Tensor v = Tensor::scalar(total / static_cast<double>(valid));

    auto out = fresh(std::move(v), {logits});
    Node* o = out.get();
    Node* pl = logits.get();
    auto tg = std::make_shared<std::vector<int64_t>>(targets);
    out->backprop = [o, pl, tg, n, vsize, ignore_index, valid]() {
        pl->ensure_grad();
        double g = o->grad.data[0] / static_cast<double>(valid);
        for (int64_t i = 0; i < n; ++i) {
            if ((*tg)[i] == ignore_index) continue;
            const double* x = pl->value.data.data() + i * vsize;
            double* dx = pl->grad.data.data() + i * vsize;
            double mx = x[0];
            for (int64_t j = 1; j < vsize; ++j) mx = std::max(mx, x[j]);
            double z = 0.0;
            for (int64_t j = 0; j < vsize; ++j) z += std::exp(x[j] - mx);
            for (int64_t j = 0; j < vsize; ++j) {
                double p = std::exp(x[j] - mx) / z;
                dx[j] += g * (p - (j == (*tg)[i] ? 1.0 : 0.0));
            }
        }
    };
    return out;
}

NodePtr binary_cross_entropy(const NodePtr& probs, const Tensor& targets) {
    require(probs->value.shape == targets.shape,
            "binary_cross_entropy: shape mismatch " + probs->value.shape_str() + " vs " +
                Tensor::shape_str(targets.shape));
    int64_t n = probs->value.numel();
    require(n > 0, "binary_cross_entropy: empty input");
    const double lo = 1e-12, hi = 1.0 - 1e-12;
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double p = std::clamp(probs->value.data[i], lo, hi);
        double t = targets.data[i];
        total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    Tensor v = Tensor::scalar(total / static_cast<double>(n));

    auto out = fresh(std::move(v), {probs});
    Node* o = out.get();
    Node* pp = probs.get();
    auto tg = std::make_shared<Tensor>(targets);
    out->backprop = [o, pp, tg, n, lo, hi]() {
        pp->ensure_grad();
        double g = o->grad.data[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            double p = std::clamp(pp->value.data[i], lo, hi);
            double t = tg->data[i];
            pp->grad.data[i] += g * (-t / p + (1.0 - t) / (1.0 - p));
        }
    };
    return out;
}

NodePtr dropout(const NodePtr& a, double p, bool train, uint64_t seed) {
    require(p >= 0.0 && p < 1.0, "dropout: rate must be in [0,1), got " + std::to_string(p));
    if (!train || p == 0.0) return a;
    int64_t n = a->value.numel();
    auto mask = std::make_shared<std::vector<double>>(n);
    Rng rng(seed);
    double keep_scale = 1.0 / (1.0 - p);
    for (int64_t i = 0; i < n; ++i)
        (*mask)[i] = rng.uniform() >= p ? keep_scale : 0.0;
    Tensor v(a->value.shape);
    for (int64_t i = 0; i < n; ++i) v.data[i] = a->value.data[i] * (*mask)[i];
    auto out = fresh(std::move(v), {a});
    Node* o = out.get();
    Node* pa = a.get();
    out->backprop = [o, pa, mask, n]() {
        pa->ensure_grad();
        for (int64_t i = 0; i < n; ++i) pa->grad.data[i] += o->grad.data[i] * (*mask)[i];
    };
    return out;
}

NodePtr masked_mean(const NodePtr& x, const std::vector<uint8_t>& include) {
    require(x->value.rank() == 3, "masked_mean: rank-3 input required, got " + x->value.shape_str());
    int64_t b = x->value.dim(0), t = x->value.dim(1), h = x->value.dim(2);
    require(static_cast<int64_t>(include.size()) == b * t,
            "masked_mean: mask size " + std::to_string(include.size()) + " != batch*positions");
    Tensor v({b, h});
    auto counts = std::make_shared<std::vector<int64_t>>(b, 0);
    for (int64_t bi = 0; bi < b; ++bi) {
        double* dst = v.data.data() + bi * h;
        int64_t c = 0;
        for (int64_t ti = 0; ti < t; ++ti) {
            if (!include[bi * t + ti]) continue;
            ++c;
            const double* src = x->value.data.data() + (bi * t + ti) * h;
            for (int64_t j = 0; j < h; ++j) dst[j] += src[j];
        }
        if (c == 0) fail("masked_mean: sequence " + std::to_string(bi) + " has no included positions");
        (*counts)[bi] = c;
        for (int64_t j = 0; j < h; ++j) dst[j] /= static_cast<double>(c);
    }
    auto out = fresh(std::move(v), {x});
    Node* o = out.get();
    Node* pa = x.get();
    auto inc = std::make_shared<std::vector<uint8_t>>(include);
    out->backprop = [o, pa, inc, counts, b, t, h]() {
        pa->ensure_grad();
        for (int64_t bi = 0; bi < b; ++bi) {
            const double* src = o->grad.data.data() + bi * h;
            double inv = 1.0 / static_cast<double>((*counts)[bi]);
            for (int64_t ti = 0; ti < t; ++ti) {
                if (!(*inc)[bi * t + ti]) continue;
                double* dst = pa->grad.data.data() + (bi * t + ti) * h;
                for (int64_t j = 0; j < h; ++j) dst[j] += src[j] * inv;
            }
        }
    };
    return out;
}

NodePtr sum_all(const NodePtr& a) {
    double total = 0.0;
    for (double x : a->value.data) total += x;
    auto out = fresh(Tensor::scalar(total), {a});
    Node* o = out.get();
    Node* pa = a.get();
    out->backprop = [o, pa]() {
        pa->ensure_grad();
        double g = o->grad.data[0];
        for (int64_t i = 0; i < pa->grad.numel(); ++i) pa->grad.data[i] += g;
    };
    return out;
}

NodePtr cosine_rows(const NodePtr& a, const NodePtr& b) {
    require(a->value.rank() == 2 && a->value.shape == b->value.shape,
            "cosine_rows: same-shape rank-2 inputs required, got " + a->value.shape_str() +
                " and " + b->value.shape_str());
    int64_t n = a->value.dim(0);
    int64_t h = a->value.dim(1);
    Tensor v({n});
    auto norms = std::make_shared<Tensor>(Tensor({n, 2}));  // per row: |a|, |b|
    for (int64_t r = 0; r < n; ++r) {
        const double* x = a->value.data.data() + r * h;
        const double* y = b->value.data.data() + r * h;
        double dot = 0.0, xx = 0.0, yy = 0.0;
        for (int64_t i = 0; i < h; ++i) {
            dot += x[i] * y[i];
            xx += x[i] * x[i];
            yy += y[i] * y[i];
        }
        if (xx == 0.0 || yy == 0.0) fail("cosine_rows: zero vector");
        norms->at(r, 0) = std::sqrt(xx);
        norms->at(r, 1) = std::sqrt(yy);
        v.at(r) = dot / (norms->at(r, 0) * norms->at(r, 1));
    }
    auto out = fresh(std::move(v), {a, b});
    Node* o = out.get();
    Node* pa = a.get();
    Node* pb = b.get();
    out->backprop = [o, pa, pb, norms, n, h]() {
        pa->ensure_grad();
        pb->ensure_grad();
        // d cos / d a_i = b_i / (|a||b|) - cos * a_i / |a|^2, and symmetrically.
        for (int64_t r = 0; r < n; ++r) {
            double g = o->grad.at(r);
            double cos = o->value.at(r);
            double na = norms->at(r, 0);
            double nb = norms->at(r, 1);
            const double* x = pa->value.data.data() + r * h;
            const double* y = pb->value.data.data() + r * h;
            double* dx = pa->grad.data.data() + r * h;
            double* dy = pb->grad.data.data() + r * h;
            for (int64_t i = 0; i < h; ++i) {
                dx[i] += g * (y[i] / (na * nb) - cos * x[i] / (na * na));
                dy[i] += g * (x[i] / (na * nb) - cos * y[i] / (nb * nb));
            }
        }
    };
    return out;
}

}  // namespace minibert
