#include "minibert/vocab_align.hpp"

#include <stdexcept>

#include "minibert/rng.hpp"

namespace minibert {

Tensor align_vocabulary(const Vocabulary& new_vocab, const Vocabulary& base_vocab,
                        const Tensor& base_embeddings, uint64_t seed) {
    if (base_embeddings.rank() != 2 || base_embeddings.dim(0) != base_vocab.size())
        throw std::runtime_error("align_vocabulary: embedding table " +
                                 base_embeddings.shape_str() + " does not cover " +
                                 std::to_string(base_vocab.size()) + " base tokens");
    int64_t h = base_embeddings.dim(1);
    Tensor out({new_vocab.size(), h});

    const std::string& prefix = new_vocab.continuation_prefix;
    for (int64_t id = 0; id < new_vocab.size(); ++id) {
        const std::string& token = new_vocab.token_of(id);
        double* row = out.data.data() + id * h;

        int64_t base_id = base_vocab.id_of(token);
        if (base_id >= 0) {
            const double* src = base_embeddings.data.data() + base_id * h;
            std::copy(src, src + h, row);
            continue;
        }

        // Continuation marking is positional, so decompose the bare text.
        std::string text = token;
        if (text.size() > prefix.size() && text.compare(0, prefix.size(), prefix) == 0)
            text = text.substr(prefix.size());
        TokenizedText pieces = encode(text, base_vocab);
        bool usable = !pieces.ids.empty();
        for (int64_t pid : pieces.ids)
            if (pid == base_vocab.unk_id) usable = false;

        if (usable) {
            for (int64_t pid : pieces.ids) {
                const double* src = base_embeddings.data.data() + pid * h;
                for (int64_t j = 0; j < h; ++j) row[j] += src[j];
            }
            double inv = 1.0 / static_cast<double>(pieces.ids.size());
            for (int64_t j = 0; j < h; ++j) row[j] *= inv;
        } else {
            Rng rng(mix_seed(seed, static_cast<uint64_t>(id)));
            for (int64_t j = 0; j < h; ++j) row[j] = rng.gaussian(0.0, 0.02);
        }
    }
    return out;
}

}  // namespace minibert
