#pragma once

#include <cstdint>

#include "minibert/tensor.hpp"
#include "minibert/vocab.hpp"

namespace minibert {

// Builds an embedding table for new_vocab out of base_vocab's table.
// Per new token: copy the base row when the identical string exists there;
// otherwise tokenize the token's text with base_vocab and average the piece
// rows; tokens with no base decomposition get a Gaussian(0, 0.02) row drawn
// from a PRNG keyed on (seed, new token id).
Tensor align_vocabulary(const Vocabulary& new_vocab, const Vocabulary& base_vocab,
                        const Tensor& base_embeddings, uint64_t seed);

}  // namespace minibert
