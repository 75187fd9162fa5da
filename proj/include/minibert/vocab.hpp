#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace minibert {

// Subword vocabulary learned by byte-pair merging. Merges operate on
// unmarked character sequences; the token inventory stores each learned
// symbol in the surface forms it was actually seen in — bare when the
// symbol starts a word, prefixed with "##" when it continues one.
struct Vocabulary {
    static constexpr const char* kPad = "[PAD]";
    static constexpr const char* kUnk = "[UNK]";
    static constexpr const char* kCls = "[CLS]";
    static constexpr const char* kSep = "[SEP]";
    static constexpr const char* kMask = "[MASK]";

    std::vector<std::string> tokens;  // index = id
    std::vector<std::pair<std::string, std::string>> merges;  // rank order
    std::string continuation_prefix = "##";
    int64_t pad_id = -1, unk_id = -1, cls_id = -1, sep_id = -1, mask_id = -1;

    int64_t size() const { return static_cast<int64_t>(tokens.size()); }
    int64_t id_of(const std::string& token) const;  // -1 when absent
    const std::string& token_of(int64_t id) const;
    bool is_special(int64_t id) const;
    bool is_continuation(int64_t id) const;
    int64_t max_form_length() const { return max_form_len_; }

    // Builds the lookup index, locates the special tokens, and validates
    // uniqueness. Every constructor path (training, file load) ends here.
    void finalize();

private:
    std::unordered_map<std::string, int64_t> token_to_id_;
    int64_t max_form_len_ = 0;
};

struct TokenizedText {
    std::vector<int64_t> ids;
    std::vector<uint8_t> word_starts;
};

struct PairEncoding {
    std::vector<int64_t> ids;
    std::vector<int64_t> segment_ids;
};

// Learns merges greedily: highest pair frequency first, ties broken by
// lexicographic (left, right). Stops at target_size tokens, or earlier when
// no pair reaches min_pair_freq.
Vocabulary train_bpe(const std::vector<std::string>& corpus, int64_t target_size,
                     int64_t min_pair_freq = 2);

// Greedy longest-match-first segmentation of each whitespace-delimited word.
// A word that cannot be fully segmented becomes a single [UNK]. Special
// tokens are never produced from raw text.
TokenizedText encode(const std::string& text, const Vocabulary& vocab);

// Joins tokens, stripping the continuation prefix and inserting spaces at
// word starts.
std::string decode(const std::vector<int64_t>& ids, const Vocabulary& vocab);

// [CLS] A [SEP] B [SEP] with segment ids 0/1; when b is empty: [CLS] A [SEP]
// with all-zero segments. Truncates the longer sequence first until the
// total fits max_len.
PairEncoding encode_pair(const std::string& a, const std::string& b, const Vocabulary& vocab,
                         int64_t max_len);

// Vocabulary file: one token per line, line number = id.
// Merges file: "left right" per line in rank order; '#'-prefixed lines and
// blank lines are skipped on read.
void save_vocab(const std::string& path, const Vocabulary& vocab);
void save_merges(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::string& vocab_path, const std::string& merges_path = "");

std::vector<std::string> split_whitespace(const std::string& text);
std::string to_lower_ascii(const std::string& text);

}  // namespace minibert
