#include "minibert/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace minibert {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

const char* kSpecials[5] = {Vocabulary::kPad, Vocabulary::kUnk, Vocabulary::kCls,
                            Vocabulary::kSep, Vocabulary::kMask};

// One whitespace-delimited word under training: its symbol sequence and how
// often it occurs in the corpus.
struct TrainWord {
    std::vector<std::string> symbols;
    int64_t freq = 0;
};

using SymbolPair = std::pair<std::string, std::string>;

// Splits a word into UTF-8 code points (multi-byte sequences stay intact).
std::vector<std::string> utf8_chars(const std::string& word) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < word.size()) {
        unsigned char c = static_cast<unsigned char>(word[i]);
        size_t len = 1;
        if ((c & 0x80u) == 0x00u)
            len = 1;
        else if ((c & 0xE0u) == 0xC0u)
            len = 2;
        else if ((c & 0xF0u) == 0xE0u)
            len = 3;
        else if ((c & 0xF8u) == 0xF0u)
            len = 4;
        len = std::min(len, word.size() - i);
        out.push_back(word.substr(i, len));
        i += len;
    }
    return out;
}

}  // namespace

std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> words;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) words.push_back(text.substr(start, i - start));
    }
    return words;
}

std::string to_lower_ascii(const std::string& text) {
    std::string out = text;
    for (char& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

int64_t Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? -1 : it->second;
}

const std::string& Vocabulary::token_of(int64_t id) const {
    if (id < 0 || id >= size()) fail("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens[static_cast<size_t>(id)];
}

bool Vocabulary::is_special(int64_t id) const {
    return id == pad_id || id == unk_id || id == cls_id || id == sep_id || id == mask_id;
}

bool Vocabulary::is_continuation(int64_t id) const {
    const std::string& t = token_of(id);
    return t.size() > continuation_prefix.size() &&
           t.compare(0, continuation_prefix.size(), continuation_prefix) == 0;
}

void Vocabulary::finalize() {
    token_to_id_.clear();
    max_form_len_ = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (!token_to_id_.emplace(tokens[i], static_cast<int64_t>(i)).second)
            fail("vocabulary: duplicate token \"" + tokens[i] + "\"");
        max_form_len_ = std::max(max_form_len_, static_cast<int64_t>(tokens[i].size()));
    }
    pad_id = id_of(kPad);
    unk_id = id_of(kUnk);
    cls_id = id_of(kCls);
    sep_id = id_of(kSep);
    mask_id = id_of(kMask);
    for (const char* s : kSpecials)
        if (id_of(s) < 0) fail(std::string("vocabulary: missing special token ") + s);
}

Vocabulary train_bpe(const std::vector<std::string>& corpus, int64_t target_size,
                     int64_t min_pair_freq) {
    // Collect words in first-encounter order with multiplicities.
    std::vector<TrainWord> words;
    std::unordered_map<std::string, size_t> word_index;
    for (const std::string& doc : corpus) {
        for (const std::string& w : split_whitespace(doc)) {
            auto [it, fresh] = word_index.emplace(w, words.size());
            if (fresh) {
                TrainWord tw;
                tw.symbols = utf8_chars(w);
                words.push_back(std::move(tw));
            }
            ++words[it->second].freq;
        }
    }
    if (words.empty()) fail("train_bpe: empty corpus");

    Vocabulary vocab;
    for (const char* s : kSpecials) vocab.tokens.emplace_back(s);
    std::set<std::string> seen(vocab.tokens.begin(), vocab.tokens.end());
    auto add_token = [&](const std::string& t) {
        if (seen.insert(t).second) vocab.tokens.push_back(t);
    };
    auto form_of = [&](const std::string& symbol, bool initial) {
        return initial ? symbol : vocab.continuation_prefix + symbol;
    };

    // Base alphabet: the surface forms actually observed, in encounter order.
    for (const TrainWord& w : words)
        for (size_t i = 0; i < w.symbols.size(); ++i) add_token(form_of(w.symbols[i], i == 0));

    if (target_size < static_cast<int64_t>(vocab.tokens.size()))
        fail("train_bpe: target_size " + std::to_string(target_size) + " below minimum " +
             std::to_string(vocab.tokens.size()) +
             " (specials plus observed character forms)");

    // Exact pair frequencies plus an index of candidate words per pair. The
    // index may hold stale entries; counts never do.
    std::map<SymbolPair, int64_t> pair_counts;
    std::map<SymbolPair, std::set<size_t>> pair_words;
    auto count_word = [&](size_t wi, int64_t sign) {
        const TrainWord& w = words[wi];
        for (size_t i = 0; i + 1 < w.symbols.size(); ++i) {
            SymbolPair p{w.symbols[i], w.symbols[i + 1]};
            auto it = pair_counts.emplace(p, 0).first;
            it->second += sign * w.freq;
            if (sign > 0) pair_words[p].insert(wi);
            if (it->second == 0) pair_counts.erase(it);
        }
    };
    for (size_t wi = 0; wi < words.size(); ++wi) count_word(wi, +1);

    while (static_cast<int64_t>(vocab.tokens.size()) < target_size) {
        const SymbolPair* best = nullptr;
        int64_t best_count = 0;
        for (const auto& [pair, count] : pair_counts) {
            if (count > best_count || (count == best_count && best && pair < *best)) {
                best = &pair;
                best_count = count;
            }
        }
        if (!best || best_count < min_pair_freq) break;

        SymbolPair pair = *best;
        std::string merged = pair.first + pair.second;
        std::set<size_t> candidates = pair_words[pair];
        bool saw_initial = false, saw_continuation = false;

        // Rewrite each affected word: retract its pair counts, merge
        // left-to-right, then recount.
        std::vector<std::pair<size_t, std::vector<std::string>>> rewrites;
        for (size_t wi : candidates) {
            const std::vector<std::string>& syms = words[wi].symbols;
            std::vector<std::string> out;
            out.reserve(syms.size());
            bool touched = false;
            size_t i = 0;
            while (i < syms.size()) {
                if (i + 1 < syms.size() && syms[i] == pair.first && syms[i + 1] == pair.second) {
                    if (out.empty())
                        saw_initial = true;
                    else
                        saw_continuation = true;
                    out.push_back(merged);
                    touched = true;
                    i += 2;
                } else {
                    out.push_back(syms[i]);
                    ++i;
                }
            }
            if (touched) rewrites.emplace_back(wi, std::move(out));
        }
        if (rewrites.empty()) {  // stale index entry only; drop and continue
            pair_words.erase(pair);
            pair_counts.erase(pair);
            continue;
        }

        std::vector<std::string> new_forms;
        if (saw_initial && !seen.count(form_of(merged, true)))
            new_forms.push_back(form_of(merged, true));
        if (saw_continuation && !seen.count(form_of(merged, false)))
            new_forms.push_back(form_of(merged, false));
        if (static_cast<int64_t>(vocab.tokens.size() + new_forms.size()) > target_size) break;

        for (auto& [wi, syms] : rewrites) {
            count_word(wi, -1);
            words[wi].symbols = std::move(syms);
            count_word(wi, +1);
        }
        for (const std::string& t : new_forms) add_token(t);
        vocab.merges.push_back(pair);
        pair_words.erase(pair);
    }

    vocab.finalize();
    return vocab;
}

TokenizedText encode(const std::string& text, const Vocabulary& vocab) {
    TokenizedText out;
    for (const std::string& word : split_whitespace(text)) {
        std::vector<int64_t> piece_ids;
        size_t pos = 0;
        bool ok = true;
        while (pos < word.size()) {
            size_t longest = 0;
            int64_t match = -1;
            size_t limit = std::min(word.size() - pos,
                                    static_cast<size_t>(vocab.max_form_length()));
            for (size_t len = limit; len >= 1; --len) {
                std::string candidate = word.substr(pos, len);
                if (pos > 0) candidate = vocab.continuation_prefix + candidate;
                int64_t id = vocab.id_of(candidate);
                if (id < 0 || vocab.is_special(id)) continue;
                // Raw text that happens to look like a continuation form must
                // not claim it at the start of a word.
                if (pos == 0 && vocab.is_continuation(id)) continue;
                longest = len;
                match = id;
                break;
            }
            if (match < 0) {
                ok = false;
                break;
            }
            piece_ids.push_back(match);
            pos += longest;
        }
        if (!ok) {
            out.ids.push_back(vocab.unk_id);
            out.word_starts.push_back(1);
        } else {
            for (size_t i = 0; i < piece_ids.size(); ++i) {
                out.ids.push_back(piece_ids[i]);
                out.word_starts.push_back(i == 0 ? 1 : 0);
            }
        }
    }
    return out;
}

std::string decode(const std::vector<int64_t>& ids, const Vocabulary& vocab) {
    std::string out;
    for (int64_t id : ids) {
        const std::string& tok = vocab.token_of(id);
        if (vocab.is_continuation(id)) {
            out += tok.substr(vocab.continuation_prefix.size());
        } else {
            if (!out.empty()) out += ' ';
            out += tok;
        }
    }
    return out;
}

PairEncoding encode_pair(const std::string& a, const std::string& b, const Vocabulary& vocab,
                         int64_t max_len) {
    if (max_len < 5)
        fail("encode_pair: max_len must be at least 5, got " + std::to_string(max_len));
    std::vector<int64_t> ta = encode(a, vocab).ids;
    std::vector<int64_t> tb = encode(b, vocab).ids;
    bool pair = !tb.empty();
    int64_t overhead = pair ? 3 : 2;
    while (static_cast<int64_t>(ta.size() + tb.size()) + overhead > max_len) {
        if (ta.size() > tb.size())
            ta.pop_back();
        else
            tb.pop_back();
    }

    PairEncoding enc;
    enc.ids.push_back(vocab.cls_id);
    enc.ids.insert(enc.ids.end(), ta.begin(), ta.end());
    enc.ids.push_back(vocab.sep_id);
    enc.segment_ids.assign(enc.ids.size(), 0);
    if (pair) {
        enc.ids.insert(enc.ids.end(), tb.begin(), tb.end());
        enc.ids.push_back(vocab.sep_id);
        enc.segment_ids.resize(enc.ids.size(), 1);
    }
    return enc;
}

void save_vocab(const std::string& path, const Vocabulary& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("save_vocab: cannot open " + path);
    for (const std::string& t : vocab.tokens) out << t << "\n";
    if (!out) fail("save_vocab: write failed for " + path);
}

void save_merges(const std::string& path, const Vocabulary& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("save_merges: cannot open " + path);
    for (const auto& [l, r] : vocab.merges) out << l << " " << r << "\n";
    if (!out) fail("save_merges: write failed for " + path);
}

Vocabulary load_vocab(const std::string& vocab_path, const std::string& merges_path) {
    std::ifstream in(vocab_path, std::ios::binary);
    if (!in) fail("load_vocab: cannot open " + vocab_path);
    Vocabulary vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        vocab.tokens.push_back(line);
    }
    // Lines are ids, so only a trailing empty line (from the final newline)
    // can be dropped safely.
    while (!vocab.tokens.empty() && vocab.tokens.back().empty()) vocab.tokens.pop_back();

    if (!merges_path.empty()) {
        std::ifstream min(merges_path, std::ios::binary);
        if (!min) fail("load_vocab: cannot open " + merges_path);
        size_t lineno = 0;
        while (std::getline(min, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            auto fields = split_whitespace(line);
            if (fields.size() != 2)
                fail("load_vocab: " + merges_path + ":" + std::to_string(lineno) +
                     ": expected \"left right\", got \"" + line + "\"");
            vocab.merges.emplace_back(fields[0], fields[1]);
        }
    }
    vocab.finalize();
    return vocab;
}

}  // namespace minibert
