#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "contra/error.hpp"

namespace contra {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr const char* kUnkToken = "<unk>";

namespace detail {

struct TokenSeqHash {
    std::size_t operator()(const TokenSeq& seq) const {
        std::uint64_t h = 0xCBF29CE484222325ull;
        for (TokenId id : seq) {
            for (int shift = 0; shift < 32; shift += 8) {
                h ^= static_cast<std::uint64_t>((static_cast<std::uint32_t>(id) >> shift) & 0xFFu);
                h *= 0x00000100000001B3ull;
            }
        }
        return static_cast<std::size_t>(h);
    }
};

}  // namespace detail

// Id <-> string bijection over [0, size), plus optional special ids.
class Vocabulary {
public:
    Vocabulary() = default;

    explicit Vocabulary(std::vector<std::string> tokens,
                        std::optional<TokenId> bos = std::nullopt,
                        std::optional<TokenId> eos = std::nullopt,
                        std::optional<TokenId> unk = std::nullopt)
        : tokens_(std::move(tokens)), bos_(bos), eos_(eos), unk_(unk) {
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
            if (!inserted) throw InvalidParameter("Vocabulary: duplicate token '" + tokens_[i] + "'");
        }
        for (auto special : {bos_, eos_, unk_}) {
            if (special && (*special < 0 || static_cast<std::size_t>(*special) >= tokens_.size()))
                throw InvalidParameter("Vocabulary: special id out of range");
        }
    }

    std::size_t size() const { return tokens_.size(); }
    bool empty() const { return tokens_.empty(); }

    const std::string& token(TokenId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
            throw InvalidParameter("Vocabulary: id out of range");
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::optional<TokenId> find(std::string_view word) const {
        auto it = index_.find(std::string(word));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<TokenId> bos() const { return bos_; }
    std::optional<TokenId> eos() const { return eos_; }
    std::optional<TokenId> unk() const { return unk_; }

    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    std::optional<TokenId> bos_, eos_, unk_;
};

namespace detail {

// Unicode whitespace per UCP White_Space (the set a word tokenizer cares
// about); input is UTF-8, decoded one codepoint at a time.
inline bool is_unicode_space(char32_t cp) {
    switch (cp) {
        case U'\t': case U'\n': case U'\v': case U'\f': case U'\r': case U' ':
        case 0x0085: case 0x00A0: case 0x1680:
        case 0x2000: case 0x2001: case 0x2002: case 0x2003: case 0x2004:
        case 0x2005: case 0x2006: case 0x2007: case 0x2008: case 0x2009:
        case 0x200A: case 0x2028: case 0x2029: case 0x202F: case 0x205F:
        case 0x3000:
            return true;
        default:
            return false;
    }
}

// Decodes the codepoint at byte offset i; advances i past it. Malformed
// bytes are treated as Latin-1 so tokenization never fails on binary junk.
inline char32_t decode_utf8(std::string_view s, std::size_t& i) {
    const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
    const unsigned char b0 = byte(i);
    std::size_t len = 1;
    char32_t cp = b0;
    if ((b0 & 0x80u) == 0x00u) {
        len = 1;
    } else if ((b0 & 0xE0u) == 0xC0u) {
        len = 2;
        cp = b0 & 0x1Fu;
    } else if ((b0 & 0xF0u) == 0xE0u) {
        len = 3;
        cp = b0 & 0x0Fu;
    } else if ((b0 & 0xF8u) == 0xF0u) {
        len = 4;
        cp = b0 & 0x07u;
    } else {
        ++i;
        return b0;
    }
    if (i + len > s.size()) {
        ++i;
        return b0;
    }
    for (std::size_t k = 1; k < len; ++k) {
        const unsigned char bk = byte(i + k);
        if ((bk & 0xC0u) != 0x80u) {
            ++i;
            return b0;
        }
        cp = (cp << 6) | (bk & 0x3Fu);
    }
    i += len;
    return cp;
}

}  // namespace detail

// Splits text on Unicode whitespace. Words keep their bytes untouched.
inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t start = i;
        const char32_t cp = detail::decode_utf8(text, i);
        if (detail::is_unicode_space(cp)) {
            if (!current.empty()) {
                words.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.append(text.substr(start, i - start));
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

// Build-mode tokenization: ids in first-appearance order, then the unknown
// token is appended (reusing an existing "<unk>" entry if the text contains
// one literally).
inline std::pair<TokenSeq, Vocabulary> tokenize_build(std::string_view text) {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, TokenId> index;
    TokenSeq ids;
    for (auto& word : split_words(text)) {
        auto [it, inserted] = index.emplace(word, static_cast<TokenId>(tokens.size()));
        if (inserted) tokens.push_back(word);
        ids.push_back(it->second);
    }
    TokenId unk_id;
    if (auto it = index.find(kUnkToken); it != index.end()) {
        unk_id = it->second;
    } else {
        unk_id = static_cast<TokenId>(tokens.size());
        tokens.emplace_back(kUnkToken);
    }
    return {std::move(ids), Vocabulary(std::move(tokens), std::nullopt, std::nullopt, unk_id)};
}

// Fixed-vocabulary tokenization: out-of-vocabulary words map to the unknown
// id, which must exist if any OOV word occurs.
inline TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
    TokenSeq ids;
    for (auto& word : split_words(text)) {
        if (auto id = vocab.find(word)) {
            ids.push_back(*id);
        } else if (vocab.unk()) {
            ids.push_back(*vocab.unk());
        } else {
            throw InvalidParameter("tokenize: out-of-vocabulary word '" + word +
                                   "' and vocabulary has no unknown id");
        }
    }
    return ids;
}

inline std::string detokenize(const TokenSeq& ids, const Vocabulary& vocab) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) out += ' ';
        out += vocab.token(ids[i]);
    }
    return out;
}

// One token per line, line number = id; special ids in a `<path>.json`
// sidecar {"bos": int|null, "eos": int|null, "unk": int|null}.
inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_vocabulary: cannot open " + path);
    for (const auto& tok : vocab.tokens()) out << tok << '\n';
    nlohmann::ordered_json sidecar;
    const auto id_or_null = [](std::optional<TokenId> id) {
        return id ? nlohmann::json(*id) : nlohmann::json(nullptr);
    };
    sidecar["bos"] = id_or_null(vocab.bos());
    sidecar["eos"] = id_or_null(vocab.eos());
    sidecar["unk"] = id_or_null(vocab.unk());
    std::ofstream meta(path + ".json", std::ios::binary);
    if (!meta) throw IoError("save_vocabulary: cannot open " + path + ".json");
    meta << sidecar.dump() << '\n';
}

inline Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_vocabulary: cannot open " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    std::optional<TokenId> bos, eos, unk;
    std::ifstream meta(path + ".json", std::ios::binary);
    if (meta) {
        nlohmann::json sidecar;
        try {
            meta >> sidecar;
        } catch (const nlohmann::json::exception& e) {
            throw IoError("load_vocabulary: bad sidecar " + path + ".json: " + e.what());
        }
        const auto read_id = [&](const char* key) -> std::optional<TokenId> {
            if (!sidecar.contains(key) || sidecar[key].is_null()) return std::nullopt;
            return sidecar[key].get<TokenId>();
        };
        bos = read_id("bos");
        eos = read_id("eos");
        unk = read_id("unk");
    }
    return Vocabulary(std::move(tokens), bos, eos, unk);
}

}  // namespace contra
