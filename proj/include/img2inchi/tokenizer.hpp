#pragma once

#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "img2inchi/errors.hpp"

namespace img2inchi {

// Two-character element symbols the splitter recognizes. Single uppercase
// letters (C, H, N, O, S, ...) fall out of the single-character rule and need
// no listing.
inline const std::set<std::string>& two_letter_elements() {
    static const std::set<std::string> symbols = {"Al", "Br", "Ca", "Cl", "Cu", "Fe", "Li",
                                                  "Mg", "Na", "Se", "Si", "Sn", "Zn"};
    return symbols;
}

struct SplitToken {
    std::string text;
    std::size_t offset;  // byte offset into the source string
};

// Lossless partition of an InChI-style string. Rule priority at each
// position: the literal header "InChI=1S"; a two-character layer marker
// (/c /h /b /t /m /s /i); a two-letter element symbol; a maximal digit run;
// any single remaining character. Concatenating the tokens reproduces the
// input byte for byte.
inline std::vector<SplitToken> split_with_offsets(const std::string& s) {
    for (std::size_t i = 0; i < s.size(); ++i)
        if (static_cast<unsigned char>(s[i]) >= 128)
            throw VocabError("split: non-ASCII byte at offset " + std::to_string(i));
    static const std::string header = "InChI=1S";
    static const std::string layer_chars = "chbtmsi";
    std::vector<SplitToken> out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s.compare(i, header.size(), header) == 0) {
            out.push_back({header, i});
            i += header.size();
        } else if (s[i] == '/' && i + 1 < s.size() && layer_chars.find(s[i + 1]) != std::string::npos) {
            out.push_back({s.substr(i, 2), i});
            i += 2;
        } else if (s[i] >= 'A' && s[i] <= 'Z' && i + 1 < s.size() && s[i + 1] >= 'a' && s[i + 1] <= 'z' &&
                   two_letter_elements().count(s.substr(i, 2))) {
            out.push_back({s.substr(i, 2), i});
            i += 2;
        } else if (s[i] >= '0' && s[i] <= '9') {
            std::size_t j = i;
            while (j < s.size() && s[j] >= '0' && s[j] <= '9') ++j;
            out.push_back({s.substr(i, j - i), i});
            i = j;
        } else {
            out.push_back({s.substr(i, 1), i});
            i += 1;
        }
    }
    return out;
}

inline std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    for (auto& t : split_with_offsets(s)) out.push_back(std::move(t.text));
    return out;
}

struct TokenSequence {
    std::vector<int> ids;
};

// Bidirectional token <-> id mapping with reserved PAD/SOS/EOS ids. Immutable
// after build; ids are a pure function of the corpus token set.
class Vocab {
   public:
    static constexpr int kPad = 0;
    static constexpr int kSos = 1;
    static constexpr int kEos = 2;

    Vocab() = default;

    // 3 specials plus the distinct split tokens in lexicographic order.
    template <typename Range>
    static Vocab build(const Range& corpus) {
        std::set<std::string> distinct;
        bool any = false;
        for (const std::string& s : corpus) {
            any = true;
            for (auto& t : split(s)) distinct.insert(std::move(t));
        }
        if (!any) throw VocabError("build_vocab: empty corpus");
        Vocab v;
        for (const std::string& t : distinct) v.push_token(t);
        return v;
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw VocabError("token id " + std::to_string(id) + " out of range");
        return tokens_[static_cast<std::size_t>(id)];
    }

    bool contains(const std::string& t) const { return index_.count(t) != 0; }

    int id_of(const std::string& t) const {
        auto it = index_.find(t);
        if (it == index_.end()) throw VocabError("token '" + t + "' not in vocabulary");
        return it->second;
    }

    // Wraps the split token ids in SOS ... EOS.
    TokenSequence encode(const std::string& s) const {
        TokenSequence seq;
        seq.ids.push_back(kSos);
        for (const auto& t : split_with_offsets(s)) {
            auto it = index_.find(t.text);
            if (it == index_.end())
                throw VocabError("out-of-vocabulary token '" + t.text + "' at offset " +
                                 std::to_string(t.offset));
            seq.ids.push_back(it->second);
        }
        seq.ids.push_back(kEos);
        return seq;
    }

    // Strips SOS, ignores PAD, stops at the first EOS, concatenates tokens.
    std::string decode(const TokenSequence& seq) const {
        std::string out;
        for (int id : seq.ids) {
            if (id == kEos) break;
            if (id == kSos || id == kPad) continue;
            out += token(id);
        }
        return out;
    }

    // One token per line, line number = id; the first three lines are the
    // literal specials.
    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot write vocab file " + path);
        for (const auto& t : tokens_) f << t << "\n";
    }

    static Vocab load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot read vocab file " + path);
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(f, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            lines.push_back(line);
        }
        if (lines.size() < 4) throw IoError("vocab file " + path + " is too short");
        if (lines[0] != "<PAD>" || lines[1] != "<SOS>" || lines[2] != "<EOS>")
            throw IoError("vocab file " + path + " must start with <PAD>, <SOS>, <EOS>");
        Vocab v;
        for (std::size_t i = 3; i < lines.size(); ++i) {
            if (lines[i].empty()) throw IoError("vocab file " + path + ": empty token at line " +
                                                std::to_string(i + 1));
            if (v.index_.count(lines[i]))
                throw IoError("vocab file " + path + ": duplicate token at line " + std::to_string(i + 1));
            v.push_token(lines[i]);
        }
        return v;
    }

   private:
    void push_token(const std::string& t) {
        index_[t] = static_cast<int>(tokens_.size());
        tokens_.push_back(t);
    }

    std::vector<std::string> tokens_ = {"<PAD>", "<SOS>", "<EOS>"};
    std::unordered_map<std::string, int> index_ = {{"<PAD>", 0}, {"<SOS>", 1}, {"<EOS>", 2}};
};

}  // namespace img2inchi
