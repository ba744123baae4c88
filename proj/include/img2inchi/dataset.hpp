#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "img2inchi/errors.hpp"
#include "img2inchi/image.hpp"
#include "img2inchi/rng.hpp"
#include "img2inchi/tokenizer.hpp"

namespace img2inchi {

struct ManifestRow {
    std::string path;   // as written in the file
    std::string label;
};

enum class ManifestSource { Synthetic, External };

// Rows of (image path, label). Relative image paths resolve against the
// manifest's own directory so a dataset directory stays relocatable.
struct SampleManifest {
    std::vector<ManifestRow> rows;
    std::string base_dir;
    ManifestSource source = ManifestSource::External;

    std::size_t size() const { return rows.size(); }

    std::string resolved_path(std::size_t i) const {
        const std::filesystem::path p(rows[i].path);
        if (p.is_absolute()) return p.string();
        return (std::filesystem::path(base_dir) / p).string();
    }
};

// TSV with two columns `path<TAB>label` and an optional literal header line.
// Validates each row: the path must exist and open as PGM/PNG, and when a
// vocabulary is supplied every label must tokenize under it. Each defect is
// reported with its line number.
inline SampleManifest load_manifest(const std::string& path, const Vocab* vocab = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read manifest " + path);
    SampleManifest m;
    m.base_dir = std::filesystem::path(path).parent_path().string();
    if (m.base_dir.empty()) m.base_dir = ".";
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line == "path\tlabel") continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
            throw IoError("manifest " + path + " line " + std::to_string(line_no) +
                          ": expected `path<TAB>label`");
        ManifestRow row{line.substr(0, tab), line.substr(tab + 1)};
        m.rows.push_back(std::move(row));
        const std::string img_path = m.resolved_path(m.rows.size() - 1);
        if (!std::filesystem::exists(img_path))
            throw IoError("manifest " + path + " line " + std::to_string(line_no) + ": image " + img_path +
                          " does not exist");
        try {
            read_image(img_path);
        } catch (const IoError& e) {
            throw IoError("manifest " + path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        if (vocab) {
            try {
                vocab->encode(m.rows.back().label);
            } catch (const VocabError& e) {
                throw IoError("manifest " + path + " line " + std::to_string(line_no) + ": " + e.what());
            }
        }
    }
    if (m.rows.empty()) throw IoError("manifest " + path + ": no samples");
    return m;
}

inline void save_manifest(const std::string& path, const SampleManifest& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write manifest " + path);
    f << "path\tlabel\n";
    for (const auto& row : m.rows) f << row.path << "\t" << row.label << "\n";
}

// Deterministic 70/20/10 split (train, validation, test): Fisher-Yates
// shuffle under the seed, then sizes floor(0.7n), floor(0.2n), remainder.
// The three parts are disjoint and cover the input.
struct DatasetSplit {
    SampleManifest train, validation, test;
};

inline DatasetSplit split_dataset(const SampleManifest& m, std::uint64_t seed) {
    if (m.rows.empty()) throw ContractError("split_dataset: empty manifest");
    const std::size_t n = m.rows.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    const std::size_t n_train = (n * 7) / 10;
    const std::size_t n_val = (n * 2) / 10;
    DatasetSplit split;
    for (SampleManifest* part : {&split.train, &split.validation, &split.test}) {
        part->base_dir = m.base_dir;
        part->source = m.source;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const ManifestRow& row = m.rows[order[i]];
        if (i < n_train) split.train.rows.push_back(row);
        else if (i < n_train + n_val) split.validation.rows.push_back(row);
        else split.test.rows.push_back(row);
    }
    return split;
}

}  // namespace img2inchi
