#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "img2inchi/checkpoint.hpp"
#include "img2inchi/dataset.hpp"
#include "img2inchi/eval.hpp"
#include "img2inchi/render.hpp"
#include "img2inchi/trainer.hpp"

namespace img2inchi {

struct GenDataConfig {
    std::string out_dir;
    int count = 8;
    int size = 224;
    std::uint64_t seed = 0;
    AugmentParams augment;
};

// Generates `count` synthetic molecules, renders them (optionally
// corrupted), writes PGM images plus manifest.tsv, and returns the one-line
// recipe that reproduces the dataset. Each sample draws from its own
// SplitMix64 stream seeded with seed ^ index.
inline std::string generate_dataset(const GenDataConfig& cfg) {
    if (cfg.count < 1) throw ConfigError("gen-data: count must be >= 1");
    if (cfg.size < 32 || cfg.size % 16 != 0)
        throw ConfigError("gen-data: size must be a multiple of 16 and >= 32 (224 and 384 are the standard)");
    std::filesystem::create_directories(cfg.out_dir);
    SampleManifest manifest;
    manifest.base_dir = cfg.out_dir;
    manifest.source = ManifestSource::Synthetic;
    char name[32];
    for (int i = 0; i < cfg.count; ++i) {
        Rng rng = Rng::for_sample(cfg.seed, static_cast<std::uint64_t>(i));
        const MoleculeGraph mol = gen_molecule(rng);
        Rendered r = render(mol, cfg.size);
        const Image img = cfg.augment.is_identity() ? r.image : augment(r.image, r.meta, rng, cfg.augment);
        std::snprintf(name, sizeof(name), "img_%05d.pgm", i);
        write_pgm((std::filesystem::path(cfg.out_dir) / name).string(), img);
        manifest.rows.push_back({name, mini_inchi(mol)});
    }
    save_manifest((std::filesystem::path(cfg.out_dir) / "manifest.tsv").string(), manifest);
    char recipe[256];
    std::snprintf(recipe, sizeof(recipe),
                  "img2inchi gen-data --out %s --count %d --size %d --seed %llu"
                  " --sp-density %g --atom-drop %g --double-to-single %g --artifacts %d",
                  cfg.out_dir.c_str(), cfg.count, cfg.size, static_cast<unsigned long long>(cfg.seed),
                  cfg.augment.sp_density, cfg.augment.atom_drop_p, cfg.augment.dbl_to_single_p,
                  cfg.augment.artifact_strokes);
    return recipe;
}

inline Vocab build_vocab_from_manifest(const SampleManifest& manifest) {
    std::vector<std::string> labels;
    labels.reserve(manifest.size());
    for (const auto& row : manifest.rows) labels.push_back(row.label);
    return Vocab::build(labels);
}

// Loads and validates every sample up front: OOV or overlong labels are all
// listed before training starts, and nothing is trained on a bad manifest.
template <typename F>
std::vector<TrainSample<F>> load_samples(const SampleManifest& manifest, const Vocab& vocab,
                                         const ModelConfig& cfg) {
    std::vector<TrainSample<F>> samples;
    std::string problems;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        try {
            TrainSample<F> s;
            s.encoded = vocab.encode(manifest.rows[i].label).ids;
            // max_len must cover the label plus SOS and EOS.
            if (static_cast<int>(s.encoded.size()) > cfg.max_len)
                throw VocabError("label needs " + std::to_string(s.encoded.size()) +
                                 " positions including SOS/EOS, max_len is " + std::to_string(cfg.max_len));
            s.image = image_to_tensor<F>(read_image(manifest.resolved_path(i)));
            samples.push_back(std::move(s));
        } catch (const Error& e) {
            problems += "  sample " + std::to_string(i + 1) + " (" + manifest.rows[i].path + "): " + e.what() +
                        "\n";
        }
    }
    if (!problems.empty()) throw IoError("rejected manifest samples:\n" + problems);
    return samples;
}

struct TrainPipelineResult {
    TrainLog<float> log;
    std::string checkpoint_path;
};

// Full training run: validate + load samples, init (or keep) weights, train
// with a per-epoch checkpoint save, optionally write the loss log.
inline TrainPipelineResult train_pipeline(Model<float>& model, const SampleManifest& manifest,
                                          const Vocab& vocab, const TrainConfig& tcfg,
                                          const std::string& ckpt_path, const std::string& loss_log_path = "") {
    auto samples = load_samples<float>(manifest, vocab, model.cfg());
    TrainPipelineResult result;
    result.checkpoint_path = ckpt_path;
    result.log = train<float>(model, samples, tcfg, [&](int) {
        checkpoint::save(ckpt_path, model.weights);
        return false;
    });
    if (!loss_log_path.empty()) {
        std::ofstream f(loss_log_path, std::ios::binary);
        if (!f) throw IoError("cannot write loss log " + loss_log_path);
        for (const auto& line : result.log.lines) f << line << "\n";
    }
    return result;
}

}  // namespace img2inchi
