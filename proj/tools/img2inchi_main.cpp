// img2inchi: molecular-structure images to InChI-style strings.
//
// Subcommands: gen-data, build-vocab, train, infer, eval, bench-decode.
// Exit codes: 0 success, 1 internal/assertion failure, 2 usage/IO/config.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "img2inchi/checkpoint.hpp"
#include "img2inchi/eval.hpp"
#include "img2inchi/inference.hpp"
#include "img2inchi/pipeline.hpp"

using namespace img2inchi;

namespace {

// Every run prints its fully resolved configuration before doing any work,
// so each experiment is self-describing. Goes to stderr; stdout carries the
// subcommand's machine-readable output.
void echo_config(const std::string& subcommand, const std::vector<std::pair<std::string, std::string>>& kv) {
    std::string line = "config: " + subcommand;
    for (const auto& [k, v] : kv) line += " " + k + "=" + v;
    std::cerr << line << "\n";
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

// Optional config file: simple `key=value` lines ('#' comments allowed),
// keys named after the long flags. Precedence is defaults < file < flags:
// a file value is applied only when the flag was absent on the command line.
using Setter = std::function<void(const std::string&)>;

void apply_config_file(CLI::App* cmd, const std::string& path,
                       const std::map<std::string, Setter>& setters) {
    if (path.empty()) return;
    std::ifstream f(path);
    if (!f) throw UsageError("cannot read config file " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw UsageError("config file " + path + " line " + std::to_string(line_no) +
                             ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        const auto it = setters.find(key);
        if (it == setters.end())
            throw UsageError("config file " + path + " line " + std::to_string(line_no) + ": unknown key '" +
                             key + "'");
        if (cmd->count("--" + key) > 0) continue;  // explicit flag wins
        try {
            it->second(value);
        } catch (const std::exception&) {
            throw UsageError("config file " + path + " line " + std::to_string(line_no) + ": bad value for '" +
                             key + "'");
        }
    }
}

Setter set_int(int& slot) {
    return [&slot](const std::string& v) { slot = std::stoi(v); };
}
Setter set_u64(std::uint64_t& slot) {
    return [&slot](const std::string& v) { slot = std::stoull(v); };
}
Setter set_double(double& slot) {
    return [&slot](const std::string& v) { slot = std::stod(v); };
}
Setter set_string(std::string& slot) {
    return [&slot](const std::string& v) { slot = v; };
}
Setter set_bool(bool& slot) {
    return [&slot](const std::string& v) {
        if (v == "true" || v == "1") slot = true;
        else if (v == "false" || v == "0") slot = false;
        else throw std::invalid_argument("bool");
    };
}

void require_option(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

struct ModelFlags {
    std::string preset = "tiny";
    int image_size = -1, patch = -1, dim = -1, enc_layers = -1, dec_layers = -1, heads = -1, ffn = -1,
        max_len = -1;
    double dropout = -1.0, pe_base = -1.0;
    bool post_norm_encoder = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--preset", preset, "Model preset: tiny or paper")
            ->check(CLI::IsMember({"tiny", "paper"}));
        cmd->add_option("--image-size", image_size, "Input image side (must match the data)");
        cmd->add_option("--patch", patch, "Patch side");
        cmd->add_option("--dim", dim, "Model dimension D");
        cmd->add_option("--enc-layers", enc_layers, "Encoder layer count");
        cmd->add_option("--dec-layers", dec_layers, "Decoder layer count");
        cmd->add_option("--heads", heads, "Attention head count");
        cmd->add_option("--ffn", ffn, "Feed-forward hidden dimension");
        cmd->add_option("--max-len", max_len, "Maximum decoder sequence length");
        cmd->add_option("--dropout", dropout, "Dropout rate");
        cmd->add_option("--pe-base", pe_base, "Sinusoidal position encoding base");
        cmd->add_flag("--post-norm-encoder", post_norm_encoder, "Use post-norm encoder blocks");
    }

    void bind(std::map<std::string, Setter>& s) {
        s["preset"] = set_string(preset);
        s["image-size"] = set_int(image_size);
        s["patch"] = set_int(patch);
        s["dim"] = set_int(dim);
        s["enc-layers"] = set_int(enc_layers);
        s["dec-layers"] = set_int(dec_layers);
        s["heads"] = set_int(heads);
        s["ffn"] = set_int(ffn);
        s["max-len"] = set_int(max_len);
        s["dropout"] = set_double(dropout);
        s["pe-base"] = set_double(pe_base);
        s["post-norm-encoder"] = set_bool(post_norm_encoder);
    }

    ModelConfig resolve(int vocab_size) const {
        if (preset != "tiny" && preset != "paper") throw UsageError("unknown preset '" + preset + "'");
        ModelConfig cfg = preset == "paper" ? ModelConfig::paper_preset() : ModelConfig::tiny_preset();
        if (image_size > 0) cfg.image_size = image_size;
        if (patch > 0) cfg.patch_size = patch;
        if (dim > 0) cfg.model_dim = dim;
        if (enc_layers >= 0) cfg.enc_layers = enc_layers;
        if (dec_layers >= 0) cfg.dec_layers = dec_layers;
        if (heads > 0) cfg.heads = heads;
        if (ffn > 0) cfg.ffn_dim = ffn;
        if (max_len > 0) cfg.max_len = max_len;
        if (dropout >= 0.0) cfg.dropout_rate = dropout;
        if (pe_base > 0.0) cfg.pe_base = pe_base;
        if (post_norm_encoder) cfg.pre_norm_encoder = false;
        cfg.vocab_size = vocab_size;
        cfg.validate();
        return cfg;
    }
};

int run(int argc, char** argv) {
    CLI::App app{"img2inchi: transformer-based molecular image captioning"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic molecule dataset");
    GenDataConfig gen_cfg;
    gen_cfg.count = -1;
    gen_cfg.size = 224;
    std::string gen_config_file;
    gen->add_option("--out", gen_cfg.out_dir, "Output directory");
    gen->add_option("--count", gen_cfg.count, "Sample count");
    gen->add_option("--size", gen_cfg.size, "Image side (224 or 384 are the standard)");
    gen->add_option("--seed", gen_cfg.seed, "Generation seed");
    gen->add_option("--sp-density", gen_cfg.augment.sp_density, "Salt-and-pepper density");
    gen->add_option("--atom-drop", gen_cfg.augment.atom_drop_p, "Atom drop probability");
    gen->add_option("--double-to-single", gen_cfg.augment.dbl_to_single_p,
                    "Double-to-single bond conversion probability");
    gen->add_option("--artifacts", gen_cfg.augment.artifact_strokes, "Max random stroke artifacts");
    gen->add_option("--config", gen_config_file, "Optional key=value config file");
    gen->callback([&] {
        std::map<std::string, Setter> setters;
        setters["out"] = set_string(gen_cfg.out_dir);
        setters["count"] = set_int(gen_cfg.count);
        setters["size"] = set_int(gen_cfg.size);
        setters["seed"] = set_u64(gen_cfg.seed);
        setters["sp-density"] = set_double(gen_cfg.augment.sp_density);
        setters["atom-drop"] = set_double(gen_cfg.augment.atom_drop_p);
        setters["double-to-single"] = set_double(gen_cfg.augment.dbl_to_single_p);
        setters["artifacts"] = set_int(gen_cfg.augment.artifact_strokes);
        apply_config_file(gen, gen_config_file, setters);
        require_option(gen_cfg.out_dir, "--out");
        if (gen_cfg.count < 1) throw UsageError("--count is required and must be >= 1");
        echo_config("gen-data", {{"out", gen_cfg.out_dir},
                                 {"count", std::to_string(gen_cfg.count)},
                                 {"size", std::to_string(gen_cfg.size)},
                                 {"seed", std::to_string(gen_cfg.seed)},
                                 {"sp-density", fmt_double(gen_cfg.augment.sp_density)},
                                 {"atom-drop", fmt_double(gen_cfg.augment.atom_drop_p)},
                                 {"double-to-single", fmt_double(gen_cfg.augment.dbl_to_single_p)},
                                 {"artifacts", std::to_string(gen_cfg.augment.artifact_strokes)}});
        std::cout << generate_dataset(gen_cfg) << "\n";
    });

    // ---- build-vocab ----
    auto* bv = app.add_subcommand("build-vocab", "Build a vocabulary from manifest labels");
    std::string bv_manifest, bv_out, bv_config_file;
    bv->add_option("--manifest", bv_manifest, "Manifest TSV");
    bv->add_option("--out", bv_out, "Vocabulary output path");
    bv->add_option("--config", bv_config_file, "Optional key=value config file");
    bv->callback([&] {
        std::map<std::string, Setter> setters;
        setters["manifest"] = set_string(bv_manifest);
        setters["out"] = set_string(bv_out);
        apply_config_file(bv, bv_config_file, setters);
        require_option(bv_manifest, "--manifest");
        require_option(bv_out, "--out");
        echo_config("build-vocab", {{"manifest", bv_manifest}, {"out", bv_out}});
        const SampleManifest manifest = load_manifest(bv_manifest);
        const Vocab vocab = build_vocab_from_manifest(manifest);
        vocab.save(bv_out);
        std::cout << "vocab size " << vocab.size() << " written to " << bv_out << "\n";
    });

    // ---- train ----
    auto* tr = app.add_subcommand("train", "Teacher-forced training");
    std::string tr_manifest, tr_vocab, tr_out, tr_loss_log, tr_config_file;
    ModelFlags tr_model;
    TrainConfig tr_cfg;
    bool tr_no_clip = false;
    tr->add_option("--manifest", tr_manifest, "Training manifest TSV");
    tr->add_option("--vocab", tr_vocab, "Vocabulary file");
    tr->add_option("--out", tr_out, "Checkpoint output path");
    tr->add_option("--loss-log", tr_loss_log, "Write the loss log to this path");
    tr_model.attach(tr);
    tr->add_option("--epochs", tr_cfg.epochs, "Epoch count");
    tr->add_option("--lr", tr_cfg.lr, "Initial learning rate");
    tr->add_option("--decay", tr_cfg.decay, "Rate decay entering each of the last two epochs");
    tr->add_option("--batch", tr_cfg.batch_size, "Batch size");
    tr->add_option("--seed", tr_cfg.seed, "Run seed (init, shuffling, dropout)");
    tr->add_option("--clip", tr_cfg.clip_norm, "Global gradient norm clip");
    tr->add_flag("--no-clip", tr_no_clip, "Disable gradient clipping");
    tr->add_option("--early-stop-loss", tr_cfg.early_stop_loss,
                   "Stop when an epoch's mean loss falls below this");
    tr->add_option("--config", tr_config_file, "Optional key=value config file");
    tr->callback([&] {
        std::map<std::string, Setter> setters;
        setters["manifest"] = set_string(tr_manifest);
        setters["vocab"] = set_string(tr_vocab);
        setters["out"] = set_string(tr_out);
        setters["loss-log"] = set_string(tr_loss_log);
        tr_model.bind(setters);
        setters["epochs"] = set_int(tr_cfg.epochs);
        setters["lr"] = set_double(tr_cfg.lr);
        setters["decay"] = set_double(tr_cfg.decay);
        setters["batch"] = set_int(tr_cfg.batch_size);
        setters["seed"] = set_u64(tr_cfg.seed);
        setters["clip"] = set_double(tr_cfg.clip_norm);
        setters["no-clip"] = set_bool(tr_no_clip);
        setters["early-stop-loss"] = set_double(tr_cfg.early_stop_loss);
        apply_config_file(tr, tr_config_file, setters);
        require_option(tr_manifest, "--manifest");
        require_option(tr_vocab, "--vocab");
        require_option(tr_out, "--out");
        if (tr_no_clip) tr_cfg.clip_norm = 0.0;
        const Vocab vocab = Vocab::load(tr_vocab);
        const ModelConfig mcfg = tr_model.resolve(vocab.size());
        echo_config("train", {{"manifest", tr_manifest},
                              {"vocab", tr_vocab},
                              {"out", tr_out},
                              {"preset", tr_model.preset},
                              {"image-size", std::to_string(mcfg.image_size)},
                              {"patch", std::to_string(mcfg.patch_size)},
                              {"dim", std::to_string(mcfg.model_dim)},
                              {"enc-layers", std::to_string(mcfg.enc_layers)},
                              {"dec-layers", std::to_string(mcfg.dec_layers)},
                              {"heads", std::to_string(mcfg.heads)},
                              {"ffn", std::to_string(mcfg.ffn_dim)},
                              {"max-len", std::to_string(mcfg.max_len)},
                              {"dropout", fmt_double(mcfg.dropout_rate)},
                              {"pe-base", fmt_double(mcfg.pe_base)},
                              {"pre-norm-encoder", mcfg.pre_norm_encoder ? "true" : "false"},
                              {"vocab-size", std::to_string(mcfg.vocab_size)},
                              {"epochs", std::to_string(tr_cfg.epochs)},
                              {"lr", fmt_double(tr_cfg.lr)},
                              {"decay", fmt_double(tr_cfg.decay)},
                              {"batch", std::to_string(tr_cfg.batch_size)},
                              {"clip", fmt_double(tr_cfg.clip_norm)},
                              {"early-stop-loss", fmt_double(tr_cfg.early_stop_loss)},
                              {"seed", std::to_string(tr_cfg.seed)}});
        const SampleManifest manifest = load_manifest(tr_manifest, &vocab);
        Model<float> model(ModelWeights<float>::init(mcfg, tr_cfg.seed));
        const auto result = train_pipeline(model, manifest, vocab, tr_cfg, tr_out, tr_loss_log);
        for (const auto& line : result.log.lines) std::cout << line << "\n";
        std::cout << "checkpoint written to " << result.checkpoint_path << "\n";
    });

    // ---- infer ----
    auto* in = app.add_subcommand("infer", "Predict the InChI string for one image");
    std::string in_ckpt, in_vocab, in_image, in_engine = "cached", in_config_file;
    in->add_option("--ckpt", in_ckpt, "Checkpoint path");
    in->add_option("--vocab", in_vocab, "Vocabulary file");
    in->add_option("--image", in_image, "Image path (PGM or PNG)");
    in->add_option("--engine", in_engine, "Decode engine")->check(CLI::IsMember({"naive", "cached"}));
    in->add_option("--config", in_config_file, "Optional key=value config file");
    in->callback([&] {
        std::map<std::string, Setter> setters;
        setters["ckpt"] = set_string(in_ckpt);
        setters["vocab"] = set_string(in_vocab);
        setters["image"] = set_string(in_image);
        setters["engine"] = set_string(in_engine);
        apply_config_file(in, in_config_file, setters);
        require_option(in_ckpt, "--ckpt");
        require_option(in_vocab, "--vocab");
        require_option(in_image, "--image");
        echo_config("infer",
                    {{"ckpt", in_ckpt}, {"vocab", in_vocab}, {"image", in_image}, {"engine", in_engine}});
        const Vocab vocab = Vocab::load(in_vocab);
        Model<float> model(checkpoint::load(in_ckpt));
        if (model.cfg().vocab_size != vocab.size())
            throw ConfigError("vocab size " + std::to_string(vocab.size()) +
                              " does not match checkpoint vocab size " +
                              std::to_string(model.cfg().vocab_size));
        const Tensor32 img = image_to_tensor<float>(read_image(in_image));
        const auto result = greedy_decode(img, model, engine_from_name(in_engine));
        std::cout << vocab.decode(TokenSequence{result.ids}) << "\n";
    });

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "Levenshtein evaluation over a manifest");
    std::string ev_ckpt, ev_vocab, ev_manifest, ev_engine = "cached", ev_report, ev_report_txt, ev_config_file;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint path");
    ev->add_option("--vocab", ev_vocab, "Vocabulary file");
    ev->add_option("--manifest", ev_manifest, "Evaluation manifest TSV");
    ev->add_option("--engine", ev_engine, "Decode engine")->check(CLI::IsMember({"naive", "cached"}));
    ev->add_option("--report", ev_report, "Per-sample TSV report path");
    ev->add_option("--report-txt", ev_report_txt, "Human-readable summary path (default stdout)");
    ev->add_option("--config", ev_config_file, "Optional key=value config file");
    ev->callback([&] {
        std::map<std::string, Setter> setters;
        setters["ckpt"] = set_string(ev_ckpt);
        setters["vocab"] = set_string(ev_vocab);
        setters["manifest"] = set_string(ev_manifest);
        setters["engine"] = set_string(ev_engine);
        setters["report"] = set_string(ev_report);
        setters["report-txt"] = set_string(ev_report_txt);
        apply_config_file(ev, ev_config_file, setters);
        require_option(ev_ckpt, "--ckpt");
        require_option(ev_vocab, "--vocab");
        require_option(ev_manifest, "--manifest");
        require_option(ev_report, "--report");
        echo_config("eval", {{"ckpt", ev_ckpt},
                             {"vocab", ev_vocab},
                             {"manifest", ev_manifest},
                             {"engine", ev_engine},
                             {"report", ev_report}});
        const Vocab vocab = Vocab::load(ev_vocab);
        Model<float> model(checkpoint::load(ev_ckpt));
        const SampleManifest manifest = load_manifest(ev_manifest, &vocab);
        const EvalReport report = evaluate(model, vocab, manifest, engine_from_name(ev_engine));
        report.write_tsv(ev_report);
        if (!ev_report_txt.empty()) {
            std::ofstream f(ev_report_txt, std::ios::binary);
            if (!f) throw IoError("cannot write report " + ev_report_txt);
            f << report.human_text() << "\n";
        }
        std::cout << report.human_text() << "\n";
    });

    // ---- bench-decode ----
    auto* be = app.add_subcommand("bench-decode", "Naive vs cached decode cost benchmark");
    std::string be_ckpt, be_image, be_config_file;
    std::vector<int> be_steps = {16, 32, 64, 128};
    be->add_option("--ckpt", be_ckpt, "Checkpoint path");
    be->add_option("--image", be_image, "Image path");
    be->add_option("--steps", be_steps, "Comma-separated decode step targets")->delimiter(',');
    be->add_option("--config", be_config_file, "Optional key=value config file");
    be->callback([&] {
        std::map<std::string, Setter> setters;
        setters["ckpt"] = set_string(be_ckpt);
        setters["image"] = set_string(be_image);
        setters["steps"] = [&be_steps](const std::string& v) {
            be_steps.clear();
            std::size_t pos = 0;
            while (pos < v.size()) {
                const std::size_t comma = v.find(',', pos);
                be_steps.push_back(std::stoi(v.substr(pos, comma - pos)));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
        };
        apply_config_file(be, be_config_file, setters);
        require_option(be_ckpt, "--ckpt");
        require_option(be_image, "--image");
        if (be_steps.empty()) throw UsageError("--steps must name at least one step count");
        std::string steps_text;
        for (std::size_t i = 0; i < be_steps.size(); ++i)
            steps_text += (i ? "," : "") + std::to_string(be_steps[i]);
        echo_config("bench-decode", {{"ckpt", be_ckpt}, {"image", be_image}, {"steps", steps_text}});
        Model<float> model(checkpoint::load(be_ckpt));
        const Tensor32 img = image_to_tensor<float>(read_image(be_image));
        const auto rows = bench_decode(model, img, be_steps, model.cfg().memory_rows());
        std::cout << bench_table_text(rows);
        std::cout << "all measured qk counts equal the closed forms\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
