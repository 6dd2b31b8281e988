// contra: contrastive decoding engine CLI.
//
//   train    fit an interpolated add-k n-gram model on a text corpus
//   decode   continue one prompt with a chosen decoder
//   eval     run an experiment config (or the default grid) over a corpus
//   export   write generations JSONL from a records file
//   compare  corpus-mean metric table across record groups

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "contra/corpus.hpp"
#include "contra/decode.hpp"
#include "contra/harness.hpp"
#include "contra/http_backend.hpp"
#include "contra/metrics.hpp"
#include "contra/ngram.hpp"
#include "contra/version.hpp"
#include "contra/vocab.hpp"

// http_backend.hpp pulls in httplib, which needs pthread at link time; the
// CMake target links Threads through the interface library.

namespace {

using namespace contra;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

BackendSpec parse_backend_spec(const std::string& text) {
    BackendSpec spec;
    if (text == "uniform") {
        spec.kind = "uniform";
    } else if (text.rfind("http://", 0) == 0 || text.rfind("https://", 0) == 0) {
        spec.kind = "http";
        spec.locator = text;
    } else if (text.rfind("ngram:", 0) == 0) {
        spec.kind = "ngram";
        spec.locator = text.substr(6);
    } else {
        spec.kind = "ngram";
        spec.locator = text;
    }
    return spec;
}

struct LoadedBackend {
    std::unique_ptr<LMBackend> owned;
    LMBackend* get() const { return owned.get(); }
};

LoadedBackend load_backend(const BackendSpec& spec, const Vocabulary* vocab) {
    LoadedBackend b;
    if (spec.kind == "ngram") {
        b.owned = std::make_unique<NGramModel>(load_ngram(spec.locator));
    } else if (spec.kind == "uniform") {
        if (!vocab) throw InvalidParameter("uniform backend needs a vocabulary (--vocab)");
        b.owned = uniform_backend(*vocab);
    } else if (spec.kind == "http") {
        if (!vocab) throw InvalidParameter("http backend needs a vocabulary (--vocab)");
        b.owned = http_backend(spec.locator, *vocab);
    } else {
        throw InvalidParameter("unknown backend kind '" + spec.kind + "'");
    }
    return b;
}

// Shared flag bag; subcommands read what they need.
struct Options {
    std::uint64_t seed = 0;
    double alpha = 0.1;
    double amateur_temp = 1.0;
    std::int64_t amateur_window = 1;  // 0 = unlimited
    std::size_t beam = 5;
    std::size_t max_new_tokens = 256;
    std::string decoder;
    std::string expert_spec;
    std::string amateur_spec;
    bool disable_vhead = false;
    bool full_prompt_amateur = false;

    std::string corpus_path;
    std::string format = "txt";
    int order = 4;
    double k = 0.1;
    std::vector<double> lambdas;
    std::string out_path;
    std::string vocab_out;
    std::string vocab_path;

    std::string prompt_text;
    std::string prompt_file;
    bool as_json = false;

    std::size_t top_k = 50;
    double nucleus_p = 0.95;
    double typical_mass = 0.95;

    std::string records_path;
    std::vector<std::string> records_paths;
    std::string csv_path;
    std::string config_path;
    bool print_config = false;
    std::size_t limit = 0;
    std::size_t workers = 1;
    std::size_t prompt_words = 32;
    std::size_t min_passage_tokens = 160;
};

ExperimentConfig config_from_options(const Options& opt) {
    ExperimentConfig cfg;
    if (!opt.config_path.empty())
        cfg = config_from_json(nlohmann::json::parse(slurp(opt.config_path)));
    if (!opt.expert_spec.empty()) cfg.expert = parse_backend_spec(opt.expert_spec);
    if (!opt.amateur_spec.empty()) cfg.amateur = parse_backend_spec(opt.amateur_spec);
    if (!opt.decoder.empty()) cfg.decoder = opt.decoder;
    cfg.top_k = opt.top_k;
    cfg.nucleus_p = opt.nucleus_p;
    cfg.typical_mass = opt.typical_mass;
    cfg.contrast.alpha = opt.alpha;
    cfg.contrast.amateur.temperature = opt.amateur_temp;
    cfg.contrast.amateur.context_window =
        opt.amateur_window > 0 ? std::optional<std::size_t>(opt.amateur_window) : std::nullopt;
    cfg.decode.max_new_tokens = opt.max_new_tokens;
    cfg.decode.beam_width = opt.beam;
    cfg.decode.seed = opt.seed;
    cfg.disable_vhead = opt.disable_vhead;
    cfg.full_prompt_amateur = opt.full_prompt_amateur;
    return cfg;
}

int cmd_train(const Options& opt) {
    const auto passages = read_passages(opt.corpus_path, corpus_format_from_name(opt.format));
    if (passages.empty()) {
        std::fprintf(stderr, "warning: %s contains no passages\n", opt.corpus_path.c_str());
        return 0;
    }
    std::string all_text;
    for (const auto& p : passages) {
        all_text += p;
        all_text += '\n';
    }
    auto [_, vocab] = tokenize_build(all_text);

    std::vector<TokenSeq> sequences;
    sequences.reserve(passages.size());
    for (const auto& p : passages) sequences.push_back(tokenize(p, vocab));

    std::vector<double> lambdas = opt.lambdas;
    if (lambdas.empty())
        lambdas.assign(static_cast<std::size_t>(opt.order), 1.0 / static_cast<double>(opt.order));

    const NGramModel model = train_ngram(sequences, opt.order, opt.k, lambdas, vocab);
    save_ngram(model, opt.out_path);
    if (!opt.vocab_out.empty()) save_vocabulary(vocab, opt.vocab_out);

    std::size_t total_tokens = 0;
    for (const auto& seq : sequences) total_tokens += seq.size();
    std::printf("trained %d-gram on %zu passages (%zu tokens, vocab %zu) -> %s\n", opt.order,
                passages.size(), total_tokens, vocab.size(), opt.out_path.c_str());
    return 0;
}

int cmd_decode(const Options& opt) {
    const ExperimentConfig cfg = config_from_options(opt);
    cfg.validate();

    std::optional<Vocabulary> vocab_storage;
    if (!opt.vocab_path.empty()) vocab_storage = load_vocabulary(opt.vocab_path);

    LoadedBackend expert = load_backend(cfg.expert, vocab_storage ? &*vocab_storage : nullptr);
    const Vocabulary& vocab = expert.get()->vocab();

    LoadedBackend amateur;
    if (cfg.uses_amateur()) {
        if (opt.amateur_spec.empty() && cfg.amateur.locator.empty() &&
            cfg.amateur.kind == "ngram")
            throw InvalidParameter("decoder '" + cfg.decoder + "' needs --amateur");
        amateur = load_backend(cfg.amateur, &vocab);
    }

    std::string text = opt.prompt_text;
    if (!opt.prompt_file.empty()) text = slurp(opt.prompt_file);
    if (text.empty()) throw InvalidParameter("decode needs --prompt or --prompt-file");

    PromptInstance prompt;
    prompt.id = "cli:0";
    prompt.prompt = tokenize(text, vocab);
    if (prompt.prompt.empty()) throw InvalidParameter("prompt tokenized to nothing");

    DecodeParams params = cfg.decode;
    const DecodeResult result =
        dispatch_decode(cfg, *expert.get(), amateur.get(), prompt, params);

    for (const auto& warning : result.warnings)
        std::fprintf(stderr, "warning: %s\n", warning.c_str());

    if (opt.as_json) {
        nlohmann::ordered_json j;
        j["prompt"] = text;
        j["continuation"] = detokenize(result.continuation, vocab);
        j["continuation_ids"] = result.continuation;
        j["objective_total"] = result.objective_total;
        nlohmann::ordered_json steps = nlohmann::ordered_json::array();
        for (const auto& s : result.per_step) {
            nlohmann::ordered_json step;
            step["token"] = s.token;
            step["score"] = s.score;
            if (s.plausible_size) step["plausible_size"] = *s.plausible_size;
            steps.push_back(step);
        }
        j["per_step"] = steps;
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("%s\n", detokenize(result.continuation, vocab).c_str());
    }
    return 0;
}

int cmd_eval(const Options& opt) {
    ExperimentConfig cfg = config_from_options(opt);

    std::optional<Vocabulary> vocab_storage;
    if (!opt.vocab_path.empty()) vocab_storage = load_vocabulary(opt.vocab_path);
    LoadedBackend expert = load_backend(cfg.expert, vocab_storage ? &*vocab_storage : nullptr);
    const Vocabulary& vocab = expert.get()->vocab();

    IngestOptions ingest_opts;
    ingest_opts.prompt_words = opt.prompt_words;
    ingest_opts.min_passage_tokens = opt.min_passage_tokens;
    auto prompts = ingest_corpus(opt.corpus_path, corpus_format_from_name(opt.format), vocab,
                                 ingest_opts);
    if (opt.limit > 0 && prompts.size() > opt.limit) prompts.resize(opt.limit);
    if (prompts.empty()) {
        std::fprintf(stderr, "warning: no usable prompts in %s\n", opt.corpus_path.c_str());
        return 0;
    }

    std::vector<std::pair<std::string, ExperimentConfig>> runs;
    if (!opt.decoder.empty() || !opt.config_path.empty()) {
        runs.emplace_back(cfg.decoder, cfg);
    } else {
        runs = default_grid(cfg);
    }

    std::vector<std::pair<std::string, std::vector<EvalRecord>>> groups;
    for (auto& [name, run_cfg] : runs) {
        run_cfg.validate();
        if (opt.print_config)
            std::printf("%s %s\n", name.c_str(), canonical_config_json(run_cfg).c_str());

        LoadedBackend amateur;
        LMBackend* amateur_ptr = nullptr;
        if (run_cfg.uses_amateur()) {
            amateur = load_backend(run_cfg.amateur, &vocab);
            amateur_ptr = amateur.get();
        }
        RunOptions run_opts;
        run_opts.workers = opt.workers;
        auto records = run_experiment(run_cfg, prompts, *expert.get(), amateur_ptr, run_opts);
        if (!opt.out_path.empty()) write_records_jsonl(records, opt.out_path);
        std::printf("%-14s digest %s: %zu records\n", name.c_str(),
                    config_digest(run_cfg).c_str(), records.size());
        groups.emplace_back(name, std::move(records));
    }

    const CompareReport report = compare_report(groups);
    std::printf("%s", report.text.c_str());
    return 0;
}

int cmd_export(const Options& opt) {
    const auto records = read_records_jsonl(opt.records_path);
    export_generations(records, opt.out_path);
    std::printf("exported %zu generations -> %s\n", records.size(), opt.out_path.c_str());
    return 0;
}

int cmd_compare(const Options& opt) {
    std::vector<EvalRecord> all;
    for (const auto& path : opt.records_paths) {
        auto records = read_records_jsonl(path);
        all.insert(all.end(), records.begin(), records.end());
    }
    // group by config digest, preserving first-seen order
    std::vector<std::pair<std::string, std::vector<EvalRecord>>> groups;
    std::map<std::string, std::size_t> index;
    for (auto& rec : all) {
        auto it = index.find(rec.config_digest);
        if (it == index.end()) {
            index.emplace(rec.config_digest, groups.size());
            groups.emplace_back(rec.config_digest, std::vector<EvalRecord>{});
            it = index.find(rec.config_digest);
        }
        groups[it->second].second.push_back(std::move(rec));
    }
    const CompareReport report = compare_report(groups);
    std::printf("%s", report.text.c_str());
    if (!opt.csv_path.empty()) {
        std::ofstream out(opt.csv_path, std::ios::binary);
        if (!out) throw IoError("cannot open " + opt.csv_path);
        out << report.csv;
        std::printf("csv -> %s\n", opt.csv_path.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contra: contrastive decoding engine"};
    app.set_version_flag("--version", contra::kEngineVersion);
    app.fallthrough();
    app.require_subcommand(1);

    Options opt;
    app.add_option("--seed", opt.seed, "global random seed");
    app.add_option("--alpha", opt.alpha, "plausibility threshold in [0,1]");
    app.add_option("--amateur-temp", opt.amateur_temp, "amateur temperature");
    app.add_option("--amateur-window", opt.amateur_window,
                   "trailing prompt tokens the amateur sees (0 = unlimited)");
    app.add_option("--beam", opt.beam, "beam width");
    app.add_option("--max-new-tokens", opt.max_new_tokens, "continuation length");
    app.add_option("--decoder", opt.decoder,
                   "greedy|beam|topk|nucleus|typical|cd|cd-sample");
    app.add_option("--expert", opt.expert_spec, "expert backend (model path, uniform, or URL)");
    app.add_option("--amateur", opt.amateur_spec, "amateur backend (model path, uniform, or URL)");
    app.add_flag("--disable-vhead", opt.disable_vhead, "drop the plausibility constraint (cd only)");
    app.add_flag("--full-prompt-amateur", opt.full_prompt_amateur,
                 "let the amateur see the whole prompt");
    app.add_option("--vocab", opt.vocab_path, "vocabulary file for uniform/http backends");
    app.add_option("--topk", opt.top_k, "k for top-k sampling");
    app.add_option("--nucleus-p", opt.nucleus_p, "p for nucleus sampling");
    app.add_option("--typical-mass", opt.typical_mass, "tau for typical sampling");

    auto* train = app.add_subcommand("train", "train an n-gram model");
    train->add_option("--corpus", opt.corpus_path, "corpus file")->required();
    train->add_option("--format", opt.format, "txt|jsonl");
    train->add_option("--order", opt.order, "n-gram order");
    train->add_option("--k", opt.k, "add-k smoothing constant");
    train->add_option("--lambda", opt.lambdas, "interpolation weights (default uniform)");
    train->add_option("--out", opt.out_path, "model output path")->required();
    train->add_option("--vocab-out", opt.vocab_out, "also write the vocabulary here");

    auto* decode = app.add_subcommand("decode", "decode one prompt");
    decode->add_option("--prompt", opt.prompt_text, "prompt text");
    decode->add_option("--prompt-file", opt.prompt_file, "read the prompt from a file");
    decode->add_flag("--json", opt.as_json, "emit the full result as JSON");

    auto* eval = app.add_subcommand("eval", "run experiments over a corpus");
    eval->add_option("--corpus", opt.corpus_path, "corpus file")->required();
    eval->add_option("--format", opt.format, "txt|jsonl");
    eval->add_option("--out", opt.out_path, "records JSONL output (appended)");
    eval->add_option("--config", opt.config_path, "experiment config JSON");
    eval->add_flag("--print-config", opt.print_config, "print canonical config JSON");
    eval->add_option("--limit", opt.limit, "use at most this many prompts");
    eval->add_option("--workers", opt.workers, "decode worker threads");
    eval->add_option("--prompt-words", opt.prompt_words, "prompt length in word tokens");
    eval->add_option("--min-passage-tokens", opt.min_passage_tokens,
                     "drop passages shorter than this");

    auto* exp = app.add_subcommand("export", "export generations JSONL from records");
    exp->add_option("--records", opt.records_path, "records JSONL")->required();
    exp->add_option("--out", opt.out_path, "generations output path")->required();

    auto* compare = app.add_subcommand("compare", "metric table across record files");
    compare->add_option("--records", opt.records_paths, "records JSONL files")->required();
    compare->add_option("--csv", opt.csv_path, "also write the table as CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(opt);
        if (decode->parsed()) return cmd_decode(opt);
        if (eval->parsed()) return cmd_eval(opt);
        if (exp->parsed()) return cmd_export(opt);
        if (compare->parsed()) return cmd_compare(opt);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
