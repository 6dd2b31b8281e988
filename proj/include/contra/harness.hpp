#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "contra/backend.hpp"
#include "contra/contrast.hpp"
#include "contra/corpus.hpp"
#include "contra/decode.hpp"
#include "contra/error.hpp"
#include "contra/metrics.hpp"
#include "contra/rng.hpp"
#include "contra/version.hpp"
#include "contra/vocab.hpp"

namespace contra {

// Where a backend comes from: kind is "ngram" (locator = model file),
// "uniform" (locator unused), or "http" (locator = endpoint URL).
struct BackendSpec {
    std::string kind = "ngram";
    std::string locator;
};

// One cell of the experiment grid. The canonical JSON form below is the
// digest input, so every field that changes behavior must appear in it.
struct ExperimentConfig {
    BackendSpec expert;
    BackendSpec amateur;
    std::string decoder = "cd";  // greedy|beam|topk|nucleus|typical|cd|cd-sample
    std::size_t top_k = 50;
    double nucleus_p = 0.95;
    double typical_mass = 0.95;
    ContrastConfig contrast;
    DecodeParams decode;
    bool disable_vhead = false;
    bool full_prompt_amateur = false;

    void validate() const {
        static const std::set<std::string> known = {"greedy", "beam",    "topk",     "nucleus",
                                                    "typical", "cd",     "cd-sample"};
        if (!known.count(decoder))
            throw InvalidParameter("ExperimentConfig: unknown decoder '" + decoder + "'");
        if (disable_vhead && decoder != "cd" && decoder != "cd-sample")
            throw InvalidParameter("ExperimentConfig: disable_vhead requires a cd decoder");
        contrast.validate();
        decode.validate();
    }

    bool uses_amateur() const { return decoder == "cd" || decoder == "cd-sample"; }
};

inline nlohmann::ordered_json backend_spec_json(const BackendSpec& spec) {
    nlohmann::ordered_json j;
    j["kind"] = spec.kind;
    j["locator"] = spec.locator;
    return j;
}

// Canonical declarative form: fixed key order, every behavior-relevant field
// present. Printed by the CLI and hashed for the config digest.
inline std::string canonical_config_json(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["expert"] = backend_spec_json(cfg.expert);
    j["amateur"] = backend_spec_json(cfg.amateur);
    j["decoder"] = cfg.decoder;
    j["top_k"] = cfg.top_k;
    j["nucleus_p"] = cfg.nucleus_p;
    j["typical_mass"] = cfg.typical_mass;
    j["alpha"] = cfg.contrast.alpha;
    j["amateur_temperature"] = cfg.contrast.amateur.temperature;
    j["amateur_window"] = cfg.contrast.amateur.context_window
                              ? nlohmann::json(*cfg.contrast.amateur.context_window)
                              : nlohmann::json(nullptr);
    j["max_new_tokens"] = cfg.decode.max_new_tokens;
    j["beam_width"] = cfg.decode.beam_width;
    j["seed"] = cfg.decode.seed;
    j["eos_stops"] = cfg.decode.eos_stops;
    j["disable_vhead"] = cfg.disable_vhead;
    j["full_prompt_amateur"] = cfg.full_prompt_amateur;
    return j.dump();
}

inline std::string config_digest(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(canonical_config_json(cfg));
    return out.str();
}

// Parses the canonical form back into a config (missing keys keep defaults).
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    const auto read_spec = [&](const char* key, BackendSpec& spec) {
        if (!j.contains(key)) return;
        spec.kind = j[key].value("kind", spec.kind);
        spec.locator = j[key].value("locator", spec.locator);
    };
    read_spec("expert", cfg.expert);
    read_spec("amateur", cfg.amateur);
    cfg.decoder = j.value("decoder", cfg.decoder);
    cfg.top_k = j.value("top_k", cfg.top_k);
    cfg.nucleus_p = j.value("nucleus_p", cfg.nucleus_p);
    cfg.typical_mass = j.value("typical_mass", cfg.typical_mass);
    cfg.contrast.alpha = j.value("alpha", cfg.contrast.alpha);
    cfg.contrast.amateur.temperature =
        j.value("amateur_temperature", cfg.contrast.amateur.temperature);
    if (j.contains("amateur_window") && !j["amateur_window"].is_null())
        cfg.contrast.amateur.context_window = j["amateur_window"].get<std::size_t>();
    cfg.decode.max_new_tokens = j.value("max_new_tokens", cfg.decode.max_new_tokens);
    cfg.decode.beam_width = j.value("beam_width", cfg.decode.beam_width);
    cfg.decode.seed = j.value("seed", cfg.decode.seed);
    cfg.decode.eos_stops = j.value("eos_stops", cfg.decode.eos_stops);
    cfg.disable_vhead = j.value("disable_vhead", cfg.disable_vhead);
    cfg.full_prompt_amateur = j.value("full_prompt_amateur", cfg.full_prompt_amateur);
    return cfg;
}

// Persistence unit of the harness; append-only in the records file.
struct EvalRecord {
    std::string prompt_id;
    std::string config_digest;
    std::string prompt_text;
    std::string continuation_text;
    std::string reference_text;
    TokenSeq prompt_ids;
    TokenSeq continuation_ids;
    MetricsReport metrics;
    double wall_ms = 0.0;
    std::string engine_version = kEngineVersion;
    std::uint64_t seed = 0;
};

struct RunOptions {
    std::size_t workers = 1;
};

// Runs the configured decoder for one prompt (wrapping the amateur when the
// decoder contrasts).
inline DecodeResult dispatch_decode(const ExperimentConfig& cfg, const LMBackend& expert,
                                    LMBackend* amateur_base, const PromptInstance& prompt,
                                    const DecodeParams& params) {
    if (cfg.decoder == "greedy") return greedy(expert, prompt.prompt, params);
    if (cfg.decoder == "beam") return beam_search(expert, prompt.prompt, params);
    if (cfg.decoder == "topk") return top_k_sample(expert, prompt.prompt, cfg.top_k, params);
    if (cfg.decoder == "nucleus")
        return nucleus_sample(expert, prompt.prompt, cfg.nucleus_p, params);
    if (cfg.decoder == "typical")
        return typical_sample(expert, prompt.prompt, cfg.typical_mass, params);

    if (!amateur_base)
        throw InvalidParameter("run_experiment: decoder '" + cfg.decoder +
                               "' needs an amateur backend");
    AmateurConfig acfg = cfg.contrast.amateur;
    if (cfg.full_prompt_amateur) acfg.context_window = std::nullopt;
    WeakenedAmateur amateur(*amateur_base, acfg, prompt.prompt.size());
    if (cfg.decoder == "cd")
        return cd_search(expert, amateur, prompt.prompt, cfg.contrast, params, cfg.disable_vhead);
    return cd_sample(expert, amateur, prompt.prompt, cfg.contrast, params, cfg.disable_vhead);
}

// Decodes every prompt with the configured decoder and scores the results.
// Per-prompt RNG streams derive from (config seed, prompt id), so the worker
// count never changes any output. Perplexity is scored under the expert.
inline std::vector<EvalRecord> run_experiment(const ExperimentConfig& cfg,
                                              const std::vector<PromptInstance>& prompts,
                                              const LMBackend& expert, LMBackend* amateur_base,
                                              const RunOptions& opts = {}) {
    cfg.validate();
    if (cfg.uses_amateur()) {
        if (!amateur_base)
            throw InvalidParameter("run_experiment: cd decoders need an amateur backend");
        if (expert.vocab().size() != amateur_base->vocab().size())
            throw ContractViolation("run_experiment: expert/amateur vocabulary size mismatch");
    }

    const std::string digest = config_digest(cfg);
    const BagOfWordsEmbedder embedder(expert.vocab().size());
    std::vector<EvalRecord> records(prompts.size());

    // Dynamic amateurs are single-owner; everything else may fan out.
    std::size_t workers = std::max<std::size_t>(opts.workers, 1);
    if (cfg.uses_amateur() && amateur_base->is_dynamic()) workers = 1;
    workers = std::min(workers, prompts.size() ? prompts.size() : std::size_t{1});

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string failure;
    std::mutex failure_mutex;

    const auto run_one = [&](std::size_t i) {
        const PromptInstance& prompt = prompts[i];
        DecodeParams params = cfg.decode;
        params.seed = stream_seed(cfg.decode.seed, prompt.id);
        const auto t0 = std::chrono::steady_clock::now();
        const DecodeResult decoded =
            dispatch_decode(cfg, expert, amateur_base, prompt, params);
        const auto t1 = std::chrono::steady_clock::now();

        EvalRecord rec;
        rec.prompt_id = prompt.id;
        rec.config_digest = digest;
        rec.prompt_ids = prompt.prompt;
        rec.continuation_ids = decoded.continuation;
        rec.prompt_text = detokenize(prompt.prompt, expert.vocab());
        rec.continuation_text = detokenize(decoded.continuation, expert.vocab());
        rec.reference_text = detokenize(prompt.reference, expert.vocab());
        rec.metrics = compute_metrics(prompt.prompt, decoded.continuation, embedder, &expert);
        rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        rec.seed = cfg.decode.seed;
        records[i] = std::move(rec);
    };

    if (workers <= 1) {
        for (std::size_t i = 0; i < prompts.size(); ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                while (true) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= prompts.size() || failed.load()) return;
                    try {
                        run_one(i);
                    } catch (const std::exception& e) {
                        std::lock_guard<std::mutex> lock(failure_mutex);
                        failed.store(true);
                        if (failure.empty()) failure = e.what();
                        return;
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        if (failed.load()) throw Error("run_experiment: " + failure);
    }
    return records;
}

// ---- record persistence (JSONL, append-only) --------------------------------

inline nlohmann::ordered_json record_to_json(const EvalRecord& rec) {
    nlohmann::ordered_json j;
    j["id"] = rec.prompt_id;
    j["config_digest"] = rec.config_digest;
    j["seed"] = rec.seed;
    j["engine_version"] = rec.engine_version;
    j["wall_ms"] = rec.wall_ms;
    j["prompt"] = rec.prompt_text;
    j["prompt_ids"] = rec.prompt_ids;
    j["generation"] = rec.continuation_text;
    j["generation_ids"] = rec.continuation_ids;
    j["reference"] = rec.reference_text;
    nlohmann::ordered_json m;
    m["rep2"] = rec.metrics.rep2;
    m["rep3"] = rec.metrics.rep3;
    m["rep4"] = rec.metrics.rep4;
    m["diversity"] = rec.metrics.diversity;
    m["coherence"] = rec.metrics.coherence;
    m["ppl"] = rec.metrics.ppl ? nlohmann::json(*rec.metrics.ppl) : nlohmann::json(nullptr);
    j["metrics"] = m;
    return j;
}

inline EvalRecord record_from_json(const nlohmann::json& j) {
    EvalRecord rec;
    rec.prompt_id = j.at("id").get<std::string>();
    rec.config_digest = j.at("config_digest").get<std::string>();
    rec.seed = j.at("seed").get<std::uint64_t>();
    rec.engine_version = j.at("engine_version").get<std::string>();
    rec.wall_ms = j.at("wall_ms").get<double>();
    rec.prompt_text = j.at("prompt").get<std::string>();
    rec.prompt_ids = j.at("prompt_ids").get<TokenSeq>();
    rec.continuation_text = j.at("generation").get<std::string>();
    rec.continuation_ids = j.at("generation_ids").get<TokenSeq>();
    rec.reference_text = j.at("reference").get<std::string>();
    const auto& m = j.at("metrics");
    rec.metrics.rep2 = m.at("rep2").get<double>();
    rec.metrics.rep3 = m.at("rep3").get<double>();
    rec.metrics.rep4 = m.at("rep4").get<double>();
    rec.metrics.diversity = m.at("diversity").get<double>();
    rec.metrics.coherence = m.at("coherence").get<double>();
    if (!m.at("ppl").is_null()) rec.metrics.ppl = m.at("ppl").get<double>();
    return rec;
}

inline void write_records_jsonl(const std::vector<EvalRecord>& records, const std::string& path,
                                bool append = true) {
    std::ofstream out(path, append ? std::ios::binary | std::ios::app : std::ios::binary);
    if (!out) throw IoError("write_records_jsonl: cannot open " + path);
    for (const auto& rec : records) out << record_to_json(rec).dump() << '\n';
    if (!out) throw IoError("write_records_jsonl: write failed for " + path);
}

inline std::vector<EvalRecord> read_records_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_records_jsonl: cannot open " + path);
    std::vector<EvalRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("read_records_jsonl: " + path + ":" + std::to_string(lineno) + ": " +
                          e.what());
        }
    }
    return records;
}

// Generation export for external reference-based scoring: one object per
// record, stable key order, UTF-8 preserved byte for byte.
inline void export_generations(const std::vector<EvalRecord>& records, const std::string& path) {
    if (records.empty())
        throw InvalidParameter("export_generations: no records to export");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("export_generations: cannot open " + path);
    for (const auto& rec : records) {
        nlohmann::ordered_json j;
        j["id"] = rec.prompt_id;
        j["prompt"] = rec.prompt_text;
        j["generation"] = rec.continuation_text;
        j["reference"] = rec.reference_text;
        j["config_digest"] = rec.config_digest;
        j["seed"] = rec.seed;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("export_generations: write failed for " + path);
}

// ---- comparison report -------------------------------------------------------

struct MetricMeans {
    double rep2 = 0.0, rep3 = 0.0, rep4 = 0.0;
    double diversity = 0.0, coherence = 0.0;
    std::optional<double> ppl;
};

inline MetricMeans mean_metrics(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw ComparisonError("mean_metrics: no records");
    MetricMeans means;
    double ppl_sum = 0.0;
    std::size_t ppl_count = 0;
    for (const auto& rec : records) {
        means.rep2 += rec.metrics.rep2;
        means.rep3 += rec.metrics.rep3;
        means.rep4 += rec.metrics.rep4;
        means.diversity += rec.metrics.diversity;
        means.coherence += rec.metrics.coherence;
        if (rec.metrics.ppl) {
            ppl_sum += *rec.metrics.ppl;
            ++ppl_count;
        }
    }
    const double n = static_cast<double>(records.size());
    means.rep2 /= n;
    means.rep3 /= n;
    means.rep4 /= n;
    means.diversity /= n;
    means.coherence /= n;
    if (ppl_count == records.size()) means.ppl = ppl_sum / n;
    return means;
}

struct CompareReport {
    std::string text;
    std::string csv;
};

// Corpus-mean table over record groups (one group per config). All groups
// must cover the identical prompt set. Best value per column is starred when
// there is an actual comparison (two or more rows); the mauve column is
// emitted as "external" since that metric is computed by outside tooling.
inline CompareReport compare_report(
    const std::vector<std::pair<std::string, std::vector<EvalRecord>>>& groups) {
    if (groups.empty()) throw ComparisonError("compare_report: no record groups");
    std::vector<std::string> base_ids;
    for (const auto& rec : groups.front().second) base_ids.push_back(rec.prompt_id);
    std::sort(base_ids.begin(), base_ids.end());
    for (const auto& [label, records] : groups) {
        std::vector<std::string> ids;
        for (const auto& rec : records) ids.push_back(rec.prompt_id);
        std::sort(ids.begin(), ids.end());
        if (ids != base_ids)
            throw ComparisonError("compare_report: prompt sets differ between '" +
                                  groups.front().first + "' and '" + label + "'");
    }

    std::vector<MetricMeans> means;
    means.reserve(groups.size());
    for (const auto& [label, records] : groups) means.push_back(mean_metrics(records));

    // column direction: rep-n and ppl lower is better, div and coh higher
    const auto best_index = [&](auto getter, bool lower_better) -> std::size_t {
        std::size_t best = 0;
        for (std::size_t i = 1; i < means.size(); ++i) {
            const double a = getter(means[i]);
            const double b = getter(means[best]);
            if (lower_better ? a < b : a > b) best = i;
        }
        return best;
    };
    const auto rep2_of = [](const MetricMeans& m) { return m.rep2; };
    const auto rep3_of = [](const MetricMeans& m) { return m.rep3; };
    const auto rep4_of = [](const MetricMeans& m) { return m.rep4; };
    const auto div_of = [](const MetricMeans& m) { return m.diversity; };
    const auto coh_of = [](const MetricMeans& m) { return m.coherence; };
    const auto ppl_of = [](const MetricMeans& m) { return m.ppl.value_or(0.0); };

    const bool mark = groups.size() >= 2;
    const std::size_t b_rep2 = best_index(rep2_of, true), b_rep3 = best_index(rep3_of, true),
                      b_rep4 = best_index(rep4_of, true), b_div = best_index(div_of, false),
                      b_coh = best_index(coh_of, false), b_ppl = best_index(ppl_of, true);

    const auto fmt = [](double v) {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4) << v;
        return os.str();
    };
    const auto cell = [&](double v, bool starred) {
        return fmt(v) + (mark && starred ? "*" : "");
    };

    std::ostringstream text, csv;
    std::size_t label_width = 6;
    for (const auto& [label, records] : groups) label_width = std::max(label_width, label.size());
    text << std::left << std::setw(static_cast<int>(label_width + 2)) << "config";
    for (const char* col : {"rep2", "rep3", "rep4", "div", "mauve", "coh", "ppl"})
        text << std::setw(12) << col;
    text << '\n';
    csv << "config,rep2,rep3,rep4,div,mauve,coh,ppl\n";

    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& m = means[i];
        const std::string ppl_cell =
            m.ppl ? cell(*m.ppl, i == b_ppl) : std::string("n/a");
        text << std::left << std::setw(static_cast<int>(label_width + 2)) << groups[i].first
             << std::setw(12) << cell(m.rep2, i == b_rep2) << std::setw(12)
             << cell(m.rep3, i == b_rep3) << std::setw(12) << cell(m.rep4, i == b_rep4)
             << std::setw(12) << cell(m.diversity, i == b_div) << std::setw(12) << "external"
             << std::setw(12) << cell(m.coherence, i == b_coh) << std::setw(12) << ppl_cell
             << '\n';
        csv << groups[i].first << ',' << fmt(m.rep2) << ',' << fmt(m.rep3) << ',' << fmt(m.rep4)
            << ',' << fmt(m.diversity) << ",external," << fmt(m.coherence) << ','
            << (m.ppl ? fmt(*m.ppl) : std::string("n/a")) << '\n';
    }
    return {text.str(), csv.str()};
}

// The default experiment grid: greedy, beam(5), top-k(50), nucleus(0.95),
// typical(0.95), cd at amateur temperatures 0.5 and 1.0 with a one-token
// amateur window, and cd-sample.
inline std::vector<std::pair<std::string, ExperimentConfig>> default_grid(
    const ExperimentConfig& base) {
    std::vector<std::pair<std::string, ExperimentConfig>> grid;
    const auto push = [&](const std::string& name, const std::string& decoder, double tau) {
        ExperimentConfig cfg = base;
        cfg.decoder = decoder;
        cfg.contrast.amateur.temperature = tau;
        cfg.contrast.amateur.context_window = 1;
        grid.emplace_back(name, cfg);
    };
    {
        ExperimentConfig cfg = base;
        cfg.decoder = "greedy";
        grid.emplace_back("greedy", cfg);
        cfg.decoder = "beam";
        grid.emplace_back("beam-5", cfg);
        cfg.decoder = "topk";
        grid.emplace_back("topk-50", cfg);
        cfg.decoder = "nucleus";
        grid.emplace_back("nucleus-0.95", cfg);
        cfg.decoder = "typical";
        grid.emplace_back("typical-0.95", cfg);
    }
    push("cd-tau0.5", "cd", 0.5);
    push("cd-tau1.0", "cd", 1.0);
    push("cd-sample", "cd-sample", 1.0);
    return grid;
}

}  // namespace contra
