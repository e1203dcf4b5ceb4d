#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "moelab/checkpoint.hpp"
#include "moelab/corpus.hpp"
#include "moelab/error.hpp"
#include "moelab/io.hpp"
#include "moelab/parallel.hpp"
#include "moelab/passkey.hpp"
#include "moelab/routing.hpp"
#include "moelab/tokenizer.hpp"
#include "moelab/train.hpp"

namespace moelab::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int workers = 1;
    std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c, bool with_config) {
    if (with_config) {
        sub->add_option("--config", c.config, "Key/value config file")->check(CLI::ExistingFile);
        sub->add_option("--set", c.sets, "Config override KEY=VALUE (repeatable)");
    }
    sub->add_option("--seed", c.seed, "Seed; fully determines the outputs");
    sub->add_option("--out", c.out, "Output directory");
    sub->add_option("--workers", c.workers, "Maximum parallel workers")->check(CLI::PositiveNumber);
}

fs::path require_out(const Common& c) {
    if (c.out.empty()) throw InputError("--out is required");
    fs::create_directories(c.out);
    return c.out;
}

TrainConfig resolve_config(const Common& c) {
    KeyValues kv = c.config.empty() ? KeyValues{} : KeyValues::read(c.config);
    apply_env_overrides(kv, "MOELAB_", TrainConfig::keys());
    for (const std::string& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
        kv.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (c.seed) kv.set("seed", std::to_string(*c.seed));
    return TrainConfig::from_kv(kv);
}

/// A directory, a .jsonl corpus, or any other file as a single document.
std::vector<Document> load_documents(const fs::path& path) {
    if (fs::is_directory(path) || path.extension() == ".jsonl") return read_corpus(path);
    if (!fs::exists(path)) throw InputError("no such file: " + path.string());
    return {{path.filename().string(), read_text_file(path), "", "file"}};
}

std::pair<std::string, std::string> split_named(const std::string& arg, const char* flag) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
        throw InputError(std::string(flag) + " expects NAME=PATH, got '" + arg + "'");
    }
    return {arg.substr(0, eq), arg.substr(eq + 1)};
}

BPEVocab load_vocab(const std::string& path) {
    if (path == "builtin:bytes") return BPEVocab::byte_identity();
    return BPEVocab::from_text(read_text_file(path));
}

std::string json_string(const std::string& s) {
    return nlohmann::json(s).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::string safe_name(const std::string& id) {
    std::string out;
    for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
    return out;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
    Common common;
    std::string corpus;
    std::size_t synthetic_bytes = 0;
    int log_every = 50;
};

void cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
    TrainConfig cfg = resolve_config(a.common);
    const fs::path dir = require_out(a.common);
    std::string text;
    if (!a.corpus.empty()) {
        for (const Document& d : load_documents(a.corpus)) {
            text += d.text;
            text += '\n';
        }
    } else if (a.synthetic_bytes > 0) {
        text = synthetic_grammar_text(a.synthetic_bytes, cfg.train.seed);
    } else {
        throw InputError("pretrain needs --corpus or --synthetic-bytes");
    }
    const std::vector<int> tokens = byte_tokens(text);
    if (cfg.model.vocab_size < 256) throw ConfigError("byte-level data needs model.vocab_size >= 256");

    write_file_atomic(dir / "config.txt", cfg.to_kv().to_text());
    Model model(cfg.model, cfg.train.seed, cfg.init_std);
    TrainOptions opts = cfg.train;
    opts.checkpoint_dir = dir;
    const TrainResult result = train_loop(model, tokens, opts, [&](const StepTelemetry& t) {
        if (a.log_every > 0 && (t.step == 1 || t.step % a.log_every == 0)) out << t.to_line() << '\n' << std::flush;
    });

    std::string log = StepTelemetry::header() + "\n";
    for (const StepTelemetry& t : result.telemetry) log += t.to_line() + "\n";
    write_file_atomic(dir / "telemetry.tsv", log);
    out << "final checkpoint " << result.final_checkpoint.string() << '\n';
    out << "final loss " << fixed(result.telemetry.back().loss, 6) << '\n';
}

struct DpoArgs {
    Common common;
    std::string checkpoint;
    std::string preferences;
};

void cmd_dpo(const DpoArgs& a, std::ostream& out) {
    TrainConfig cfg = resolve_config(a.common);
    const fs::path dir = require_out(a.common);
    std::ifstream in(a.preferences, std::ios::binary);
    if (!in) throw InputError("cannot open " + a.preferences);
    const auto data = read_preferences_jsonl(in);
    if (data.empty()) throw InputError("no preference examples in " + a.preferences);

    const LoadedCheckpoint loaded = load_checkpoint(a.checkpoint);
    Model policy = loaded.model;
    DpoTrainOptions opts = cfg.dpo;
    opts.checkpoint_dir = dir;
    const DpoResult result = dpo_train(policy, loaded.model, data, opts);

    std::string log = "step\tlr\tloss\tchosen_ratio\trejected_ratio\n";
    for (const DpoStepTelemetry& t : result.telemetry) log += t.to_line() + "\n";
    write_file_atomic(dir / "dpo_telemetry.tsv", log);
    out << "final checkpoint " << result.final_checkpoint.string() << '\n';
    out << "final loss " << fixed(result.telemetry.back().loss, 6) << '\n';
}

struct TraceArgs {
    Common common;
    std::string checkpoint;
    std::string corpus;
    long long max_tokens = 512;
    long long clusters = 0;
    double collapse_threshold = -1.0;
};

void cmd_trace(const TraceArgs& a, std::ostream& out) {
    const fs::path dir = require_out(a.common);
    const Model model = load_checkpoint(a.checkpoint).model;
    const auto docs = load_documents(a.corpus);
    if (docs.empty()) throw InputError("corpus is empty");
    if (a.max_tokens < 1) throw InputError("--max-tokens must be positive");
    const ModelConfig& mc = model.config();

    std::vector<RoutingTrace> traces(docs.size());
    parallel_for(docs.size(), a.common.workers, [&](size_t i) {
        std::vector<int> ids = byte_tokens(docs[i].text);
        if (ids.empty()) throw InputError("document '" + docs[i].id + "' is empty");
        if (static_cast<long long>(ids.size()) > a.max_tokens) ids.resize(static_cast<size_t>(a.max_tokens));
        auto [logits, records] = model_forward(model, ids);
        traces[i] = make_trace(docs[i].id, std::move(records), mc.top_k, mc.n_routed_experts);
    });

    std::ostringstream jsonl;
    for (const RoutingTrace& t : traces) write_trace_jsonl(jsonl, t);
    write_file_atomic(dir / "trace.jsonl", jsonl.str());

    std::vector<RoutingEmbedding> embs;
    fs::create_directories(dir / "embeddings");
    for (const RoutingTrace& t : traces) {
        embs.push_back(routing_embedding(t));
        write_file_atomic(dir / "embeddings" / (safe_name(t.sample_id) + ".emb"), embedding_to_text(embs.back()));
    }
    write_file_atomic(dir / "domain.emb", embedding_to_text(domain_embedding(embs)));

    std::optional<double> threshold;
    if (a.collapse_threshold >= 0.0) threshold = a.collapse_threshold;
    const TelemetryReport report = telemetry_report(traces, threshold);
    write_file_atomic(dir / "telemetry.txt", report.to_text());
    out << report.to_text();

    if (a.clusters > 0) {
        const ClusterResult cr = cluster_embeddings(embs, a.clusters, a.common.seed.value_or(0));
        std::string tsv = "id\tcluster\n";
        for (size_t i = 0; i < traces.size(); ++i) tsv += traces[i].sample_id + "\t" + std::to_string(cr.labels[i]) + "\n";
        write_file_atomic(dir / "clusters.tsv", tsv);
        out << "clusters written" << (cr.degenerate ? " (degenerate: identical embeddings)" : "") << '\n';
    }
}

struct SteerArgs {
    Common common;
    std::string checkpoint;
    std::string embedding;
    double strength = 1.0;
    std::string prompt;
    long long tokens = 32;
};

void cmd_steer(const SteerArgs& a, std::ostream& out) {
    const Model model = load_checkpoint(a.checkpoint).model;
    const ModelConfig& mc = model.config();
    const RoutingEmbedding emb = embedding_from_text(read_text_file(a.embedding));
    if (emb.layers() != mc.n_moe_layers() || emb.experts() != mc.n_routed_experts) {
        throw InputError("embedding is " + std::to_string(emb.layers()) + "x" + std::to_string(emb.experts()) +
                         ", model routes " + std::to_string(mc.n_moe_layers()) + "x" +
                         std::to_string(mc.n_routed_experts));
    }
    if (a.prompt.empty()) throw InputError("--prompt must not be empty");
    if (a.tokens < 0) throw InputError("--tokens must be non-negative");

    ForwardOptions opts;
    opts.steering = steering_biases(filter_embedding(emb, mc.n_routed_experts), a.strength);
    const std::vector<int> prompt = byte_tokens(a.prompt);
    const std::vector<int> generated = generate_greedy(model, prompt, a.tokens, opts);
    std::string text;
    for (int id : generated) text += static_cast<char>(id);

    std::vector<int> all = prompt;
    all.insert(all.end(), generated.begin(), generated.end());
    auto [logits, records] = model_forward(model, all, opts);
    const RoutingTrace trace = make_trace("steered", std::move(records), mc.top_k, mc.n_routed_experts);

    if (!a.common.out.empty()) {
        const fs::path dir = require_out(a.common);
        write_file_atomic(dir / "generated.txt", text);
        std::ostringstream jsonl;
        write_trace_jsonl(jsonl, trace);
        write_file_atomic(dir / "steered_trace.jsonl", jsonl.str());
    }
    out << "generated " << json_string(text) << '\n';
    const std::vector<RoutingTrace> one{trace};
    out << telemetry_report(one).to_text();
}

struct TokArgs {
    Common common;
    std::string corpus;
    int vocab_size = 512;
    std::string mode = "bytes";
    std::vector<std::string> protected_tokens;
    std::string vocab;
    std::vector<std::string> vocabs;
    std::vector<std::string> domains;
};

PretokenizeMode parse_mode(const std::string& m) {
    if (m == "bytes") return PretokenizeMode::Bytes;
    if (m == "whitespace") return PretokenizeMode::Whitespace;
    throw ConfigError("--mode must be bytes or whitespace, got '" + m + "'");
}

std::vector<std::string> texts_of(const std::vector<Document>& docs) {
    std::vector<std::string> out;
    for (const Document& d : docs) out.push_back(d.text);
    return out;
}

void cmd_tok_train(const TokArgs& a, std::ostream& out) {
    const fs::path dir = require_out(a.common);
    BpeOptions opts;
    opts.target_vocab_size = a.vocab_size;
    opts.seed = a.common.seed.value_or(0);
    opts.mode = parse_mode(a.mode);
    opts.protected_tokens = a.protected_tokens;
    const BPEVocab vocab = train_bpe(texts_of(load_documents(a.corpus)), opts);
    write_file_atomic(dir / "vocab.bpe", vocab.to_text());
    out << "vocab size " << vocab.size() << " (" << vocab.merges().size() << " merges) -> "
        << (dir / "vocab.bpe").string() << '\n';
}

void cmd_tok_score(const TokArgs& a, std::ostream& out) {
    const BPEVocab vocab = load_vocab(a.vocab);
    const DomainCorpus corpus{fs::path(a.corpus).filename().string(), texts_of(load_documents(a.corpus))};
    out << "chars_per_token " << fixed(chars_per_token(vocab, corpus), 4) << '\n';
}

void cmd_tok_compare(const TokArgs& a, std::ostream& out) {
    std::vector<std::string> names;
    std::vector<BPEVocab> vocabs;
    for (const std::string& v : a.vocabs) {
        auto [name, path] = split_named(v, "--vocab");
        names.push_back(name);
        vocabs.push_back(load_vocab(path));
    }
    std::vector<NamedVocab> named;
    for (size_t i = 0; i < vocabs.size(); ++i) named.push_back({names[i], &vocabs[i]});
    std::vector<DomainCorpus> corpora;
    for (const std::string& d : a.domains) {
        auto [name, path] = split_named(d, "--domain");
        corpora.push_back({name, texts_of(load_documents(path))});
    }
    const ComparisonTable table = compare_tokenizers(named, corpora, a.common.workers);
    if (!a.common.out.empty()) {
        const fs::path dir = require_out(a.common);
        write_file_atomic(dir / "comparison.txt", table.to_text());
        write_file_atomic(dir / "comparison.csv", table.to_csv());
    }
    out << table.to_text();
}

struct DedupArgs {
    Common common;
    std::string corpus;
    std::string mode = "minhash";
    double threshold = 0.8;
    int bands = 16;
    int num_hashes = 128;
    int shingle = 5;
    bool all_pairs = false;
};

void cmd_dedup(const DedupArgs& a, std::ostream& out) {
    if (a.mode != "exact" && a.mode != "minhash") throw ConfigError("--mode must be exact or minhash");
    DedupOptions opts;
    opts.minhash = {a.num_hashes, a.shingle, a.common.seed.value_or(0)};
    opts.threshold = a.threshold;
    opts.bands = a.bands;
    opts.all_pairs = a.all_pairs;
    opts.workers = a.common.workers;
    if (a.mode == "minhash") {
        if (!(opts.threshold > 0.0 && opts.threshold <= 1.0)) throw ConfigError("threshold must be in (0, 1]");
        if (opts.bands < 1 || opts.minhash.num_hashes % opts.bands != 0) {
            throw ConfigError("bands must divide num_hashes");
        }
    }
    const fs::path dir = require_out(a.common);
    const auto docs = load_documents(a.corpus);

    std::vector<Document> survivors;
    std::string report;
    if (a.mode == "exact") {
        survivors = exact_dedup(docs);
        report = "exact duplicates removed " + std::to_string(docs.size() - survivors.size()) + "\n";
    } else {
        DedupResult r = minhash_dedup(docs, opts);
        report = r.report();
        survivors = std::move(r.survivors);
    }
    write_file_atomic(dir / "survivors.jsonl", corpus_to_jsonl(survivors));
    write_file_atomic(dir / "report.txt", report);
    out << "kept " << survivors.size() << " of " << docs.size() << '\n';
}

struct PasskeyArgs {
    Common common;
    std::vector<std::size_t> budgets{512, 2048, 8192};
    std::size_t per_budget = 10;
    std::string vocab = "builtin:bytes";
    std::string suite;
    std::string outputs;
};

void cmd_passkey_generate(const PasskeyArgs& a, std::ostream& out) {
    const fs::path dir = require_out(a.common);
    const BPEVocab vocab = load_vocab(a.vocab);
    const auto suite = passkey_suite(a.budgets, a.per_budget, a.common.seed.value_or(0), vocab);
    write_passkey_suite(dir, suite);
    out << "wrote " << suite.size() << " cases to " << dir.string() << '\n';
}

void cmd_passkey_oracle(const PasskeyArgs& a, std::ostream& out) {
    const fs::path dir = require_out(a.common);
    write_oracle_outputs(a.suite, dir);
    out << "oracle outputs written to " << dir.string() << '\n';
}

void cmd_passkey_score(const PasskeyArgs& a, std::ostream& out) {
    const PasskeyScore s = score_passkey_outputs(a.suite, a.outputs);
    out << "accuracy " << fixed(s.accuracy(), 3) << '\n';
    out << "correct " << s.correct << " of " << s.total << " (missing " << s.missing << ")\n";
}

struct EmissionsArgs {
    double pue = 0.0, kwh = 0.0, intensity = 0.0;
};

void cmd_emissions(const EmissionsArgs& a, std::ostream& out) {
    out << fixed(co2_estimate({a.pue, a.kwh, a.intensity}), 3) << " kg\n";
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config: return kConfig;
        case ErrorKind::Input:
        case ErrorKind::Dimension: return kInput;
        case ErrorKind::Numerical: return kNumerical;
        case ErrorKind::Contract: return kInternal;
    }
    return kInternal;
}

std::string one_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Desk-scale mixture-of-experts training and analysis toolkit", "moelab"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    PretrainArgs pretrain;
    auto* s_pretrain = app.add_subcommand("pretrain", "Next-token pretraining with checkpoints and telemetry");
    add_common(s_pretrain, pretrain.common, true);
    s_pretrain->add_option("--corpus", pretrain.corpus, "Training text: file, .jsonl corpus or directory");
    s_pretrain->add_option("--synthetic-bytes", pretrain.synthetic_bytes, "Generate a synthetic grammar corpus");
    s_pretrain->add_option("--log-every", pretrain.log_every, "Print telemetry every N steps (0 = never)");

    DpoArgs dpo;
    auto* s_dpo = app.add_subcommand("dpo", "Preference tuning from a checkpoint");
    add_common(s_dpo, dpo.common, true);
    s_dpo->add_option("--checkpoint", dpo.checkpoint, "Starting and reference checkpoint")->required()->check(CLI::ExistingFile);
    s_dpo->add_option("--preferences", dpo.preferences, "JSONL with prompt/chosen/rejected")->required()->check(CLI::ExistingFile);

    TraceArgs trace;
    auto* s_trace = app.add_subcommand("trace", "Record routing traces, embeddings and telemetry");
    add_common(s_trace, trace.common, false);
    s_trace->add_option("--checkpoint", trace.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    s_trace->add_option("--corpus", trace.corpus, "Text file, .jsonl corpus or directory")->required()->check(CLI::ExistingPath);
    s_trace->add_option("--max-tokens", trace.max_tokens, "Tokens per document");
    s_trace->add_option("--clusters", trace.clusters, "Cluster the document embeddings into N groups");
    s_trace->add_option("--collapse-threshold", trace.collapse_threshold, "Collapse share threshold (default 0.1/e)");

    SteerArgs steer;
    auto* s_steer = app.add_subcommand("steer", "Generate with routing biased toward a domain embedding");
    add_common(s_steer, steer.common, false);
    s_steer->add_option("--checkpoint", steer.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    s_steer->add_option("--embedding", steer.embedding, "Domain embedding file")->required()->check(CLI::ExistingFile);
    s_steer->add_option("--strength", steer.strength, "Bias strength");
    s_steer->add_option("--prompt", steer.prompt, "Prompt text")->required();
    s_steer->add_option("--tokens", steer.tokens, "Tokens to generate");

    TokArgs tok;
    auto* s_tok = app.add_subcommand("tok", "Tokenizer training and benchmarking");
    s_tok->require_subcommand(1);
    auto* s_tok_train = s_tok->add_subcommand("train", "Train a byte-level BPE vocabulary");
    add_common(s_tok_train, tok.common, false);
    s_tok_train->add_option("--corpus", tok.corpus, "Training corpus")->required()->check(CLI::ExistingPath);
    s_tok_train->add_option("--vocab-size", tok.vocab_size, "Target vocabulary size");
    s_tok_train->add_option("--mode", tok.mode, "bytes or whitespace");
    s_tok_train->add_option("--protect", tok.protected_tokens, "String that must become one token (repeatable)");
    auto* s_tok_score = s_tok->add_subcommand("score", "Characters per token of one corpus");
    add_common(s_tok_score, tok.common, false);
    s_tok_score->add_option("--vocab", tok.vocab, "Vocab file or builtin:bytes")->required();
    s_tok_score->add_option("--corpus", tok.corpus, "Corpus")->required()->check(CLI::ExistingPath);
    auto* s_tok_compare = s_tok->add_subcommand("compare", "Characters-per-token table across domains");
    add_common(s_tok_compare, tok.common, false);
    s_tok_compare->add_option("--vocab", tok.vocabs, "NAME=PATH (repeatable; PATH may be builtin:bytes)")->required();
    s_tok_compare->add_option("--domain", tok.domains, "NAME=PATH (repeatable)")->required();

    DedupArgs dedup;
    auto* s_dedup = app.add_subcommand("dedup", "Exact or MinHash near-duplicate removal");
    add_common(s_dedup, dedup.common, false);
    s_dedup->add_option("--corpus", dedup.corpus, "Corpus")->required()->check(CLI::ExistingPath);
    s_dedup->add_option("--mode", dedup.mode, "exact or minhash");
    s_dedup->add_option("--threshold", dedup.threshold, "Estimated Jaccard threshold");
    s_dedup->add_option("--bands", dedup.bands, "LSH bands; must divide --num-hashes");
    s_dedup->add_option("--num-hashes", dedup.num_hashes, "MinHash signature length");
    s_dedup->add_option("--shingle", dedup.shingle, "Shingle size in characters");
    s_dedup->add_flag("--all-pairs", dedup.all_pairs, "Compare every pair instead of LSH candidates");

    PasskeyArgs passkey;
    auto* s_passkey = app.add_subcommand("passkey", "PassKey retrieval suite");
    s_passkey->require_subcommand(1);
    auto* s_pk_gen = s_passkey->add_subcommand("generate", "Write a suite of document/question/answer triples");
    add_common(s_pk_gen, passkey.common, false);
    s_pk_gen->add_option("--budgets", passkey.budgets, "Token budgets")->delimiter(',');
    s_pk_gen->add_option("--per-budget", passkey.per_budget, "Cases per budget");
    s_pk_gen->add_option("--vocab", passkey.vocab, "Tokenizer for budgets (vocab file or builtin:bytes)");
    auto* s_pk_oracle = s_passkey->add_subcommand("oracle", "Answer a suite with the reference extractor");
    add_common(s_pk_oracle, passkey.common, false);
    s_pk_oracle->add_option("--suite", passkey.suite, "Suite directory")->required()->check(CLI::ExistingDirectory);
    auto* s_pk_score = s_passkey->add_subcommand("score", "Score an outputs directory against a suite");
    add_common(s_pk_score, passkey.common, false);
    s_pk_score->add_option("--suite", passkey.suite, "Suite directory")->required()->check(CLI::ExistingDirectory);
    s_pk_score->add_option("--outputs", passkey.outputs, "Directory of <id>.output.txt")->required()->check(CLI::ExistingDirectory);

    EmissionsArgs emissions;
    auto* s_em = app.add_subcommand("emissions", "CO2 estimate in kilograms: pue * kWh * g/kWh / 1000");
    s_em->add_option("pue", emissions.pue, "Power usage effectiveness")->required();
    s_em->add_option("kwh", emissions.kwh, "Energy in kWh")->required();
    s_em->add_option("intensity", emissions.intensity, "Grams of CO2 per kWh")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ValidationError& e) {
        err << "error: input: " << one_line(e.what()) << '\n';
        return kInput;
    } catch (const CLI::ParseError& e) {
        err << "error: config: " << one_line(e.what()) << '\n';
        return kConfig;
    }

    try {
        if (*s_pretrain) cmd_pretrain(pretrain, out);
        else if (*s_dpo) cmd_dpo(dpo, out);
        else if (*s_trace) cmd_trace(trace, out);
        else if (*s_steer) cmd_steer(steer, out);
        else if (*s_tok_train) cmd_tok_train(tok, out);
        else if (*s_tok_score) cmd_tok_score(tok, out);
        else if (*s_tok_compare) cmd_tok_compare(tok, out);
        else if (*s_dedup) cmd_dedup(dedup, out);
        else if (*s_pk_gen) cmd_passkey_generate(passkey, out);
        else if (*s_pk_oracle) cmd_passkey_oracle(passkey, out);
        else if (*s_pk_score) cmd_passkey_score(passkey, out);
        else if (*s_em) cmd_emissions(emissions, out);
    } catch (const Error& e) {
        err << "error: " << to_string(e.kind()) << ": " << one_line(e.what()) << '\n';
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "error: input: " << one_line(e.what()) << '\n';
        return kInput;
    } catch (const std::exception& e) {
        err << "error: internal: " << one_line(e.what()) << '\n';
        return kInternal;
    }
    return kOk;
}

}  // namespace moelab::cli
