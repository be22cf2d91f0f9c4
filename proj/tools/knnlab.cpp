// knnlab: build datastores and indexes, train heads, evaluate and sweep
// interpolated language-model predictors on context-dump files.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>

#include "knnlab/ann.hpp"
#include "knnlab/eval.hpp"
#include "knnlab/head.hpp"
#include "knnlab/io.hpp"
#include "knnlab/store.hpp"
#include "knnlab/threads.hpp"
#include "knnlab/train.hpp"

using nlohmann::json;
using namespace knnlab;

namespace {

namespace fs = std::filesystem;

// ---- small parsers ----

Metric parse_metric(const std::string& s) {
    if (s == "l2") return Metric::L2;
    if (s == "ip") return Metric::IP;
    throw ConfigError("unknown metric: " + s + " (expected l2|ip)");
}

View parse_view(const std::string& s) {
    if (s == "att") return View::Att;
    if (s == "ffn") return View::Ffn;
    throw ConfigError("unknown view: " + s + " (expected att|ffn)");
}

Source parse_source(const std::string& s) {
    if (s == "exact") return Source::Exact;
    if (s == "approx") return Source::Approx;
    throw ConfigError("unknown source: " + s + " (expected exact|approx)");
}

Dtype parse_dtype(const std::string& s) {
    if (s == "f32") return Dtype::F32;
    if (s == "f16") return Dtype::F16;
    throw ConfigError("unknown precision: " + s + " (expected f32|f16)");
}

// Grid syntax: "start:stop:step" (inclusive of both ends within 1e-9) or a
// comma-separated value list.
std::vector<double> parse_grid(const std::string& spec) {
    std::vector<double> grid;
    if (spec.find(':') != std::string::npos) {
        double start, stop, step;
        char c1, c2;
        std::istringstream in(spec);
        if (!(in >> start >> c1 >> stop >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0)
            throw ConfigError("bad grid spec: " + spec);
        for (int i = 0;; ++i) {
            double v = start + double(i) * step;
            if (v > stop + 1e-9) break;
            grid.push_back(v);
        }
    } else {
        std::istringstream in(spec);
        std::string item;
        while (std::getline(in, item, ',')) {
            if (item.empty()) continue;
            grid.push_back(std::stod(item));
        }
    }
    if (grid.empty()) throw ConfigError("empty grid: " + spec);
    return grid;
}

// ---- config file + flag precedence ----
// Flags win over config keys; config keys win over defaults. Each option
// registers an applier that pulls the config value only when the flag was
// not given on the command line.

struct Binder {
    CLI::App* cmd;
    json cfg = json::object();
    std::vector<std::function<void(const json&)>> appliers;
    std::string config_path;

    explicit Binder(CLI::App* app) : cmd(app) {
        cmd->add_option("--config", config_path, "JSON config file; flags override its keys");
    }

    template <class T>
    CLI::Option* bind(const std::string& flag, const std::string& key, T& var,
                      const std::string& help) {
        CLI::Option* opt = cmd->add_option(flag, var, help);
        appliers.push_back([opt, key, &var](const json& j) {
            if (opt->count() == 0 && j.contains(key)) var = j.at(key).get<T>();
        });
        return opt;
    }

    CLI::Option* bind_flag(const std::string& flag, const std::string& key, bool& var,
                           const std::string& help) {
        CLI::Option* opt = cmd->add_flag(flag, var, help);
        appliers.push_back([opt, key, &var](const json& j) {
            if (opt->count() == 0 && j.contains(key)) var = j.at(key).get<bool>();
        });
        return opt;
    }

    // Called from the subcommand callback, before any work.
    void resolve() {
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw FormatError("cannot open config file: " + config_path);
            try {
                f >> cfg;
            } catch (const std::exception& e) {
                throw FormatError("bad JSON in " + config_path + ": " + e.what());
            }
        }
        for (auto& apply : appliers) apply(cfg);
    }
};

// ---- manifest ----

struct Manifest {
    json j;
    Manifest(const std::string& command, const json& settings) {
        j["command"] = command;
        j["settings"] = settings;
        j["inputs"] = json::object();
        j["outputs"] = json::object();
    }
    void input(const std::string& path) {
        if (!path.empty()) j["inputs"][path] = fnv_hex(path);
    }
    void output(const std::string& path) { j["outputs"][path] = fnv_hex(path); }
    static std::string fnv_hex(const std::string& path) {
        char buf[20];
        std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)fnv1a64_file(path));
        return buf;
    }
    void write(const std::string& out_dir) const {
        std::ofstream f(fs::path(out_dir) / "manifest.json");
        if (!f) throw FormatError("cannot write manifest in " + out_dir);
        f << j.dump(2) << '\n';
    }
};

std::string out_file(const std::string& out_dir, const std::string& name) {
    fs::create_directories(out_dir);
    return (fs::path(out_dir) / name).string();
}

// ---- shared experiment state ----

struct Experiment {
    // resolved settings
    std::string model_path, vocab_path, train_path, eval_path;
    std::string dstore_path, index_path, head_path;
    std::string kind = "knn", metric = "l2", view = "att";
    std::string mask_source = "exact", score_source = "exact";
    uint32_t k = 1024, n_probe = 32;
    double tau = 1.0, lambda = 0.25, dev_fraction = 0.5;
    uint64_t seed = 7;

    // loaded objects
    store::OutputEmbedding model;
    store::ContextDump eval_dump;
    std::optional<store::Datastore> ds;
    std::optional<ann::AnnIndex> index;
    std::optional<head::LearnedHead> learned;
    std::optional<head::MoSHead> mos;

    void register_options(Binder& b) {
        b.bind("--model", "model", model_path, "output-embedding file (KNLMWM01)");
        b.bind("--vocab", "vocab", vocab_path, "vocabulary file");
        b.bind("--train-dump", "train_dump", train_path, "training context dump");
        b.bind("--eval-dump", "eval_dump", eval_path, "evaluation context dump");
        b.bind("--dstore", "datastore", dstore_path, "datastore file (KNLMDS01)");
        b.bind("--index", "index", index_path, "ANN index file (KNLMIX01)");
        b.bind("--head-file", "head_file", head_path, "trained head file (KNLMHD01)");
        b.bind("--kind", "kind", kind,
               "head kind: knn|full-knn|learned|mos|cluster|sparsify|lm-embedding-as-datastore");
        b.bind("--metric", "metric", metric, "similarity: l2|ip");
        b.bind("--view", "view", view, "head context view: att|ffn");
        b.bind("--mask-source", "mask_source", mask_source, "neighbor set source: exact|approx");
        b.bind("--score-source", "score_source", score_source, "neighbor scores: exact|approx");
        b.bind("--k", "k", k, "neighbors kept by mask-to-k");
        b.bind("--n-probe", "n_probe", n_probe, "probed inverted lists (approx mask)");
        b.bind("--tau", "tau", tau, "softmax temperature of the head");
        b.bind("--lambda", "lambda", lambda, "interpolation weight");
        b.bind("--dev-frac", "dev_fraction", dev_fraction, "prefix fraction used as dev split");
        b.bind("--seed", "seed", seed, "seed for every stochastic step");
    }

    head::HeadConfig head_config() const {
        head::HeadConfig cfg;
        cfg.kind = head::head_kind_from_name(kind);
        cfg.metric = parse_metric(metric);
        cfg.view = parse_view(view);
        cfg.mask_source = parse_source(mask_source);
        cfg.score_source = parse_source(score_source);
        cfg.k = k;
        cfg.n_probe = n_probe;
        cfg.tau = tau;
        cfg.lambda = lambda;
        return cfg;
    }

    json settings_echo() const {
        return json{{"model", model_path},       {"eval_dump", eval_path},
                    {"datastore", dstore_path},  {"index", index_path},
                    {"head_file", head_path},    {"kind", kind},
                    {"metric", metric},          {"view", view},
                    {"mask_source", mask_source},{"score_source", score_source},
                    {"k", k},                    {"n_probe", n_probe},
                    {"tau", tau},                {"lambda", lambda},
                    {"dev_fraction", dev_fraction}, {"seed", seed}};
    }

    void load(bool need_eval = true) {
        if (model_path.empty()) throw ConfigError("missing required setting: model");
        model = store::open_embedding(model_path);
        if (need_eval) {
            if (eval_path.empty()) throw ConfigError("missing required setting: eval_dump");
            eval_dump = store::open_dump(eval_path);
        }
        if (!dstore_path.empty()) ds = store::open_datastore(dstore_path);
        if (!index_path.empty()) index = ann::open_index(index_path);
        if (!head_path.empty()) {
            if (kind == "mos") {
                mos = head::open_mos_head(head_path);
                mos->shared_embedding = &model;
            } else {
                learned = head::open_head(head_path);
            }
        }
    }

    head::ModelObjects objects() const {
        head::ModelObjects o;
        if (ds) o.datastore = &*ds;
        if (index) o.index = &*index;
        if (learned) o.learned = &*learned;
        if (mos) o.mos = &*mos;
        return o;
    }

    void note_inputs(Manifest& m) const {
        m.input(model_path);
        m.input(eval_path);
        m.input(train_path);
        m.input(dstore_path);
        m.input(index_path);
        m.input(head_path);
    }
};

unsigned default_threads() {
    if (const char* env = std::getenv("KNNLAB_THREADS")) {
        long v = std::atol(env);
        if (v > 0) return unsigned(v);
    }
    return 0;
}

// ---- subcommands ----

int cmd_exit_code = 0;

void add_gen_synth(CLI::App& app) {
    auto* cmd = app.add_subcommand("gen-synth", "generate a synthetic two-view corpus");
    auto b = std::make_shared<Binder>(cmd);
    auto spec = std::make_shared<store::SyntheticSpec>();
    auto out_dir = std::make_shared<std::string>(".");
    auto threads = std::make_shared<unsigned>(default_threads());
    b->bind("--latent", "latent", spec->latent_dim, "latent width (> d)");
    b->bind("--d", "d", spec->dim, "context vector width");
    b->bind("--v", "v", spec->vocab, "vocabulary size");
    b->bind("--train-tokens", "train_tokens", spec->train_tokens, "train split size");
    b->bind("--eval-tokens", "eval_tokens", spec->eval_tokens, "eval split size");
    b->bind("--noise-att", "noise_att", spec->att_noise, "att view noise scale");
    b->bind("--noise-ffn", "noise_ffn", spec->ffn_noise, "ffn view noise scale");
    b->bind("--seed", "seed", spec->seed, "generator seed");
    b->bind("--out", "out_dir", *out_dir, "output directory");
    b->bind("--threads", "threads", *threads, "worker cap (0 = hardware)");
    cmd->callback([b, spec, out_dir, threads] {
        b->resolve();
        threads::set_max_threads(*threads);
        auto data = store::generate_synthetic(*spec);
        auto model_p = out_file(*out_dir, "model.wm");
        auto train_p = out_file(*out_dir, "train.cd");
        auto eval_p = out_file(*out_dir, "eval.cd");
        auto vocab_p = out_file(*out_dir, "vocab.txt");
        store::write_embedding(data.model, model_p);
        store::write_dump(data.train, train_p);
        store::write_dump(data.eval, eval_p);
        store::write_vocabulary(data.vocab, vocab_p);
        Manifest m("gen-synth", json{{"latent", spec->latent_dim},
                                     {"d", spec->dim},
                                     {"v", spec->vocab},
                                     {"train_tokens", spec->train_tokens},
                                     {"eval_tokens", spec->eval_tokens},
                                     {"noise_att", spec->att_noise},
                                     {"noise_ffn", spec->ffn_noise},
                                     {"seed", spec->seed}});
        m.output(model_p);
        m.output(train_p);
        m.output(eval_p);
        m.output(vocab_p);
        m.write(*out_dir);
        std::cout << "gen-synth: wrote " << data.train.size() << " train / " << data.eval.size()
                  << " eval tokens (d=" << spec->dim << ", v=" << spec->vocab << ") to " << *out_dir
                  << "\n";
    });
}

void add_build_dstore(CLI::App& app) {
    auto* cmd = app.add_subcommand("build-dstore", "build a datastore from a context dump");
    auto b = std::make_shared<Binder>(cmd);
    auto dump_p = std::make_shared<std::string>();
    auto view = std::make_shared<std::string>("att");
    auto precision = std::make_shared<std::string>("f16");
    auto out = std::make_shared<std::string>("dstore.ks");
    b->bind("--dump", "dump", *dump_p, "context dump file")->required();
    b->bind("--view", "view", *view, "key view: att|ffn");
    b->bind("--precision", "precision", *precision, "key storage: f16|f32");
    b->bind("--out", "out", *out, "output datastore file");
    cmd->callback([b, dump_p, view, precision, out] {
        b->resolve();
        auto dump = store::open_dump(*dump_p);
        auto ds = store::build_datastore(dump, parse_view(*view), parse_dtype(*precision));
        store::write_datastore(ds, *out);
        Manifest m("build-dstore",
                   json{{"dump", *dump_p}, {"view", *view}, {"precision", *precision}});
        m.input(*dump_p);
        m.output(*out);
        m.write(fs::path(*out).parent_path().empty() ? "." : fs::path(*out).parent_path().string());
        std::cout << "build-dstore: " << ds.size() << " entries, dim " << ds.dim() << ", "
                  << dtype_name(ds.dtype()) << " -> " << *out << "\n";
    });
}

void add_subsample(CLI::App& app) {
    auto* cmd = app.add_subcommand("subsample", "uniformly subsample a datastore");
    auto b = std::make_shared<Binder>(cmd);
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>("subsampled.ks");
    auto fraction = std::make_shared<double>(0.5);
    auto seed = std::make_shared<uint64_t>(7);
    b->bind("--dstore", "datastore", *in, "input datastore")->required();
    b->bind("--fraction", "fraction", *fraction, "kept fraction in (0, 1]");
    b->bind("--seed", "seed", *seed, "selection seed");
    b->bind("--out", "out", *out, "output datastore file");
    cmd->callback([b, in, out, fraction, seed] {
        b->resolve();
        auto ds = store::open_datastore(*in);
        auto sub = store::subsample(ds, *fraction, *seed);
        store::write_datastore(sub, *out);
        Manifest m("subsample", json{{"fraction", *fraction}, {"seed", *seed}});
        m.input(*in);
        m.output(*out);
        m.write(fs::path(*out).parent_path().empty() ? "." : fs::path(*out).parent_path().string());
        std::cout << "subsample: kept " << sub.size() << " of " << ds.size() << " entries -> "
                  << *out << "\n";
    });
}

void add_build_index(CLI::App& app) {
    auto* cmd = app.add_subcommand("build-index", "train an IVF(+PQ) index over a datastore");
    auto b = std::make_shared<Binder>(cmd);
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>("index.ix");
    auto n_list = std::make_shared<uint32_t>(1024);
    auto pq_m = std::make_shared<uint32_t>(0);
    auto pq_nbits = std::make_shared<uint32_t>(8);
    auto iters = std::make_shared<uint32_t>(10);
    auto seed = std::make_shared<uint64_t>(7);
    auto threads = std::make_shared<unsigned>(default_threads());
    b->bind("--dstore", "datastore", *in, "input datastore")->required();
    b->bind("--n-list", "n_list", *n_list, "coarse centroid count");
    b->bind("--pq-m", "pq_m", *pq_m, "PQ sub-quantizers (0 disables PQ; d/4 is a typical choice)");
    b->bind("--pq-nbits", "pq_nbits", *pq_nbits, "bits per PQ code");
    b->bind("--kmeans-iters", "kmeans_iters", *iters, "Lloyd iterations");
    b->bind("--seed", "seed", *seed, "build seed");
    b->bind("--threads", "threads", *threads, "worker cap (0 = hardware)");
    b->bind("--out", "out", *out, "output index file");
    cmd->callback([b, in, out, n_list, pq_m, pq_nbits, iters, seed, threads] {
        b->resolve();
        threads::set_max_threads(*threads);
        auto ds = store::open_datastore(*in);
        auto index =
            ann::train_index(ds, *n_list, *pq_m, uint8_t(*pq_nbits), *seed, *iters);
        ann::write_index(index, *out);
        Manifest m("build-index", json{{"n_list", *n_list},
                                       {"pq_m", *pq_m},
                                       {"pq_nbits", *pq_nbits},
                                       {"kmeans_iters", *iters},
                                       {"seed", *seed}});
        m.input(*in);
        m.output(*out);
        m.write(fs::path(*out).parent_path().empty() ? "." : fs::path(*out).parent_path().string());
        std::cout << "build-index: n_list=" << *n_list << " pq_m=" << *pq_m << " over "
                  << ds.size() << " rows -> " << *out << "\n";
    });
}

void add_search(CLI::App& app) {
    auto* cmd = app.add_subcommand("search", "query a datastore for nearest neighbors");
    auto b = std::make_shared<Binder>(cmd);
    auto dstore_p = std::make_shared<std::string>();
    auto index_p = std::make_shared<std::string>();
    auto dump_p = std::make_shared<std::string>();
    auto view = std::make_shared<std::string>("att");
    auto metric = std::make_shared<std::string>("l2");
    auto token = std::make_shared<uint64_t>(0);
    auto k = std::make_shared<uint32_t>(8);
    auto n_probe = std::make_shared<uint32_t>(32);
    auto shard_size = std::make_shared<uint64_t>(0);
    auto rescore_flag = std::make_shared<bool>(false);
    auto out_dir = std::make_shared<std::string>();
    b->bind("--dstore", "datastore", *dstore_p, "datastore file")->required();
    b->bind("--index", "index", *index_p, "optional index file (approx search)");
    b->bind("--dump", "dump", *dump_p, "context dump holding the query")->required();
    b->bind("--view", "view", *view, "query view: att|ffn");
    b->bind("--metric", "metric", *metric, "similarity: l2|ip");
    b->bind("--token", "token", *token, "record index of the query inside the dump");
    b->bind("--k", "k", *k, "neighbors to return");
    b->bind("--n-probe", "n_probe", *n_probe, "probed lists (with --index)");
    b->bind("--shard-size", "shard_size", *shard_size, "exact-search shard size (0 = one shard)");
    b->bind_flag("--rescore", "rescore", *rescore_flag, "recompute exact scores after approx search");
    b->bind("--out", "out_dir", *out_dir, "optional directory for neighbors.csv + manifest");
    cmd->callback([=] {
        b->resolve();
        auto ds = store::open_datastore(*dstore_p);
        auto dump = store::open_dump(*dump_p);
        if (*token >= dump.size()) throw InputError("token index beyond dump size");
        auto q = dump.view_row_f64(parse_view(*view), *token);
        ann::NeighborSet ns;
        if (index_p->empty()) {
            ns = ann::exact_search(ds, q, *k, parse_metric(*metric), *shard_size);
        } else {
            auto index = ann::open_index(*index_p);
            ns = ann::approx_search(index, ds, q, *k, *n_probe, parse_metric(*metric));
            if (*rescore_flag) ns = ann::rescore(ds, q, ns, parse_metric(*metric));
        }
        std::cout << "row\tscore\tvalue\n";
        std::cout.precision(10);
        for (const auto& e : ns.entries)
            std::cout << e.row << '\t' << e.score << '\t' << ds.values()[e.row] << '\n';
        std::cout << "search: " << ns.size() << " neighbors (mask=" << source_name(ns.mask_source)
                  << ", score=" << source_name(ns.score_source) << ")\n";
        if (!out_dir->empty()) {
            auto csv_p = out_file(*out_dir, "neighbors.csv");
            std::ofstream f(csv_p);
            f.precision(17);
            f << "row,score,value\n";
            for (const auto& e : ns.entries)
                f << e.row << ',' << e.score << ',' << ds.values()[e.row] << '\n';
            f.close();
            Manifest m("search", json{{"datastore", *dstore_p},
                                      {"index", *index_p},
                                      {"dump", *dump_p},
                                      {"view", *view},
                                      {"metric", *metric},
                                      {"token", *token},
                                      {"k", *k},
                                      {"n_probe", *n_probe},
                                      {"shard_size", *shard_size},
                                      {"rescore", *rescore_flag}});
            m.input(*dstore_p);
            m.input(*index_p);
            m.input(*dump_p);
            m.output(csv_p);
            m.write(*out_dir);
        }
    });
}

void add_eval(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval", "evaluate a head configuration");
    auto b = std::make_shared<Binder>(cmd);
    auto ex = std::make_shared<Experiment>();
    auto out_dir = std::make_shared<std::string>(".");
    auto threads = std::make_shared<unsigned>(default_threads());
    auto no_tune = std::make_shared<bool>(false);
    auto per_token = std::make_shared<bool>(false);
    ex->register_options(*b);
    b->bind("--out", "out_dir", *out_dir, "output directory");
    b->bind("--threads", "threads", *threads, "worker cap (0 = hardware)");
    b->bind_flag("--no-tune", "no_tune", *no_tune, "use the given lambda on the whole stream");
    b->bind_flag("--per-token", "per_token", *per_token, "also write per-token CSV");
    cmd->callback([b, ex, out_dir, threads, no_tune, per_token] {
        b->resolve();
        threads::set_max_threads(*threads);
        ex->load();
        auto cfg = ex->head_config();
        auto objs = ex->objects();

        eval::EvalReport report;
        double lambda_star = ex->lambda;
        if (*no_tune) {
            report = eval::evaluate(ex->eval_dump, ex->model, cfg, objs, ex->lambda, ex->tau);
        } else {
            const uint64_t n = ex->eval_dump.size();
            uint64_t n_dev = std::clamp<uint64_t>(
                uint64_t(std::llround(ex->dev_fraction * double(n))), 1, n);
            auto dev = ex->eval_dump.slice(0, n_dev);
            auto dev_report = eval::evaluate(dev, ex->model, cfg, objs, ex->lambda, ex->tau);
            auto [p_lm, p_head] = eval::target_probs(dev_report);
            lambda_star = eval::tune_lambda(p_lm, p_head);
            auto test = n_dev < n ? ex->eval_dump.slice(n_dev, n) : dev;
            report = eval::evaluate(test, ex->model, cfg, objs, lambda_star, ex->tau);
        }

        auto settings = ex->settings_echo();
        settings["no_tune"] = *no_tune;
        settings["lambda_star"] = lambda_star;
        auto report_p = out_file(*out_dir, "report.json");
        eval::write_report_json(report, settings, report_p);
        Manifest m("eval", settings);
        ex->note_inputs(m);
        m.output(report_p);
        if (*per_token) {
            auto csv_p = out_file(*out_dir, "report_tokens.csv");
            eval::write_report_csv(report, csv_p);
            m.output(csv_p);
        }
        m.write(*out_dir);
        std::cout << "eval: ppl_lm=" << report.ppl_lm << " ppl_head=" << report.ppl_head
                  << " ppl_interp=" << report.ppl_interp << " ppl_oracle=" << report.ppl_oracle
                  << " lambda=" << report.lambda << " tau=" << report.tau << "\n";
    });
}

void add_tune(CLI::App& app) {
    auto* cmd = app.add_subcommand("tune", "tune lambda on the dev split");
    auto b = std::make_shared<Binder>(cmd);
    auto ex = std::make_shared<Experiment>();
    auto out_dir = std::make_shared<std::string>(".");
    auto threads = std::make_shared<unsigned>(default_threads());
    ex->register_options(*b);
    b->bind("--out", "out_dir", *out_dir, "output directory");
    b->bind("--threads", "threads", *threads, "worker cap (0 = hardware)");
    cmd->callback([b, ex, out_dir, threads] {
        b->resolve();
        threads::set_max_threads(*threads);
        ex->load();
        const uint64_t n = ex->eval_dump.size();
        uint64_t n_dev =
            std::clamp<uint64_t>(uint64_t(std::llround(ex->dev_fraction * double(n))), 1, n);
        auto dev = ex->eval_dump.slice(0, n_dev);
        auto report =
            eval::evaluate(dev, ex->model, ex->head_config(), ex->objects(), ex->lambda, ex->tau);
        auto [p_lm, p_head] = eval::target_probs(report);
        double star = eval::tune_lambda(p_lm, p_head);
        double dev_ppl = eval::interp_perplexity(p_lm, p_head, star);

        json out{{"lambda_star", star},
                 {"dev_ppl", eval::json_number(dev_ppl)},
                 {"dev_tokens", n_dev}};
        auto settings = ex->settings_echo();
        auto path = out_file(*out_dir, "tune.json");
        std::ofstream f(path);
        f << json{{"result", out}, {"config", settings}}.dump(2) << '\n';
        f.close();
        Manifest m("tune", settings);
        ex->note_inputs(m);
        m.output(path);
        m.write(*out_dir);
        std::cout << "tune: lambda_star=" << star << " dev_ppl=" << dev_ppl << "\n";
    });
}

void add_sweep(CLI::App& app) {
    auto* cmd = app.add_subcommand("sweep", "sweep one axis with per-point lambda re-tuning");
    auto b = std::make_shared<Binder>(cmd);
    auto ex = std::make_shared<Experiment>();
    auto out_dir = std::make_shared<std::string>(".");
    auto threads = std::make_shared<unsigned>(default_threads());
    auto axis = std::make_shared<std::string>("tau");
    auto grid_spec = std::make_shared<std::string>("0.1:3.0:0.1");
    ex->register_options(*b);
    b->bind("--axis", "axis", *axis, "tau|fraction|k|n_probe|lambda");
    b->bind("--grid", "grid", *grid_spec, "start:stop:step or v1,v2,...");
    b->bind("--out", "out_dir", *out_dir, "output directory");
    b->bind("--threads", "threads", *threads, "worker cap (0 = hardware)");
    cmd->callback([b, ex, out_dir, threads, axis, grid_spec] {
        b->resolve();
        threads::set_max_threads(*threads);
        ex->load();
        auto grid = parse_grid(*grid_spec);
        auto result = eval::sweep(ex->eval_dump, ex->model, ex->head_config(), ex->objects(),
                                  *axis, grid, ex->dev_fraction, ex->seed);
        auto csv_p = out_file(*out_dir, "sweep.csv");
        auto svg_p = out_file(*out_dir, "sweep.svg");
        eval::write_sweep_csv(result, csv_p);
        eval::write_sweep_svg(result, svg_p);
        auto settings = ex->settings_echo();
        settings["axis"] = *axis;
        settings["grid"] = *grid_spec;
        Manifest m("sweep", settings);
        ex->note_inputs(m);
        m.output(csv_p);
        m.output(svg_p);
        m.write(*out_dir);
        std::cout << "sweep: axis=" << *axis << " points=" << grid.size()
                  << " argmin=" << result.grid[result.argmin]
                  << " interp_ppl=" << result.interp_ppl[result.argmin]
                  << " lambda_star=" << result.lambda_star[result.argmin] << "\n";
    });
}

void add_train_head(CLI::App& app) {
    auto* cmd = app.add_subcommand("train-head", "train a parametric head on a dump");
    auto b = std::make_shared<Binder>(cmd);
    auto ex = std::make_shared<Experiment>();
    auto out_dir = std::make_shared<std::string>(".");
    auto threads = std::make_shared<unsigned>(default_threads());
    auto train_kind = std::make_shared<std::string>("learned");
    auto scheme = std::make_shared<std::string>("equal");
    auto per_type = std::make_shared<uint32_t>(1);
    auto target_total = std::make_shared<uint64_t>(0);
    auto mixtures = std::make_shared<uint32_t>(2);
    auto epochs = std::make_shared<uint32_t>(10);
    auto batch = std::make_shared<uint32_t>(512);
    auto lr = std::make_shared<double>(1e-3);
    auto optimizer = std::make_shared<std::string>("adam");
    auto schedule = std::make_shared<std::string>("constant");
    auto dev_path = std::make_shared<std::string>();
    auto early_stop = std::make_shared<bool>(false);
    auto finetune = std::make_shared<bool>(false);
    auto cluster_centroids = std::make_shared<uint32_t>(0);
    ex->register_options(*b);
    b->bind("--train-kind", "train_kind", *train_kind, "learned|mos|interpolated|cluster");
    b->bind("--scheme", "allocation_scheme", *scheme, "equal|log-frequency|log-loss");
    b->bind("--per-type", "per_type", *per_type, "embeddings per type (equal scheme)");
    b->bind("--target-total", "target_total", *target_total,
            "total embeddings (log schemes; 0 = per_type * V)");
    b->bind("--mixtures", "mixtures", *mixtures, "MoS mixture count");
    b->bind("--epochs", "epochs", *epochs, "training epochs");
    b->bind("--batch", "batch", *batch, "minibatch size");
    b->bind("--lr", "lr", *lr, "learning rate");
    b->bind("--optimizer", "optimizer", *optimizer, "sgd|adam");
    b->bind("--schedule", "schedule", *schedule, "constant|cosine");
    b->bind("--dev-dump", "dev_dump", *dev_path, "dev dump for per-epoch perplexity");
    b->bind_flag("--early-stop", "early_stop", *early_stop, "stop on stalled dev perplexity");
    b->bind_flag("--finetune-embedding", "finetune_embedding", *finetune,
                 "MoS: train a copy of the output embedding");
    b->bind("--centroids", "centroids", *cluster_centroids,
            "cluster head centroid count (cluster kind)");
    b->bind("--out", "out_dir", *out_dir, "output directory");
    b->bind("--threads", "threads", *threads, "worker cap (0 = hardware)");
    cmd->callback([=] {
        b->resolve();
        threads::set_max_threads(*threads);
        ex->load(/*need_eval=*/false);
        if (ex->train_path.empty() && *train_kind != "cluster")
            throw ConfigError("missing required setting: train_dump");

        train::TrainConfig cfg;
        cfg.epochs = *epochs;
        cfg.batch = *batch;
        cfg.lr = *lr;
        cfg.seed = ex->seed;
        cfg.early_stop = *early_stop;
        cfg.finetune_embedding = *finetune;
        if (*optimizer == "sgd")
            cfg.optimizer = train::Optimizer::Sgd;
        else if (*optimizer == "adam")
            cfg.optimizer = train::Optimizer::Adam;
        else
            throw ConfigError("unknown optimizer: " + *optimizer);
        if (*schedule == "cosine")
            cfg.schedule = train::LrSchedule::Cosine;
        else if (*schedule != "constant")
            throw ConfigError("unknown schedule: " + *schedule);

        store::ContextDump dev;
        const store::ContextDump* dev_ptr = nullptr;
        if (!dev_path->empty()) {
            dev = store::open_dump(*dev_path);
            dev_ptr = &dev;
        }

        auto head_p = out_file(*out_dir, "head.bin");
        auto trace_p = out_file(*out_dir, "trace.csv");
        const View view = parse_view(ex->view);
        train::TrainTrace trace;

        if (*train_kind == "cluster") {
            if (!ex->ds) throw ConfigError("cluster head needs a datastore");
            uint32_t n_centroids =
                *cluster_centroids ? *cluster_centroids : std::min<uint32_t>(
                    uint32_t(ex->ds->size()), 2 * ex->model.vocab);
            auto ch = head::cluster_head_from_datastore(*ex->ds, n_centroids, *epochs, ex->seed);
            head::write_head(ch, head_p);
        } else if (*train_kind == "mos") {
            auto dump = store::open_dump(ex->train_path);
            auto [mh, tr] = train::train_mos(dump, view, ex->model, *mixtures, cfg, dev_ptr);
            trace = tr;
            head::write_mos_head(mh, head_p);
        } else {
            auto dump = store::open_dump(ex->train_path);
            const uint32_t vocab = ex->model.vocab;
            std::vector<uint32_t> allocation;
            uint64_t total = *target_total ? *target_total : uint64_t(*per_type) * vocab;
            if (*scheme == "equal") {
                allocation =
                    head::allocate_embeddings(std::vector<double>(vocab, 1.0),
                                              head::AllocationScheme::Equal, total);
            } else {
                std::vector<double> stats(vocab, 0.0);
                if (*scheme == "log-frequency") {
                    for (uint32_t y : dump.targets) stats[y] += 1.0;
                    for (double& s : stats) s = std::max(s, 1.0);
                    allocation = head::allocate_embeddings(
                        stats, head::AllocationScheme::LogFrequency, total);
                } else if (*scheme == "log-loss") {
                    for (uint64_t t = 0; t < dump.size(); ++t) {
                        auto p = head::base_lm_distribution(
                            ex->model, dump.view_row_f64(View::Ffn, t));
                        stats[dump.targets[t]] += -std::log(std::max(p[dump.targets[t]], 1e-300));
                    }
                    for (double& s : stats) s = std::max(s, 1e-6);
                    allocation =
                        head::allocate_embeddings(stats, head::AllocationScheme::LogLoss, total);
                } else {
                    throw ConfigError("unknown allocation scheme: " + *scheme);
                }
            }
            if (*train_kind == "interpolated") {
                cfg.loss = train::LossKind::InterpolatedCE;
                cfg.lambda = ex->lambda;
                auto [hd, tr] =
                    train::train_interpolated(dump, view, ex->model, ex->lambda, allocation, cfg,
                                              dev_ptr);
                trace = tr;
                head::write_head(hd, head_p);
            } else if (*train_kind == "learned") {
                auto [hd, tr] = train::train_learned_head(dump, view, allocation, cfg, dev_ptr);
                trace = tr;
                head::write_head(hd, head_p);
            } else {
                throw ConfigError("unknown train kind: " + *train_kind);
            }
        }
        train::write_trace_csv(trace, trace_p);
        auto settings = ex->settings_echo();
        settings["train_kind"] = *train_kind;
        settings["epochs"] = *epochs;
        settings["batch"] = *batch;
        settings["lr"] = *lr;
        settings["optimizer"] = *optimizer;
        settings["schedule"] = *schedule;
        settings["mixtures"] = *mixtures;
        settings["scheme"] = *scheme;
        Manifest m("train-head", settings);
        ex->note_inputs(m);
        m.input(*dev_path);
        m.output(head_p);
        m.output(trace_p);
        m.write(*out_dir);
        std::cout << "train-head: kind=" << *train_kind << " epochs=" << trace.epoch_loss.size()
                  << (trace.epoch_loss.empty()
                          ? std::string()
                          : " final_loss=" + std::to_string(trace.epoch_loss.back()))
                  << " -> " << head_p << "\n";
    });
}

void add_analyze(CLI::App& app) {
    auto* cmd = app.add_subcommand(
        "analyze", "per-type help rates of two head configs plus bigram entropies");
    auto b = std::make_shared<Binder>(cmd);
    auto ex = std::make_shared<Experiment>();
    auto out_dir = std::make_shared<std::string>(".");
    auto threads = std::make_shared<unsigned>(default_threads());
    auto min_occ = std::make_shared<uint64_t>(10);
    auto mask_b = std::make_shared<std::string>("approx");
    auto score_b = std::make_shared<std::string>("approx");
    ex->register_options(*b);
    b->bind("--min-occ", "min_occ", *min_occ, "drop types with fewer occurrences");
    b->bind("--mask-source-b", "mask_source_b", *mask_b, "config B neighbor source");
    b->bind("--score-source-b", "score_source_b", *score_b, "config B score source");
    b->bind("--out", "out_dir", *out_dir, "output directory");
    b->bind("--threads", "threads", *threads, "worker cap (0 = hardware)");
    cmd->callback([=] {
        b->resolve();
        threads::set_max_threads(*threads);
        ex->load();
        if (ex->vocab_path.empty()) throw ConfigError("missing required setting: vocab");
        auto vocab = store::open_vocabulary(ex->vocab_path);

        auto cfg_a = ex->head_config();
        auto cfg_b = cfg_a;
        cfg_b.mask_source = parse_source(*mask_b);
        cfg_b.score_source = parse_source(*score_b);
        auto objs = ex->objects();
        auto rep_a = eval::evaluate(ex->eval_dump, ex->model, cfg_a, objs, ex->lambda, ex->tau);
        auto rep_b = eval::evaluate(ex->eval_dump, ex->model, cfg_b, objs, ex->lambda, ex->tau);

        auto stats = eval::knn_help_rate(rep_a, rep_b, vocab.size(), *min_occ);
        auto ent = eval::bigram_entropy(ex->eval_dump.targets, std::vector<uint64_t>{0},
                                        vocab.size());
        auto csv_p = out_file(*out_dir, "tokenstats.csv");
        eval::write_token_stats_csv(stats, ent, vocab, csv_p);
        auto settings = ex->settings_echo();
        settings["mask_source_b"] = *mask_b;
        settings["score_source_b"] = *score_b;
        settings["min_occ"] = *min_occ;
        settings["entropy_rule"] = "within-document bigrams, natural log";
        Manifest m("analyze", settings);
        ex->note_inputs(m);
        m.output(csv_p);
        m.write(*out_dir);
        std::cout << "analyze: " << stats.size() << " types (min_occ=" << *min_occ << ") -> "
                  << csv_p << "\n";
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knnlab: a desk-scale laboratory for retrieval-augmented LM heads"};
    app.require_subcommand(1);
    add_gen_synth(app);
    add_build_dstore(app);
    add_subsample(app);
    add_build_index(app);
    add_search(app);
    add_eval(app);
    add_tune(app);
    add_sweep(app);
    add_train_head(app);
    add_analyze(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors -> 1, --help -> 0
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {  // ParamError, ConfigError, DegenerateInputError
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
