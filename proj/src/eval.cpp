#include "knnlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "knnlab/ann.hpp"
#include "knnlab/svg.hpp"
#include "knnlab/threads.hpp"

namespace knnlab::eval {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr uint64_t kTokenChunk = 64;

double log_or_neg_inf(double p) { return p > 0.0 ? std::log(p) : -kInf; }

// Mean negative log of the interpolated target probability; +inf when any
// token has zero mixed mass. Same accumulation order as evaluate().
double neg_log_mean(std::span<const double> p_lm, std::span<const double> p_head, double lambda) {
    double sum = 0.0;
    for (size_t i = 0; i < p_lm.size(); ++i) {
        double mix = (1.0 - lambda) * p_lm[i] + lambda * p_head[i];
        if (!(mix > 0.0)) return kInf;
        sum += std::log(mix);
    }
    return -sum / double(p_lm.size());
}

// Per-token target probabilities of the base model and the configured head.
void stream_targets(const store::ContextDump& stream, const store::OutputEmbedding& wsm,
                    const head::HeadConfig& cfg, const head::ModelObjects& objects,
                    std::vector<double>* p_lm_out, std::vector<double>* p_head_out) {
    const uint64_t n = stream.size();
    if (p_lm_out) p_lm_out->resize(n);
    if (p_head_out) p_head_out->resize(n);
    threads::parallel_chunks(n, kTokenChunk, [&](size_t, uint64_t b, uint64_t e) {
        for (uint64_t t = b; t < e; ++t) {
            auto h_sm = stream.view_row_f64(View::Ffn, t);
            auto p_lm = head::base_lm_distribution(wsm, h_sm);
            const uint32_t y = stream.targets[t];
            if (p_lm_out) (*p_lm_out)[t] = p_lm[y];
            if (p_head_out) {
                auto h_ds = stream.view_row_f64(cfg.view, t);
                auto p_head = head::head_distribution(h_ds, p_lm, wsm, cfg, objects);
                (*p_head_out)[t] = p_head[y];
            }
        }
    });
}

// Cached retrieval for the knn head: per token the mask-stage ordering with
// final scores attached, so tau/k grid points reuse one search pass.
struct CachedNeighbor {
    double score;    // final (per score_source) similarity
    uint32_t value;  // datastore value of the row
};

std::vector<std::vector<CachedNeighbor>> build_neighbor_cache(const store::ContextDump& stream,
                                                              const head::HeadConfig& cfg,
                                                              const head::ModelObjects& objects) {
    if (!objects.datastore) throw ConfigError("knn head needs a datastore");
    const auto& ds = *objects.datastore;
    const uint64_t n = stream.size();
    std::vector<std::vector<CachedNeighbor>> cache(n);
    threads::parallel_chunks(n, kTokenChunk, [&](size_t, uint64_t b, uint64_t e) {
        for (uint64_t t = b; t < e; ++t) {
            auto h = stream.view_row_f64(cfg.view, t);
            ann::NeighborSet mask;
            if (cfg.mask_source == Source::Exact) {
                mask = ann::exact_search(ds, h, cfg.k, cfg.metric);
            } else {
                if (!objects.index) throw ConfigError("approx mask needs an index");
                mask = ann::approx_search(*objects.index, ds, h, cfg.k, cfg.n_probe, cfg.metric);
            }
            auto& entries = cache[t];
            entries.resize(mask.size());
            const bool want_exact = cfg.score_source == Source::Exact;
            const bool have_exact = mask.score_source == Source::Exact;
            if (want_exact == have_exact) {
                for (size_t i = 0; i < mask.size(); ++i)
                    entries[i] = {mask.entries[i].score, ds.values()[mask.entries[i].row]};
            } else if (want_exact) {
                for (size_t i = 0; i < mask.size(); ++i)
                    entries[i] = {ann::score_row(ds, mask.entries[i].row, h, cfg.metric),
                                  ds.values()[mask.entries[i].row]};
            } else {
                if (!objects.index) throw ConfigError("approx scores need an index");
                auto rescored = ann::pq_rescore(*objects.index, ds, h, mask, cfg.metric);
                std::map<uint64_t, double> by_row;
                for (const auto& en : rescored.entries) by_row[en.row] = en.score;
                for (size_t i = 0; i < mask.size(); ++i)
                    entries[i] = {by_row[mask.entries[i].row], ds.values()[mask.entries[i].row]};
            }
        }
    });
    return cache;
}

double cached_target_prob(const std::vector<CachedNeighbor>& entries, uint32_t k, double tau,
                          uint32_t target) {
    const size_t n = std::min<size_t>(k, entries.size());
    if (n == 0) return 0.0;
    double m = -kInf;
    for (size_t i = 0; i < n; ++i) m = std::max(m, entries[i].score);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double e = std::exp((entries[i].score - m) / tau);
        den += e;
        if (entries[i].value == target) num += e;
    }
    return num / den;
}

}  // namespace

EvalReport evaluate(const store::ContextDump& stream, const store::OutputEmbedding& wsm,
                    const head::HeadConfig& config, const head::ModelObjects& objects,
                    double lambda, double tau) {
    if (stream.size() == 0) throw ParamError("empty evaluation stream");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParamError("lambda must be in [0, 1]");
    if (!(tau > 0.0)) throw ParamError("tau must be > 0");
    if (!stream.has_ffn) throw ConfigError("evaluation stream is missing the ffn view");
    if (!stream.has_view(config.view))
        throw ConfigError(std::string("evaluation stream is missing the head view: ") +
                          view_name(config.view));

    head::HeadConfig cfg = config;
    cfg.lambda = lambda;
    cfg.tau = tau;

    EvalReport report;
    report.lambda = lambda;
    report.tau = tau;
    const uint64_t n = stream.size();
    report.tokens.resize(n);
    std::vector<double> logp_interp(n);

    threads::parallel_chunks(n, kTokenChunk, [&](size_t, uint64_t b, uint64_t e) {
        for (uint64_t t = b; t < e; ++t) {
            auto h_sm = stream.view_row_f64(View::Ffn, t);
            auto p_lm = head::base_lm_distribution(wsm, h_sm);
            auto h_ds = stream.view_row_f64(cfg.view, t);
            auto p_head = head::head_distribution(h_ds, p_lm, wsm, cfg, objects);
            const uint32_t y = stream.targets[t];
            if (y >= wsm.vocab) throw InputError("target id exceeds vocabulary");
            const double a = p_lm[y], h = p_head[y];
            report.tokens[t] = {y, log_or_neg_inf(a), log_or_neg_inf(h)};
            logp_interp[t] = log_or_neg_inf((1.0 - lambda) * a + lambda * h);
        }
    });

    core::LogProbSeries lm(n), hd(n);
    for (uint64_t t = 0; t < n; ++t) {
        lm[t] = report.tokens[t].logp_lm;
        hd[t] = report.tokens[t].logp_head;
    }
    report.ppl_lm = core::perplexity(lm);
    report.ppl_head = core::perplexity(hd);
    report.ppl_interp = core::perplexity(logp_interp);
    report.ppl_oracle = oracle_perplexity(report);
    return report;
}

double interp_perplexity(std::span<const double> p_lm_target,
                         std::span<const double> p_head_target, double lambda) {
    if (p_lm_target.empty()) throw ParamError("empty stream");
    if (p_lm_target.size() != p_head_target.size()) throw ParamError("misaligned streams");
    return std::exp(neg_log_mean(p_lm_target, p_head_target, lambda));
}

double tune_lambda(std::span<const double> p_lm_target, std::span<const double> p_head_target,
                   const LambdaGrid& grid) {
    if (p_lm_target.empty()) throw ParamError("empty tuning stream");
    if (p_lm_target.size() != p_head_target.size()) throw ParamError("misaligned tuning streams");
    // Integer-indexed grids so that grid values are reproducible doubles.
    const int64_t coarse_n = int64_t(std::llround(1.0 / grid.coarse_step));
    const int64_t fine_per_coarse = int64_t(std::llround(grid.coarse_step / grid.fine_step));
    const int64_t fine_n = coarse_n * fine_per_coarse;

    int64_t best_i = 0;
    double best = kInf;
    for (int64_t i = 0; i <= coarse_n; ++i) {
        double lambda = double(i) / double(coarse_n);
        double obj = neg_log_mean(p_lm_target, p_head_target, lambda);
        if (obj < best) {
            best = obj;
            best_i = i;
        }
    }
    int64_t lo = std::max<int64_t>(0, best_i * fine_per_coarse - fine_per_coarse);
    int64_t hi = std::min<int64_t>(fine_n, best_i * fine_per_coarse + fine_per_coarse);
    int64_t best_j = best_i * fine_per_coarse;
    for (int64_t j = lo; j <= hi; ++j) {
        double lambda = double(j) / double(fine_n);
        double obj = neg_log_mean(p_lm_target, p_head_target, lambda);
        if (obj < best || (obj == best && j < best_j)) {
            best = obj;
            best_j = j;
        }
    }
    return double(best_j) / double(fine_n);
}

double oracle_perplexity(const EvalReport& report) {
    core::LogProbSeries best(report.tokens.size());
    for (size_t t = 0; t < report.tokens.size(); ++t)
        best[t] = std::max(report.tokens[t].logp_lm, report.tokens[t].logp_head);
    return core::perplexity(best);
}

std::pair<std::vector<double>, std::vector<double>> target_probs(const EvalReport& report) {
    std::vector<double> p_lm(report.tokens.size()), p_head(report.tokens.size());
    for (size_t t = 0; t < report.tokens.size(); ++t) {
        p_lm[t] = std::exp(report.tokens[t].logp_lm);
        p_head[t] = std::exp(report.tokens[t].logp_head);
    }
    return {std::move(p_lm), std::move(p_head)};
}

SweepResult sweep(const store::ContextDump& stream, const store::OutputEmbedding& wsm,
                  const head::HeadConfig& base, const head::ModelObjects& objects,
                  const std::string& axis, std::span<const double> grid, double dev_fraction,
                  uint64_t seed) {
    if (grid.empty()) throw ParamError("empty sweep grid");
    const bool is_tau = axis == "tau";
    const bool is_fraction = axis == "fraction";
    const bool is_k = axis == "k";
    const bool is_n_probe = axis == "n_probe";
    const bool is_lambda = axis == "lambda";
    if (!is_tau && !is_fraction && !is_k && !is_n_probe && !is_lambda)
        throw ParamError("unknown sweep axis: " + axis);

    const uint64_t n = stream.size();
    if (n == 0) throw ParamError("empty sweep stream");
    uint64_t n_dev = uint64_t(std::llround(dev_fraction * double(n)));
    n_dev = std::clamp<uint64_t>(n_dev, 1, n);
    const store::ContextDump dev = stream.slice(0, n_dev);
    const store::ContextDump test = n_dev < n ? stream.slice(n_dev, n) : stream.slice(0, n_dev);

    std::vector<double> dev_lm, test_lm;
    stream_targets(dev, wsm, base, objects, &dev_lm, nullptr);
    stream_targets(test, wsm, base, objects, &test_lm, nullptr);

    SweepResult result;
    result.axis = axis;
    result.grid.assign(grid.begin(), grid.end());

    // One retrieval pass covers every tau/k/lambda grid point of a knn head.
    const bool cache_path = base.kind == head::HeadKind::Knn && (is_tau || is_k || is_lambda);
    std::vector<std::vector<CachedNeighbor>> dev_cache, test_cache;
    std::vector<double> dev_head_once, test_head_once;
    head::HeadConfig cache_cfg = base;
    if (cache_path) {
        if (is_k) {
            uint32_t kmax = 0;
            for (double v : grid) kmax = std::max(kmax, uint32_t(std::llround(v)));
            cache_cfg.k = kmax;
        }
        dev_cache = build_neighbor_cache(dev, cache_cfg, objects);
        test_cache = build_neighbor_cache(test, cache_cfg, objects);
    } else if (is_lambda) {
        stream_targets(dev, wsm, base, objects, nullptr, &dev_head_once);
        stream_targets(test, wsm, base, objects, nullptr, &test_head_once);
    }

    auto cached_targets = [&](const store::ContextDump& split,
                              const std::vector<std::vector<CachedNeighbor>>& cache, uint32_t k,
                              double tau, std::vector<double>& out) {
        out.resize(split.size());
        for (uint64_t t = 0; t < split.size(); ++t)
            out[t] = cached_target_prob(cache[t], k, tau, split.targets[t]);
    };

    std::vector<double> dev_head, test_head;
    for (double value : grid) {
        head::HeadConfig cfg = base;
        store::Datastore sub_ds;
        ann::AnnIndex sub_index;
        head::ModelObjects objs = objects;

        if (cache_path) {
            uint32_t k = is_k ? uint32_t(std::llround(value)) : cache_cfg.k;
            double tau = is_tau ? value : base.tau;
            cached_targets(dev, dev_cache, k, tau, dev_head);
            cached_targets(test, test_cache, k, tau, test_head);
        } else if (is_lambda) {
            dev_head = dev_head_once;
            test_head = test_head_once;
        } else {
            if (is_tau) cfg.tau = value;
            if (is_k) cfg.k = uint32_t(std::llround(value));
            if (is_n_probe) cfg.n_probe = uint32_t(std::llround(value));
            if (is_fraction) {
                if (!objects.datastore) throw ConfigError("fraction sweep needs a datastore");
                sub_ds = store::subsample(*objects.datastore, value, seed);
                objs.datastore = &sub_ds;
                if (objects.index) {
                    const auto& ix = *objects.index;
                    sub_index = ann::train_index(
                        sub_ds, std::min<uint32_t>(ix.n_list, uint32_t(sub_ds.size())), ix.pq_m,
                        ix.pq_nbits, seed);
                    objs.index = &sub_index;
                }
            }
            stream_targets(dev, wsm, cfg, objs, nullptr, &dev_head);
            stream_targets(test, wsm, cfg, objs, nullptr, &test_head);
        }

        double lambda = is_lambda ? value : tune_lambda(dev_lm, dev_head);
        result.lambda_star.push_back(lambda);
        result.dev_ppl.push_back(interp_perplexity(dev_lm, dev_head, lambda));
        result.interp_ppl.push_back(interp_perplexity(test_lm, test_head, lambda));
    }

    result.argmin = 0;
    for (size_t i = 1; i < result.grid.size(); ++i) {
        const bool strictly = result.dev_ppl[i] < result.dev_ppl[result.argmin];
        const bool tie_smaller = result.dev_ppl[i] == result.dev_ppl[result.argmin] &&
                                 result.grid[i] < result.grid[result.argmin];
        if (strictly || tie_smaller) result.argmin = i;
    }
    return result;
}

std::vector<TokenHelpStats> knn_help_rate(const EvalReport& a, const EvalReport& b, uint32_t vocab,
                                          uint64_t min_occ) {
    if (a.tokens.size() != b.tokens.size()) throw InputError("reports cover different streams");
    for (size_t t = 0; t < a.tokens.size(); ++t)
        if (a.tokens[t].target != b.tokens[t].target)
            throw InputError("reports disagree on targets at token " + std::to_string(t));

    std::vector<uint64_t> count(vocab, 0), helps_a(vocab, 0), helps_b(vocab, 0);
    for (size_t t = 0; t < a.tokens.size(); ++t) {
        const uint32_t y = a.tokens[t].target;
        if (y >= vocab) throw InputError("target id exceeds vocabulary");
        count[y]++;
        if (a.tokens[t].logp_head > a.tokens[t].logp_lm) helps_a[y]++;
        if (b.tokens[t].logp_head > b.tokens[t].logp_lm) helps_b[y]++;
    }
    std::vector<TokenHelpStats> stats;
    for (uint32_t v = 0; v < vocab; ++v) {
        if (count[v] < min_occ) continue;
        double ra = double(helps_a[v]) / double(count[v]);
        double rb = double(helps_b[v]) / double(count[v]);
        stats.push_back({v, count[v], ra, rb, ra - rb});
    }
    return stats;
}

BigramEntropies bigram_entropy(std::span<const uint32_t> stream,
                               std::span<const uint64_t> doc_starts, uint32_t vocab) {
    std::vector<uint64_t> starts(doc_starts.begin(), doc_starts.end());
    if (starts.empty()) starts.push_back(0);
    std::sort(starts.begin(), starts.end());
    starts.erase(std::unique(starts.begin(), starts.end()), starts.end());

    std::vector<std::map<uint32_t, uint64_t>> fwd(vocab), bwd(vocab);
    for (size_t d = 0; d < starts.size(); ++d) {
        const uint64_t begin = starts[d];
        const uint64_t end = d + 1 < starts.size() ? starts[d + 1] : stream.size();
        if (begin >= stream.size()) continue;
        for (uint64_t t = begin; t + 1 < end; ++t) {
            const uint32_t w = stream[t], w_after = stream[t + 1];
            if (w >= vocab || w_after >= vocab) throw InputError("token id exceeds vocabulary");
            fwd[w][w_after]++;
            bwd[w_after][w]++;
        }
    }
    auto entropy_of = [](const std::map<uint32_t, uint64_t>& counts) {
        uint64_t total = 0;
        for (const auto& [_, c] : counts) total += c;
        if (total == 0) return 0.0;
        double h = 0.0;
        for (const auto& [_, c] : counts) {
            double p = double(c) / double(total);
            h -= p * std::log(p);
        }
        return h;
    };
    BigramEntropies out;
    out.forward.resize(vocab);
    out.backward.resize(vocab);
    for (uint32_t v = 0; v < vocab; ++v) {
        out.forward[v] = entropy_of(fwd[v]);
        out.backward[v] = entropy_of(bwd[v]);
    }
    return out;
}

nlohmann::json json_number(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : "-inf";
}

void write_report_json(const EvalReport& report, const nlohmann::json& config_echo,
                       const std::string& path) {
    nlohmann::json j;
    j["tokens"] = report.tokens.size();
    j["lambda"] = report.lambda;
    j["tau"] = report.tau;
    j["ppl_lm"] = json_number(report.ppl_lm);
    j["ppl_head"] = json_number(report.ppl_head);
    j["ppl_interp"] = json_number(report.ppl_interp);
    j["ppl_oracle"] = json_number(report.ppl_oracle);
    j["config"] = config_echo;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << j.dump(2) << '\n';
    if (!f.flush()) throw FormatError("write failed: " + path);
}

void write_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << "index,target,logp_lm,logp_head,logp_interp\n";
    f.precision(17);
    for (size_t t = 0; t < report.tokens.size(); ++t) {
        const auto& tok = report.tokens[t];
        const double mix = (1.0 - report.lambda) * std::exp(tok.logp_lm) +
                           report.lambda * std::exp(tok.logp_head);
        f << t << ',' << tok.target << ',' << tok.logp_lm << ',' << tok.logp_head << ','
          << log_or_neg_inf(mix) << '\n';
    }
    if (!f.flush()) throw FormatError("write failed: " + path);
}

void write_sweep_csv(const SweepResult& result, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << "axis_value,interp_ppl,lambda_star\n";
    f.precision(17);
    for (size_t i = 0; i < result.grid.size(); ++i)
        f << result.grid[i] << ',' << result.interp_ppl[i] << ',' << result.lambda_star[i] << '\n';
    if (!f.flush()) throw FormatError("write failed: " + path);
}

void write_sweep_svg(const SweepResult& result, const std::string& path) {
    svg::Series test{"test", result.grid, result.interp_ppl};
    svg::Series dev{"dev", result.grid, result.dev_ppl};
    svg::write_line_chart(path, "interpolated perplexity vs " + result.axis, result.axis,
                          "interp ppl", {test, dev});
}

void write_token_stats_csv(const std::vector<TokenHelpStats>& stats,
                           const BigramEntropies& entropies, const store::Vocabulary& vocab,
                           const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << "id,token,count,help_rate_a,help_rate_b,delta,length,h_fwd,h_bwd\n";
    for (const auto& s : stats) {
        const std::string& tok = s.id < vocab.size() ? vocab.tokens[s.id] : "";
        f << s.id << ',' << tok << ',' << s.count << ',' << s.help_rate_a << ',' << s.help_rate_b
          << ',' << s.delta << ',' << tok.size() << ',' << entropies.forward[s.id] << ','
          << entropies.backward[s.id] << '\n';
    }
    if (!f.flush()) throw FormatError("write failed: " + path);
}

}  // namespace knnlab::eval
