// Acceptance gate: every criterion below runs end to end at its stated
// tolerance and prints one pass/fail line. Exit status is nonzero if any
// criterion fails. An optional argv[1] selects a single criterion by number.

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "knnlab/ann.hpp"
#include "knnlab/eval.hpp"
#include "knnlab/head.hpp"
#include "knnlab/rng.hpp"
#include "knnlab/store.hpp"
#include "knnlab/threads.hpp"
#include "knnlab/train.hpp"

using namespace knnlab;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double now_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

double peak_rss_gb() {
    struct rusage usage{};
    if (getrusage(RUSAGE_SELF, &usage) == 0)
        return double(usage.ru_maxrss) / (1024.0 * 1024.0);  // ru_maxrss is in kB on Linux
    return 0.0;
}

bool close_or_both_inf(double a, double b, double tol) {
    if (std::isinf(a) || std::isinf(b)) return a == b;
    return std::abs(a - b) <= tol;
}

struct Outcome {
    bool pass = true;
    std::string detail;
    void fail(const std::string& why) {
        pass = false;
        if (!detail.empty()) detail += "; ";
        detail += why;
    }
    void require(bool ok, const std::string& why) {
        if (!ok) fail(why);
    }
};

store::ContextDump random_stream(uint64_t n, uint32_t dim, uint32_t vocab, uint64_t seed) {
    Rng rng(seed);
    store::ContextDump d;
    d.has_att = d.has_ffn = true;
    d.dim = dim;
    d.att.resize(n * dim);
    d.ffn.resize(n * dim);
    d.targets.resize(n);
    for (size_t i = 0; i < d.att.size(); ++i) {
        d.att[i] = float(rng.normal(i));
        d.ffn[i] = float(rng.normal((1ull << 40) + i));
    }
    for (size_t i = 0; i < n; ++i) d.targets[i] = uint32_t(rng.below((1ull << 41) + i, vocab));
    return d;
}

store::OutputEmbedding random_model(uint32_t vocab, uint32_t dim, uint64_t seed) {
    store::OutputEmbedding m;
    m.vocab = vocab;
    m.dim = dim;
    m.weights.resize(size_t(vocab) * dim);
    Rng rng(seed);
    for (size_t i = 0; i < m.weights.size(); ++i) m.weights[i] = float(rng.normal(i));
    return m;
}

// Shared state for the synthetic-corpus criteria (3-6).
struct SyntheticFixture {
    store::SyntheticSpec spec;  // frozen defaults, seed 7
    store::SyntheticData data;
    store::Datastore ds;
    store::ContextDump test_split;
    head::HeadConfig knn_cfg;
    eval::SweepResult tau_sweep;
    double base_test_ppl = 0.0;
    double knn_test_ppl = 0.0;
    double tau_star = 0.0, lambda_star = 0.0;
    bool ready = false;

    void ensure() {
        if (ready) return;
        data = store::generate_synthetic(spec);
        ds = store::build_datastore(data.train, View::Att, Dtype::F16);

        knn_cfg.kind = head::HeadKind::Knn;
        knn_cfg.metric = Metric::L2;
        knn_cfg.k = 64;
        knn_cfg.view = View::Att;

        std::vector<double> grid;
        for (int i = 1; i <= 30; ++i) grid.push_back(double(i) / 10.0);
        head::ModelObjects objs;
        objs.datastore = &ds;
        tau_sweep = eval::sweep(data.eval, data.model, knn_cfg, objs, "tau", grid, 0.5, spec.seed);
        tau_star = tau_sweep.grid[tau_sweep.argmin];
        lambda_star = tau_sweep.lambda_star[tau_sweep.argmin];
        knn_test_ppl = tau_sweep.interp_ppl[tau_sweep.argmin];

        const uint64_t n = data.eval.size(), n_dev = n / 2;
        test_split = data.eval.slice(n_dev, n);
        core::LogProbSeries lp(test_split.size());
        for (uint64_t t = 0; t < test_split.size(); ++t) {
            auto p = head::base_lm_distribution(data.model, test_split.view_row_f64(View::Ffn, t));
            lp[t] = std::log(p[test_split.targets[t]]);
        }
        base_test_ppl = core::perplexity(lp);
        ready = true;
    }
};

SyntheticFixture g_fix;

// --- criterion 1: exactness dials are oracle-equivalent, search and eval ---
Outcome criterion1() {
    Outcome out;
    Rng rng(101);
    uint64_t c = 0;
    for (int rep = 0; rep < 20 && out.pass; ++rep) {
        const uint64_t n = 200 + rng.below(c++, 4801);     // <= 5000
        const uint32_t dim = 4 + uint32_t(rng.below(c++, 29));  // <= 32
        const uint32_t vocab = 8 + uint32_t(rng.below(c++, 24));
        const uint32_t n_list = 1 + uint32_t(rng.below(c++, 24));
        const uint32_t k = 1 + uint32_t(rng.below(c++, 64));
        auto stream = random_stream(64, dim, vocab, 9000 + rep);
        auto ds = store::build_datastore(random_stream(n, dim, vocab, 8000 + rep), View::Att,
                                         rep % 2 ? Dtype::F16 : Dtype::F32);
        auto index = ann::train_index(ds, n_list, 0, 8, 300 + rep);
        const Metric metric = rep % 3 ? Metric::L2 : Metric::IP;

        for (int q = 0; q < 5; ++q) {
            std::vector<double> query(dim);
            for (uint32_t d = 0; d < dim; ++d) query[d] = rng.normal(c++);
            auto exact = ann::exact_search(ds, query, k, metric);
            auto approx = ann::approx_search(index, ds, query, k, n_list, metric);
            out.require(exact.size() == approx.size(), "result sizes differ");
            for (size_t i = 0; out.pass && i < exact.size(); ++i) {
                out.require(exact.entries[i].row == approx.entries[i].row, "index lists differ");
                out.require(std::abs(exact.entries[i].score - approx.entries[i].score) < 1e-9,
                            "scores differ beyond 1e-9");
            }
        }

        auto model = random_model(vocab, dim, 7000 + rep);
        head::HeadConfig cfg;
        cfg.kind = head::HeadKind::Knn;
        cfg.metric = metric;
        cfg.k = k;
        cfg.view = View::Att;
        head::ModelObjects objs;
        objs.datastore = &ds;
        objs.index = &index;
        auto exact_cfg = cfg;
        auto approx_cfg = cfg;
        approx_cfg.mask_source = Source::Approx;
        approx_cfg.score_source = Source::Approx;
        approx_cfg.n_probe = n_list;
        auto ra = eval::evaluate(stream, model, exact_cfg, objs, 0.35, 0.8);
        auto rb = eval::evaluate(stream, model, approx_cfg, objs, 0.35, 0.8);
        out.require(close_or_both_inf(ra.ppl_lm, rb.ppl_lm, 1e-9), "ppl_lm differs");
        out.require(close_or_both_inf(ra.ppl_head, rb.ppl_head, 1e-9), "ppl_head differs");
        out.require(close_or_both_inf(ra.ppl_interp, rb.ppl_interp, 1e-9), "ppl_interp differs");
        out.require(close_or_both_inf(ra.ppl_oracle, rb.ppl_oracle, 1e-9), "ppl_oracle differs");
    }
    if (out.pass) out.detail = "20 randomized stores, search + evaluate equivalent";
    return out;
}

// --- criterion 2: the k = N distribution equals the masked one ---
Outcome criterion2() {
    Outcome out;
    const uint64_t n = 3000;
    const uint32_t dim = 16, vocab = 32;
    auto ds = store::build_datastore(random_stream(n, dim, vocab, 202), View::Att, Dtype::F16);
    Rng rng(203);
    double worst = 0.0;
    for (int q = 0; q < 1000; ++q) {
        std::vector<double> query(dim);
        for (uint32_t d = 0; d < dim; ++d) query[d] = rng.normal(uint64_t(q) * dim + d);
        const Metric metric = q % 2 ? Metric::L2 : Metric::IP;
        const double tau = 0.3 + 2.5 * rng.uniform((1ull << 32) + q);
        auto full = head::full_knn_distribution(ds, query, tau, metric, vocab);
        auto masked = head::knn_distribution(ann::exact_search(ds, query, uint32_t(n), metric),
                                             ds.values(), tau, vocab);
        for (uint32_t v = 0; v < vocab; ++v) worst = std::max(worst, std::abs(full[v] - masked[v]));
    }
    out.require(worst < 1e-9, "max abs prob diff " + std::to_string(worst));
    if (out.pass) {
        std::ostringstream ss;
        ss << "1000 queries, max abs diff " << worst;
        out.detail = ss.str();
    }
    return out;
}

// --- criterion 3: tuned knn interpolation beats the base model by >= 3% ---
Outcome criterion3() {
    Outcome out;
    g_fix.ensure();
    const double gain = (g_fix.base_test_ppl - g_fix.knn_test_ppl) / g_fix.base_test_ppl;
    std::ostringstream ss;
    ss << "base " << g_fix.base_test_ppl << " -> interp " << g_fix.knn_test_ppl << " (tau* "
       << g_fix.tau_star << ", lambda* " << g_fix.lambda_star << "), gain "
       << 100.0 * gain << "%";
    out.detail = ss.str();
    out.require(gain >= 0.03, "gain below 3%");
    return out;
}

// --- criterion 4: a trained 1x learned head recovers >= 30% of the knn gain ---
Outcome criterion4() {
    Outcome out;
    g_fix.ensure();
    train::TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch = 512;
    cfg.lr = 1e-3;
    cfg.seed = g_fix.spec.seed;
    std::vector<uint32_t> allocation(g_fix.spec.vocab, 1);
    auto [hd, trace] = train::train_learned_head(g_fix.data.train, View::Att, allocation, cfg);

    head::HeadConfig lcfg;
    lcfg.kind = head::HeadKind::Learned;
    lcfg.view = View::Att;
    lcfg.tau = 1.0;
    head::ModelObjects objs;
    objs.learned = &hd;

    const uint64_t n = g_fix.data.eval.size(), n_dev = n / 2;
    auto dev = g_fix.data.eval.slice(0, n_dev);
    auto dev_report = eval::evaluate(dev, g_fix.data.model, lcfg, objs, 0.5, 1.0);
    auto [p_lm, p_head] = eval::target_probs(dev_report);
    double lambda = eval::tune_lambda(p_lm, p_head);
    auto report = eval::evaluate(g_fix.test_split, g_fix.data.model, lcfg, objs, lambda, 1.0);

    const double knn_gain = g_fix.base_test_ppl - g_fix.knn_test_ppl;
    const double learned_gain = g_fix.base_test_ppl - report.ppl_interp;
    const double recovered = learned_gain / knn_gain;
    std::ostringstream ss;
    ss << "learned interp " << report.ppl_interp << " (lambda* " << lambda << "), recovers "
       << 100.0 * recovered << "% of the knn gain";
    out.detail = ss.str();
    out.require(knn_gain > 0, "no knn gain to recover");
    out.require(recovered >= 0.30, "recovery below 30%");
    return out;
}

// --- criterion 5: interpolated ppl improves with datastore fraction ---
Outcome criterion5() {
    Outcome out;
    g_fix.ensure();
    std::vector<double> fractions{0.05, 0.25, 0.5, 1.0};
    auto cfg = g_fix.knn_cfg;
    cfg.tau = g_fix.tau_star;
    head::ModelObjects objs;
    objs.datastore = &g_fix.ds;
    auto result =
        eval::sweep(g_fix.data.eval, g_fix.data.model, cfg, objs, "fraction", fractions, 0.5,
                    g_fix.spec.seed);

    // Monotone non-increasing in the fraction up to a 0.2% noise band.
    for (size_t i = 1; i < result.interp_ppl.size(); ++i)
        out.require(result.interp_ppl[i] <= result.interp_ppl[i - 1] * 1.002,
                    "ppl rose beyond the noise band at fraction " +
                        std::to_string(fractions[i]));

    // Spearman rank correlation between fraction and ppl.
    const size_t n = fractions.size();
    std::vector<size_t> rank_ppl(n);
    for (size_t i = 0; i < n; ++i) rank_ppl[i] = i;
    std::sort(rank_ppl.begin(), rank_ppl.end(), [&](size_t a, size_t b) {
        return result.interp_ppl[a] < result.interp_ppl[b];
    });
    std::vector<double> rp(n);
    for (size_t r = 0; r < n; ++r) rp[rank_ppl[r]] = double(r);
    double d2 = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double diff = double(i) - rp[i];  // fractions are already ascending
        d2 += diff * diff;
    }
    const double spearman = 1.0 - 6.0 * d2 / (double(n) * (double(n) * n - 1.0));
    std::ostringstream ss;
    ss << "ppl:";
    for (double p : result.interp_ppl) ss << ' ' << p;
    ss << ", spearman " << spearman;
    out.detail = ss.str();
    out.require(spearman <= -0.8, "spearman above -0.8");
    return out;
}

// --- criterion 6: temperature sweep argmin, entropy monotonicity, replay ---
Outcome criterion6() {
    Outcome out;
    g_fix.ensure();
    out.require(g_fix.tau_sweep.grid.size() == 30, "grid must hold 30 points");
    out.require(std::isfinite(g_fix.knn_test_ppl), "sweep argmin ppl not finite");

    // knn-head entropy is non-decreasing in tau on sampled test tokens.
    head::ModelObjects objs;
    objs.datastore = &g_fix.ds;
    const uint64_t stride = std::max<uint64_t>(1, g_fix.test_split.size() / 16);
    for (uint64_t t = 0; t < g_fix.test_split.size(); t += stride) {
        auto h = g_fix.test_split.view_row_f64(View::Att, t);
        auto ns = ann::exact_search(g_fix.ds, h, g_fix.knn_cfg.k, g_fix.knn_cfg.metric);
        double prev = -1.0;
        for (double tau : g_fix.tau_sweep.grid) {
            double ent = core::entropy(
                head::knn_distribution(ns, g_fix.ds.values(), tau, g_fix.spec.vocab));
            out.require(ent >= prev - 1e-9, "entropy decreased in tau");
            prev = ent;
        }
        if (!out.pass) break;
    }

    // evaluate at tau*, lambda*(tau*) reproduces the sweep's reported ppl.
    auto report = eval::evaluate(g_fix.test_split, g_fix.data.model, g_fix.knn_cfg, objs,
                                 g_fix.lambda_star, g_fix.tau_star);
    out.require(close_or_both_inf(report.ppl_interp, g_fix.knn_test_ppl, 1e-9),
                "evaluate does not reproduce the sweep value");
    if (out.pass) {
        std::ostringstream ss;
        ss << "tau* " << g_fix.tau_star << ", replay |diff| "
           << std::abs(report.ppl_interp - g_fix.knn_test_ppl);
        out.detail = ss.str();
    }
    return out;
}

// --- criterion 7: analytic gradients vs central differences ---
Outcome criterion7() {
    Outcome out;
    Rng rng(707);
    uint64_t c = 0;
    const double fd = 1e-5;
    double worst = 0.0;
    auto rel = [](double a, double b) {
        return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
    };
    for (int inst = 0; inst < 50 && out.pass; ++inst) {
        const uint32_t dim = 2 + uint32_t(rng.below(c++, 7));    // <= 8
        const uint32_t vocab = 3 + uint32_t(rng.below(c++, 14)); // <= 16
        auto dump = random_stream(10, dim, vocab, 7100 + inst);
        std::vector<uint64_t> ex(dump.size());
        for (uint64_t i = 0; i < dump.size(); ++i) ex[i] = i;

        train::TrainConfig tc;
        tc.epochs = 0;
        tc.seed = 7200 + inst;
        std::vector<uint32_t> allocation(vocab, 1);
        allocation[inst % vocab] = 2;
        auto [hd, _] = train::train_learned_head(dump, View::Att, allocation, tc);
        auto model = random_model(vocab, dim, 7300 + inst);

        // learned-head CE
        {
            std::vector<double> grad(hd.embeddings.size());
            train::learned_head_loss_grad(hd, dump, View::Att, ex, grad.data());
            for (size_t i = rng.below(c++, 3); i < grad.size() && out.pass; i += 3) {
                double keep = hd.embeddings[i];
                hd.embeddings[i] = keep + fd;
                double up = train::learned_head_loss_grad(hd, dump, View::Att, ex, nullptr);
                hd.embeddings[i] = keep - fd;
                double dn = train::learned_head_loss_grad(hd, dump, View::Att, ex, nullptr);
                hd.embeddings[i] = keep;
                double err = rel(grad[i], (up - dn) / (2 * fd));
                worst = std::max(worst, err);
                out.require(err < 1e-4, "learned-head gradient mismatch");
            }
        }
        // interpolated CE
        {
            std::vector<double> p_lm(dump.size());
            for (uint64_t i = 0; i < dump.size(); ++i)
                p_lm[i] = head::base_lm_distribution(
                    model, dump.view_row_f64(View::Ffn, i))[dump.targets[i]];
            const double lambda = 0.1 + 0.8 * rng.uniform(c++);
            std::vector<double> grad(hd.embeddings.size());
            train::interpolated_loss_grad(hd, dump, View::Att, p_lm, lambda, ex, grad.data());
            for (size_t i = rng.below(c++, 3); i < grad.size() && out.pass; i += 3) {
                double keep = hd.embeddings[i];
                hd.embeddings[i] = keep + fd;
                double up =
                    train::interpolated_loss_grad(hd, dump, View::Att, p_lm, lambda, ex, nullptr);
                hd.embeddings[i] = keep - fd;
                double dn =
                    train::interpolated_loss_grad(hd, dump, View::Att, p_lm, lambda, ex, nullptr);
                hd.embeddings[i] = keep;
                double err = rel(grad[i], (up - dn) / (2 * fd));
                worst = std::max(worst, err);
                out.require(err < 1e-4, "interpolated-loss gradient mismatch");
            }
        }
        // MoS CE, all parameter groups
        {
            head::MoSHead mh;
            mh.dim = dim;
            mh.mixtures = 2;
            mh.proj.resize(size_t(2) * dim * dim);
            mh.bias.resize(size_t(2) * dim);
            mh.prior.resize(size_t(2) * dim);
            for (auto* vec : {&mh.proj, &mh.bias, &mh.prior})
                for (double& v : *vec) v = 0.5 * rng.normal(c++);
            mh.shared_embedding = &model;

            train::MosGrads grads;
            train::mos_loss_grad(mh, dump, View::Att, ex, &grads, false);
            auto check_group = [&](std::vector<double>& params, const std::vector<double>& grad) {
                for (size_t i = rng.below(c++, 3); i < params.size() && out.pass; i += 5) {
                    double keep = params[i];
                    params[i] = keep + fd;
                    double up = train::mos_loss_grad(mh, dump, View::Att, ex, nullptr, false);
                    params[i] = keep - fd;
                    double dn = train::mos_loss_grad(mh, dump, View::Att, ex, nullptr, false);
                    params[i] = keep;
                    double err = rel(grad[i], (up - dn) / (2 * fd));
                    worst = std::max(worst, err);
                    out.require(err < 1e-4, "mos gradient mismatch");
                }
            };
            check_group(mh.proj, grads.proj);
            check_group(mh.bias, grads.bias);
            check_group(mh.prior, grads.prior);
        }
    }
    if (out.pass) {
        std::ostringstream ss;
        ss << "50 instances, worst rel err " << worst;
        out.detail = ss.str();
    }
    return out;
}

// --- criterion 8: core properties, round-trips, thread determinism ---
Outcome criterion8() {
    Outcome out;
    Rng rng(808);
    uint64_t c = 0;

    // Normalization, shift invariance, temperature monotonicity, bounds.
    for (int rep = 0; rep < 25 && out.pass; ++rep) {
        size_t n = 2 + rng.below(c++, 10);
        core::ScoreVector s;
        for (size_t i = 0; i < n; ++i) s.entries.push_back(3.0 * rng.normal(c++));
        double tau = 0.1 + 2.0 * rng.uniform(c++);
        auto p = core::softmax_with_temperature(s, tau);
        double sum = 0;
        for (double v : p) sum += v;
        out.require(std::abs(sum - 1.0) < 1e-9, "softmax normalization");

        core::ScoreVector shifted = s;
        for (double& v : shifted.entries) v += 5.5;
        auto q = core::softmax_with_temperature(shifted, tau);
        for (size_t i = 0; i < n; ++i)
            out.require(std::abs(p[i] - q[i]) < 1e-9, "shift invariance");

        double prev = -1.0;
        for (double t2 = 0.1; t2 <= 3.0; t2 += 0.29) {
            double h = core::entropy(core::softmax_with_temperature(s, t2));
            out.require(h >= prev - 1e-12, "temperature monotonicity");
            prev = h;
        }
        core::ScoreVector s2;
        for (size_t i = 0; i < n; ++i) s2.entries.push_back(3.0 * rng.normal(c++));
        auto p2 = core::softmax_with_temperature(s2, 1.0);
        auto mix = core::interpolate(p, p2, rng.uniform(c++));
        for (size_t i = 0; i < n; ++i) {
            out.require(mix[i] >= std::min(p[i], p2[i]) - 1e-15 &&
                            mix[i] <= std::max(p[i], p2[i]) + 1e-15,
                        "interpolation bounds");
        }
    }

    // Perplexity of the uniform distribution over V = 4 is exactly 4.
    core::LogProbSeries uniform(16, std::log(0.25));
    out.require(core::perplexity(uniform) == 4.0, "uniform perplexity not exact");

    // Bit-exact store round-trip.
    auto dump = random_stream(200, 6, 12, 811);
    auto ds = store::build_datastore(dump, View::Att, Dtype::F16);
    const std::string p1 = "/tmp/knnlab_acc_ds1.bin", p2 = "/tmp/knnlab_acc_ds2.bin";
    store::write_datastore(ds, p1);
    store::write_datastore(store::open_datastore(p1), p2);
    out.require(fnv1a64_file(p1) == fnv1a64_file(p2), "datastore round-trip not bit-exact");

    // topk / kmeans / IVF determinism across thread counts {1, 4}.
    core::ScoreVector sv;
    for (int i = 0; i < 500; ++i) sv.entries.push_back(rng.normal(c++));
    auto topk_ref = core::topk_indices(sv, 40);
    std::vector<double> km_ref;
    ann::AnnIndex ix_ref;
    for (unsigned workers : {1u, 4u}) {
        threads::set_max_threads(workers);
        out.require(core::topk_indices(sv, 40) == topk_ref, "topk thread dependence");
        auto km = ann::kmeans(ds.keys_f32(), ds.size(), ds.dim(), 8, 6, 5);
        auto ix = ann::train_index(ds, 8, 2, 8, 5);
        if (km_ref.empty()) {
            km_ref = km.centroids;
            ix_ref = ix;
        } else {
            out.require(km.centroids == km_ref, "kmeans thread dependence");
            out.require(ix.centroids == ix_ref.centroids && ix.lists == ix_ref.lists &&
                            ix.codes == ix_ref.codes,
                        "index build thread dependence");
        }
    }
    threads::set_max_threads(0);
    if (out.pass) out.detail = "core properties, bit-exact files, {1,4}-thread determinism";
    return out;
}

// --- criterion 9: analysis oracles ---
Outcome criterion9() {
    Outcome out;
    std::vector<uint32_t> abab{0, 1, 0, 1};
    auto e1 = eval::bigram_entropy(abab, std::vector<uint64_t>{0}, 2);
    out.require(e1.forward[0] == 0.0, "H_fwd(a) of 'a b a b' must be 0");

    std::vector<uint32_t> abac{0, 1, 0, 2};
    auto e2 = eval::bigram_entropy(abac, std::vector<uint64_t>{0}, 3);
    out.require(std::abs(e2.forward[0] - std::log(2.0)) < 1e-12,
                "H_fwd(a) of 'a b a c' must be ln 2");

    // Hand-built stream: type 0 has 12 occurrences with 7 helps under A,
    // type 1 has 9 occurrences (excluded).
    eval::EvalReport a, b;
    auto add = [](eval::EvalReport& r, uint32_t y, bool helped, int times) {
        for (int i = 0; i < times; ++i)
            r.tokens.push_back({y, std::log(0.4), helped ? std::log(0.6) : std::log(0.2)});
    };
    add(a, 0, true, 7);
    add(a, 0, false, 5);
    add(b, 0, true, 3);
    add(b, 0, false, 9);
    add(a, 1, true, 9);
    add(b, 1, true, 9);
    auto stats = eval::knn_help_rate(a, b, 2, 10);
    out.require(stats.size() == 1, "min_occ filter failed");
    if (out.pass) {
        out.require(stats[0].id == 0 && stats[0].count == 12, "wrong surviving type");
        out.require(std::abs(stats[0].help_rate_a - 7.0 / 12.0) < 1e-12, "help rate a != 7/12");
        out.require(std::abs(stats[0].help_rate_b - 3.0 / 12.0) < 1e-12, "help rate b != 3/12");
    }
    if (out.pass) out.detail = "bigram entropies and help-rate counting match the oracles";
    return out;
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    std::vector<Criterion> criteria{
        {1, "exactness dials (search + evaluate)", 30, criterion1},
        {2, "full-datastore distribution == mask-to-N", 30, criterion2},
        {3, "synthetic knn gain >= 3%", 120, criterion3},
        {4, "learned head recovers >= 30% of the gain", 180, criterion4},
        {5, "datastore-size trend", 180, criterion5},
        {6, "temperature sweep machinery", 120, criterion6},
        {7, "gradient correctness", 60, criterion7},
        {8, "core/store/ann property gate", 60, criterion8},
        {9, "analysis oracles", 10, criterion9},
    };
    int only = argc > 1 ? std::atoi(argv[1]) : 0;

    bool all_pass = true;
    double total = 0.0;
    for (auto& cr : criteria) {
        if (only && cr.id != only) continue;
        const double t0 = now_seconds();
        Outcome out;
        try {
            out = cr.run();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        const double dt = now_seconds() - t0;
        total += dt;
        if (dt > cr.budget_seconds) out.fail("runtime budget exceeded");
        std::printf("criterion %d: %s — %s (%s; %.1f s)\n", cr.id, out.pass ? "PASS" : "FAIL",
                    cr.name, out.detail.c_str(), dt);
        std::fflush(stdout);
        all_pass = all_pass && out.pass;
    }

    if (!only) {
        const double rss = peak_rss_gb();
        const bool budget = total < 600.0 && rss < 4.0;
        std::printf("criterion 10: %s — whole-suite budget (%.1f s total, peak rss %.2f GB)\n",
                    budget ? "PASS" : "FAIL", total, rss);
        all_pass = all_pass && budget;
    }
    return all_pass ? 0 : 1;
}
