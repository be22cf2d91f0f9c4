#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "knnlab/ann.hpp"
#include "knnlab/eval.hpp"
#include "knnlab/rng.hpp"
#include "knnlab/store.hpp"

using namespace knnlab;
using namespace knnlab::eval;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("knnlab_eval_" + name)).string();
}

struct Toy {
    store::ContextDump train;
    store::ContextDump eval;
    store::OutputEmbedding wsm;
    store::Datastore ds;
    head::HeadConfig cfg;
};

// Small two-view world where retrieval genuinely helps: targets follow the
// att coordinate, the base model sees only ffn.
Toy make_toy(uint64_t train_n = 400, uint64_t eval_n = 120, uint64_t seed = 6) {
    Rng rng(seed);
    Toy toy;
    auto fill = [&](store::ContextDump& d, uint64_t n, uint64_t base) {
        d.has_att = d.has_ffn = true;
        d.dim = 2;
        for (uint64_t i = 0; i < n; ++i) {
            double a = rng.normal(base + 2 * i);
            double b = rng.normal(base + 2 * i + 1);
            d.att.push_back(float(a));
            d.att.push_back(float(b));
            d.ffn.push_back(float(b));
            d.ffn.push_back(float(0.3 * rng.normal(base + 3 * n + i)));
            d.targets.push_back(uint32_t(a > 0 ? (b > 0 ? 0 : 1) : (b > 0 ? 2 : 3)));
        }
    };
    fill(toy.train, train_n, 0);
    fill(toy.eval, eval_n, 1u << 22);
    toy.ds = store::build_datastore(toy.train, View::Att, Dtype::F32);
    toy.wsm.vocab = 4;
    toy.wsm.dim = 2;
    toy.wsm.weights = {0.8f, 0.1f, -0.8f, 0.1f, 0.8f, -0.1f, -0.8f, -0.1f};
    toy.cfg.kind = head::HeadKind::Knn;
    toy.cfg.metric = Metric::L2;
    toy.cfg.k = 16;
    toy.cfg.view = View::Att;
    return toy;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("evaluate: lambda 0 reduces exactly to the base model") {
    auto toy = make_toy();
    head::ModelObjects objs;
    objs.datastore = &toy.ds;
    auto report = evaluate(toy.eval, toy.wsm, toy.cfg, objs, 0.0, 1.0);
    CHECK(report.ppl_interp == report.ppl_lm);
    CHECK(report.tokens.size() == toy.eval.size());
}

TEST_CASE("evaluate: a head that misses a target gives infinite head PPL, finite interp") {
    // Datastore value set is {0} but the stream contains target 1.
    store::ContextDump train;
    train.has_att = true;
    train.dim = 1;
    train.att = {0.0f, 1.0f};
    train.targets = {0, 0};
    auto ds = store::build_datastore(train, View::Att, Dtype::F32);

    store::ContextDump stream;
    stream.has_att = stream.has_ffn = true;
    stream.dim = 1;
    stream.att = {0.5f, 0.5f};
    stream.ffn = {0.5f, 0.5f};
    stream.targets = {0, 1};

    store::OutputEmbedding wsm;
    wsm.vocab = 2;
    wsm.dim = 1;
    wsm.weights = {0.5f, -0.5f};

    head::HeadConfig cfg;
    cfg.kind = head::HeadKind::Knn;
    cfg.k = 2;
    cfg.metric = Metric::L2;
    head::ModelObjects objs;
    objs.datastore = &ds;

    auto report = evaluate(stream, wsm, cfg, objs, 0.5, 1.0);
    CHECK(report.ppl_head == kInf);
    CHECK(std::isfinite(report.ppl_interp));
    CHECK(report.tokens[1].logp_head == -kInf);
}

TEST_CASE("evaluate: three-token toy matches hand arithmetic") {
    // V = 2, D = 1. Base logits are [w0 h, w1 h]; the datastore holds one
    // key per value so the knn term is a two-way softmax of L2 scores.
    store::ContextDump train;
    train.has_att = true;
    train.dim = 1;
    train.att = {1.0f, -1.0f};
    train.targets = {0, 1};
    auto ds = store::build_datastore(train, View::Att, Dtype::F32);

    store::ContextDump stream;
    stream.has_att = stream.has_ffn = true;
    stream.dim = 1;
    stream.att = {0.5f, -0.25f, 1.0f};
    stream.ffn = {0.5f, -0.25f, 1.0f};
    stream.targets = {0, 1, 0};

    store::OutputEmbedding wsm;
    wsm.vocab = 2;
    wsm.dim = 1;
    wsm.weights = {1.0f, -1.0f};

    head::HeadConfig cfg;
    cfg.kind = head::HeadKind::Knn;
    cfg.k = 2;
    cfg.metric = Metric::L2;
    head::ModelObjects objs;
    objs.datastore = &ds;

    const double lambda = 0.4, tau = 0.9;
    auto report = evaluate(stream, wsm, cfg, objs, lambda, tau);

    double lp_lm[3], lp_head[3], lp_mix[3];
    const double h[3] = {0.5, -0.25, 1.0};
    const uint32_t y[3] = {0, 1, 0};
    for (int t = 0; t < 3; ++t) {
        double z0 = h[t], z1 = -h[t];
        double p_lm0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
        double s0 = -(1.0 - h[t]) * (1.0 - h[t]);
        double s1 = -(-1.0 - h[t]) * (-1.0 - h[t]);
        double e0 = std::exp(s0 / tau), e1 = std::exp(s1 / tau);
        double p_h0 = e0 / (e0 + e1);
        double p_lm = y[t] == 0 ? p_lm0 : 1.0 - p_lm0;
        double p_h = y[t] == 0 ? p_h0 : 1.0 - p_h0;
        lp_lm[t] = std::log(p_lm);
        lp_head[t] = std::log(p_h);
        lp_mix[t] = std::log((1 - lambda) * p_lm + lambda * p_h);
        CHECK(std::abs(report.tokens[t].logp_lm - lp_lm[t]) < 1e-12);
        CHECK(std::abs(report.tokens[t].logp_head - lp_head[t]) < 1e-12);
    }
    auto mean3 = [](const double* v) { return (v[0] + v[1] + v[2]) / 3.0; };
    CHECK(std::abs(report.ppl_lm - std::exp(-mean3(lp_lm))) < 1e-12);
    CHECK(std::abs(report.ppl_head - std::exp(-mean3(lp_head))) < 1e-12);
    CHECK(std::abs(report.ppl_interp - std::exp(-mean3(lp_mix))) < 1e-12);
    double lp_best[3] = {std::max(lp_lm[0], lp_head[0]), std::max(lp_lm[1], lp_head[1]),
                         std::max(lp_lm[2], lp_head[2])};
    CHECK(std::abs(report.ppl_oracle - std::exp(-mean3(lp_best))) < 1e-12);
}

TEST_CASE("tune_lambda ties, boundaries, symmetric two-token case") {
    std::vector<double> same{0.3, 0.7, 0.5};
    CHECK(tune_lambda(same, same) == 0.0);

    std::vector<double> weak{0.1, 0.2, 0.3}, strong{0.9, 0.8, 0.7};
    CHECK(tune_lambda(weak, strong) == 1.0);

    std::vector<double> p_lm{0.9, 0.1}, p_head{0.1, 0.9};
    double star = tune_lambda(p_lm, p_head);
    CHECK(star == 0.5);

    // dense-grid oracle agrees
    double best = kInf, best_l = 0;
    for (double l = 0.0; l <= 1.0; l += 1e-4) {
        double ppl = interp_perplexity(p_lm, p_head, l);
        if (ppl < best) {
            best = ppl;
            best_l = l;
        }
    }
    CHECK(std::abs(best_l - star) < 2e-3);
    CHECK(interp_perplexity(p_lm, p_head, star) <= best + 1e-12);

    CHECK_THROWS_AS(tune_lambda({}, {}), ParamError);
    CHECK_THROWS_AS(tune_lambda(p_lm, std::vector<double>{0.5}), ParamError);
}

TEST_CASE("tuned lambda never loses to the endpoints or the coarse grid") {
    Rng rng(10);
    for (int rep = 0; rep < 10; ++rep) {
        size_t n = 20 + rng.below(rep, 30);
        std::vector<double> a(n), b(n);
        for (size_t i = 0; i < n; ++i) {
            a[i] = 0.02 + 0.96 * rng.uniform(1000 * rep + 2 * i);
            b[i] = 0.02 + 0.96 * rng.uniform(1000 * rep + 2 * i + 1);
        }
        double star = tune_lambda(a, b);
        double at_star = interp_perplexity(a, b, star);
        CHECK(at_star <= interp_perplexity(a, b, 0.0) + 1e-12);
        CHECK(at_star <= interp_perplexity(a, b, 1.0) + 1e-12);
        double coarse_best = kInf;
        for (int i = 0; i <= 100; ++i)
            coarse_best = std::min(coarse_best, interp_perplexity(a, b, double(i) / 100.0));
        CHECK(at_star <= coarse_best + 1e-12);
    }
}

TEST_CASE("oracle dominates every interpolation weight") {
    auto toy = make_toy(300, 80, 11);
    head::ModelObjects objs;
    objs.datastore = &toy.ds;
    auto report = evaluate(toy.eval, toy.wsm, toy.cfg, objs, 0.5, 0.8);
    auto [p_lm, p_head] = target_probs(report);
    for (double l = 0.0; l <= 1.0001; l += 0.05)
        CHECK(report.ppl_oracle <= interp_perplexity(p_lm, p_head, std::min(l, 1.0)) + 1e-9);

    // domination case: head never better
    EvalReport dom;
    dom.tokens = {{0, std::log(0.5), std::log(0.1)}, {1, std::log(0.4), std::log(0.2)}};
    CHECK(std::abs(oracle_perplexity(dom) - std::exp(-(std::log(0.5) + std::log(0.4)) / 2)) <
          1e-12);
}

TEST_CASE("sweep: single point, lambda retuning, consistency with evaluate") {
    auto toy = make_toy(500, 160, 3);
    head::ModelObjects objs;
    objs.datastore = &toy.ds;

    auto single = sweep(toy.eval, toy.wsm, toy.cfg, objs, "tau", std::vector<double>{0.7}, 0.5);
    CHECK(single.argmin == 0);
    CHECK(single.grid.size() == 1);

    std::vector<double> taus{0.3, 0.7, 1.3, 2.0};
    auto result = sweep(toy.eval, toy.wsm, toy.cfg, objs, "tau", taus, 0.5);
    REQUIRE(result.grid.size() == 4);

    // The cached sweep path must agree with a fresh evaluate at every point.
    const uint64_t n = toy.eval.size(), n_dev = n / 2;
    auto test_split = toy.eval.slice(n_dev, n);
    for (size_t i = 0; i < taus.size(); ++i) {
        auto rep = evaluate(test_split, toy.wsm, toy.cfg, objs, result.lambda_star[i], taus[i]);
        CHECK(std::abs(rep.ppl_interp - result.interp_ppl[i]) < 1e-9);
    }

    CHECK_THROWS_AS(sweep(toy.eval, toy.wsm, toy.cfg, objs, "bogus", taus), ParamError);
    CHECK_THROWS_AS(sweep(toy.eval, toy.wsm, toy.cfg, objs, "tau", std::vector<double>{}),
                    ParamError);
}

TEST_CASE("sweep over k uses prefixes correctly") {
    auto toy = make_toy(300, 100, 21);
    head::ModelObjects objs;
    objs.datastore = &toy.ds;
    std::vector<double> ks{1, 2, 4, 8, 16};
    auto result = sweep(toy.eval, toy.wsm, toy.cfg, objs, "k", ks, 0.5);
    const uint64_t n = toy.eval.size(), n_dev = n / 2;
    auto test_split = toy.eval.slice(n_dev, n);
    for (size_t i = 0; i < ks.size(); ++i) {
        head::HeadConfig cfg = toy.cfg;
        cfg.k = uint32_t(ks[i]);
        auto rep = evaluate(test_split, toy.wsm, cfg, objs, result.lambda_star[i], cfg.tau);
        if (std::isinf(result.interp_ppl[i])) {
            CHECK(rep.ppl_interp == result.interp_ppl[i]);
        } else {
            CHECK(std::abs(rep.ppl_interp - result.interp_ppl[i]) < 1e-9);
        }
    }
}

TEST_CASE("regime equivalence: full probe without PQ equals exact end to end") {
    auto toy = make_toy(400, 100, 31);
    head::ModelObjects objs;
    objs.datastore = &toy.ds;
    auto index = ann::train_index(toy.ds, 8, 0, 8, 5);
    objs.index = &index;

    auto exact_cfg = toy.cfg;
    exact_cfg.mask_source = Source::Exact;
    exact_cfg.score_source = Source::Exact;
    auto approx_cfg = toy.cfg;
    approx_cfg.mask_source = Source::Approx;
    approx_cfg.score_source = Source::Approx;
    approx_cfg.n_probe = 8;

    auto a = evaluate(toy.eval, toy.wsm, exact_cfg, objs, 0.4, 0.9);
    auto b = evaluate(toy.eval, toy.wsm, approx_cfg, objs, 0.4, 0.9);
    CHECK(std::abs(a.ppl_lm - b.ppl_lm) < 1e-9);
    CHECK(std::abs(a.ppl_head - b.ppl_head) < 1e-9);
    CHECK(std::abs(a.ppl_interp - b.ppl_interp) < 1e-9);
    CHECK(std::abs(a.ppl_oracle - b.ppl_oracle) < 1e-9);
}

TEST_CASE("knn_help_rate counting, threshold, antisymmetry") {
    EvalReport a, b;
    auto add = [&](EvalReport& r, uint32_t target, double lm, double hd, int times) {
        for (int i = 0; i < times; ++i) r.tokens.push_back({target, lm, hd});
    };
    // type 0: 12 occurrences, 7 helped in report a, 2 in report b
    add(a, 0, std::log(0.3), std::log(0.5), 7);
    add(a, 0, std::log(0.5), std::log(0.3), 5);
    add(b, 0, std::log(0.3), std::log(0.5), 2);
    add(b, 0, std::log(0.5), std::log(0.3), 10);
    // type 1: only 9 occurrences, always helped -> excluded by min_occ
    add(a, 1, std::log(0.2), std::log(0.9), 9);
    add(b, 1, std::log(0.9), std::log(0.2), 9);
    // type 2: 10 occurrences, helped at every one in a
    add(a, 2, std::log(0.1), std::log(0.2), 10);
    add(b, 2, std::log(0.2), std::log(0.1), 10);

    auto stats = knn_help_rate(a, b, 3, 10);
    REQUIRE(stats.size() == 2);
    CHECK(stats[0].id == 0);
    CHECK(stats[0].count == 12);
    CHECK(std::abs(stats[0].help_rate_a - 7.0 / 12) < 1e-12);
    CHECK(std::abs(stats[0].help_rate_b - 2.0 / 12) < 1e-12);
    CHECK(stats[1].id == 2);
    CHECK(stats[1].help_rate_a == 1.0);
    CHECK(stats[1].help_rate_b == 0.0);

    auto swapped = knn_help_rate(b, a, 3, 10);
    for (size_t i = 0; i < stats.size(); ++i)
        CHECK(std::abs(stats[i].delta + swapped[i].delta) < 1e-12);

    EvalReport misaligned = a;
    misaligned.tokens[0].target = 2;
    CHECK_THROWS_AS(knn_help_rate(a, misaligned, 3, 10), InputError);
    misaligned.tokens.pop_back();
    CHECK_THROWS_AS(knn_help_rate(a, misaligned, 3, 10), InputError);
}

TEST_CASE("bigram entropies") {
    // stream "a b a b": a is always followed by b
    std::vector<uint32_t> s1{0, 1, 0, 1};
    auto e1 = bigram_entropy(s1, std::vector<uint64_t>{0}, 2);
    CHECK(e1.forward[0] == 0.0);
    CHECK(e1.backward[1] == 0.0);

    // stream "a b a c": two equiprobable successors of a
    std::vector<uint32_t> s2{0, 1, 0, 2};
    auto e2 = bigram_entropy(s2, std::vector<uint64_t>{0}, 3);
    CHECK(std::abs(e2.forward[0] - std::log(2.0)) < 1e-12);

    // document boundary suppresses the crossing pair
    std::vector<uint32_t> s3{0, 1, 1, 2};
    auto no_docs = bigram_entropy(s3, std::vector<uint64_t>{0}, 3);
    CHECK(std::abs(no_docs.forward[1] - std::log(2.0)) < 1e-12);  // successors {1, 2}
    auto docs = bigram_entropy(s3, std::vector<uint64_t>{0, 2}, 3);
    CHECK(docs.forward[1] == 0.0);  // the pair crossing the boundary is gone
    CHECK(docs.backward[1] == 0.0);

    // backward entropy: "x a y a" gives a two predecessors
    std::vector<uint32_t> s4{0, 2, 1, 2};
    auto e4 = bigram_entropy(s4, std::vector<uint64_t>{0}, 3);
    CHECK(std::abs(e4.backward[2] - std::log(2.0)) < 1e-12);
}

TEST_CASE("report and sweep serialization") {
    auto toy = make_toy(120, 40, 41);
    head::ModelObjects objs;
    objs.datastore = &toy.ds;
    auto report = evaluate(toy.eval, toy.wsm, toy.cfg, objs, 0.3, 1.0);

    auto jpath = tmp_path("report.json");
    write_report_json(report, nlohmann::json{{"note", "test"}}, jpath);
    std::ifstream jf(jpath);
    nlohmann::json j;
    jf >> j;
    CHECK(j["config"]["note"] == "test");
    CHECK(j["tokens"] == report.tokens.size());

    // infinite perplexities serialize as the string "inf"
    EvalReport missed = report;
    missed.ppl_head = kInf;
    write_report_json(missed, nlohmann::json::object(), jpath);
    std::ifstream jf2(jpath);
    nlohmann::json j2;
    jf2 >> j2;
    CHECK(j2["ppl_head"] == "inf");

    auto cpath = tmp_path("report.csv");
    write_report_csv(report, cpath);
    std::ifstream cf(cpath);
    std::string line;
    std::getline(cf, line);
    CHECK(line == "index,target,logp_lm,logp_head,logp_interp");
    size_t rows = 0;
    while (std::getline(cf, line)) ++rows;
    CHECK(rows == report.tokens.size());

    auto result = sweep(toy.eval, toy.wsm, toy.cfg, objs, "tau",
                        std::vector<double>{0.5, 1.0, 1.5}, 0.5);
    auto spath = tmp_path("sweep.csv");
    write_sweep_csv(result, spath);
    std::ifstream sf(spath);
    std::getline(sf, line);
    CHECK(line == "axis_value,interp_ppl,lambda_star");
    rows = 0;
    while (std::getline(sf, line)) ++rows;
    CHECK(rows == 3);

    auto gpath = tmp_path("sweep.svg");
    write_sweep_svg(result, gpath);
    std::ifstream gf(gpath);
    std::stringstream buf;
    buf << gf.rdbuf();
    CHECK(buf.str().find("<svg") == 0);
    CHECK(buf.str().find("polyline") != std::string::npos);

    // token stats CSV
    EvalReport a = report, b = report;
    auto stats = knn_help_rate(a, b, toy.wsm.vocab, 1);
    std::vector<uint32_t> stream_tokens(report.tokens.size());
    for (size_t i = 0; i < stream_tokens.size(); ++i) stream_tokens[i] = report.tokens[i].target;
    auto ent = bigram_entropy(stream_tokens, std::vector<uint64_t>{0}, toy.wsm.vocab);
    store::Vocabulary vocab;
    vocab.tokens = {"a", "bb", "ccc", "d"};
    auto tpath = tmp_path("stats.csv");
    write_token_stats_csv(stats, ent, vocab, tpath);
    std::ifstream tf(tpath);
    std::getline(tf, line);
    CHECK(line == "id,token,count,help_rate_a,help_rate_b,delta,length,h_fwd,h_bwd");
}

}  // TEST_SUITE
