#include "knnlab/train.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>

#include "knnlab/rng.hpp"
#include "knnlab/threads.hpp"

namespace knnlab::train {

namespace {

// RNG stream ids.
enum : uint64_t { kStreamInit = 0x31, kStreamPrior = 0x33, kStreamShuffle = 0x1000 };

// Fixed gradient-accumulation fan-out; reduction in chunk order keeps results
// independent of the worker count.
constexpr uint64_t kGradChunks = 16;

double safe_log(double p) { return std::log(std::max(p, DBL_MIN)); }

void softmax_inplace(std::vector<double>& z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double sum = 0.0;
    for (double& v : z) sum += (v = std::exp(v - m));
    for (double& v : z) v /= sum;
}

// Shared forward/backward of the aggregated-softmax CE. Both the standard
// and the interpolated loss reduce to a per-row factor on s_r:
//   dL/dz_r = scale * s_r * (p_head_y - own_y(r))
// with scale = 1/p_head_y for standard CE and lambda/P for interpolated CE.
struct AggCE {
    const head::LearnedHead* hd;
    const store::ContextDump* dump;
    View view;
    // Interpolated mode when p_lm_target is non-null.
    const double* p_lm_target = nullptr;
    double lambda = 1.0;

    double run(std::span<const uint64_t> examples, double* grad) const {
        const uint64_t n_total = hd->n_total();
        const uint32_t dim = hd->dim;
        const auto& owner = hd->map.owner;
        const double inv_b = 1.0 / double(examples.size());
        const uint64_t chunk =
            std::max<uint64_t>(1, (examples.size() + kGradChunks - 1) / kGradChunks);
        const uint64_t chunks = threads::chunk_count(examples.size(), chunk);

        std::vector<double> chunk_loss(chunks, 0.0);
        std::vector<std::vector<double>> chunk_grad(grad ? chunks : 0);

        threads::parallel_chunks(examples.size(), chunk, [&](size_t ci, uint64_t b, uint64_t e) {
            std::vector<double> z(n_total);
            std::vector<double> h(dim);
            double* g = nullptr;
            if (grad) {
                chunk_grad[ci].assign(n_total * dim, 0.0);
                g = chunk_grad[ci].data();
            }
            double loss = 0.0;
            for (uint64_t i = b; i < e; ++i) {
                const uint64_t ex = examples[i];
                auto row = dump->view_row(view, ex);
                for (uint32_t d = 0; d < dim; ++d) h[d] = double(row[d]);
                const uint32_t y = dump->targets[ex];
                for (uint64_t r = 0; r < n_total; ++r) {
                    const double* er = hd->embeddings.data() + r * dim;
                    double dot = 0.0;
                    for (uint32_t d = 0; d < dim; ++d) dot += er[d] * h[d];
                    z[r] = dot;
                }
                softmax_inplace(z);
                double p_head = 0.0;
                for (uint64_t r = 0; r < n_total; ++r)
                    if (owner[r] == y) p_head += z[r];
                double scale;
                if (p_lm_target) {
                    double mix = lambda * p_head + (1.0 - lambda) * p_lm_target[ex];
                    loss -= safe_log(mix);
                    scale = mix > 0.0 ? lambda / mix : 0.0;
                } else {
                    loss -= safe_log(p_head);
                    scale = p_head > 0.0 ? 1.0 / p_head : 0.0;
                }
                if (!g) continue;
                for (uint64_t r = 0; r < n_total; ++r) {
                    double coef =
                        scale * z[r] * (p_head - (owner[r] == y ? 1.0 : 0.0)) * inv_b;
                    if (coef == 0.0) continue;
                    double* gr = g + r * dim;
                    for (uint32_t d = 0; d < dim; ++d) gr[d] += coef * h[d];
                }
            }
            chunk_loss[ci] = loss;
        });

        double loss = 0.0;
        for (uint64_t ci = 0; ci < chunks; ++ci) loss += chunk_loss[ci];
        if (grad) {
            std::fill(grad, grad + n_total * dim, 0.0);
            for (uint64_t ci = 0; ci < chunks; ++ci)
                for (size_t j = 0; j < chunk_grad[ci].size(); ++j) grad[j] += chunk_grad[ci][j];
        }
        return loss * inv_b;
    }
};

struct GroupRef {
    double* data;
    size_t len;
};

struct OptimizerState {
    std::vector<double> m, v;
    uint64_t step = 0;
};

void optimizer_step(const TrainConfig& cfg, OptimizerState& st, double lr,
                    const std::vector<GroupRef>& groups, const std::vector<double>& grad) {
    if (cfg.optimizer == Optimizer::Sgd) {
        size_t off = 0;
        for (const auto& g : groups) {
            for (size_t i = 0; i < g.len; ++i) g.data[i] -= lr * grad[off + i];
            off += g.len;
        }
        return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    st.step++;
    const double c1 = 1.0 - std::pow(b1, double(st.step));
    const double c2 = 1.0 - std::pow(b2, double(st.step));
    size_t off = 0;
    for (const auto& g : groups) {
        for (size_t i = 0; i < g.len; ++i) {
            const size_t j = off + i;
            st.m[j] = b1 * st.m[j] + (1.0 - b1) * grad[j];
            st.v[j] = b2 * st.v[j] + (1.0 - b2) * grad[j] * grad[j];
            g.data[i] -= lr * (st.m[j] / c1) / (std::sqrt(st.v[j] / c2) + eps);
        }
        off += g.len;
    }
}

using BatchFn = std::function<double(std::span<const uint64_t>, std::vector<double>&)>;
using DevFn = std::function<double()>;

// Shared epoch loop: seeded shuffle, minibatches, schedule, optional early
// stop on dev perplexity.
TrainTrace run_epochs(uint64_t n_examples, const TrainConfig& cfg,
                     const std::vector<GroupRef>& groups, const BatchFn& batch_loss_grad,
                     const DevFn& dev_ppl) {
    TrainTrace trace;
    if (cfg.batch == 0) throw ParamError("batch size must be >= 1");
    // lr == 0 is allowed: it turns training into a pure evaluation loop.
    if (!(cfg.lr >= 0.0)) throw ParamError("learning rate must be >= 0");

    size_t total_params = 0;
    for (const auto& g : groups) total_params += g.len;
    OptimizerState st;
    st.m.assign(total_params, 0.0);
    st.v.assign(total_params, 0.0);
    std::vector<double> grad(total_params, 0.0);

    const uint64_t batches_per_epoch = (n_examples + cfg.batch - 1) / cfg.batch;
    const uint64_t total_steps = std::max<uint64_t>(1, uint64_t(cfg.epochs) * batches_per_epoch);
    uint64_t step = 0;

    double best_dev = std::numeric_limits<double>::infinity();
    uint32_t since_best = 0;

    std::vector<uint64_t> order(n_examples);
    for (uint64_t i = 0; i < n_examples; ++i) order[i] = i;

    for (uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed, kStreamShuffle + epoch);
        for (uint64_t i = 0; i < n_examples; ++i) order[i] = i;
        for (uint64_t i = n_examples; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i, i)]);

        double epoch_loss = 0.0;
        for (uint64_t b = 0; b < batches_per_epoch; ++b, ++step) {
            const uint64_t lo = b * cfg.batch;
            const uint64_t hi = std::min<uint64_t>(n_examples, lo + cfg.batch);
            std::span<const uint64_t> batch(order.data() + lo, hi - lo);
            double lr = cfg.lr;
            if (cfg.schedule == LrSchedule::Cosine)
                lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
            double loss = batch_loss_grad(batch, grad);
            epoch_loss += loss * double(batch.size());
            optimizer_step(cfg, st, lr, groups, grad);
        }
        trace.epoch_loss.push_back(epoch_loss / double(n_examples));

        if (dev_ppl) {
            double ppl = dev_ppl();
            trace.dev_ppl.push_back(ppl);
            trace.final_dev_ppl = ppl;
            if (cfg.early_stop) {
                if (ppl < best_dev) {
                    best_dev = ppl;
                    since_best = 0;
                } else if (++since_best >= cfg.patience) {
                    break;
                }
            }
        }
    }
    return trace;
}

head::LearnedHead init_learned_head(uint32_t dim, const std::vector<uint32_t>& allocation,
                                    uint64_t seed) {
    const uint32_t vocab = uint32_t(allocation.size());
    std::vector<uint32_t> owners;
    for (uint32_t v = 0; v < vocab; ++v) {
        if (allocation[v] == 0) throw ConfigError("every type needs at least one embedding");
        for (uint32_t j = 0; j < allocation[v]; ++j) owners.push_back(v);
    }
    head::LearnedHead hd;
    hd.vocab = vocab;
    hd.dim = dim;
    hd.allocation = allocation;
    hd.map = head::AggregationMap::from_owners(vocab, std::move(owners));
    hd.embeddings.resize(hd.n_total() * dim);
    Rng rng(seed, kStreamInit);
    const double sigma = 1.0 / std::sqrt(double(dim));
    for (size_t i = 0; i < hd.embeddings.size(); ++i) hd.embeddings[i] = sigma * rng.normal(i);
    return hd;
}

void check_dump(const store::ContextDump& dump, View view, uint32_t vocab) {
    if (dump.size() == 0) throw ConfigError("empty training dump");
    if (!dump.has_view(view))
        throw ConfigError(std::string("dump is missing the requested view: ") + view_name(view));
    for (uint32_t y : dump.targets)
        if (y >= vocab) throw ConfigError("dump target exceeds the allocation's vocabulary");
}

std::vector<uint64_t> all_examples(uint64_t n) {
    std::vector<uint64_t> idx(n);
    for (uint64_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

std::vector<double> base_target_probs(const store::ContextDump& dump,
                                      const store::OutputEmbedding& wsm) {
    if (!dump.has_ffn) throw ConfigError("interpolated loss needs the ffn view for the base term");
    if (dump.dim != wsm.dim) throw ShapeError("dump width does not match output embedding");
    std::vector<double> out(dump.size());
    threads::parallel_chunks(dump.size(), 1024, [&](size_t, uint64_t b, uint64_t e) {
        for (uint64_t i = b; i < e; ++i) {
            auto p = head::base_lm_distribution(wsm, dump.view_row_f64(View::Ffn, i));
            out[i] = p[dump.targets[i]];
        }
    });
    return out;
}

}  // namespace

double learned_head_loss_grad(const head::LearnedHead& hd, const store::ContextDump& dump,
                              View view, std::span<const uint64_t> examples, double* grad) {
    AggCE obj{&hd, &dump, view};
    return obj.run(examples, grad);
}

double interpolated_loss_grad(const head::LearnedHead& hd, const store::ContextDump& dump,
                              View view, std::span<const double> p_lm_target, double lambda,
                              std::span<const uint64_t> examples, double* grad) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParamError("lambda must be in [0, 1]");
    AggCE obj{&hd, &dump, view, p_lm_target.data(), lambda};
    return obj.run(examples, grad);
}

double mos_loss_grad(const head::MoSHead& hd, const store::ContextDump& dump, View view,
                     std::span<const uint64_t> examples, MosGrads* grads, bool want_embedding) {
    const auto& wsm = hd.embedding();
    const uint32_t R = hd.mixtures, D = hd.dim, V = wsm.vocab;
    const double inv_b = 1.0 / double(examples.size());
    const uint64_t chunk = std::max<uint64_t>(1, (examples.size() + kGradChunks - 1) / kGradChunks);
    const uint64_t chunks = threads::chunk_count(examples.size(), chunk);

    // One f64 copy of the embedding for the whole pass.
    std::vector<double> w(size_t(V) * D);
    for (size_t i = 0; i < w.size(); ++i) w[i] = double(wsm.weights[i]);

    struct ChunkOut {
        double loss = 0.0;
        std::vector<double> proj, bias, prior, emb;
    };
    std::vector<ChunkOut> outs(chunks);

    threads::parallel_chunks(examples.size(), chunk, [&](size_t ci, uint64_t b, uint64_t e) {
        auto& o = outs[ci];
        if (grads) {
            o.proj.assign(size_t(R) * D * D, 0.0);
            o.bias.assign(size_t(R) * D, 0.0);
            o.prior.assign(size_t(R) * D, 0.0);
            if (want_embedding) o.emb.assign(size_t(V) * D, 0.0);
        }
        std::vector<double> h(D), u(R), a(size_t(R) * D), q(size_t(R) * V), t(R), gv(V), da(D);
        for (uint64_t i = b; i < e; ++i) {
            const uint64_t ex = examples[i];
            auto row = dump.view_row(view, ex);
            for (uint32_t d = 0; d < D; ++d) h[d] = double(row[d]);
            const uint32_t y = dump.targets[ex];

            for (uint32_t r = 0; r < R; ++r) {
                double dot = 0.0;
                const double* pw = hd.prior.data() + size_t(r) * D;
                for (uint32_t d = 0; d < D; ++d) dot += pw[d] * h[d];
                u[r] = dot;
            }
            softmax_inplace(u);  // u now holds the priors

            for (uint32_t r = 0; r < R; ++r) {
                const double* pm = hd.proj.data() + size_t(r) * D * D;
                const double* pb = hd.bias.data() + size_t(r) * D;
                double* ar = a.data() + size_t(r) * D;
                for (uint32_t i2 = 0; i2 < D; ++i2) {
                    double dot = pb[i2];
                    const double* prow = pm + size_t(i2) * D;
                    for (uint32_t d = 0; d < D; ++d) dot += prow[d] * h[d];
                    ar[i2] = dot;
                }
                double* qr = q.data() + size_t(r) * V;
                double m = -std::numeric_limits<double>::infinity();
                for (uint32_t v = 0; v < V; ++v) {
                    const double* wrow = w.data() + size_t(v) * D;
                    double dot = 0.0;
                    for (uint32_t d = 0; d < D; ++d) dot += wrow[d] * ar[d];
                    qr[v] = dot;
                    m = std::max(m, dot);
                }
                double sum = 0.0;
                for (uint32_t v = 0; v < V; ++v) sum += (qr[v] = std::exp(qr[v] - m));
                for (uint32_t v = 0; v < V; ++v) qr[v] /= sum;
                t[r] = qr[y];
            }
            double p = 0.0;
            for (uint32_t r = 0; r < R; ++r) p += u[r] * t[r];
            o.loss -= safe_log(p);
            if (!grads) continue;
            const double inv_p = p > 0.0 ? 1.0 / p : 0.0;

            for (uint32_t r = 0; r < R; ++r) {
                const double du = u[r] * (1.0 - t[r] * inv_p) * inv_b;
                double* gp = o.prior.data() + size_t(r) * D;
                for (uint32_t d = 0; d < D; ++d) gp[d] += du * h[d];

                const double coef = u[r] * t[r] * inv_p;
                const double* qr = q.data() + size_t(r) * V;
                for (uint32_t v = 0; v < V; ++v) gv[v] = coef * (qr[v] - (v == y ? 1.0 : 0.0));
                // da = W^T gv
                std::fill(da.begin(), da.end(), 0.0);
                for (uint32_t v = 0; v < V; ++v) {
                    if (gv[v] == 0.0) continue;
                    const double* wrow = w.data() + size_t(v) * D;
                    for (uint32_t d = 0; d < D; ++d) da[d] += wrow[d] * gv[v];
                }
                double* gb = o.bias.data() + size_t(r) * D;
                double* gm = o.proj.data() + size_t(r) * D * D;
                for (uint32_t i2 = 0; i2 < D; ++i2) {
                    const double g = da[i2] * inv_b;
                    gb[i2] += g;
                    double* grow = gm + size_t(i2) * D;
                    for (uint32_t d = 0; d < D; ++d) grow[d] += g * h[d];
                }
                if (want_embedding) {
                    const double* ar = a.data() + size_t(r) * D;
                    for (uint32_t v = 0; v < V; ++v) {
                        if (gv[v] == 0.0) continue;
                        double* gw = o.emb.data() + size_t(v) * D;
                        const double g = gv[v] * inv_b;
                        for (uint32_t d = 0; d < D; ++d) gw[d] += g * ar[d];
                    }
                }
            }
        }
    });

    double loss = 0.0;
    if (grads) {
        grads->proj.assign(size_t(R) * D * D, 0.0);
        grads->bias.assign(size_t(R) * D, 0.0);
        grads->prior.assign(size_t(R) * D, 0.0);
        grads->embedding.assign(want_embedding ? size_t(V) * D : 0, 0.0);
    }
    for (uint64_t ci = 0; ci < chunks; ++ci) {
        loss += outs[ci].loss;
        if (!grads) continue;
        for (size_t j = 0; j < grads->proj.size(); ++j) grads->proj[j] += outs[ci].proj[j];
        for (size_t j = 0; j < grads->bias.size(); ++j) grads->bias[j] += outs[ci].bias[j];
        for (size_t j = 0; j < grads->prior.size(); ++j) grads->prior[j] += outs[ci].prior[j];
        for (size_t j = 0; j < grads->embedding.size(); ++j)
            grads->embedding[j] += outs[ci].emb[j];
    }
    return loss * inv_b;
}

std::pair<head::LearnedHead, TrainTrace> train_learned_head(const store::ContextDump& dump,
                                                            View view,
                                                            const std::vector<uint32_t>& allocation,
                                                            const TrainConfig& cfg,
                                                            const store::ContextDump* dev) {
    check_dump(dump, view, uint32_t(allocation.size()));
    auto hd = init_learned_head(dump.dim, allocation, cfg.seed);
    std::vector<GroupRef> groups{{hd.embeddings.data(), hd.embeddings.size()}};
    auto dev_examples = dev ? all_examples(dev->size()) : std::vector<uint64_t>{};
    DevFn dev_fn;
    if (dev) {
        check_dump(*dev, view, hd.vocab);
        dev_fn = [&] { return std::exp(learned_head_loss_grad(hd, *dev, view, dev_examples, nullptr)); };
    }
    auto trace = run_epochs(
        dump.size(), cfg, groups,
        [&](std::span<const uint64_t> batch, std::vector<double>& grad) {
            return learned_head_loss_grad(hd, dump, view, batch, grad.data());
        },
        dev_fn);
    return {std::move(hd), std::move(trace)};
}

std::pair<head::MoSHead, TrainTrace> train_mos(const store::ContextDump& dump, View view,
                                               const store::OutputEmbedding& wsm, uint32_t mixtures,
                                               const TrainConfig& cfg,
                                               const store::ContextDump* dev) {
    if (mixtures == 0) throw ParamError("mixture count must be >= 1");
    check_dump(dump, view, wsm.vocab);
    if (dump.dim != wsm.dim) throw ShapeError("dump width does not match output embedding");

    head::MoSHead hd;
    hd.dim = dump.dim;
    hd.mixtures = mixtures;
    hd.shared_embedding = &wsm;
    const uint32_t D = hd.dim;
    hd.proj.assign(size_t(mixtures) * D * D, 0.0);
    for (uint32_t r = 0; r < mixtures; ++r)
        for (uint32_t d = 0; d < D; ++d) hd.proj[size_t(r) * D * D + size_t(d) * D + d] = 1.0;
    hd.bias.assign(size_t(mixtures) * D, 0.0);
    hd.prior.resize(size_t(mixtures) * D);
    // The seeded prior layer is the only asymmetry between mixtures at init;
    // it is what lets identical identity projections diverge during training.
    Rng rng(cfg.seed, kStreamPrior);
    const double sigma = 1.0 / std::sqrt(double(D));
    for (size_t i = 0; i < hd.prior.size(); ++i) hd.prior[i] = sigma * rng.normal(i);

    std::vector<double> emb_master;
    if (cfg.finetune_embedding) {
        hd.has_tuned_embedding = true;
        hd.tuned_embedding = wsm;
        emb_master.resize(wsm.weights.size());
        for (size_t i = 0; i < emb_master.size(); ++i) emb_master[i] = double(wsm.weights[i]);
    }

    std::vector<GroupRef> groups{{hd.proj.data(), hd.proj.size()},
                                 {hd.bias.data(), hd.bias.size()},
                                 {hd.prior.data(), hd.prior.size()}};
    if (cfg.finetune_embedding) groups.push_back({emb_master.data(), emb_master.size()});

    MosGrads g;
    auto dev_examples = dev ? all_examples(dev->size()) : std::vector<uint64_t>{};
    DevFn dev_fn;
    if (dev) {
        check_dump(*dev, view, wsm.vocab);
        dev_fn = [&] {
            return std::exp(mos_loss_grad(hd, *dev, view, dev_examples, nullptr, false));
        };
    }
    auto trace = run_epochs(
        dump.size(), cfg, groups,
        [&](std::span<const uint64_t> batch, std::vector<double>& grad) {
            double loss = mos_loss_grad(hd, dump, view, batch, &g, cfg.finetune_embedding);
            size_t off = 0;
            auto copy_in = [&](const std::vector<double>& src) {
                std::copy(src.begin(), src.end(), grad.begin() + ptrdiff_t(off));
                off += src.size();
            };
            copy_in(g.proj);
            copy_in(g.bias);
            copy_in(g.prior);
            if (cfg.finetune_embedding) copy_in(g.embedding);
            return loss;
        },
        dev_fn);
    if (cfg.finetune_embedding) {
        for (size_t i = 0; i < emb_master.size(); ++i)
            hd.tuned_embedding.weights[i] = float(emb_master[i]);
    }
    return {std::move(hd), std::move(trace)};
}

std::pair<head::LearnedHead, TrainTrace> train_interpolated(
    const store::ContextDump& dump, View view, const store::OutputEmbedding& wsm, double lambda,
    const std::vector<uint32_t>& allocation, const TrainConfig& cfg,
    const store::ContextDump* dev) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParamError("lambda must be in [0, 1]");
    check_dump(dump, view, uint32_t(allocation.size()));
    if (wsm.vocab != allocation.size()) throw ConfigError("allocation does not cover the vocabulary");

    auto hd = init_learned_head(dump.dim, allocation, cfg.seed);
    auto p_lm = base_target_probs(dump, wsm);
    std::vector<GroupRef> groups{{hd.embeddings.data(), hd.embeddings.size()}};

    std::vector<double> p_lm_dev;
    std::vector<uint64_t> dev_examples;
    DevFn dev_fn;
    if (dev) {
        check_dump(*dev, view, hd.vocab);
        p_lm_dev = base_target_probs(*dev, wsm);
        dev_examples = all_examples(dev->size());
        dev_fn = [&] {
            return std::exp(
                interpolated_loss_grad(hd, *dev, view, p_lm_dev, lambda, dev_examples, nullptr));
        };
    }
    auto trace = run_epochs(
        dump.size(), cfg, groups,
        [&](std::span<const uint64_t> batch, std::vector<double>& grad) {
            return interpolated_loss_grad(hd, dump, view, p_lm, lambda, batch, grad.data());
        },
        dev_fn);
    return {std::move(hd), std::move(trace)};
}

void write_trace_csv(const TrainTrace& trace, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << "epoch,loss,dev_ppl\n";
    for (size_t i = 0; i < trace.epoch_loss.size(); ++i) {
        f << i << ',' << trace.epoch_loss[i] << ',';
        if (i < trace.dev_ppl.size()) f << trace.dev_ppl[i];
        f << '\n';
    }
    if (!f.flush()) throw FormatError("write failed: " + path);
}

}  // namespace knnlab::train
