#include "knnlab/head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace knnlab::head {

namespace {

constexpr char kHeadMagic[8] = {'K', 'N', 'L', 'M', 'H', 'D', '0', '1'};
constexpr uint32_t kFormatVersion = 1;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Head file kind tags.
enum : uint8_t { kTagLearned = 0, kTagCluster = 1, kTagMos = 2 };

}  // namespace

AggregationMap AggregationMap::from_owners(uint32_t vocab, std::vector<uint32_t> owners) {
    for (uint32_t v : owners)
        if (v >= vocab) throw InputError("aggregation owner id out of range");
    AggregationMap map;
    map.vocab = vocab;
    map.owner = std::move(owners);
    return map;
}

AggregationMap AggregationMap::from_columns(
    uint32_t vocab, const std::vector<std::vector<std::pair<uint32_t, double>>>& cols) {
    AggregationMap map;
    map.vocab = vocab;
    map.offsets.reserve(cols.size() + 1);
    map.offsets.push_back(0);
    for (const auto& col : cols) {
        double sum = 0.0;
        for (auto [v, w] : col) {
            if (v >= vocab) throw InputError("aggregation column id out of range");
            map.col_ids.push_back(v);
            map.col_weights.push_back(w);
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw InputError("aggregation column does not sum to 1");
        map.offsets.push_back(map.col_ids.size());
    }
    return map;
}

void AggregationMap::accumulate(std::span<const double> mass, std::span<double> out) const {
    if (one_hot()) {
        for (size_t r = 0; r < owner.size(); ++r) out[owner[r]] += mass[r];
    } else {
        for (size_t r = 0; r + 1 < offsets.size(); ++r)
            for (uint64_t j = offsets[r]; j < offsets[r + 1]; ++j)
                out[col_ids[j]] += col_weights[j] * mass[r];
    }
}

const store::OutputEmbedding& MoSHead::embedding() const {
    if (has_tuned_embedding) return tuned_embedding;
    if (!shared_embedding) throw ConfigError("mixture head has no output embedding bound");
    return *shared_embedding;
}

const char* head_kind_name(HeadKind kind) {
    switch (kind) {
        case HeadKind::Knn: return "knn";
        case HeadKind::FullKnn: return "full-knn";
        case HeadKind::Learned: return "learned";
        case HeadKind::Mos: return "mos";
        case HeadKind::Cluster: return "cluster";
        case HeadKind::Sparsify: return "sparsify";
        case HeadKind::LmEmbedAsDatastore: return "lm-embedding-as-datastore";
    }
    return "?";
}

HeadKind head_kind_from_name(const std::string& name) {
    for (uint8_t i = 0; i <= uint8_t(HeadKind::LmEmbedAsDatastore); ++i)
        if (name == head_kind_name(HeadKind(i))) return HeadKind(i);
    throw ConfigError("unknown head kind: " + name);
}

core::ProbVector knn_distribution(const ann::NeighborSet& neighbors,
                                  const std::vector<uint32_t>& ds_values, double tau,
                                  uint32_t vocab) {
    if (neighbors.empty()) throw DegenerateInputError("empty neighbor set");
    core::ScoreVector sv;
    sv.metric = neighbors.metric;
    sv.entries.reserve(neighbors.size());
    for (const auto& e : neighbors.entries) {
        if (e.row >= ds_values.size()) throw InputError("neighbor row out of range");
        sv.entries.push_back(e.score);
    }
    auto mass = core::softmax_with_temperature(sv, tau);
    core::ProbVector out(vocab, 0.0);
    for (size_t i = 0; i < neighbors.size(); ++i) {
        uint32_t v = ds_values[neighbors.entries[i].row];
        if (v >= vocab) throw InputError("datastore value exceeds vocabulary");
        out[v] += mass[i];
    }
    return out;
}

core::ProbVector full_knn_distribution(const store::Datastore& ds, std::span<const double> query,
                                       double tau, Metric metric, uint32_t vocab) {
    if (query.size() != ds.dim()) throw ShapeError("query width does not match datastore dim");
    if (!(tau > 0.0)) throw ParamError("softmax temperature must be > 0");
    const float* keys = ds.keys_f32().data();
    const uint32_t dim = ds.dim();
    const uint64_t n = ds.size();

    std::vector<double> scores(n);
    double m = kNegInf;
    for (uint64_t r = 0; r < n; ++r) {
        double s = 0.0;
        const float* key = keys + r * dim;
        if (metric == Metric::L2) {
            for (uint32_t d = 0; d < dim; ++d) {
                double diff = double(key[d]) - query[d];
                s -= diff * diff;
            }
        } else {
            for (uint32_t d = 0; d < dim; ++d) s += double(key[d]) * query[d];
        }
        scores[r] = s;
        if (s > m) m = s;
    }
    core::ProbVector out(vocab, 0.0);
    double sum = 0.0;
    for (uint64_t r = 0; r < n; ++r) {
        double e = std::exp((scores[r] - m) / tau);
        scores[r] = e;
        sum += e;
    }
    for (uint64_t r = 0; r < n; ++r) {
        uint32_t v = ds.values()[r];
        if (v >= vocab) throw InputError("datastore value exceeds vocabulary");
        out[v] += scores[r] / sum;
    }
    return out;
}

core::ProbVector learned_head_predict(std::span<const double> h, const LearnedHead& head,
                                      double tau) {
    if (h.size() != head.dim) throw ShapeError("context width does not match head dim");
    const uint64_t n = head.n_total();
    core::ScoreVector sv;
    sv.metric = Metric::IP;
    sv.entries.resize(n);
    for (uint64_t r = 0; r < n; ++r) {
        const double* row = head.embeddings.data() + r * head.dim;
        double dot = 0.0;
        for (uint32_t d = 0; d < head.dim; ++d) dot += row[d] * h[d];
        sv.entries[r] = dot;
    }
    auto mass = core::softmax_with_temperature(sv, tau);
    core::ProbVector out(head.vocab, 0.0);
    head.map.accumulate(mass, out);
    return out;
}

std::vector<uint32_t> allocate_embeddings(std::span<const double> per_type_stat,
                                          AllocationScheme scheme, uint64_t target_total) {
    const size_t v_count = per_type_stat.size();
    if (v_count == 0) throw ParamError("empty stat vector");
    if (target_total < v_count) throw ParamError("target total below one embedding per type");

    if (scheme == AllocationScheme::Equal) {
        if (target_total % v_count != 0)
            throw ParamError("equal scheme needs a total divisible by the vocabulary size");
        return std::vector<uint32_t>(v_count, uint32_t(target_total / v_count));
    }

    for (double f : per_type_stat)
        if (!(f > 0.0)) throw ParamError("per-type stats must be positive");
    std::vector<double> logf(v_count);
    double log_sum = 0.0;
    for (size_t i = 0; i < v_count; ++i) log_sum += (logf[i] = std::log(per_type_stat[i]));

    std::vector<double> real_alloc(v_count, 1.0);
    if (target_total == v_count) {
        // Any base gives total V only when every type rounds to exactly 1.
    } else if (log_sum == 0.0) {
        throw ParamError("stats admit no base reaching the requested total");
    } else {
        // sum_v (1 + log_b f_v) = V + log_sum / ln b is monotone in ln b on the
        // half-line matching sign(log_sum); bisect there.
        const double want = double(target_total) - double(v_count);
        const double sign = log_sum > 0.0 ? 1.0 : -1.0;
        double lo = 1e-12, hi = 1.0;
        auto total_at = [&](double x) { return log_sum / (sign * x); };  // x = |ln b|
        while (total_at(hi) > want) hi *= 2.0;
        while (total_at(lo) < want) lo *= 0.5;
        for (int it = 0; it < 200; ++it) {
            double mid = 0.5 * (lo + hi);
            if (total_at(mid) > want)
                lo = mid;
            else
                hi = mid;
        }
        const double ln_b = sign * 0.5 * (lo + hi);
        for (size_t i = 0; i < v_count; ++i) real_alloc[i] = 1.0 + logf[i] / ln_b;
    }

    // Largest-remainder rounding to integers >= 1, preserving the total.
    std::vector<uint32_t> alloc(v_count);
    std::vector<double> remainder(v_count);
    int64_t assigned = 0;
    for (size_t i = 0; i < v_count; ++i) {
        double floored = std::floor(real_alloc[i]);
        if (floored < 1.0) {
            alloc[i] = 1;
            remainder[i] = 0.0;  // already bumped, out of the remainder race
        } else {
            alloc[i] = uint32_t(floored);
            remainder[i] = real_alloc[i] - floored;
        }
        assigned += alloc[i];
    }
    int64_t deficit = int64_t(target_total) - assigned;
    std::vector<size_t> order(v_count);
    for (size_t i = 0; i < v_count; ++i) order[i] = i;
    if (deficit > 0) {
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
            return a < b;
        });
        for (size_t j = 0; deficit > 0 && j < v_count; ++j, --deficit) alloc[order[j]]++;
        if (deficit > 0) {  // all remainders consumed; spread round-robin
            for (size_t j = 0; deficit > 0; j = (j + 1) % v_count, --deficit) alloc[order[j]]++;
        }
    } else if (deficit < 0) {
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (remainder[a] != remainder[b]) return remainder[a] < remainder[b];
            return a > b;
        });
        for (size_t j = 0; deficit < 0 && j < v_count; ++j) {
            if (alloc[order[j]] > 1) {
                alloc[order[j]]--;
                ++deficit;
            }
        }
        if (deficit < 0) throw ParamError("total infeasible with one embedding per type");
    }
    return alloc;
}

core::ProbVector mos_predict(std::span<const double> h, const MoSHead& head) {
    if (h.size() != head.dim) throw ShapeError("context width does not match head dim");
    const auto& wsm = head.embedding();
    if (wsm.dim != head.dim) throw ShapeError("output embedding dim does not match head dim");
    const uint32_t R = head.mixtures, D = head.dim, V = wsm.vocab;

    core::ScoreVector prior_logits;
    prior_logits.entries.resize(R);
    for (uint32_t r = 0; r < R; ++r) {
        double dot = 0.0;
        const double* w = head.prior.data() + size_t(r) * D;
        for (uint32_t d = 0; d < D; ++d) dot += w[d] * h[d];
        prior_logits.entries[r] = dot;
    }
    auto priors = core::softmax_with_temperature(prior_logits, 1.0);

    core::ProbVector out(V, 0.0);
    std::vector<double> a(D);
    core::ScoreVector logits;
    logits.entries.resize(V);
    for (uint32_t r = 0; r < R; ++r) {
        const double* w = head.proj.data() + size_t(r) * D * D;
        const double* b = head.bias.data() + size_t(r) * D;
        for (uint32_t i = 0; i < D; ++i) {
            double dot = b[i];
            for (uint32_t d = 0; d < D; ++d) dot += w[size_t(i) * D + d] * h[d];
            a[i] = dot;
        }
        for (uint32_t v = 0; v < V; ++v) {
            auto row = wsm.row(v);
            double dot = 0.0;
            for (uint32_t d = 0; d < D; ++d) dot += double(row[d]) * a[d];
            logits.entries[v] = dot;
        }
        auto q = core::softmax_with_temperature(logits, 1.0);
        for (uint32_t v = 0; v < V; ++v) out[v] += priors[r] * q[v];
    }
    return out;
}

LearnedHead cluster_head_from_datastore(const store::Datastore& ds, uint32_t n_centroids,
                                        uint32_t iters, uint64_t seed) {
    if (n_centroids > ds.size()) throw ParamError("n_centroids exceeds datastore size");
    const uint32_t dim = ds.dim();
    const uint64_t n = ds.size();
    auto km = ann::kmeans(ds.keys_f32(), n, dim, n_centroids, iters, seed);

    // Final assignment decides the value distribution of each cluster.
    std::vector<uint32_t> assign(n);
    const float* keys = ds.keys_f32().data();
    for (uint64_t i = 0; i < n; ++i) {
        const float* p = keys + i * dim;
        uint32_t best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (uint32_t c = 0; c < n_centroids; ++c) {
            const double* cc = km.centroids.data() + size_t(c) * dim;
            double d2 = 0.0;
            for (uint32_t d = 0; d < dim; ++d) {
                double diff = double(p[d]) - cc[d];
                d2 += diff * diff;
            }
            if (d2 < best_d2) {
                best_d2 = d2;
                best = c;
            }
        }
        assign[i] = best;
    }

    uint32_t vocab = 0;
    for (uint32_t v : ds.values()) vocab = std::max(vocab, v + 1);

    std::vector<std::vector<uint64_t>> value_counts(n_centroids, std::vector<uint64_t>(vocab, 0));
    std::vector<uint64_t> totals(n_centroids, 0);
    for (uint64_t i = 0; i < n; ++i) {
        value_counts[assign[i]][ds.values()[i]]++;
        totals[assign[i]]++;
    }

    LearnedHead headm;
    headm.vocab = vocab;
    headm.dim = dim;
    std::vector<std::vector<std::pair<uint32_t, double>>> cols;
    for (uint32_t c = 0; c < n_centroids; ++c) {
        if (totals[c] == 0) continue;  // cluster left empty by final assignment
        headm.embeddings.insert(headm.embeddings.end(), km.centroids.begin() + size_t(c) * dim,
                                km.centroids.begin() + size_t(c + 1) * dim);
        auto& col = cols.emplace_back();
        for (uint32_t v = 0; v < vocab; ++v)
            if (value_counts[c][v] > 0)
                col.push_back({v, double(value_counts[c][v]) / double(totals[c])});
    }
    headm.map = AggregationMap::from_columns(vocab, cols);
    return headm;
}

core::ProbVector sparsify_distribution(const core::ProbVector& p, uint32_t k, double tau) {
    if (k == 0) throw ParamError("k must be >= 1");
    core::ScoreVector sv;
    sv.entries = core::log_probs(p);
    auto keep = core::topk_indices(sv, k);
    core::ScoreVector masked;
    masked.entries.assign(p.size(), kNegInf);
    for (size_t i : keep) masked.entries[i] = sv.entries[i];
    return core::softmax_with_temperature(masked, tau);
}

core::ProbVector lm_embedding_distribution(const store::OutputEmbedding& wsm,
                                           std::span<const double> h_ds, double tau, Metric metric,
                                           const ann::NeighborSet* neighbors,
                                           const std::vector<uint32_t>* ds_values) {
    if (h_ds.size() != wsm.dim) throw ShapeError("context width does not match embedding dim");
    core::ScoreVector sv;
    sv.metric = metric;
    sv.entries.assign(wsm.vocab, kNegInf);
    std::vector<char> allowed;
    if (neighbors) {
        if (!ds_values) throw ConfigError("neighbor mask needs datastore values");
        if (neighbors->empty()) throw DegenerateInputError("empty neighbor set");
        allowed.assign(wsm.vocab, 0);
        for (const auto& e : neighbors->entries) allowed[(*ds_values)[e.row]] = 1;
    }
    for (uint32_t v = 0; v < wsm.vocab; ++v) {
        if (neighbors && !allowed[v]) continue;
        auto row = wsm.row(v);
        double s = 0.0;
        if (metric == Metric::L2) {
            for (uint32_t d = 0; d < wsm.dim; ++d) {
                double diff = double(row[d]) - h_ds[d];
                s -= diff * diff;
            }
        } else {
            for (uint32_t d = 0; d < wsm.dim; ++d) s += double(row[d]) * h_ds[d];
        }
        sv.entries[v] = s;
    }
    return core::softmax_with_temperature(sv, tau);
}

core::ProbVector base_lm_distribution(const store::OutputEmbedding& wsm,
                                      std::span<const double> h_sm) {
    if (h_sm.size() != wsm.dim) throw ShapeError("context width does not match embedding dim");
    core::ScoreVector sv;
    sv.metric = Metric::IP;
    sv.entries.resize(wsm.vocab);
    for (uint32_t v = 0; v < wsm.vocab; ++v) {
        auto row = wsm.row(v);
        double dot = 0.0;
        for (uint32_t d = 0; d < wsm.dim; ++d) dot += double(row[d]) * h_sm[d];
        sv.entries[v] = dot;
    }
    return core::softmax_with_temperature(sv, 1.0);
}

ann::NeighborSet retrieve(const HeadConfig& config, const ModelObjects& objects,
                          std::span<const double> h_ds) {
    if (!objects.datastore) throw ConfigError("retrieval needs a datastore");
    const auto& ds = *objects.datastore;
    ann::NeighborSet neighbors;
    if (config.mask_source == Source::Exact) {
        neighbors = ann::exact_search(ds, h_ds, config.k, config.metric);
        if (config.score_source == Source::Approx) {
            if (!objects.index) throw ConfigError("approx scores need an index");
            neighbors = ann::pq_rescore(*objects.index, ds, h_ds, neighbors, config.metric);
        }
    } else {
        if (!objects.index) throw ConfigError("approx mask needs an index");
        neighbors = ann::approx_search(*objects.index, ds, h_ds, config.k, config.n_probe,
                                       config.metric);
        if (config.score_source == Source::Exact)
            neighbors = ann::rescore(ds, h_ds, neighbors, config.metric);
    }
    return neighbors;
}

core::ProbVector head_distribution(std::span<const double> h_ds, const core::ProbVector& p_lm,
                                   const store::OutputEmbedding& wsm, const HeadConfig& config,
                                   const ModelObjects& objects) {
    const uint32_t vocab = wsm.vocab;
    core::ProbVector p_head;
    switch (config.kind) {
        case HeadKind::Knn: {
            auto neighbors = retrieve(config, objects, h_ds);
            if (neighbors.empty()) {
                p_head.assign(vocab, 0.0);  // surfaces as -inf log-prob downstream
            } else {
                p_head = knn_distribution(neighbors, objects.datastore->values(), config.tau, vocab);
            }
            break;
        }
        case HeadKind::FullKnn: {
            if (!objects.datastore) throw ConfigError("full-knn head needs a datastore");
            p_head = full_knn_distribution(*objects.datastore, h_ds, config.tau, config.metric, vocab);
            break;
        }
        case HeadKind::Learned:
        case HeadKind::Cluster: {
            if (!objects.learned) throw ConfigError("learned/cluster head object missing");
            if (objects.learned->vocab != vocab) throw ShapeError("head vocabulary mismatch");
            p_head = learned_head_predict(h_ds, *objects.learned, config.tau);
            break;
        }
        case HeadKind::Mos: {
            if (!objects.mos) throw ConfigError("mixture head object missing");
            p_head = mos_predict(h_ds, *objects.mos);
            break;
        }
        case HeadKind::Sparsify: {
            p_head = sparsify_distribution(p_lm, config.k, config.tau);
            break;
        }
        case HeadKind::LmEmbedAsDatastore: {
            if (objects.datastore) {
                auto neighbors = retrieve(config, objects, h_ds);
                if (neighbors.empty()) {
                    p_head.assign(vocab, 0.0);
                } else {
                    p_head = lm_embedding_distribution(wsm, h_ds, config.tau, config.metric,
                                                       &neighbors, &objects.datastore->values());
                }
            } else {
                p_head = lm_embedding_distribution(wsm, h_ds, config.tau, config.metric, nullptr,
                                                   nullptr);
            }
            break;
        }
    }
    return p_head;
}

core::ProbVector generalized_predict(std::span<const double> h_sm, std::span<const double> h_ds,
                                     const store::OutputEmbedding& wsm, const HeadConfig& config,
                                     const ModelObjects& objects) {
    auto p_lm = base_lm_distribution(wsm, h_sm);
    auto p_head = head_distribution(h_ds, p_lm, wsm, config, objects);
    return core::interpolate(p_lm, p_head, config.lambda);
}

// --- head files ---

void write_head(const LearnedHead& head, const std::string& path) {
    BinaryWriter w(path);
    w.magic(kHeadMagic);
    w.u32(kFormatVersion);
    w.u8(head.allocation.empty() ? kTagCluster : kTagLearned);
    w.u32(head.vocab);
    w.u32(head.dim);
    w.u64(head.n_total());
    w.u32(uint32_t(head.allocation.size()));
    w.bytes(head.allocation.data(), head.allocation.size() * 4);
    w.bytes(head.embeddings.data(), head.embeddings.size() * 8);
    // Aggregation map as (row, vocab id, weight) triplets.
    uint64_t triplets = head.map.one_hot() ? head.map.rows() : head.map.col_ids.size();
    w.u64(triplets);
    if (head.map.one_hot()) {
        for (uint64_t r = 0; r < head.map.rows(); ++r) {
            w.u64(r);
            w.u32(head.map.owner[r]);
            w.f64(1.0);
        }
    } else {
        for (uint64_t r = 0; r + 1 < head.map.offsets.size(); ++r) {
            for (uint64_t j = head.map.offsets[r]; j < head.map.offsets[r + 1]; ++j) {
                w.u64(r);
                w.u32(head.map.col_ids[j]);
                w.f64(head.map.col_weights[j]);
            }
        }
    }
    w.close();
}

LearnedHead open_head(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kHeadMagic);
    if (r.u32() != kFormatVersion) r.fail("unsupported version");
    uint8_t tag = r.u8();
    if (tag != kTagLearned && tag != kTagCluster) r.fail("not a learned/cluster head file");
    LearnedHead head;
    head.vocab = r.u32();
    head.dim = r.u32();
    uint64_t n_total = r.u64();
    uint32_t alloc_len = r.u32();
    head.allocation.resize(alloc_len);
    r.bytes(head.allocation.data(), alloc_len * 4);
    head.embeddings.resize(n_total * head.dim);
    r.bytes(head.embeddings.data(), head.embeddings.size() * 8);
    uint64_t triplets = r.u64();
    std::vector<std::vector<std::pair<uint32_t, double>>> cols(n_total);
    bool all_unit = true;
    for (uint64_t i = 0; i < triplets; ++i) {
        uint64_t row = r.u64();
        uint32_t v = r.u32();
        double weight = r.f64();
        if (row >= n_total) r.fail("triplet row out of range");
        cols[row].push_back({v, weight});
        all_unit = all_unit && weight == 1.0;
    }
    r.expect_eof();
    if (all_unit) {
        std::vector<uint32_t> owners(n_total);
        for (uint64_t row = 0; row < n_total; ++row) {
            if (cols[row].size() != 1) {
                all_unit = false;
                break;
            }
            owners[row] = cols[row][0].first;
        }
        if (all_unit) {
            head.map = AggregationMap::from_owners(head.vocab, std::move(owners));
            return head;
        }
    }
    head.map = AggregationMap::from_columns(head.vocab, cols);
    return head;
}

void write_mos_head(const MoSHead& head, const std::string& path) {
    BinaryWriter w(path);
    w.magic(kHeadMagic);
    w.u32(kFormatVersion);
    w.u8(kTagMos);
    w.u32(head.dim);
    w.u32(head.mixtures);
    w.bytes(head.proj.data(), head.proj.size() * 8);
    w.bytes(head.bias.data(), head.bias.size() * 8);
    w.bytes(head.prior.data(), head.prior.size() * 8);
    w.u8(head.has_tuned_embedding ? 1 : 0);
    if (head.has_tuned_embedding) {
        w.u32(head.tuned_embedding.vocab);
        w.u32(head.tuned_embedding.dim);
        w.bytes(head.tuned_embedding.weights.data(), head.tuned_embedding.weights.size() * 4);
    }
    w.close();
}

MoSHead open_mos_head(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kHeadMagic);
    if (r.u32() != kFormatVersion) r.fail("unsupported version");
    if (r.u8() != kTagMos) r.fail("not a mixture head file");
    MoSHead head;
    head.dim = r.u32();
    head.mixtures = r.u32();
    if (head.dim == 0 || head.mixtures == 0) r.fail("empty mixture header");
    head.proj.resize(size_t(head.mixtures) * head.dim * head.dim);
    head.bias.resize(size_t(head.mixtures) * head.dim);
    head.prior.resize(size_t(head.mixtures) * head.dim);
    r.bytes(head.proj.data(), head.proj.size() * 8);
    r.bytes(head.bias.data(), head.bias.size() * 8);
    r.bytes(head.prior.data(), head.prior.size() * 8);
    if (r.u8()) {
        head.has_tuned_embedding = true;
        head.tuned_embedding.vocab = r.u32();
        head.tuned_embedding.dim = r.u32();
        head.tuned_embedding.weights.resize(size_t(head.tuned_embedding.vocab) *
                                            head.tuned_embedding.dim);
        r.bytes(head.tuned_embedding.weights.data(), head.tuned_embedding.weights.size() * 4);
    }
    r.expect_eof();
    return head;
}

}  // namespace knnlab::head
