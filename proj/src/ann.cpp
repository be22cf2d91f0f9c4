#include "knnlab/ann.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "knnlab/core.hpp"
#include "knnlab/rng.hpp"
#include "knnlab/threads.hpp"

namespace knnlab::ann {

namespace {

constexpr char kIndexMagic[8] = {'K', 'N', 'L', 'M', 'I', 'X', '0', '1'};
constexpr uint32_t kFormatVersion = 1;
constexpr uint32_t kTrainSamplePerList = 256;
// Fixed chunk fan-out for parallel passes; boundaries depend only on n, so
// reductions in chunk order are identical for every worker count.
constexpr uint64_t kFixedChunks = 64;

uint64_t chunk_size_for(uint64_t n) { return std::max<uint64_t>(1, (n + kFixedChunks - 1) / kFixedChunks); }

inline bool better(const Neighbor& a, const Neighbor& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.row < b.row;
}

void canonical_sort(std::vector<Neighbor>& v) {
    std::sort(v.begin(), v.end(), [](const Neighbor& a, const Neighbor& b) { return better(a, b); });
}

// Keeps the k best candidates; the heap top is the worst kept entry.
class TopK {
  public:
    explicit TopK(size_t k) : k_(k) {}
    void offer(Neighbor n) {
        if (heap_.size() < k_) {
            heap_.push_back(n);
            std::push_heap(heap_.begin(), heap_.end(), cmp_);
        } else if (better(n, heap_.front())) {
            std::pop_heap(heap_.begin(), heap_.end(), cmp_);
            heap_.back() = n;
            std::push_heap(heap_.begin(), heap_.end(), cmp_);
        }
    }
    std::vector<Neighbor> take() && {
        canonical_sort(heap_);
        return std::move(heap_);
    }

  private:
    static bool cmp_(const Neighbor& a, const Neighbor& b) { return better(a, b); }
    size_t k_;
    std::vector<Neighbor> heap_;
};

inline double score_f32(const float* key, const double* q, uint32_t dim, Metric metric) {
    double acc = 0.0;
    if (metric == Metric::L2) {
        for (uint32_t d = 0; d < dim; ++d) {
            double diff = double(key[d]) - q[d];
            acc -= diff * diff;
        }
    } else {
        for (uint32_t d = 0; d < dim; ++d) acc += double(key[d]) * q[d];
    }
    return acc;
}

inline double sq_dist(const float* p, const double* c, uint32_t dim) {
    double acc = 0.0;
    for (uint32_t d = 0; d < dim; ++d) {
        double diff = double(p[d]) - c[d];
        acc += diff * diff;
    }
    return acc;
}

// The m rows with the smallest hash keys, ascending. Same construction as
// store::subsample_rows but sized directly.
std::vector<uint64_t> sample_rows(uint64_t n, uint64_t m, uint64_t seed, uint64_t stream) {
    std::vector<uint64_t> rows(n);
    for (uint64_t i = 0; i < n; ++i) rows[i] = i;
    if (m >= n) return rows;
    Rng rng(seed, stream);
    std::nth_element(rows.begin(), rows.begin() + ptrdiff_t(m), rows.end(),
                     [&](uint64_t a, uint64_t b) {
                         uint64_t ha = rng.bits(a), hb = rng.bits(b);
                         if (ha != hb) return ha < hb;
                         return a < b;
                     });
    rows.resize(m);
    std::sort(rows.begin(), rows.end());
    return rows;
}

}  // namespace

double score_row(const store::Datastore& ds, uint64_t row, std::span<const double> query,
                 Metric metric) {
    if (row >= ds.size()) throw InputError("row id out of range: " + std::to_string(row));
    if (query.size() != ds.dim()) throw ShapeError("query width does not match datastore dim");
    return score_f32(ds.keys_f32().data() + row * ds.dim(), query.data(), ds.dim(), metric);
}

NeighborSet exact_search(const store::Datastore& ds, std::span<const double> query, uint32_t k,
                         Metric metric, uint64_t shard_size) {
    if (k == 0) throw ParamError("k must be >= 1");
    if (query.size() != ds.dim()) throw ShapeError("query width does not match datastore dim");
    const uint64_t n = ds.size();
    if (shard_size == 0) shard_size = n;
    const uint64_t shards = threads::chunk_count(n, shard_size);
    const float* keys = ds.keys_f32().data();
    const uint32_t dim = ds.dim();

    std::vector<std::vector<Neighbor>> partial(shards);
    threads::parallel_chunks(n, shard_size, [&](size_t shard, uint64_t begin, uint64_t end) {
        TopK top(k);
        for (uint64_t r = begin; r < end; ++r)
            top.offer({r, score_f32(keys + r * dim, query.data(), dim, metric)});
        partial[shard] = std::move(top).take();
    });

    std::vector<Neighbor> merged;
    for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
    canonical_sort(merged);
    if (merged.size() > k) merged.resize(k);

    NeighborSet out;
    out.entries = std::move(merged);
    out.metric = metric;
    out.mask_source = Source::Exact;
    out.score_source = Source::Exact;
    return out;
}

KmeansResult kmeans(std::span<const float> points, uint64_t n, uint32_t dim, uint32_t k,
                    uint32_t iters, uint64_t seed) {
    if (k == 0) throw ParamError("kmeans k must be >= 1");
    if (k > n) throw ParamError("kmeans k exceeds point count");
    if (points.size() != n * dim) throw ShapeError("kmeans point buffer size mismatch");
    const uint64_t chunk = chunk_size_for(n);
    const uint64_t chunks = threads::chunk_count(n, chunk);

    KmeansResult res;
    res.centroids.assign(size_t(k) * dim, 0.0);
    auto centroid = [&](uint32_t c) { return res.centroids.data() + size_t(c) * dim; };

    // k-means++ seeding.
    Rng rng(seed, /*stream=*/0x17u);
    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
    {
        uint64_t first = rng.below(0, n);
        for (uint32_t d = 0; d < dim; ++d) res.centroids[d] = double(points[first * dim + d]);
        threads::parallel_chunks(n, chunk, [&](size_t, uint64_t b, uint64_t e) {
            for (uint64_t i = b; i < e; ++i) dist2[i] = sq_dist(&points[i * dim], centroid(0), dim);
        });
        for (uint32_t c = 1; c < k; ++c) {
            double total = 0.0;
            for (uint64_t i = 0; i < n; ++i) total += dist2[i];
            uint64_t pick;
            if (total > 0.0) {
                double r = rng.uniform(c) * total;
                double cum = 0.0;
                pick = n - 1;
                for (uint64_t i = 0; i < n; ++i) {
                    cum += dist2[i];
                    if (r < cum) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = rng.below(c, n);  // all remaining points coincide
            }
            double* cc = centroid(c);
            for (uint32_t d = 0; d < dim; ++d) cc[d] = double(points[pick * dim + d]);
            threads::parallel_chunks(n, chunk, [&](size_t, uint64_t b, uint64_t e) {
                for (uint64_t i = b; i < e; ++i) {
                    double d2 = sq_dist(&points[i * dim], cc, dim);
                    if (d2 < dist2[i]) dist2[i] = d2;
                }
            });
        }
    }

    std::vector<uint32_t> assign(n);
    std::vector<double> point_d2(n);
    std::vector<double> sums;
    std::vector<uint64_t> counts;
    std::vector<std::vector<double>> chunk_sums(chunks);
    std::vector<std::vector<uint64_t>> chunk_counts(chunks);
    std::vector<double> chunk_inertia(chunks);

    auto assignment_pass = [&]() {
        threads::parallel_chunks(n, chunk, [&](size_t ci, uint64_t b, uint64_t e) {
            auto& s = chunk_sums[ci];
            auto& cnt = chunk_counts[ci];
            s.assign(size_t(k) * dim, 0.0);
            cnt.assign(k, 0);
            double inertia = 0.0;
            for (uint64_t i = b; i < e; ++i) {
                const float* p = &points[i * dim];
                uint32_t best = 0;
                double best_d2 = sq_dist(p, centroid(0), dim);
                for (uint32_t c = 1; c < k; ++c) {
                    double d2 = sq_dist(p, centroid(c), dim);
                    if (d2 < best_d2) {  // strict: smaller centroid id wins ties
                        best_d2 = d2;
                        best = c;
                    }
                }
                assign[i] = best;
                point_d2[i] = best_d2;
                inertia += best_d2;
                cnt[best]++;
                double* srow = s.data() + size_t(best) * dim;
                for (uint32_t d = 0; d < dim; ++d) srow[d] += double(p[d]);
            }
            chunk_inertia[ci] = inertia;
        });
        sums.assign(size_t(k) * dim, 0.0);
        counts.assign(k, 0);
        double inertia = 0.0;
        for (uint64_t ci = 0; ci < chunks; ++ci) {
            inertia += chunk_inertia[ci];
            const auto& s = chunk_sums[ci];
            const auto& cnt = chunk_counts[ci];
            for (size_t j = 0; j < sums.size(); ++j) sums[j] += s[j];
            for (uint32_t c = 0; c < k; ++c) counts[c] += cnt[c];
        }
        return inertia;
    };

    double init_inertia = 0.0;
    for (uint64_t i = 0; i < n; ++i) init_inertia += dist2[i];
    res.inertia.push_back(init_inertia);

    for (uint32_t it = 0; it < iters; ++it) {
        assignment_pass();
        // Re-seed empty clusters from the farthest point, one point each.
        for (uint32_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            uint64_t far = 0;
            double far_d2 = -1.0;
            for (uint64_t i = 0; i < n; ++i) {
                if (point_d2[i] > far_d2) {
                    far_d2 = point_d2[i];
                    far = i;
                }
            }
            double* cc = centroid(c);
            for (uint32_t d = 0; d < dim; ++d) cc[d] = double(points[far * dim + d]);
            point_d2[far] = -1.0;  // consumed
        }
        for (uint32_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            double* cc = centroid(c);
            const double* srow = sums.data() + size_t(c) * dim;
            for (uint32_t d = 0; d < dim; ++d) cc[d] = srow[d] / double(counts[c]);
        }
        // Inertia under the updated centroids; never above the previous entry.
        double post = 0.0;
        std::vector<double> chunk_post(chunks, 0.0);
        threads::parallel_chunks(n, chunk, [&](size_t ci, uint64_t b, uint64_t e) {
            double acc = 0.0;
            for (uint64_t i = b; i < e; ++i) {
                const float* p = &points[i * dim];
                double best_d2 = sq_dist(p, centroid(0), dim);
                for (uint32_t c = 1; c < k; ++c) best_d2 = std::min(best_d2, sq_dist(p, centroid(c), dim));
                acc += best_d2;
            }
            chunk_post[ci] = acc;
        });
        for (uint64_t ci = 0; ci < chunks; ++ci) post += chunk_post[ci];
        res.inertia.push_back(post);
    }
    return res;
}

uint64_t AnnIndex::total_rows() const {
    uint64_t n = 0;
    for (const auto& l : lists) n += l.size();
    return n;
}

std::vector<uint32_t> AnnIndex::row_to_list() const {
    std::vector<uint32_t> map(total_rows(), 0);
    for (uint32_t c = 0; c < lists.size(); ++c)
        for (uint64_t r : lists[c]) map[r] = c;
    return map;
}

AnnIndex train_index(const store::Datastore& ds, uint32_t n_list, uint32_t pq_m, uint8_t pq_nbits,
                     uint64_t seed, uint32_t kmeans_iters) {
    if (n_list == 0) throw ParamError("n_list must be >= 1");
    if (n_list > ds.size()) throw ParamError("n_list exceeds datastore size");
    const uint32_t dim = ds.dim();
    if (pq_m != 0 && dim % pq_m != 0) throw ParamError("pq_m must divide the key width");
    if (pq_m != 0 && (pq_nbits == 0 || pq_nbits > 8)) throw ParamError("pq_nbits must be in [1, 8]");

    const uint64_t n = ds.size();
    const float* keys = ds.keys_f32().data();

    AnnIndex index;
    index.dim = dim;
    index.n_list = n_list;
    index.pq_m = pq_m;
    index.pq_nbits = pq_nbits;
    index.seed = seed;

    // Coarse centroids from a capped sample.
    {
        const uint64_t cap = uint64_t(kTrainSamplePerList) * n_list;
        auto rows = sample_rows(n, std::min(cap, n), seed, /*stream=*/0x21u);
        std::vector<float> sample(rows.size() * dim);
        for (size_t i = 0; i < rows.size(); ++i)
            std::memcpy(&sample[i * dim], keys + rows[i] * dim, dim * 4);
        index.centroids =
            kmeans(sample, rows.size(), dim, n_list, kmeans_iters, splitmix64(seed)).centroids;
    }

    // Assign every row to its nearest centroid; lists keep ascending row ids.
    const uint64_t chunk = chunk_size_for(n);
    const uint64_t chunks = threads::chunk_count(n, chunk);
    std::vector<uint32_t> assign(n);
    threads::parallel_chunks(n, chunk, [&](size_t, uint64_t b, uint64_t e) {
        for (uint64_t i = b; i < e; ++i) {
            const float* p = keys + i * dim;
            uint32_t best = 0;
            double best_d2 = sq_dist(p, index.centroids.data(), dim);
            for (uint32_t c = 1; c < n_list; ++c) {
                double d2 = sq_dist(p, index.centroids.data() + size_t(c) * dim, dim);
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = c;
                }
            }
            assign[i] = best;
        }
    });
    (void)chunks;
    index.lists.assign(n_list, {});
    for (uint64_t i = 0; i < n; ++i) index.lists[assign[i]].push_back(i);

    if (pq_m == 0) return index;

    const uint32_t sub = dim / pq_m;
    const uint32_t nwords = index.n_codewords();

    // Residuals of a capped sample train the per-sub-space codebooks.
    {
        const uint64_t cap = uint64_t(kTrainSamplePerList) * nwords;
        auto rows = sample_rows(n, std::min(cap, n), seed, /*stream=*/0x22u);
        std::vector<float> residual(rows.size() * dim);
        for (size_t i = 0; i < rows.size(); ++i) {
            const float* p = keys + rows[i] * dim;
            const double* c = index.centroids.data() + size_t(assign[rows[i]]) * dim;
            for (uint32_t d = 0; d < dim; ++d) residual[i * dim + d] = float(double(p[d]) - c[d]);
        }
        index.codebooks.resize(size_t(pq_m) * nwords * sub);
        std::vector<float> sub_points(rows.size() * sub);
        for (uint32_t m = 0; m < pq_m; ++m) {
            for (size_t i = 0; i < rows.size(); ++i)
                std::memcpy(&sub_points[i * sub], &residual[i * dim + m * sub], sub * 4);
            uint32_t kw = uint32_t(std::min<uint64_t>(nwords, rows.size()));
            auto r = kmeans(sub_points, rows.size(), sub, kw, kmeans_iters, splitmix64(seed) + m);
            std::copy(r.centroids.begin(), r.centroids.end(),
                      index.codebooks.begin() + size_t(m) * nwords * sub);
            // Fewer training points than codewords: remaining codewords stay 0.
        }
    }

    // Encode every row against its centroid's residual.
    std::vector<uint8_t> codes_by_row(n * pq_m);
    threads::parallel_chunks(n, chunk, [&](size_t, uint64_t b, uint64_t e) {
        std::vector<double> res_vec(dim);
        for (uint64_t i = b; i < e; ++i) {
            const float* p = keys + i * dim;
            const double* c = index.centroids.data() + size_t(assign[i]) * dim;
            for (uint32_t d = 0; d < dim; ++d) res_vec[d] = double(p[d]) - c[d];
            for (uint32_t m = 0; m < pq_m; ++m) {
                const double* rsub = res_vec.data() + size_t(m) * sub;
                uint32_t best = 0;
                double best_d2 = std::numeric_limits<double>::infinity();
                for (uint32_t wcode = 0; wcode < nwords; ++wcode) {
                    const double* cw = index.codebooks.data() + (size_t(m) * nwords + wcode) * sub;
                    double d2 = 0.0;
                    for (uint32_t d = 0; d < sub; ++d) {
                        double diff = rsub[d] - cw[d];
                        d2 += diff * diff;
                    }
                    if (d2 < best_d2) {
                        best_d2 = d2;
                        best = wcode;
                    }
                }
                codes_by_row[i * pq_m + m] = uint8_t(best);
            }
        }
    });
    index.codes.assign(n_list, {});
    for (uint32_t c = 0; c < n_list; ++c) {
        index.codes[c].resize(index.lists[c].size() * pq_m);
        for (size_t j = 0; j < index.lists[c].size(); ++j)
            std::memcpy(&index.codes[c][j * pq_m], &codes_by_row[index.lists[c][j] * pq_m], pq_m);
    }
    return index;
}

namespace {

// ADC lookup tables for one probed list: table[m * nwords + w] holds the
// sub-space contribution of codeword w.
std::vector<double> adc_tables(const AnnIndex& index, std::span<const double> query,
                               uint32_t list_id, Metric metric) {
    const uint32_t sub = index.sub_dim();
    const uint32_t nwords = index.n_codewords();
    const double* c = index.centroids.data() + size_t(list_id) * index.dim;
    std::vector<double> table(size_t(index.pq_m) * nwords);
    for (uint32_t m = 0; m < index.pq_m; ++m) {
        for (uint32_t wcode = 0; wcode < nwords; ++wcode) {
            const double* cw = index.codebooks.data() + (size_t(m) * nwords + wcode) * sub;
            double acc = 0.0;
            if (metric == Metric::L2) {
                for (uint32_t d = 0; d < sub; ++d) {
                    double diff = (query[m * sub + d] - c[m * sub + d]) - cw[d];
                    acc += diff * diff;
                }
            } else {
                for (uint32_t d = 0; d < sub; ++d) acc += query[m * sub + d] * cw[d];
            }
            table[size_t(m) * nwords + wcode] = acc;
        }
    }
    return table;
}

double adc_score(const AnnIndex& index, const std::vector<double>& table, const uint8_t* code,
                 std::span<const double> query, uint32_t list_id, Metric metric) {
    const uint32_t nwords = index.n_codewords();
    double acc = 0.0;
    for (uint32_t m = 0; m < index.pq_m; ++m) acc += table[size_t(m) * nwords + code[m]];
    if (metric == Metric::L2) return -acc;
    // IP: query . (centroid + reconstructed residual)
    const double* c = index.centroids.data() + size_t(list_id) * index.dim;
    double base = 0.0;
    for (uint32_t d = 0; d < index.dim; ++d) base += query[d] * c[d];
    return base + acc;
}

std::vector<uint32_t> probe_order(const AnnIndex& index, std::span<const double> query,
                                  uint32_t n_probe, Metric metric) {
    core::ScoreVector sv;
    sv.metric = metric;
    sv.entries.resize(index.n_list);
    for (uint32_t c = 0; c < index.n_list; ++c) {
        const double* cc = index.centroids.data() + size_t(c) * index.dim;
        double acc = 0.0;
        if (metric == Metric::L2) {
            for (uint32_t d = 0; d < index.dim; ++d) {
                double diff = cc[d] - query[d];
                acc -= diff * diff;
            }
        } else {
            for (uint32_t d = 0; d < index.dim; ++d) acc += cc[d] * query[d];
        }
        sv.entries[c] = acc;
    }
    auto order = core::topk_indices(sv, n_probe);
    return std::vector<uint32_t>(order.begin(), order.end());
}

}  // namespace

NeighborSet approx_search(const AnnIndex& index, const store::Datastore& ds,
                          std::span<const double> query, uint32_t k, uint32_t n_probe,
                          Metric metric) {
    if (k == 0) throw ParamError("k must be >= 1");
    if (query.size() != index.dim || index.dim != ds.dim())
        throw ShapeError("query width does not match index dim");
    n_probe = std::clamp<uint32_t>(n_probe, 1, index.n_list);

    const float* keys = ds.keys_f32().data();
    TopK top(k);
    for (uint32_t list_id : probe_order(index, query, n_probe, metric)) {
        const auto& rows = index.lists[list_id];
        if (rows.empty()) continue;
        if (index.has_pq()) {
            auto table = adc_tables(index, query, list_id, metric);
            const uint8_t* codes = index.codes[list_id].data();
            for (size_t j = 0; j < rows.size(); ++j)
                top.offer({rows[j],
                           adc_score(index, table, codes + j * index.pq_m, query, list_id, metric)});
        } else {
            for (uint64_t r : rows)
                top.offer({r, score_f32(keys + r * index.dim, query.data(), index.dim, metric)});
        }
    }

    NeighborSet out;
    out.entries = std::move(top).take();
    out.metric = metric;
    out.mask_source = Source::Approx;
    out.score_source = index.has_pq() ? Source::Approx : Source::Exact;
    return out;
}

NeighborSet rescore(const store::Datastore& ds, std::span<const double> query,
                    const NeighborSet& neighbors, Metric metric) {
    NeighborSet out;
    out.metric = metric;
    out.mask_source = neighbors.mask_source;
    out.score_source = Source::Exact;
    out.entries.reserve(neighbors.size());
    for (const auto& e : neighbors.entries)
        out.entries.push_back({e.row, score_row(ds, e.row, query, metric)});
    canonical_sort(out.entries);
    return out;
}

NeighborSet pq_rescore(const AnnIndex& index, const store::Datastore& ds,
                       std::span<const double> query, const NeighborSet& neighbors, Metric metric) {
    if (!index.has_pq()) {
        NeighborSet out = rescore(ds, query, neighbors, metric);
        return out;
    }
    if (query.size() != index.dim) throw ShapeError("query width does not match index dim");
    const uint64_t n = index.total_rows();
    auto row_list = index.row_to_list();
    // Positions within lists, resolved once per call.
    std::vector<uint64_t> row_pos(n);
    for (const auto& list : index.lists)
        for (uint64_t j = 0; j < list.size(); ++j) row_pos[list[j]] = j;

    NeighborSet out;
    out.metric = metric;
    out.mask_source = neighbors.mask_source;
    out.score_source = Source::Approx;
    out.entries.reserve(neighbors.size());
    std::vector<double> table;
    uint32_t cached_list = UINT32_MAX;
    for (const auto& e : neighbors.entries) {
        if (e.row >= n) throw InputError("row id out of range: " + std::to_string(e.row));
        uint32_t list_id = row_list[e.row];
        if (list_id != cached_list) {
            table = adc_tables(index, query, list_id, metric);
            cached_list = list_id;
        }
        const uint8_t* code = index.codes[list_id].data() + row_pos[e.row] * index.pq_m;
        out.entries.push_back({e.row, adc_score(index, table, code, query, list_id, metric)});
    }
    canonical_sort(out.entries);
    return out;
}

void write_index(const AnnIndex& index, const std::string& path) {
    BinaryWriter w(path);
    w.magic(kIndexMagic);
    w.u32(kFormatVersion);
    w.u32(index.dim);
    w.u32(index.n_list);
    w.u32(index.pq_m);
    w.u8(index.pq_nbits);
    w.u64(index.seed);
    w.bytes(index.centroids.data(), index.centroids.size() * 8);
    if (index.has_pq()) w.bytes(index.codebooks.data(), index.codebooks.size() * 8);
    for (uint32_t c = 0; c < index.n_list; ++c) {
        w.u64(index.lists[c].size());
        w.bytes(index.lists[c].data(), index.lists[c].size() * 8);
        if (index.has_pq()) w.bytes(index.codes[c].data(), index.codes[c].size());
    }
    w.close();
}

AnnIndex open_index(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kIndexMagic);
    if (r.u32() != kFormatVersion) r.fail("unsupported version");
    AnnIndex index;
    index.dim = r.u32();
    index.n_list = r.u32();
    index.pq_m = r.u32();
    index.pq_nbits = r.u8();
    index.seed = r.u64();
    if (index.dim == 0 || index.n_list == 0) r.fail("empty index header");
    if (index.pq_m != 0 && index.dim % index.pq_m != 0) r.fail("pq_m does not divide dim");
    index.centroids.resize(size_t(index.n_list) * index.dim);
    r.bytes(index.centroids.data(), index.centroids.size() * 8);
    if (index.has_pq()) {
        index.codebooks.resize(size_t(index.pq_m) * index.n_codewords() * index.sub_dim());
        r.bytes(index.codebooks.data(), index.codebooks.size() * 8);
    }
    index.lists.resize(index.n_list);
    if (index.has_pq()) index.codes.resize(index.n_list);
    for (uint32_t c = 0; c < index.n_list; ++c) {
        uint64_t len = r.u64();
        index.lists[c].resize(len);
        r.bytes(index.lists[c].data(), len * 8);
        if (index.has_pq()) {
            index.codes[c].resize(len * index.pq_m);
            r.bytes(index.codes[c].data(), index.codes[c].size());
        }
    }
    r.expect_eof();
    return index;
}

}  // namespace knnlab::ann
