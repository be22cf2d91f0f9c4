#ifndef KNNLAB_ANN_HPP_
#define KNNLAB_ANN_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knnlab/common.hpp"
#include "knnlab/store.hpp"

// Exact (sharded brute-force) and approximate (IVF + optional PQ) search.
// Scores are uniformly "larger is better": L2 similarity is the negative
// squared distance, IP the inner product, so one softmax convention serves
// both metrics downstream.

namespace knnlab::ann {

struct Neighbor {
    uint64_t row;
    double score;
};

// Ordered score-descending, smaller row id first on ties; row ids are unique.
struct NeighborSet {
    std::vector<Neighbor> entries;
    Metric metric = Metric::L2;
    Source mask_source = Source::Exact;
    Source score_source = Source::Exact;

    size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
};

struct KmeansResult {
    std::vector<double> centroids;  // k x dim row-major
    // Total squared distance to the nearest centroid, recorded before each
    // Lloyd update and once after the last; non-increasing by construction.
    std::vector<double> inertia;
};

// IVF coarse partition with optional product quantizer over residuals.
struct AnnIndex {
    uint32_t dim = 0;
    uint32_t n_list = 0;
    uint32_t pq_m = 0;      // 0 disables PQ
    uint8_t pq_nbits = 8;   // codewords per sub-space = 2^pq_nbits
    uint64_t seed = 0;
    std::vector<double> centroids;        // n_list x dim
    std::vector<std::vector<uint64_t>> lists;  // row ids per centroid
    std::vector<std::vector<uint8_t>> codes;   // per list: len x pq_m, PQ only
    // Codebooks per sub-space: pq_m x (2^pq_nbits) x (dim / pq_m).
    std::vector<double> codebooks;

    bool has_pq() const { return pq_m > 0; }
    uint32_t sub_dim() const { return pq_m ? dim / pq_m : 0; }
    uint32_t n_codewords() const { return uint32_t(1) << pq_nbits; }
    uint64_t total_rows() const;
    // Inverse of the inverted lists: row id -> list id.
    std::vector<uint32_t> row_to_list() const;
};

// True top-k under the metric, computed by scanning shards of shard_size rows
// and merging partial lists; the result is independent of shard_size.
// shard_size == 0 means a single shard. Throws ShapeError on width mismatch.
NeighborSet exact_search(const store::Datastore& ds, std::span<const double> query, uint32_t k,
                         Metric metric, uint64_t shard_size = 0);

// k-means++ init, Lloyd iterations, empty clusters re-seeded from the point
// farthest from its centroid. Deterministic given seed, for any thread count.
// Throws ParamError if k > n or k == 0.
KmeansResult kmeans(std::span<const float> points, uint64_t n, uint32_t dim, uint32_t k,
                    uint32_t iters, uint64_t seed);

// Coarse centroids from a seeded sample of at most 256 * n_list keys; every
// row assigned to its nearest centroid (smaller centroid id on ties). With
// pq_m > 0, codebooks are trained per sub-space on residuals and every row
// is encoded. Throws ParamError if pq_m does not divide the key width.
AnnIndex train_index(const store::Datastore& ds, uint32_t n_list, uint32_t pq_m, uint8_t pq_nbits,
                     uint64_t seed, uint32_t kmeans_iters = 10);

// Scans the n_probe inverted lists whose centroids score best against the
// query (n_probe clamped to [1, n_list]). Scores are PQ asymmetric-distance
// approximations when PQ is enabled, exact otherwise. May return fewer than
// k entries when the probed lists are small.
NeighborSet approx_search(const AnnIndex& index, const store::Datastore& ds,
                          std::span<const double> query, uint32_t k, uint32_t n_probe,
                          Metric metric);

// Same rows, scores recomputed exactly from raw keys, reordered.
// Throws InputError on an out-of-range row id.
NeighborSet rescore(const store::Datastore& ds, std::span<const double> query,
                    const NeighborSet& neighbors, Metric metric);

// Same rows, scores replaced by the index's PQ approximation (exact when PQ
// is disabled), reordered. Realizes the exact-mask / approx-score regime.
NeighborSet pq_rescore(const AnnIndex& index, const store::Datastore& ds,
                       std::span<const double> query, const NeighborSet& neighbors, Metric metric);

// Exact metric score of one datastore row against the query.
double score_row(const store::Datastore& ds, uint64_t row, std::span<const double> query,
                 Metric metric);

void write_index(const AnnIndex& index, const std::string& path);
AnnIndex open_index(const std::string& path);

}  // namespace knnlab::ann

#endif  // KNNLAB_ANN_HPP_
