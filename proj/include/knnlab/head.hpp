#ifndef KNNLAB_HEAD_HPP_
#define KNNLAB_HEAD_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "knnlab/ann.hpp"
#include "knnlab/common.hpp"
#include "knnlab/core.hpp"
#include "knnlab/store.hpp"

// Heads: every realization of the non-parametric/right-hand term of the
// interpolated predictor. A head maps a context vector (or a neighbor set)
// to a distribution over the vocabulary.

namespace knnlab::head {

// Row -> vocabulary mass. One-hot rows carry a single owner id; fractional
// rows carry a sparse weight column summing to 1. The dense V x N matrix is
// never materialized.
struct AggregationMap {
    uint32_t vocab = 0;
    std::vector<uint32_t> owner;  // one-hot mode: owner[row]
    // Fractional mode, CSR over rows.
    std::vector<uint64_t> offsets;
    std::vector<uint32_t> col_ids;
    std::vector<double> col_weights;

    bool one_hot() const { return !owner.empty(); }
    uint64_t rows() const { return one_hot() ? owner.size() : (offsets.empty() ? 0 : offsets.size() - 1); }

    static AggregationMap from_owners(uint32_t vocab, std::vector<uint32_t> owners);
    static AggregationMap from_columns(uint32_t vocab,
                                       const std::vector<std::vector<std::pair<uint32_t, double>>>& cols);

    // out[v] += sum over rows of weight(row, v) * mass[row]; out must be
    // zero-initialized with length vocab.
    void accumulate(std::span<const double> mass, std::span<double> out) const;
};

// Multi-embedding softmax head: n_total rows grouped by vocabulary type in
// id order (allocation[v] rows for type v).
struct LearnedHead {
    uint32_t vocab = 0;
    uint32_t dim = 0;
    std::vector<uint32_t> allocation;  // empty for cluster heads
    std::vector<double> embeddings;    // n_total x dim row-major
    AggregationMap map;

    uint64_t n_total() const { return map.rows(); }
};

// Mixture of softmaxes over a shared output embedding. The embedding is not
// owned unless finetuning produced a private copy.
struct MoSHead {
    uint32_t dim = 0;
    uint32_t mixtures = 0;             // R
    std::vector<double> proj;          // R x dim x dim
    std::vector<double> bias;          // R x dim
    std::vector<double> prior;         // R x dim, prior logits = prior . h
    const store::OutputEmbedding* shared_embedding = nullptr;
    bool has_tuned_embedding = false;
    store::OutputEmbedding tuned_embedding;  // used when has_tuned_embedding

    const store::OutputEmbedding& embedding() const;
};

enum class HeadKind : uint8_t {
    Knn = 0,
    FullKnn = 1,
    Learned = 2,
    Mos = 3,
    Cluster = 4,
    Sparsify = 5,
    LmEmbedAsDatastore = 6,
};

enum class AllocationScheme : uint8_t { Equal = 0, LogFrequency = 1, LogLoss = 2 };

// One experiment's head configuration: which right-hand term, under which
// metric / temperature / retrieval regime, reading which view.
struct HeadConfig {
    HeadKind kind = HeadKind::Knn;
    Metric metric = Metric::L2;
    uint32_t k = 1024;
    double tau = 1.0;
    double lambda = 0.25;
    Source mask_source = Source::Exact;
    Source score_source = Source::Exact;
    View view = View::Att;
    uint32_t n_probe = 32;  // probed lists under an approx mask
};

// Model objects a head configuration may need; generalized_predict raises
// ConfigError when a required one is missing.
struct ModelObjects {
    const store::Datastore* datastore = nullptr;
    const ann::AnnIndex* index = nullptr;
    const LearnedHead* learned = nullptr;
    const MoSHead* mos = nullptr;
};

const char* head_kind_name(HeadKind kind);
HeadKind head_kind_from_name(const std::string& name);

// Temperature softmax over neighbor scores, mass summed per vocabulary id of
// each neighbor's value. Ids absent from the neighbor set get exactly 0.
// Throws DegenerateInputError when the neighbor set is empty.
core::ProbVector knn_distribution(const ann::NeighborSet& neighbors,
                                  const std::vector<uint32_t>& ds_values, double tau,
                                  uint32_t vocab);

// The k = N limit: scores against every datastore entry, no mask.
core::ProbVector full_knn_distribution(const store::Datastore& ds, std::span<const double> query,
                                       double tau, Metric metric, uint32_t vocab);

// softmax over all n_total inner-product scores at temperature tau, summed
// per owner id. No mask-to-k.
core::ProbVector learned_head_predict(std::span<const double> h, const LearnedHead& head,
                                      double tau);

// Per-type embedding counts. Equal gives target_total / V each; the log
// schemes solve sum_v (1 + log_b stat_v) = target_total for b by bisection,
// then round to integers >= 1 by largest remainder, preserving the total.
// Throws ParamError on infeasible totals or non-positive stats.
std::vector<uint32_t> allocate_embeddings(std::span<const double> per_type_stat,
                                          AllocationScheme scheme, uint64_t target_total);

// priors = softmax(prior . h); output = sum_r prior_r * softmax(W (proj_r h + bias_r)).
core::ProbVector mos_predict(std::span<const double> h, const MoSHead& head);

// k-means over the keys; head rows are centroids and each aggregation column
// is the empirical value distribution of the rows assigned to that centroid.
// Centroids left empty by the final assignment are dropped.
LearnedHead cluster_head_from_datastore(const store::Datastore& ds, uint32_t n_centroids,
                                        uint32_t iters, uint64_t seed);

// log p -> mask-to-k -> / tau -> softmax; masked ids end at exactly 0.
core::ProbVector sparsify_distribution(const core::ProbVector& p, uint32_t k, double tau);

// Scores the output embedding rows against h_ds under the config metric.
// With a neighbor set, only the retrieved value ids stay unmasked; without
// one, all V rows are scored.
core::ProbVector lm_embedding_distribution(const store::OutputEmbedding& wsm,
                                           std::span<const double> h_ds, double tau, Metric metric,
                                           const ann::NeighborSet* neighbors,
                                           const std::vector<uint32_t>* ds_values);

// The right-hand term alone, per head kind. p_lm feeds the sparsify kind.
// An empty neighbor set yields the all-zero vector, which downstream turns
// into a -inf log-probability.
core::ProbVector head_distribution(std::span<const double> h_ds, const core::ProbVector& p_lm,
                                   const store::OutputEmbedding& wsm, const HeadConfig& config,
                                   const ModelObjects& objects);

// The full interpolated predictor: left term softmax(W_sm h_sm), right term
// per head kind, combined with the config lambda.
core::ProbVector generalized_predict(std::span<const double> h_sm, std::span<const double> h_ds,
                                     const store::OutputEmbedding& wsm, const HeadConfig& config,
                                     const ModelObjects& objects);

// softmax(W h) at temperature 1, the parametric left-hand term.
core::ProbVector base_lm_distribution(const store::OutputEmbedding& wsm,
                                      std::span<const double> h_sm);

// Retrieval per the configured mask/score regime (knn head kinds only).
ann::NeighborSet retrieve(const HeadConfig& config, const ModelObjects& objects,
                          std::span<const double> h_ds);

void write_head(const LearnedHead& head, const std::string& path);
LearnedHead open_head(const std::string& path);
void write_mos_head(const MoSHead& head, const std::string& path);
MoSHead open_mos_head(const std::string& path);

}  // namespace knnlab::head

#endif  // KNNLAB_HEAD_HPP_
