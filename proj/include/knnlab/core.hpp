#ifndef KNNLAB_CORE_HPP_
#define KNNLAB_CORE_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "knnlab/common.hpp"

// Deterministic numeric kernels shared by every module. All probability math
// runs in 64-bit floats regardless of how inputs are stored; natural log is
// the single convention for perplexity and entropy; -inf is the masked-score
// sentinel; ties break toward the smaller index.

namespace knnlab::core {

// Per-vocabulary-id probabilities. Entries are >= 0 and sum to 1 within 1e-9.
using ProbVector = std::vector<double>;

// Per-token natural-log probabilities over an evaluation stream; -inf allowed.
using LogProbSeries = std::vector<double>;

// Similarity scores for a candidate set; -inf encodes masked-out.
struct ScoreVector {
    std::vector<double> entries;
    Metric metric = Metric::IP;
};

// softmax(entries / tau) with max-subtraction; -inf entries map to exactly 0.
// Throws ParamError if tau <= 0, DegenerateInputError if no entry is finite.
ProbVector softmax_with_temperature(const ScoreVector& scores, double tau);

// (1 - lambda) * p_lm + lambda * p_knn, elementwise.
// Throws ShapeError on length mismatch, ParamError if lambda is outside [0,1].
ProbVector interpolate(const ProbVector& p_lm, const ProbVector& p_knn, double lambda);

// exp(-mean(series)); +inf as soon as any entry is -inf.
// Throws ParamError on an empty series.
double perplexity(const LogProbSeries& series);

// Indices of the k largest finite scores, score-descending, smaller index
// first on ties. Fewer than k finite scores returns all of them.
// Throws ParamError if k == 0.
std::vector<size_t> topk_indices(const ScoreVector& scores, size_t k);

// Shannon entropy in nats; 0 * log 0 taken as 0.
double entropy(const ProbVector& p);

// log p with p == 0 mapping to -inf; used where a distribution re-enters a
// masked softmax pipeline.
std::vector<double> log_probs(const ProbVector& p);

}  // namespace knnlab::core

#endif  // KNNLAB_CORE_HPP_
