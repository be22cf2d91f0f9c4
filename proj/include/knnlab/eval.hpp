#ifndef KNNLAB_EVAL_HPP_
#define KNNLAB_EVAL_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "knnlab/common.hpp"
#include "knnlab/core.hpp"
#include "knnlab/head.hpp"
#include "knnlab/store.hpp"

// Evaluation protocol: per-token log probabilities, interpolated and oracle
// perplexity, lambda tuning on a development split, and the sweep/analysis
// machinery. Lambda (and, when swept, tau) is always tuned on the dev split
// and frozen for the test split. Per-token work is parallel over the stream;
// aggregation uses fixed-order summation.

namespace knnlab::eval {

struct PerToken {
    uint32_t target;
    double logp_lm;
    double logp_head;  // -inf when the head misses the target entirely
};

struct EvalReport {
    std::vector<PerToken> tokens;
    double lambda = 0.0;
    double tau = 1.0;
    double ppl_lm = 0.0;
    double ppl_head = 0.0;  // +inf whenever any token gets head probability 0
    double ppl_interp = 0.0;
    double ppl_oracle = 0.0;
};

struct SweepResult {
    std::string axis;
    std::vector<double> grid;
    std::vector<double> interp_ppl;   // test-split PPL at the per-point lambda*
    std::vector<double> lambda_star;  // tuned on the dev split per point
    std::vector<double> dev_ppl;      // dev-split PPL at lambda*; argmin lives here
    size_t argmin = 0;                // smaller grid value wins ties
};

struct TokenHelpStats {
    uint32_t id;
    uint64_t count;
    double help_rate_a;
    double help_rate_b;
    double delta;  // a - b
};

struct BigramEntropies {
    std::vector<double> forward;   // per vocabulary id, nats
    std::vector<double> backward;
};

struct LambdaGrid {
    double coarse_step = 0.01;
    double fine_step = 0.001;
};

// Per token: p_LM = softmax(W_sm h_ffn), p_head per config (with the given
// lambda/tau overriding the config's), interpolation per the mixture weight.
// Aggregates are recomputable from the per-token arrays.
EvalReport evaluate(const store::ContextDump& stream, const store::OutputEmbedding& wsm,
                    const head::HeadConfig& config, const head::ModelObjects& objects,
                    double lambda, double tau);

// Coarse grid {0.00..1.00} in coarse_step, then one refinement in fine_step
// within +-coarse_step of the coarse argmin; ties take the smaller lambda.
// Throws ParamError on an empty or misaligned stream.
double tune_lambda(std::span<const double> p_lm_target, std::span<const double> p_head_target,
                   const LambdaGrid& grid = {});

// Perplexity of the tuning objective at a fixed lambda.
double interp_perplexity(std::span<const double> p_lm_target,
                         std::span<const double> p_head_target, double lambda);

// exp(-mean(log max(p_LM, p_head))): each token picks its better component.
double oracle_perplexity(const EvalReport& report);

// (p_lm[target], p_head[target]) per token.
std::pair<std::vector<double>, std::vector<double>> target_probs(const EvalReport& report);

// Axis in {tau, fraction, k, n_probe, lambda}. The stream is split by
// dev_fraction (dev prefix, test suffix); lambda is re-tuned on dev at every
// grid point. The seed drives fraction-axis subsampling and index rebuilds.
// Throws ParamError on an unknown axis or empty grid.
SweepResult sweep(const store::ContextDump& stream, const store::OutputEmbedding& wsm,
                  const head::HeadConfig& base, const head::ModelObjects& objects,
                  const std::string& axis, std::span<const double> grid,
                  double dev_fraction = 0.5, uint64_t seed = 0);

// Help rates (fraction of a type's occurrences with p_head > p_LM) under two
// aligned reports; types under min_occ occurrences are dropped.
// Throws InputError when the reports disagree on the token stream.
std::vector<TokenHelpStats> knn_help_rate(const EvalReport& a, const EvalReport& b, uint32_t vocab,
                                          uint64_t min_occ = 10);

// Forward/backward successor entropies over within-document bigrams only;
// doc_starts lists the first token index of each document (0 first).
BigramEntropies bigram_entropy(std::span<const uint32_t> stream,
                               std::span<const uint64_t> doc_starts, uint32_t vocab);

// --- serialization ---

// Aggregates + config echo; infinite values serialize as the string "inf".
void write_report_json(const EvalReport& report, const nlohmann::json& config_echo,
                       const std::string& path);
// Columns: index, target, logp_lm, logp_head, logp_interp.
void write_report_csv(const EvalReport& report, const std::string& path);
// Columns: axis_value, interp_ppl, lambda_star.
void write_sweep_csv(const SweepResult& result, const std::string& path);
void write_sweep_svg(const SweepResult& result, const std::string& path);
// Columns: id, token, count, help_rate_a, help_rate_b, delta, length, h_fwd, h_bwd.
void write_token_stats_csv(const std::vector<TokenHelpStats>& stats,
                           const BigramEntropies& entropies, const store::Vocabulary& vocab,
                           const std::string& path);

nlohmann::json json_number(double v);  // finite -> number, +-inf -> "inf"/"-inf"

}  // namespace knnlab::eval

#endif  // KNNLAB_EVAL_HPP_
