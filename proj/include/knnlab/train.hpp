#ifndef KNNLAB_TRAIN_HPP_
#define KNNLAB_TRAIN_HPP_

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "knnlab/common.hpp"
#include "knnlab/head.hpp"
#include "knnlab/store.hpp"

// Frozen-feature training for the parametric heads. Features come
// precomputed from a dump and are never touched; every gradient is
// closed-form (multinomial-logistic style), no autodiff. Gradients are
// accumulated over fixed example chunks and reduced in chunk order, so a
// given config and dataset produce bit-identical heads for any worker count.

namespace knnlab::train {

enum class Optimizer : uint8_t { Sgd = 0, Adam = 1 };
enum class LrSchedule : uint8_t { Constant = 0, Cosine = 1 };
enum class LossKind : uint8_t { StandardCE = 0, InterpolatedCE = 1 };

struct TrainConfig {
    uint32_t epochs = 10;
    uint32_t batch = 512;
    double lr = 1e-3;
    LrSchedule schedule = LrSchedule::Constant;
    Optimizer optimizer = Optimizer::Adam;
    uint64_t seed = 0;
    LossKind loss = LossKind::StandardCE;
    double lambda = 0.25;  // interpolated-loss weight on the trained head
    bool finetune_embedding = false;  // MoS: also train a copy of W_sm
    bool early_stop = false;          // needs a dev dump
    uint32_t patience = 3;
};

struct TrainTrace {
    std::vector<double> epoch_loss;  // mean CE per epoch
    std::vector<double> dev_ppl;     // per epoch, when a dev dump is supplied
    double final_dev_ppl = std::numeric_limits<double>::quiet_NaN();
};

// --- objectives (exposed so gradient checks exercise the trainer's own math) ---

// Mean CE of the multi-embedding head over the given examples; embeddings are
// the parameters. grad may be null; otherwise it receives d(mean CE)/d(emb),
// laid out like head.embeddings.
double learned_head_loss_grad(const head::LearnedHead& hd, const store::ContextDump& dump,
                              View view, std::span<const uint64_t> examples, double* grad);

// Mean CE of lambda * p_head + (1 - lambda) * p_lm against the targets, with
// gradient flowing only to the head embeddings. p_lm_target[i] is the frozen
// base-model probability of example i's target.
double interpolated_loss_grad(const head::LearnedHead& hd, const store::ContextDump& dump,
                              View view, std::span<const double> p_lm_target, double lambda,
                              std::span<const uint64_t> examples, double* grad);

struct MosGrads {
    std::vector<double> proj;
    std::vector<double> bias;
    std::vector<double> prior;
    std::vector<double> embedding;  // filled only when requested
};

// Mean CE of the mixture head. Any gradient output may be skipped by passing
// want_embedding = false / grads = nullptr.
double mos_loss_grad(const head::MoSHead& hd, const store::ContextDump& dump, View view,
                     std::span<const uint64_t> examples, MosGrads* grads, bool want_embedding);

// --- trainers ---

// Gaussian init (sigma = 1/sqrt(D)) from cfg.seed; minimizes CE of the head
// prediction against dump targets. allocation.size() defines the vocabulary.
// Nothing in the loss pushes a type's multiple embeddings apart, so they may
// converge toward one vector; a diversity penalty would be added to the
// per-batch gradient here if one were ever wanted.
// Throws ConfigError when targets exceed the allocation's vocabulary or the
// view is missing.
std::pair<head::LearnedHead, TrainTrace> train_learned_head(const store::ContextDump& dump,
                                                            View view,
                                                            const std::vector<uint32_t>& allocation,
                                                            const TrainConfig& cfg,
                                                            const store::ContextDump* dev = nullptr);

// Trains projections, biases and the prior layer by CE on the mixture
// prediction. W_sm stays frozen unless cfg.finetune_embedding, which trains
// a private copy. Projections start at identity; the prior layer carries the
// seeded asymmetry that lets mixtures diverge.
std::pair<head::MoSHead, TrainTrace> train_mos(const store::ContextDump& dump, View view,
                                               const store::OutputEmbedding& wsm, uint32_t mixtures,
                                               const TrainConfig& cfg,
                                               const store::ContextDump* dev = nullptr);

// Minimizes CE of the lambda-interpolated prediction, gradient only to the
// head. The base term reads the ffn view through the frozen wsm.
std::pair<head::LearnedHead, TrainTrace> train_interpolated(
    const store::ContextDump& dump, View view, const store::OutputEmbedding& wsm, double lambda,
    const std::vector<uint32_t>& allocation, const TrainConfig& cfg,
    const store::ContextDump* dev = nullptr);

void write_trace_csv(const TrainTrace& trace, const std::string& path);

}  // namespace knnlab::train

#endif  // KNNLAB_TRAIN_HPP_
