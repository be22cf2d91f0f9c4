#ifndef KNNLAB_STORE_HPP_
#define KNNLAB_STORE_HPP_

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "knnlab/common.hpp"
#include "knnlab/io.hpp"

namespace knnlab::store {

enum class SourceTag : uint8_t { Att = 0, Ffn = 1, Synthetic = 2 };

// Key-value memory: one context vector per row paired with the token that
// followed that context. Row order is corpus order and defines the row ids
// every other module refers to. Immutable once built; safe for concurrent
// readers.
class Datastore {
  public:
    Datastore() = default;

    Dtype dtype() const { return dtype_; }
    uint32_t dim() const { return dim_; }
    uint64_t size() const { return size_; }
    SourceTag source_tag() const { return source_tag_; }
    const std::vector<uint32_t>& values() const { return values_; }

    // Raw key storage, row-major, in the declared precision.
    const std::byte* raw_keys() const { return keys_; }
    size_t key_stride() const { return size_t(dim_) * (dtype_ == Dtype::F32 ? 4 : 2); }

    // Upcasts one key row into out (length dim).
    void copy_key(uint64_t row, double* out) const;
    std::vector<double> key(uint64_t row) const;

    // f32 view of all keys, decoded once on first use. f16 -> f32 is exact,
    // so scoring against this view matches scoring against raw storage bit
    // for bit.
    std::span<const float> keys_f32() const;

    static Datastore from_parts(Dtype dtype, uint32_t dim, std::vector<std::byte> keys,
                                std::vector<uint32_t> values, SourceTag tag);

    uint64_t memory_bytes() const { return size_ * (key_stride() + 4); }

  private:
    friend Datastore open_datastore(const std::string&, bool);
    Dtype dtype_ = Dtype::F16;
    uint32_t dim_ = 0;
    uint64_t size_ = 0;
    SourceTag source_tag_ = SourceTag::Synthetic;
    std::vector<std::byte> owned_keys_;
    const std::byte* keys_ = nullptr;  // owned_keys_ or the mapped file
    std::vector<uint32_t> values_;
    std::shared_ptr<MmapFile> map_;  // keeps a mapped file alive
    mutable std::vector<float> f32_cache_;
};

// Per-token records: the att and/or ffn context vector plus the target token.
struct ContextDump {
    bool has_att = false;
    bool has_ffn = false;
    uint32_t dim = 0;
    std::vector<float> att;  // N x dim when present
    std::vector<float> ffn;  // N x dim when present
    std::vector<uint32_t> targets;

    uint64_t size() const { return targets.size(); }
    bool has_view(View v) const { return v == View::Att ? has_att : has_ffn; }
    std::span<const float> view_row(View v, uint64_t t) const {
        const auto& m = (v == View::Att) ? att : ffn;
        return {m.data() + t * dim, dim};
    }
    // Row t of the requested view upcast to f64.
    std::vector<double> view_row_f64(View v, uint64_t t) const;
    // Records [begin, end) of this dump as a new dump.
    ContextDump slice(uint64_t begin, uint64_t end) const;
};

// The parametric output embedding W_sm (V x D, row per vocabulary id).
struct OutputEmbedding {
    uint32_t vocab = 0;
    uint32_t dim = 0;
    std::vector<float> weights;  // V x D row-major

    std::span<const float> row(uint32_t v) const { return {weights.data() + size_t(v) * dim, dim}; }
};

struct Vocabulary {
    std::vector<std::string> tokens;  // dense ids [0, V)
    uint32_t size() const { return uint32_t(tokens.size()); }
};

// Desk-scale stand-in for a real corpus dump. Both views observe a latent
// vector through different coordinate windows, so neither alone suffices:
// h_ffn sees the first D latent dimensions, h_att the last D, and the base
// softmax embedding is fit on h_ffn only.
struct SyntheticSpec {
    uint32_t latent_dim = 24;
    uint32_t dim = 16;
    uint32_t vocab = 64;
    uint64_t train_tokens = 50000;
    uint64_t eval_tokens = 5000;
    double att_noise = 0.05;
    double ffn_noise = 0.05;
    uint64_t seed = 7;
};

struct SyntheticData {
    OutputEmbedding model;
    ContextDump train;
    ContextDump eval;
    Vocabulary vocab;
};

// Row i = the chosen view of record i, value i = target of record i, corpus
// order preserved. f16 keys are rounded to nearest even.
// Throws InputError on an empty dump or a missing view.
Datastore build_datastore(const ContextDump& dump, View view, Dtype precision);

// Uniform sample without replacement of round(fraction * N) rows, original
// relative order preserved. Selection uses integer hashing only, so the same
// seed picks the same rows on any platform or thread count.
// Throws ParamError if fraction is outside (0, 1] or the result would be empty.
Datastore subsample(const Datastore& ds, double fraction, uint64_t seed);

// The row ids subsample would keep, in ascending order.
std::vector<uint64_t> subsample_rows(uint64_t n, double fraction, uint64_t seed);

// Fully deterministic given spec.seed. Targets are drawn from softmax(U z);
// the returned model is the ridge fit of the true logits onto h_ffn over the
// train split (regularizer 1e-3).
// Throws ParamError on invalid dimensions.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// --- file formats (little-endian, bit-exact round-trips) ---

void write_datastore(const Datastore& ds, const std::string& path);
// use_mmap keeps the key matrix memory-mapped instead of copying it in.
Datastore open_datastore(const std::string& path, bool use_mmap = true);

void write_dump(const ContextDump& dump, const std::string& path, Dtype dtype = Dtype::F32);
ContextDump open_dump(const std::string& path);

void write_embedding(const OutputEmbedding& emb, const std::string& path, Dtype dtype = Dtype::F32);
OutputEmbedding open_embedding(const std::string& path);

void write_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary open_vocabulary(const std::string& path);

}  // namespace knnlab::store

#endif  // KNNLAB_STORE_HPP_
