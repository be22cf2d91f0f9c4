#include "knnlab/store.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "knnlab/half.hpp"
#include "knnlab/rng.hpp"

namespace knnlab::store {

namespace {

constexpr char kDatastoreMagic[8] = {'K', 'N', 'L', 'M', 'D', 'S', '0', '1'};
constexpr char kDumpMagic[8] = {'K', 'N', 'L', 'M', 'C', 'D', '0', '1'};
constexpr char kEmbeddingMagic[8] = {'K', 'N', 'L', 'M', 'W', 'M', '0', '1'};
constexpr uint32_t kFormatVersion = 1;

// RNG stream ids of the synthetic generator.
enum : uint64_t { kStreamU = 0, kStreamLatent = 1, kStreamTarget = 2, kStreamFfn = 3, kStreamAtt = 4 };

// Scale of the true logits; keeps the synthetic next-token distribution
// moderately peaked so the base model lands well below uniform perplexity.
constexpr double kLogitScale = 3.0;
constexpr double kRidgeAlpha = 1e-3;

size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 2; }

void encode_row(std::span<const float> src, Dtype dtype, std::byte* out) {
    if (dtype == Dtype::F32) {
        std::memcpy(out, src.data(), src.size() * 4);
    } else {
        auto* h = reinterpret_cast<uint16_t*>(out);
        for (size_t i = 0; i < src.size(); ++i) h[i] = f32_to_f16(src[i]);
    }
}

void decode_row(const std::byte* src, Dtype dtype, std::span<float> out) {
    if (dtype == Dtype::F32) {
        std::memcpy(out.data(), src, out.size() * 4);
    } else {
        const auto* h = reinterpret_cast<const uint16_t*>(src);
        for (size_t i = 0; i < out.size(); ++i) out[i] = f16_to_f32(h[i]);
    }
}

std::string bijective_token(uint32_t id) {
    std::string s;
    for (uint64_t n = uint64_t(id) + 1; n > 0;) {
        --n;
        s.insert(s.begin(), char('a' + n % 26));
        n /= 26;
    }
    return s;
}

}  // namespace

void Datastore::copy_key(uint64_t row, double* out) const {
    const std::byte* src = keys_ + row * key_stride();
    if (dtype_ == Dtype::F32) {
        for (uint32_t j = 0; j < dim_; ++j) {
            float f;
            std::memcpy(&f, src + j * 4, 4);
            out[j] = double(f);
        }
    } else {
        const auto* h = reinterpret_cast<const uint16_t*>(src);
        for (uint32_t j = 0; j < dim_; ++j) out[j] = double(f16_to_f32(h[j]));
    }
}

std::vector<double> Datastore::key(uint64_t row) const {
    std::vector<double> out(dim_);
    copy_key(row, out.data());
    return out;
}

std::span<const float> Datastore::keys_f32() const {
    return {f32_cache_.data(), f32_cache_.size()};
}

Datastore Datastore::from_parts(Dtype dtype, uint32_t dim, std::vector<std::byte> keys,
                                std::vector<uint32_t> values, SourceTag tag) {
    if (dim == 0) throw ParamError("datastore dim must be >= 1");
    if (values.empty()) throw InputError("datastore must have at least one entry");
    const size_t stride = size_t(dim) * dtype_size(dtype);
    if (keys.size() != stride * values.size())
        throw ShapeError("datastore key bytes do not match entry count");
    Datastore ds;
    ds.dtype_ = dtype;
    ds.dim_ = dim;
    ds.size_ = values.size();
    ds.source_tag_ = tag;
    ds.owned_keys_ = std::move(keys);
    ds.keys_ = ds.owned_keys_.data();
    ds.values_ = std::move(values);
    ds.f32_cache_.resize(ds.size_ * dim);
    for (uint64_t r = 0; r < ds.size_; ++r)
        decode_row(ds.keys_ + r * stride, dtype, {ds.f32_cache_.data() + r * dim, dim});
    return ds;
}

std::vector<double> ContextDump::view_row_f64(View v, uint64_t t) const {
    auto row = view_row(v, t);
    return std::vector<double>(row.begin(), row.end());
}

ContextDump ContextDump::slice(uint64_t begin, uint64_t end) const {
    if (begin > end || end > size()) throw ParamError("dump slice out of range");
    ContextDump out;
    out.has_att = has_att;
    out.has_ffn = has_ffn;
    out.dim = dim;
    if (has_att) out.att.assign(att.begin() + begin * dim, att.begin() + end * dim);
    if (has_ffn) out.ffn.assign(ffn.begin() + begin * dim, ffn.begin() + end * dim);
    out.targets.assign(targets.begin() + ptrdiff_t(begin), targets.begin() + ptrdiff_t(end));
    return out;
}

Datastore build_datastore(const ContextDump& dump, View view, Dtype precision) {
    if (dump.size() == 0) throw InputError("cannot build a datastore from an empty dump");
    if (!dump.has_view(view))
        throw InputError(std::string("dump is missing the requested view: ") + view_name(view));
    const uint32_t dim = dump.dim;
    const size_t stride = size_t(dim) * dtype_size(precision);
    std::vector<std::byte> keys(stride * dump.size());
    for (uint64_t t = 0; t < dump.size(); ++t)
        encode_row(dump.view_row(view, t), precision, keys.data() + t * stride);
    return Datastore::from_parts(precision, dim, std::move(keys), dump.targets,
                                 view == View::Att ? SourceTag::Att : SourceTag::Ffn);
}

std::vector<uint64_t> subsample_rows(uint64_t n, double fraction, uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ParamError("fraction must be in (0, 1]");
    const uint64_t m = uint64_t(std::llround(fraction * double(n)));
    if (m == 0) throw ParamError("subsample would be empty");
    if (m >= n) {
        std::vector<uint64_t> all(n);
        for (uint64_t i = 0; i < n; ++i) all[i] = i;
        return all;
    }
    // Keep the m rows with the smallest hash keys; integer-only, so identical
    // on every platform and independent of any parallel evaluation order.
    Rng rng(seed, /*stream=*/0x5u);
    std::vector<uint64_t> rows(n);
    for (uint64_t i = 0; i < n; ++i) rows[i] = i;
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

Datastore subsample(const Datastore& ds, double fraction, uint64_t seed) {
    auto rows = subsample_rows(ds.size(), fraction, seed);
    const size_t stride = ds.key_stride();
    std::vector<std::byte> keys(stride * rows.size());
    std::vector<uint32_t> values(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        std::memcpy(keys.data() + i * stride, ds.raw_keys() + rows[i] * stride, stride);
        values[i] = ds.values()[rows[i]];
    }
    return Datastore::from_parts(ds.dtype(), ds.dim(), std::move(keys), std::move(values),
                                 ds.source_tag());
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    const uint32_t L = spec.latent_dim, D = spec.dim, V = spec.vocab;
    if (D == 0 || V < 2) throw ParamError("synthetic spec needs dim >= 1 and vocab >= 2");
    if (L < D) throw ParamError("latent width must be >= dim");
    if (spec.train_tokens == 0 || spec.eval_tokens == 0)
        throw ParamError("train and eval sizes must be >= 1");
    if (spec.att_noise < 0.0 || spec.ffn_noise < 0.0) throw ParamError("noise scales must be >= 0");

    Rng rng_u(spec.seed, kStreamU);
    Rng rng_z(spec.seed, kStreamLatent);
    Rng rng_y(spec.seed, kStreamTarget);
    Rng rng_nf(spec.seed, kStreamFfn);
    Rng rng_na(spec.seed, kStreamAtt);

    std::vector<double> U(size_t(V) * L);
    const double u_scale = kLogitScale / std::sqrt(double(L));
    for (size_t i = 0; i < U.size(); ++i) U[i] = rng_u.normal(i) * u_scale;

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(D, D);   // sum h h^T over train
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(V, D);  // sum logits h^T over train

    auto make_dump = [&](uint64_t count, uint64_t first_token, bool fit) {
        ContextDump dump;
        dump.has_att = dump.has_ffn = true;
        dump.dim = D;
        dump.att.resize(count * D);
        dump.ffn.resize(count * D);
        dump.targets.resize(count);
        std::vector<double> z(L), logits(V), probs(V);
        Eigen::VectorXd h(D), lg(V);
        for (uint64_t t = 0; t < count; ++t) {
            const uint64_t g = first_token + t;
            for (uint32_t j = 0; j < L; ++j) z[j] = rng_z.normal(g * L + j);
            for (uint32_t v = 0; v < V; ++v) {
                double dot = 0.0;
                const double* u_row = U.data() + size_t(v) * L;
                for (uint32_t j = 0; j < L; ++j) dot += u_row[j] * z[j];
                logits[v] = dot;
            }
            double m = *std::max_element(logits.begin(), logits.end());
            double sum = 0.0;
            for (uint32_t v = 0; v < V; ++v) sum += (probs[v] = std::exp(logits[v] - m));
            double u = rng_y.uniform(g) * sum;
            double cdf = 0.0;
            uint32_t y = V - 1;
            for (uint32_t v = 0; v < V; ++v) {
                cdf += probs[v];
                if (u < cdf) {
                    y = v;
                    break;
                }
            }
            dump.targets[t] = y;
            float* ffn = dump.ffn.data() + t * D;
            float* att = dump.att.data() + t * D;
            for (uint32_t d = 0; d < D; ++d) {
                ffn[d] = float(z[d] + spec.ffn_noise * rng_nf.normal(g * D + d));
                att[d] = float(z[L - D + d] + spec.att_noise * rng_na.normal(g * D + d));
            }
            if (fit) {
                for (uint32_t d = 0; d < D; ++d) h[d] = double(ffn[d]);
                for (uint32_t v = 0; v < V; ++v) lg[v] = logits[v];
                gram.noalias() += h * h.transpose();
                cross.noalias() += lg * h.transpose();
            }
        }
        return dump;
    };

    SyntheticData out;
    out.train = make_dump(spec.train_tokens, 0, true);
    out.eval = make_dump(spec.eval_tokens, spec.train_tokens, false);

    gram.diagonal().array() += kRidgeAlpha;
    Eigen::MatrixXd w = gram.ldlt().solve(cross.transpose()).transpose();  // V x D
    out.model.vocab = V;
    out.model.dim = D;
    out.model.weights.resize(size_t(V) * D);
    for (uint32_t v = 0; v < V; ++v)
        for (uint32_t d = 0; d < D; ++d) out.model.weights[size_t(v) * D + d] = float(w(v, d));

    out.vocab.tokens.resize(V);
    for (uint32_t v = 0; v < V; ++v) out.vocab.tokens[v] = bijective_token(v);
    return out;
}

// --- file formats ---

void write_datastore(const Datastore& ds, const std::string& path) {
    BinaryWriter w(path);
    w.magic(kDatastoreMagic);
    w.u32(kFormatVersion);
    w.u8(uint8_t(ds.dtype()));
    w.u32(ds.dim());
    w.u64(ds.size());
    w.bytes(ds.raw_keys(), ds.key_stride() * ds.size());
    w.bytes(ds.values().data(), ds.values().size() * 4);
    w.close();
}

Datastore open_datastore(const std::string& path, bool use_mmap) {
    BinaryReader r(path);
    r.expect_magic(kDatastoreMagic);
    if (r.u32() != kFormatVersion) r.fail("unsupported version");
    uint8_t dt = r.u8();
    if (dt > 1) r.fail("unknown dtype");
    const Dtype dtype = Dtype(dt);
    const uint32_t dim = r.u32();
    const uint64_t n = r.u64();
    if (dim == 0 || n == 0) r.fail("empty datastore");
    const uint64_t header = r.offset();
    const size_t stride = size_t(dim) * dtype_size(dtype);

    Datastore ds;
    ds.dtype_ = dtype;
    ds.dim_ = dim;
    ds.size_ = n;

    if (use_mmap) {
        auto map = std::make_shared<MmapFile>(path);
        auto data = map->data();
        if (data.size() < header + stride * n + 4 * n)
            throw FormatError(path + ": truncated file at byte " + std::to_string(data.size()));
        if (data.size() > header + stride * n + 4 * n)
            throw FormatError(path + ": trailing bytes at byte " +
                              std::to_string(header + stride * n + 4 * n));
        ds.map_ = std::move(map);
        ds.keys_ = ds.map_->data().data() + header;
        ds.values_.resize(n);
        std::memcpy(ds.values_.data(), ds.map_->data().data() + header + stride * n, 4 * n);
    } else {
        ds.owned_keys_.resize(stride * n);
        r.bytes(ds.owned_keys_.data(), ds.owned_keys_.size());
        ds.keys_ = ds.owned_keys_.data();
        ds.values_.resize(n);
        r.bytes(ds.values_.data(), 4 * n);
        r.expect_eof();
    }
    ds.f32_cache_.resize(n * dim);
    for (uint64_t i = 0; i < n; ++i)
        decode_row(ds.keys_ + i * stride, dtype, {ds.f32_cache_.data() + i * dim, dim});
    return ds;
}

void write_dump(const ContextDump& dump, const std::string& path, Dtype dtype) {
    BinaryWriter w(path);
    w.magic(kDumpMagic);
    w.u32(kFormatVersion);
    w.u8(uint8_t((dump.has_att ? 1 : 0) | (dump.has_ffn ? 2 : 0)));
    w.u8(uint8_t(dtype));
    w.u32(dump.dim);
    w.u64(dump.size());
    const size_t row_bytes = size_t(dump.dim) * dtype_size(dtype);
    std::vector<std::byte> buf(row_bytes);
    for (uint64_t t = 0; t < dump.size(); ++t) {
        if (dump.has_att) {
            encode_row(dump.view_row(View::Att, t), dtype, buf.data());
            w.bytes(buf.data(), row_bytes);
        }
        if (dump.has_ffn) {
            encode_row(dump.view_row(View::Ffn, t), dtype, buf.data());
            w.bytes(buf.data(), row_bytes);
        }
        w.u32(dump.targets[t]);
    }
    w.close();
}

ContextDump open_dump(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kDumpMagic);
    if (r.u32() != kFormatVersion) r.fail("unsupported version");
    const uint8_t flags = r.u8();
    if (flags == 0 || flags > 3) r.fail("invalid view flags");
    const uint8_t dt = r.u8();
    if (dt > 1) r.fail("unknown dtype");
    const Dtype dtype = Dtype(dt);
    const uint32_t dim = r.u32();
    const uint64_t n = r.u64();
    if (dim == 0) r.fail("zero dim");

    ContextDump dump;
    dump.has_att = flags & 1;
    dump.has_ffn = flags & 2;
    dump.dim = dim;
    if (dump.has_att) dump.att.resize(n * dim);
    if (dump.has_ffn) dump.ffn.resize(n * dim);
    dump.targets.resize(n);
    const size_t row_bytes = size_t(dim) * dtype_size(dtype);
    std::vector<std::byte> buf(row_bytes);
    for (uint64_t t = 0; t < n; ++t) {
        if (dump.has_att) {
            r.bytes(buf.data(), row_bytes);
            decode_row(buf.data(), dtype, {dump.att.data() + t * dim, dim});
        }
        if (dump.has_ffn) {
            r.bytes(buf.data(), row_bytes);
            decode_row(buf.data(), dtype, {dump.ffn.data() + t * dim, dim});
        }
        dump.targets[t] = r.u32();
    }
    r.expect_eof();
    return dump;
}

void write_embedding(const OutputEmbedding& emb, const std::string& path, Dtype dtype) {
    BinaryWriter w(path);
    w.magic(kEmbeddingMagic);
    w.u32(kFormatVersion);
    w.u8(uint8_t(dtype));
    w.u32(emb.vocab);
    w.u32(emb.dim);
    const size_t row_bytes = size_t(emb.dim) * dtype_size(dtype);
    std::vector<std::byte> buf(row_bytes);
    for (uint32_t v = 0; v < emb.vocab; ++v) {
        encode_row(emb.row(v), dtype, buf.data());
        w.bytes(buf.data(), row_bytes);
    }
    w.close();
}

OutputEmbedding open_embedding(const std::string& path) {
    BinaryReader r(path);
    r.expect_magic(kEmbeddingMagic);
    if (r.u32() != kFormatVersion) r.fail("unsupported version");
    const uint8_t dt = r.u8();
    if (dt > 1) r.fail("unknown dtype");
    const Dtype dtype = Dtype(dt);
    OutputEmbedding emb;
    emb.vocab = r.u32();
    emb.dim = r.u32();
    if (emb.dim == 0) r.fail("zero dim");
    emb.weights.resize(size_t(emb.vocab) * emb.dim);
    const size_t row_bytes = size_t(emb.dim) * dtype_size(dtype);
    std::vector<std::byte> buf(row_bytes);
    for (uint32_t v = 0; v < emb.vocab; ++v) {
        r.bytes(buf.data(), row_bytes);
        decode_row(buf.data(), dtype, {emb.weights.data() + size_t(v) * emb.dim, emb.dim});
    }
    r.expect_eof();
    return emb;
}

void write_vocabulary(const Vocabulary& vocab, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for writing: " + path);
    for (uint32_t i = 0; i < vocab.size(); ++i) f << i << '\t' << vocab.tokens[i] << '\n';
    if (!f.flush()) throw FormatError("write failed: " + path);
}

Vocabulary open_vocabulary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open: " + path);
    Vocabulary vocab;
    std::string line;
    uint64_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw FormatError(path + ": missing tab on line " + std::to_string(line_no));
        uint64_t id = 0;
        try {
            id = std::stoull(line.substr(0, tab));
        } catch (const std::exception&) {
            throw FormatError(path + ": bad id on line " + std::to_string(line_no));
        }
        std::string tok = line.substr(tab + 1);
        if (tok.empty()) throw FormatError(path + ": empty token on line " + std::to_string(line_no));
        if (id != vocab.tokens.size())
            throw FormatError(path + ": ids must be dense, got " + std::to_string(id) + " on line " +
                              std::to_string(line_no));
        vocab.tokens.push_back(std::move(tok));
    }
    return vocab;
}

}  // namespace knnlab::store
