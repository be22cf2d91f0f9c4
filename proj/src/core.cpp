#include "knnlab/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace knnlab::core {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

ProbVector softmax_with_temperature(const ScoreVector& scores, double tau) {
    if (!(tau > 0.0)) throw ParamError("softmax temperature must be > 0");
    const auto& s = scores.entries;
    double m = kNegInf;
    for (double v : s)
        if (v > m) m = v;
    if (!(m > kNegInf)) throw DegenerateInputError("softmax over fully masked scores");

    ProbVector out(s.size(), 0.0);
    double sum = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == kNegInf) continue;  // masked -> exactly 0
        double e = std::exp((s[i] - m) / tau);
        out[i] = e;
        sum += e;
    }
    for (double& v : out) v /= sum;
    return out;
}

ProbVector interpolate(const ProbVector& p_lm, const ProbVector& p_knn, double lambda) {
    if (p_lm.size() != p_knn.size()) throw ShapeError("interpolate: vocabulary sizes differ");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParamError("lambda must be in [0, 1]");
    ProbVector out(p_lm.size());
    for (size_t i = 0; i < p_lm.size(); ++i)
        out[i] = (1.0 - lambda) * p_lm[i] + lambda * p_knn[i];
    return out;
}

double perplexity(const LogProbSeries& series) {
    if (series.empty()) throw ParamError("perplexity of an empty series");
    double sum = 0.0;
    for (double v : series) {
        if (v == kNegInf) return std::numeric_limits<double>::infinity();
        sum += v;
    }
    return std::exp(-sum / double(series.size()));
}

std::vector<size_t> topk_indices(const ScoreVector& scores, size_t k) {
    if (k == 0) throw ParamError("topk with k == 0");
    std::vector<size_t> idx;
    idx.reserve(scores.entries.size());
    for (size_t i = 0; i < scores.entries.size(); ++i)
        if (std::isfinite(scores.entries[i])) idx.push_back(i);
    auto better = [&](size_t a, size_t b) {
        double sa = scores.entries[a], sb = scores.entries[b];
        if (sa != sb) return sa > sb;
        return a < b;
    };
    if (idx.size() > k) {
        std::partial_sort(idx.begin(), idx.begin() + ptrdiff_t(k), idx.end(), better);
        idx.resize(k);
    } else {
        std::sort(idx.begin(), idx.end(), better);
    }
    return idx;
}

double entropy(const ProbVector& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

std::vector<double> log_probs(const ProbVector& p) {
    std::vector<double> out(p.size());
    for (size_t i = 0; i < p.size(); ++i) out[i] = p[i] > 0.0 ? std::log(p[i]) : kNegInf;
    return out;
}

}  // namespace knnlab::core
