#ifndef KNNLAB_COMMON_HPP_
#define KNNLAB_COMMON_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace knnlab {

// Error taxonomy. Every throwing operation documents which of these it uses.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A scalar argument is out of its documented domain (tau <= 0, k == 0, ...).
struct ParamError : Error {
    using Error::Error;
};

// Vector/matrix dimensions do not line up.
struct ShapeError : Error {
    using Error::Error;
};

// Well-formed call, unusable data (empty dump, missing view, bad row id).
struct InputError : Error {
    using Error::Error;
};

// Input that makes the requested quantity undefined (all scores masked,
// empty neighbor set).
struct DegenerateInputError : Error {
    using Error::Error;
};

// A required model object or configuration key is missing or inconsistent.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed file. Message names the file and the byte offset.
struct FormatError : Error {
    using Error::Error;
};

enum class Metric : uint8_t { L2 = 0, IP = 1 };

// Whether a neighbor set (mask) or its scores came from exhaustive search or
// from the IVF/PQ approximation path.
enum class Source : uint8_t { Exact = 0, Approx = 1 };

enum class Dtype : uint8_t { F32 = 0, F16 = 1 };

// The two candidate context representations of a transformer block.
enum class View : uint8_t { Att = 0, Ffn = 1 };

inline const char* metric_name(Metric m) { return m == Metric::L2 ? "l2" : "ip"; }
inline const char* source_name(Source s) { return s == Source::Exact ? "exact" : "approx"; }
inline const char* view_name(View v) { return v == View::Att ? "att" : "ffn"; }
inline const char* dtype_name(Dtype d) { return d == Dtype::F32 ? "f32" : "f16"; }

}  // namespace knnlab

#endif  // KNNLAB_COMMON_HPP_
