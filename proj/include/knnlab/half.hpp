#ifndef KNNLAB_HALF_HPP_
#define KNNLAB_HALF_HPP_

#include <bit>
#include <cstdint>

namespace knnlab {

// IEEE 754 binary16 <-> binary32, round to nearest even. Handles subnormals,
// infinities and NaN payloads.

inline uint16_t f32_to_f16(float f) {
    uint32_t x = std::bit_cast<uint32_t>(f);
    uint16_t sign = uint16_t((x >> 16) & 0x8000u);
    uint32_t exp = (x >> 23) & 0xffu;
    uint32_t man = x & 0x7fffffu;
    if (exp == 255) {  // inf / nan
        return uint16_t(sign | 0x7c00u | (man ? (0x200u | (man >> 13)) : 0u));
    }
    int e = int(exp) - 127 + 15;
    if (e >= 31) return uint16_t(sign | 0x7c00u);  // overflow -> inf
    if (e <= 0) {
        if (e < -10) return sign;  // underflows to zero
        man |= 0x800000u;          // make the leading 1 explicit
        uint32_t shift = uint32_t(14 - e);
        uint32_t half = man >> shift;
        uint32_t rem = man & ((1u << shift) - 1u);
        uint32_t mid = 1u << (shift - 1);
        if (rem > mid || (rem == mid && (half & 1u))) half++;
        return uint16_t(sign | half);
    }
    uint16_t h = uint16_t(sign | uint16_t(e << 10) | uint16_t(man >> 13));
    uint32_t rem = man & 0x1fffu;
    // Rounding may carry into the exponent; the bit layout makes h++ correct,
    // including the overflow-to-infinity case.
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) h++;
    return h;
}

inline float f16_to_f32(uint16_t h) {
    uint32_t sign = uint32_t(h & 0x8000u) << 16;
    uint32_t exp = (h >> 10) & 0x1fu;
    uint32_t man = h & 0x3ffu;
    uint32_t x;
    if (exp == 0) {
        if (man == 0) {
            x = sign;
        } else {  // subnormal: renormalize
            int e = 127 - 15 + 1;
            while (!(man & 0x400u)) {
                man <<= 1;
                e--;
            }
            man &= 0x3ffu;
            x = sign | (uint32_t(e) << 23) | (man << 13);
        }
    } else if (exp == 31) {
        x = sign | 0x7f800000u | (man << 13);
    } else {
        x = sign | ((exp - 15 + 127) << 23) | (man << 13);
    }
    return std::bit_cast<float>(x);
}

}  // namespace knnlab

#endif  // KNNLAB_HALF_HPP_
