#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "svec/errors.hpp"

namespace svec {

// ---------------------------------------------------------------------------
// Hashing. FNV-1a 64-bit, used for content keys, per-item seed derivation and
// file checksums. Stable across platforms by construction.
// ---------------------------------------------------------------------------

inline constexpr uint64_t kFnvOffset = 1469598103934665603ULL;
inline constexpr uint64_t kFnvPrime = 1099511628211ULL;

inline uint64_t fnv1a_bytes(const void* data, size_t len, uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = kFnvOffset) {
    return fnv1a_bytes(s.data(), s.size(), h);
}

inline std::string hex16(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

// splitmix64 finalizer: FNV low bits avalanche poorly, so anything taking a
// small modulus of a hash must mix first.
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Derives a per-item seed from a run seed and a canonical item key.
// Documented contract: fnv1a over the 8 little-endian seed bytes, then the
// key bytes, then the splitmix64 finalizer.
inline uint64_t derive_seed(uint64_t seed, std::string_view item_key) {
    unsigned char le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>((seed >> (8 * i)) & 0xFF);
    uint64_t h = fnv1a_bytes(le, 8);
    return mix64(fnv1a(item_key, h));
}

// ---------------------------------------------------------------------------
// RNG. splitmix64 core with hand-rolled uniform/normal draws so that a given
// seed produces the same stream on every platform.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Small vector math over float spans.
// ---------------------------------------------------------------------------

inline double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

inline double norm(std::span<const float> a) {
    return std::sqrt(dot(a, a));
}

inline bool all_finite(std::span<const float> a) {
    for (float v : a) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Byte-safe text for JSON boundaries. The byte-level backbone can emit
// arbitrary bytes; JSON requires valid UTF-8. Raw byte strings are stored by
// mapping each byte to the code point of the same value (lossless both ways).
// ---------------------------------------------------------------------------

inline bool is_valid_utf8(std::string_view s) {
    size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        size_t len = 0;
        if (c < 0x80) {
            len = 1;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
        }
        i += len;
    }
    return true;
}

inline std::string bytes_to_utf8(std::string_view s) {
    std::string out;
    out.reserve(s.size() + s.size() / 2);
    for (unsigned char c : s) {
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back(static_cast<char>(0xC0 | (c >> 6)));
            out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
        }
    }
    return out;
}

// Inverse of bytes_to_utf8; rejects code points above 0xFF.
inline std::string utf8_to_bytes(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
            i += 1;
        } else if ((c & 0xE0) == 0xC0 && i + 1 < s.size()) {
            const auto c2 = static_cast<unsigned char>(s[i + 1]);
            const unsigned cp = (static_cast<unsigned>(c & 0x1F) << 6) | (c2 & 0x3F);
            if (cp > 0xFF) throw FormatError("text field is not byte-mapped UTF-8");
            out.push_back(static_cast<char>(cp));
            i += 2;
        } else {
            throw FormatError("text field is not byte-mapped UTF-8");
        }
    }
    return out;
}

// Passthrough for valid UTF-8, byte-mapped encoding otherwise.
inline std::string ensure_utf8(std::string_view s) {
    if (is_valid_utf8(s)) return std::string(s);
    return bytes_to_utf8(s);
}

// Compensated accumulator: Kahan summation per component, in caller-supplied
// order. Used wherever the extraction contract requires order-stable,
// platform-reproducible means.
class KahanAccumulator {
public:
    explicit KahanAccumulator(size_t dim) : sum_(dim, 0.0), comp_(dim, 0.0) {}

    void add(std::span<const float> v) {
        for (size_t i = 0; i < sum_.size(); ++i) {
            const double y = static_cast<double>(v[i]) - comp_[i];
            const double t = sum_[i] + y;
            comp_[i] = (t - sum_[i]) - y;
            sum_[i] = t;
        }
        ++count_;
    }

    size_t count() const { return count_; }
    size_t dim() const { return sum_.size(); }

    std::vector<double> mean() const {
        std::vector<double> out(sum_.size(), 0.0);
        if (count_ == 0) return out;
        for (size_t i = 0; i < sum_.size(); ++i) out[i] = sum_[i] / static_cast<double>(count_);
        return out;
    }

private:
    std::vector<double> sum_;
    std::vector<double> comp_;
    size_t count_ = 0;
};

}  // namespace svec
