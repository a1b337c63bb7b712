#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "svec/errors.hpp"
#include "svec/util.hpp"

namespace svec::binio {

// Little-endian binary helpers for the SVEC-BB / SVEC-PV file formats.
// Writers feed a running FNV-1a checksum that is appended as a u64 trailer;
// readers verify it.

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}

    void bytes(const void* data, size_t len) {
        os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        hash_ = fnv1a_bytes(data, len, hash_);
    }

    void u32(uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
        bytes(b, 4);
    }

    void u64(uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
        bytes(b, 8);
    }

    void f32_block(std::span<const float> v) {
        for (float x : v) {
            uint32_t bits;
            std::memcpy(&bits, &x, 4);
            u32(bits);
        }
    }

    // Writes the checksum trailer (not itself hashed).
    void finish() {
        uint64_t h = hash_;
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((h >> (8 * i)) & 0xFF);
        os_.write(reinterpret_cast<const char*>(b), 8);
    }

private:
    std::ostream& os_;
    uint64_t hash_ = kFnvOffset;
};

class Reader {
public:
    explicit Reader(std::istream& is) : is_(is) {}

    void bytes(void* data, size_t len) {
        is_.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
        if (static_cast<size_t>(is_.gcount()) != len) {
            throw TruncatedFileError("unexpected end of file");
        }
        hash_ = fnv1a_bytes(data, len, hash_);
    }

    uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    }

    uint64_t u64() {
        unsigned char b[8];
        bytes(b, 8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
        return v;
    }

    void f32_block(std::span<float> v) {
        for (float& x : v) {
            const uint32_t bits = u32();
            std::memcpy(&x, &bits, 4);
        }
    }

    // Reads and verifies the checksum trailer.
    void finish() {
        const uint64_t expect = hash_;
        unsigned char b[8];
        is_.read(reinterpret_cast<char*>(b), 8);
        if (is_.gcount() != 8) throw TruncatedFileError("missing checksum trailer");
        uint64_t got = 0;
        for (int i = 0; i < 8; ++i) got |= static_cast<uint64_t>(b[i]) << (8 * i);
        if (got != expect) throw ChecksumError("checksum mismatch");
    }

private:
    std::istream& is_;
    uint64_t hash_ = kFnvOffset;
};

}  // namespace svec::binio
