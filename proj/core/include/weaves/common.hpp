#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace weaves {

using u8 = std::uint8_t;
using u16 = std::uint16_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;

// Guest cells are 64-bit two's complement.
using Cell = std::int64_t;
inline constexpr u32 kCellSize = 8;

inline constexpr u32 kPageSize = 4096;
inline constexpr u32 kPageShift = 12;

// 64-bit guest addresses: bits 63..40 carry the node id, bits 39..0 the
// intra-node offset. Nodes are grouped into VM regions of 16 nodes each.
inline constexpr u32 kNodeShift = 40;
inline constexpr u64 kNodeSpan = u64(1) << kNodeShift;
inline constexpr u32 kNodesPerRegion = 16;

inline constexpr u32 node_of_addr(u64 addr) { return static_cast<u32>(addr >> kNodeShift); }
inline constexpr u64 node_base(u32 node) { return u64(node) << kNodeShift; }
inline constexpr u32 region_of_node(u32 node) { return node / kNodesPerRegion; }
inline constexpr u64 page_of(u64 addr) { return addr >> kPageShift; }

/// Error with a stable machine-readable code alongside the message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& message) {
    throw Error(std::move(code), message);
}

// Little-endian byte stream writer used by every on-disk format.
class ByteWriter {
public:
    void u8v(u8 v) { buf_.push_back(v); }
    void u16v(u16 v) { put(&v, 2); }
    void u32v(u32 v) { put(&v, 4); }
    void u64v(u64 v) { put(&v, 8); }
    void i64v(i64 v) { put(&v, 8); }
    void bytes(std::span<const u8> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void str(const std::string& s) {
        u32v(static_cast<u32>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    std::vector<u8> take() { return std::move(buf_); }
    size_t size() const { return buf_.size(); }

private:
    void put(const void* p, size_t n) {
        const u8* b = static_cast<const u8*>(p);
        buf_.insert(buf_.end(), b, b + n);  // host is little-endian; asserted in mem.cpp
    }
    std::vector<u8> buf_;
};

// Bounds-checked little-endian reader. Throws TruncatedSection past the end.
class ByteReader {
public:
    explicit ByteReader(std::span<const u8> data) : data_(data) {}

    u8 u8v() { return take(1)[0]; }
    u16 u16v() { return read<u16>(); }
    u32 u32v() { return read<u32>(); }
    u64 u64v() { return read<u64>(); }
    i64 i64v() { return read<i64>(); }
    std::span<const u8> bytes(size_t n) { return take(n); }
    std::string str() {
        u32 n = u32v();
        auto b = take(n);
        return std::string(b.begin(), b.end());
    }
    size_t pos() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }

private:
    template <typename T>
    T read() {
        auto b = take(sizeof(T));
        T v;
        std::memcpy(&v, b.data(), sizeof(T));
        return v;
    }
    std::span<const u8> take(size_t n) {
        if (data_.size() - pos_ < n)
            fail("TruncatedSection", "need " + std::to_string(n) + " bytes at offset " +
                                         std::to_string(pos_));
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::span<const u8> data_;
    size_t pos_ = 0;
};

inline u64 fnv1a64(std::span<const u8> data, u64 h = 0xcbf29ce484222325ull) {
    for (u8 b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace weaves
