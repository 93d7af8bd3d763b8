#pragma once

// Little-endian binary encoding shared by the embedding-table, checkpoint and
// index file formats. Byte order is pinned explicitly so the formats are
// identical regardless of host endianness.

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "kgmel/errors.hpp"

namespace kgmel {

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }

    void f32s(const float* data, size_t n) {
        for (size_t i = 0; i < n; ++i) f32(data[i]);
    }

    // u32 length prefix + raw bytes.
    void str(std::string_view s) {
        u32(static_cast<uint32_t>(s.size()));
        buf_.append(s.data(), s.size());
    }

    void raw(std::string_view s) { buf_.append(s.data(), s.size()); }

    const std::string& bytes() const { return buf_; }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(data_[pos_++]);
    }

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(data_[pos_++])) << (8 * i);
        return v;
    }

    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(data_[pos_++])) << (8 * i);
        return v;
    }

    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    void f32s(float* out, size_t n) {
        for (size_t i = 0; i < n; ++i) out[i] = f32();
    }

    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }

    size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

private:
    void need(size_t n) const {
        if (data_.size() - pos_ < n) throw DataError("truncated binary data");
    }

    std::string_view data_;
    size_t pos_ = 0;
};

} // namespace kgmel
