#pragma once

// Little-endian byte buffer writer/reader shared by every file format in the
// project. The reader throws FormatError on any read past the end.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semcodec/errors.hpp"

namespace semcodec {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void i16(std::int16_t v) { put_le(static_cast<std::uint16_t>(v), 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
    void text(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    const Bytes& bytes() const& { return buf_; }
    Bytes take() && { return std::move(buf_); }
    std::size_t size() const { return buf_.size(); }

private:
    void put_le(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i) {
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }

    Bytes buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data, std::string what = "stream")
        : data_(data), what_(std::move(what)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    float f32() { return std::bit_cast<float>(u32()); }

    std::span<const std::uint8_t> raw(std::size_t n)
    {
        need(n);
        auto out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    std::string text(std::size_t n)
    {
        auto s = raw(n);
        return std::string(s.begin(), s.end());
    }

    void expect_magic(std::string_view magic)
    {
        if (remaining() < magic.size() || std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0) {
            throw FormatError(what_ + ": bad magic (expected \"" + std::string(magic) + "\")");
        }
        pos_ += magic.size();
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

    void expect_end() const
    {
        if (!at_end()) {
            throw FormatError(what_ + ": " + std::to_string(remaining()) + " trailing bytes");
        }
    }

private:
    void need(std::size_t n) const
    {
        if (remaining() < n) {
            throw FormatError(what_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                              std::to_string(pos_) + ", have " + std::to_string(remaining()) + ")");
        }
    }

    std::uint64_t get_le(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string what_;
};

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

} // namespace semcodec
