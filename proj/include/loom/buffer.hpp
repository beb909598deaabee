#pragma once

#include <cstddef>
#include <cstring>
#include <memory>
#include <span>
#include <vector>

#include "types.hpp"

namespace loom {

/// Reference-counted payload storage. A revision's buffer never changes
/// after the revision is marked ready; mutating ops either take over a
/// dead predecessor's buffer or work on a fresh copy.
struct buffer {
    std::vector<std::byte> bytes;

    buffer() = default;
    explicit buffer(std::size_t n) : bytes(n) {}
    explicit buffer(std::vector<std::byte> b) : bytes(std::move(b)) {}

    std::size_t size() const noexcept { return bytes.size(); }
    std::byte* data() noexcept { return bytes.data(); }
    const std::byte* data() const noexcept { return bytes.data(); }
};

using buffer_ptr = std::shared_ptr<buffer>;

inline buffer_ptr make_buffer(std::size_t n) { return std::make_shared<buffer>(n); }

inline buffer_ptr make_buffer(std::span<const std::byte> src) {
    auto b = std::make_shared<buffer>(src.size());
    if (!src.empty()) std::memcpy(b->data(), src.data(), src.size());
    return b;
}

template <typename T>
std::span<const std::byte> as_bytes_of(const std::vector<T>& v) {
    return std::as_bytes(std::span<const T>(v));
}

/// Immutable view of a resolved payload.
class payload_view {
public:
    payload_view() = default;
    payload_view(std::span<const std::byte> bytes, elem_type type) : bytes_(bytes), type_(type) {}

    std::span<const std::byte> bytes() const noexcept { return bytes_; }
    std::size_t size_bytes() const noexcept { return bytes_.size(); }
    elem_type type() const noexcept { return type_; }

    template <typename T>
    std::span<const T> as() const {
        return {reinterpret_cast<const T*>(bytes_.data()), bytes_.size() / sizeof(T)};
    }

private:
    std::span<const std::byte> bytes_;
    elem_type type_ = elem_type::raw;
};

/// Exclusive view of an output payload being produced by a kernel.
class mutable_view {
public:
    mutable_view() = default;
    mutable_view(std::span<std::byte> bytes, elem_type type) : bytes_(bytes), type_(type) {}

    std::span<std::byte> bytes() const noexcept { return bytes_; }
    std::size_t size_bytes() const noexcept { return bytes_.size(); }
    elem_type type() const noexcept { return type_; }

    template <typename T>
    std::span<T> as() const {
        return {reinterpret_cast<T*>(bytes_.data()), bytes_.size() / sizeof(T)};
    }

private:
    std::span<std::byte> bytes_;
    elem_type type_ = elem_type::raw;
};

} // namespace loom
