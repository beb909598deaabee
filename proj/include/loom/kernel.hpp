#pragma once

#include <functional>
#include <string>
#include <vector>

#include "buffer.hpp"
#include "types.hpp"

namespace loom {

/// Declared access mode of one kernel argument. `in` arguments see the
/// exact revision recorded for them and never change it; `inout`
/// arguments consume the prior revision and generate the next one.
enum class arg_mode : std::uint8_t { in, inout };

class kernel_args;

using kernel_fn = std::function<void(kernel_args&)>;

struct kernel_spec {
    std::string name;
    std::vector<arg_mode> modes;
    kernel_fn body;

    std::size_t arity() const noexcept { return modes.size(); }
};

/// Facade through which a kernel body reaches its resolved payloads.
/// The executor populates one of these per claimed op; the body sees
/// plain pass-by-value semantics regardless of how the runtime
/// materialized the buffers underneath.
class kernel_args {
public:
    struct slot {
        arg_mode mode;
        payload_view input;        // valid for in; for inout: the prior state
        buffer_ptr staging;        // inout only: buffer the new revision will own
        elem_type type = elem_type::raw;
        bool dynamic = false;
        bool replaced = false;     // set_output() was called
    };

    explicit kernel_args(std::vector<slot> slots) : slots_(std::move(slots)) {}

    std::size_t size() const noexcept { return slots_.size(); }

    payload_view in(std::size_t i) const { return slots_.at(i).input; }

    mutable_view out(std::size_t i) {
        auto& s = slots_.at(i);
        return {std::span<std::byte>(s.staging->bytes), s.type};
    }

    /// Replaces the staged output wholesale. Required for dynamically
    /// sized objects, whose extent is only known once produced.
    void set_output(std::size_t i, std::vector<std::byte> bytes) {
        auto& s = slots_.at(i);
        s.staging = std::make_shared<buffer>(std::move(bytes));
        s.replaced = true;
    }

    template <typename T>
    std::span<const T> in_as(std::size_t i) const {
        return in(i).template as<T>();
    }

    template <typename T>
    std::span<T> out_as(std::size_t i) {
        return out(i).template as<T>();
    }

    slot& raw_slot(std::size_t i) { return slots_.at(i); }

private:
    std::vector<slot> slots_;
};

} // namespace loom
