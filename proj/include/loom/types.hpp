#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace loom {

using object_id = std::uint64_t;
using op_id = std::uint64_t;
using rank_id = std::uint32_t;

inline constexpr op_id no_op = ~op_id{0};

/// Element type carried by every payload so transport and verification
/// can interpret the raw bytes.
enum class elem_type : std::uint8_t { f64, i32, raw };

constexpr std::size_t elem_size(elem_type t) {
    switch (t) {
    case elem_type::f64: return 8;
    case elem_type::i32: return 4;
    case elem_type::raw: return 1;
    }
    return 1;
}

constexpr const char* elem_name(elem_type t) {
    switch (t) {
    case elem_type::f64: return "f64";
    case elem_type::i32: return "i32";
    case elem_type::raw: return "raw";
    }
    return "?";
}

enum class errc {
    zero_size,
    double_write,
    payload_size,
    double_complete,
    duplicate_kernel,
    arity,
    use_before_init,
    aliased_args,
    bad_rank,
    unplaced_generator,
    empty_reduction,
    stalled_dag,
    diverged_dag,
    transport_down,
    not_ready,
    shape,
    domain,
    kernel_failure,
};

constexpr const char* errc_name(errc c) {
    switch (c) {
    case errc::zero_size: return "ZeroSize";
    case errc::double_write: return "DoubleWrite";
    case errc::payload_size: return "PayloadSize";
    case errc::double_complete: return "DoubleComplete";
    case errc::duplicate_kernel: return "DuplicateKernel";
    case errc::arity: return "Arity";
    case errc::use_before_init: return "UseBeforeInit";
    case errc::aliased_args: return "AliasedArgs";
    case errc::bad_rank: return "BadRank";
    case errc::unplaced_generator: return "UnplacedGenerator";
    case errc::empty_reduction: return "EmptyReduction";
    case errc::stalled_dag: return "StalledDag";
    case errc::diverged_dag: return "DivergedDag";
    case errc::transport_down: return "TransportDown";
    case errc::not_ready: return "NotReady";
    case errc::shape: return "Shape";
    case errc::domain: return "Domain";
    case errc::kernel_failure: return "KernelFailure";
    }
    return "Unknown";
}

class error : public std::runtime_error {
public:
    error(errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

/// Handle to a versioned object. The current head index lives in the
/// object store; handles are confined to the recording flow.
struct handle {
    object_id id = ~object_id{0};

    bool valid() const noexcept { return id != ~object_id{0}; }
    friend bool operator==(handle, handle) = default;
};

/// Message tag uniquely identifying (object, revision) program-wide.
/// The top bit is reserved for transport control traffic.
constexpr std::uint64_t revision_tag(object_id obj, std::uint64_t index) {
    return (obj << 20) | (index & 0xFFFFF);
}

constexpr std::uint64_t control_tag_bit = std::uint64_t{1} << 63;

} // namespace loom
