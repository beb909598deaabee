#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "transport.hpp"
#include "types.hpp"

namespace loom {

namespace detail {

inline void encode_u64(std::byte* out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out[i] = static_cast<std::byte>((v >> (8 * i)) & 0xFF);
}

inline std::uint64_t decode_u64(const std::byte* in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::to_integer<std::uint64_t>(in[i]) << (8 * i);
    return v;
}

struct endpoint {
    std::string host;
    std::uint16_t port = 0;
};

inline endpoint parse_endpoint(const std::string& spec) {
    auto colon = spec.rfind(':');
    if (colon == std::string::npos)
        fail(errc::transport_down, "peer '" + spec + "' is not host:port");
    endpoint ep;
    ep.host = spec.substr(0, colon);
    ep.port = static_cast<std::uint16_t>(std::stoi(spec.substr(colon + 1)));
    return ep;
}

} // namespace detail

/// One rank per OS process, full mesh of TCP connections bootstrapped
/// from the peer list every rank gets on its command line: rank i
/// listens on its own entry and dials every lower rank. Wire format per
/// message, bit-exact across platforms: little-endian {tag: u64,
/// length: u64} then the payload bytes.
class socket_fabric final : public fabric {
public:
    socket_fabric(rank_id self, const std::vector<std::string>& peers,
                  int connect_timeout_ms = 20000)
        : self_(self), nranks_(static_cast<rank_id>(peers.size())), fds_(peers.size(), -1) {
        if (self >= nranks_) fail(errc::bad_rank, "rank id outside the peer list");
        if (nranks_ > 1) bootstrap(peers, connect_timeout_ms);
        sender_ = std::thread([this] { sender_loop(); });
        for (rank_id r = 0; r < nranks_; ++r)
            if (fds_[r] >= 0) receivers_.emplace_back([this, r] { receive_loop(r); });
    }

    ~socket_fabric() override {
        {
            std::lock_guard lk(out_mu_);
            stop_ = true;
        }
        out_cv_.notify_all();
        if (sender_.joinable()) sender_.join();
        for (int fd : fds_)
            if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
        for (auto& t : receivers_) t.join();
        for (int fd : fds_)
            if (fd >= 0) ::close(fd);
    }

    rank_id nranks() const override { return nranks_; }

    void attach(rank_id self, delivery_fn handler) override {
        std::vector<message> parked;
        {
            std::lock_guard lk(in_mu_);
            handler_ = std::move(handler);
            parked.swap(parked_);
        }
        for (auto& m : parked) dispatch(m);
    }

    void detach(rank_id) override {
        std::lock_guard lk(in_mu_);
        handler_ = nullptr;
        parked_.clear();
    }

    void send(rank_id src, rank_id dst, std::uint64_t tag, buffer_ptr payload) override {
        if (dst >= nranks_) fail(errc::bad_rank, "send to unknown rank " + std::to_string(dst));
        if (aborted()) fail(errc::transport_down, abort_reason());
        message m{src, dst, tag, std::move(payload)};
        note_sent(m);
        if (dst == self_) { // loopback without touching the wire
            note_received(m);
            dispatch(m);
            return;
        }
        {
            std::lock_guard lk(out_mu_);
            outbox_.push_back(std::move(m));
        }
        out_cv_.notify_all();
    }

    void flush(rank_id) override {
        std::unique_lock lk(out_mu_);
        flushed_cv_.wait(lk, [this] { return (outbox_.empty() && !writing_) || down_; });
        if (down_) fail(errc::transport_down, abort_reason());
    }

private:
    void bootstrap(const std::vector<std::string>& peers, int timeout_ms) {
        auto ep = detail::parse_endpoint(peers[self_]);
        int listener = ::socket(AF_INET, SOCK_STREAM, 0);
        int yes = 1;
        ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = INADDR_ANY;
        addr.sin_port = htons(ep.port);
        if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
            ::listen(listener, int(nranks_)) != 0) {
            ::close(listener);
            fail(errc::transport_down, "cannot listen on " + peers[self_]);
        }

        // dial every lower rank, retrying while it boots
        for (rank_id r = 0; r < self_; ++r) {
            auto pep = detail::parse_endpoint(peers[r]);
            int fd = -1;
            for (int waited = 0;; waited += 50) {
                fd = dial(pep);
                if (fd >= 0) break;
                if (waited >= timeout_ms) {
                    ::close(listener);
                    fail(errc::transport_down, "cannot reach rank " + std::to_string(r) + " at " +
                                                   peers[r]);
                }
                ::usleep(50 * 1000);
            }
            std::byte hello[4];
            for (int i = 0; i < 4; ++i)
                hello[i] = static_cast<std::byte>((self_ >> (8 * i)) & 0xFF);
            write_all(fd, hello, 4);
            fds_[r] = fd;
        }

        // accept every higher rank
        for (rank_id pending = nranks_ - 1 - self_; pending > 0; --pending) {
            pollfd pfd{listener, POLLIN, 0};
            if (::poll(&pfd, 1, timeout_ms) <= 0) {
                ::close(listener);
                fail(errc::transport_down, "timed out waiting for peers to connect");
            }
            int fd = ::accept(listener, nullptr, nullptr);
            if (fd < 0) {
                ::close(listener);
                fail(errc::transport_down, "accept failed");
            }
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            std::byte hello[4];
            read_all(fd, hello, 4);
            rank_id who = 0;
            for (int i = 0; i < 4; ++i) who |= std::to_integer<rank_id>(hello[i]) << (8 * i);
            if (who >= nranks_ || fds_[who] != -1) {
                ::close(listener);
                fail(errc::transport_down, "bad hello from peer");
            }
            fds_[who] = fd;
        }
        ::close(listener);
    }

    int dial(const detail::endpoint& ep) {
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (::getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res) != 0)
            return -1;
        int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
        if (fd >= 0 && ::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
            ::close(fd);
            fd = -1;
        }
        ::freeaddrinfo(res);
        if (fd >= 0) {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        }
        return fd;
    }

    void sender_loop() {
        std::unique_lock lk(out_mu_);
        for (;;) {
            out_cv_.wait(lk, [this] { return stop_ || !outbox_.empty(); });
            if (stop_ && outbox_.empty()) return;
            message m = std::move(outbox_.front());
            outbox_.pop_front();
            writing_ = true;
            lk.unlock();
            bool ok = write_message(m);
            lk.lock();
            writing_ = false;
            if (!ok && !stop_) {
                down_ = true;
                post_abort("socket write to rank " + std::to_string(m.dst) + " failed");
            }
            if (outbox_.empty()) flushed_cv_.notify_all();
        }
    }

    bool write_message(const message& m) {
        std::byte header[16];
        detail::encode_u64(header, m.tag);
        detail::encode_u64(header + 8, m.length());
        std::lock_guard lk(fd_mu_);
        if (!write_all(fds_[m.dst], header, 16)) return false;
        if (m.payload && !write_all(fds_[m.dst], m.payload->data(), m.payload->size()))
            return false;
        return true;
    }

    void receive_loop(rank_id peer) {
        const int fd = fds_[peer];
        for (;;) {
            std::byte header[16];
            if (!read_all(fd, header, 16)) break;
            message m;
            m.src = peer;
            m.dst = self_;
            m.tag = detail::decode_u64(header);
            const std::uint64_t len = detail::decode_u64(header + 8);
            m.payload = make_buffer(len);
            if (len > 0 && !read_all(fd, m.payload->data(), len)) break;
            note_received(m);
            dispatch(m);
        }
        std::lock_guard lk(out_mu_);
        if (!stop_) {
            down_ = true;
            post_abort("connection to rank " + std::to_string(peer) + " lost");
            flushed_cv_.notify_all();
        }
    }

    void dispatch(message& m) {
        delivery_fn handler;
        {
            std::lock_guard lk(in_mu_);
            if (!handler_) {
                parked_.push_back(std::move(m));
                return;
            }
            handler = handler_;
        }
        handler(m.src, m.tag, m.payload);
    }

    static bool write_all(int fd, const std::byte* data, std::size_t n) {
        while (n > 0) {
            ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
            if (w <= 0) return false;
            data += w;
            n -= std::size_t(w);
        }
        return true;
    }

    static bool read_all(int fd, std::byte* data, std::size_t n) {
        while (n > 0) {
            ssize_t r = ::recv(fd, data, n, 0);
            if (r <= 0) return false;
            data += r;
            n -= std::size_t(r);
        }
        return true;
    }

    rank_id self_;
    rank_id nranks_;
    std::vector<int> fds_;

    std::mutex in_mu_;
    delivery_fn handler_;
    std::vector<message> parked_;

    std::mutex out_mu_;
    std::mutex fd_mu_;
    std::condition_variable out_cv_;
    std::condition_variable flushed_cv_;
    std::deque<message> outbox_;
    bool stop_ = false;
    bool writing_ = false;
    bool down_ = false;

    std::thread sender_;
    std::vector<std::thread> receivers_;
};

} // namespace loom
