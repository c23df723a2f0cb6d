#include "tinygrpo/reward_client.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <stdexcept>

namespace tinygrpo {

namespace detail {

void ReplyStore::deliver(const RewardReply& reply) {
    std::lock_guard<std::mutex> lock(mu_);
    // A reply arriving after its batch was collected (the client already
    // synthesized an error for it) must not linger and pollute a future batch.
    if (abandoned_.erase(reply.request_id) > 0) return;
    replies_[reply.request_id] = reply;
    cv_.notify_all();
}

void ReplyStore::close() {
    std::lock_guard<std::mutex> lock(mu_);
    closed_ = true;
    cv_.notify_all();
}

bool ReplyStore::closed() const {
    std::lock_guard<std::mutex> lock(mu_);
    return closed_;
}

void ReplyStore::register_batch(uint64_t id, Batch batch) {
    std::lock_guard<std::mutex> lock(mu_);
    batches_.emplace(id, std::move(batch));
}

std::unordered_map<std::string, RewardReply> ReplyStore::collect(uint64_t id) {
    std::unique_lock<std::mutex> lock(mu_);
    auto it = batches_.find(id);
    if (it == batches_.end())
        throw std::invalid_argument("unknown or already-collected batch handle");
    Batch batch = std::move(it->second);
    batches_.erase(it);

    auto all_present = [&] {
        for (const std::string& rid : batch.ids)
            if (!replies_.count(rid)) return false;
        return true;
    };
    while (!all_present() && !closed_) {
        if (cv_.wait_until(lock, batch.deadline) == std::cv_status::timeout) break;
    }

    std::unordered_map<std::string, RewardReply> out;
    for (const std::string& rid : batch.ids) {
        auto rit = replies_.find(rid);
        if (rit != replies_.end()) {
            out.emplace(rid, std::move(rit->second));
            replies_.erase(rit);
        } else {
            RewardReply synth;
            synth.request_id = rid;
            synth.reward = 0.0;
            synth.error_code = closed_ ? "worker_crash" : "timeout";
            out.emplace(rid, std::move(synth));
            abandoned_.insert(rid);
        }
    }
    return out;
}

} // namespace detail

// ---- TCP client ----

TcpRewardClient::TcpRewardClient(const std::string& host, int port,
                                 int guard_timeout_ms)
    : guard_timeout_ms_(guard_timeout_ms) {
    if (guard_timeout_ms <= 0)
        throw std::invalid_argument("guard timeout must be > 0");
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::runtime_error("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        throw std::runtime_error("bad host address: " + host);
    }
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd_);
        throw std::runtime_error("connect failed to " + host + ":" +
                                 std::to_string(port));
    }
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    reader_ = std::thread([this] { reader_loop(); });
}

TcpRewardClient::~TcpRewardClient() {
    ::shutdown(fd_, SHUT_RDWR);
    if (reader_.joinable()) reader_.join();
    ::close(fd_);
}

void TcpRewardClient::reader_loop() {
    std::string buffer;
    char chunk[4096];
    for (;;) {
        const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n <= 0) break;
        buffer.append(chunk, static_cast<size_t>(n));
        size_t start = 0;
        for (;;) {
            const size_t nl = buffer.find('\n', start);
            if (nl == std::string::npos) break;
            std::string line = buffer.substr(start, nl - start);
            start = nl + 1;
            if (line.empty()) continue;
            if (auto reply = decode_reply(line)) store_.deliver(*reply);
            // undecodable reply lines are dropped; the guard timeout covers us
        }
        buffer.erase(0, start);
    }
    store_.close();
}

RewardClient::BatchHandle TcpRewardClient::submit_async(
    const std::vector<RewardRequest>& batch) {
    detail::ReplyStore::Batch record;
    record.deadline = std::chrono::steady_clock::now() +
                      std::chrono::milliseconds(guard_timeout_ms_);
    for (const RewardRequest& req : batch) record.ids.push_back(req.request_id);

    BatchHandle h;
    {
        std::lock_guard<std::mutex> lock(batch_mu_);
        h.id = next_batch_++;
    }
    store_.register_batch(h.id, std::move(record));

    std::string block;
    for (const RewardRequest& req : batch) block += encode_request(req) + "\n";
    if (!block.empty()) {
        std::lock_guard<std::mutex> lock(write_mu_);
        size_t sent = 0;
        while (sent < block.size()) {
            const ssize_t n =
                ::send(fd_, block.data() + sent, block.size() - sent, MSG_NOSIGNAL);
            if (n <= 0) {
                store_.close(); // collect() will synthesize error replies
                break;
            }
            sent += static_cast<size_t>(n);
        }
    }
    return h;
}

std::unordered_map<std::string, RewardReply> TcpRewardClient::collect(
    BatchHandle h) {
    return store_.collect(h.id);
}

// ---- loopback client ----

LoopbackRewardClient::LoopbackRewardClient(int workers, int timeout_ms,
                                           VerifierFn fn)
    : timeout_ms_(timeout_ms),
      pool_(workers, timeout_ms, /*queue_capacity=*/4096, std::move(fn)) {}

LoopbackRewardClient::~LoopbackRewardClient() { pool_.stop(); }

RewardClient::BatchHandle LoopbackRewardClient::submit_async(
    const std::vector<RewardRequest>& batch) {
    detail::ReplyStore::Batch record;
    record.deadline = std::chrono::steady_clock::now() +
                      std::chrono::milliseconds(2 * timeout_ms_);
    for (const RewardRequest& req : batch) record.ids.push_back(req.request_id);

    BatchHandle h;
    {
        std::lock_guard<std::mutex> lock(batch_mu_);
        h.id = next_batch_++;
    }
    store_.register_batch(h.id, std::move(record));
    for (const RewardRequest& req : batch)
        pool_.submit(req, [this](const RewardReply& reply) { store_.deliver(reply); });
    return h;
}

std::unordered_map<std::string, RewardReply> LoopbackRewardClient::collect(
    BatchHandle h) {
    return store_.collect(h.id);
}

} // namespace tinygrpo
