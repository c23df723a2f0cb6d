#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tinygrpo/reward_protocol.hpp"
#include "tinygrpo/reward_service.hpp"

namespace tinygrpo {

// Asynchronous reward client: submit a batch, do other work, collect later.
// Every submitted request_id is guaranteed a reply in the collected map —
// the service's answer, or a synthesized one: error_code "timeout" when the
// guard deadline expires first, "worker_crash" when the transport dies.
class RewardClient {
public:
    struct BatchHandle {
        uint64_t id = 0;
    };

    virtual ~RewardClient() = default;

    // Returns as soon as the batch is handed off; never waits for replies.
    virtual BatchHandle submit_async(const std::vector<RewardRequest>& batch) = 0;

    // Blocks until every id of the batch has a reply or its guard deadline
    // passes; synthesizes the stragglers. Each handle may be collected once.
    virtual std::unordered_map<std::string, RewardReply> collect(BatchHandle h) = 0;
};

namespace detail {

// Reply bookkeeping shared by both client flavours.
class ReplyStore {
public:
    void deliver(const RewardReply& reply);
    void close(); // transport gone: wake all waiters
    bool closed() const;

    struct Batch {
        std::vector<std::string> ids;
        std::chrono::steady_clock::time_point deadline;
    };
    void register_batch(uint64_t id, Batch batch);
    // waits, synthesizes, erases the batch
    std::unordered_map<std::string, RewardReply> collect(uint64_t id);

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::unordered_map<std::string, RewardReply> replies_;
    std::unordered_set<std::string> abandoned_; // synthesized; drop late arrivals
    std::map<uint64_t, Batch> batches_;
    bool closed_ = false;
};

} // namespace detail

// Wire-protocol client over one persistent stream-socket connection.
// guard_timeout_ms should be ~2x the server's per-request timeout so the
// server's own timeout replies normally arrive first.
class TcpRewardClient : public RewardClient {
public:
    TcpRewardClient(const std::string& host, int port, int guard_timeout_ms);
    ~TcpRewardClient() override;

    BatchHandle submit_async(const std::vector<RewardRequest>& batch) override;
    std::unordered_map<std::string, RewardReply> collect(BatchHandle h) override;

private:
    void reader_loop();

    int fd_ = -1;
    int guard_timeout_ms_;
    std::mutex write_mu_;
    detail::ReplyStore store_;
    std::thread reader_;
    uint64_t next_batch_ = 1;
    std::mutex batch_mu_;
};

// Same interface and timeout semantics, no sockets: a VerifierPool in this
// process. The fast path for unit tests and single-process training.
class LoopbackRewardClient : public RewardClient {
public:
    LoopbackRewardClient(int workers, int timeout_ms,
                         VerifierFn fn = default_verifier());
    ~LoopbackRewardClient() override;

    BatchHandle submit_async(const std::vector<RewardRequest>& batch) override;
    std::unordered_map<std::string, RewardReply> collect(BatchHandle h) override;

private:
    int timeout_ms_;
    VerifierPool pool_;
    detail::ReplyStore store_;
    uint64_t next_batch_ = 1;
    std::mutex batch_mu_;
};

} // namespace tinygrpo
