#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "task_gold.hpp"
#include "tinygrpo/reward_client.hpp"
#include "tinygrpo/reward_service.hpp"
#include "tinygrpo/rng.hpp"
#include "tinygrpo/tasks.hpp"

using namespace tinygrpo;
using namespace std::chrono_literals;

namespace {

RewardRequest chaos_request(std::string id, const std::string& mode_payload) {
    RewardRequest r;
    r.request_id = std::move(id);
    r.task_id = "chaos:0:0";
    r.prompt_payload = mode_payload;
    r.response_text = "";
    return r;
}

RewardRequest task_request(std::string id, const Prompt& p, std::string response) {
    RewardRequest r;
    r.request_id = std::move(id);
    r.task_id = p.task_id;
    r.prompt_payload = p.payload;
    r.response_text = std::move(response);
    return r;
}

// minimal blocking line client for raw-frame tests
struct RawConn {
    int fd = -1;
    std::string buf;

    explicit RawConn(int port) {
        fd = ::socket(AF_INET, SOCK_STREAM, 0);
        REQUIRE(fd >= 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<uint16_t>(port));
        REQUIRE(::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr) == 1);
        REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    }
    ~RawConn() {
        if (fd >= 0) ::close(fd);
    }
    void send_line(const std::string& line) {
        std::string framed = line + "\n";
        size_t off = 0;
        while (off < framed.size()) {
            ssize_t n = ::send(fd, framed.data() + off, framed.size() - off, 0);
            REQUIRE(n > 0);
            off += static_cast<size_t>(n);
        }
    }
    // blocks until one full line arrives
    std::string recv_line() {
        for (;;) {
            size_t nl = buf.find('\n');
            if (nl != std::string::npos) {
                std::string line = buf.substr(0, nl);
                buf.erase(0, nl + 1);
                return line;
            }
            char chunk[4096];
            ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
            REQUIRE(n > 0);
            buf.append(chunk, static_cast<size_t>(n));
        }
    }
};

} // namespace

TEST_CASE("verifier pool scores real tasks and honours chaos modes") {
    VerifierPool pool(2, 200, 16, default_verifier());
    std::mutex mu;
    std::map<std::string, RewardReply> got;
    auto deliver = [&](const RewardReply& r) {
        std::lock_guard<std::mutex> l(mu);
        got[r.request_id] = r;
    };

    TaskSpec spec;
    spec.family = Family::arith;
    Prompt p = generate(spec, 4, 1, Split::train)[0];
    pool.submit(task_request("good", p, testhelp::gold_response(Family::arith, p.payload)),
                deliver);
    pool.submit(task_request("bad", p, testhelp::corrupt_response(Family::arith, p.payload)),
                deliver);
    pool.submit(chaos_request("ok", R"({"mode":"ok","reward":0.25})"), deliver);
    pool.submit(chaos_request("boom", R"({"mode":"crash"})"), deliver);
    pool.submit(chaos_request("slow", R"({"mode":"sleep","ms":2000})"), deliver);
    RewardRequest unknown;
    unknown.request_id = "nofam";
    unknown.task_id = "martian:1:1";
    unknown.prompt_payload = "{}";
    pool.submit(unknown, deliver);

    // generous wait: the sleep job must time out at ~200ms
    for (int i = 0; i < 200; ++i) {
        {
            std::lock_guard<std::mutex> l(mu);
            if (got.size() == 6) break;
        }
        std::this_thread::sleep_for(25ms);
    }
    std::lock_guard<std::mutex> l(mu);
    REQUIRE(got.size() == 6);
    CHECK(got["good"].reward == 1.0);
    CHECK(got["good"].error_code == "none");
    CHECK(got["good"].parsed_ok);
    CHECK(got["good"].terminated_ok);
    CHECK(got["bad"].reward == 0.0);
    CHECK(got["ok"].reward == 0.25);
    CHECK(got["boom"].error_code == "worker_crash");
    CHECK(got["boom"].reward == 0.0);
    CHECK(got["slow"].error_code == "timeout");
    CHECK(got["slow"].reward == 0.0);
    CHECK(got["nofam"].error_code == "unknown_task");
    CHECK(pool.timeout_replies() == 1);
    CHECK(pool.crash_replies() >= 1);
    CHECK(pool.replacements_spawned() >= 1); // the stuck sleeper was replaced
}

TEST_CASE("pool delivers exactly one reply per request under mixed load") {
    VerifierPool pool(4, 100, 32, default_verifier());
    std::mutex mu;
    std::map<std::string, int> reply_counts;
    std::atomic<int> total{0};
    auto deliver = [&](const RewardReply& r) {
        std::lock_guard<std::mutex> l(mu);
        reply_counts[r.request_id]++;
        total.fetch_add(1);
    };

    RngStream rng(stream_id(77, "test.pool.load"));
    const int N = 500;
    for (int i = 0; i < N; ++i) {
        const std::string id = "req" + std::to_string(i);
        switch (rng.uniform_below(4)) {
            case 0:
                pool.submit(chaos_request(id, R"({"mode":"ok","reward":1.0})"),
                            deliver);
                break;
            case 1:
                pool.submit(chaos_request(id, R"({"mode":"crash"})"), deliver);
                break;
            case 2:
                // sleeps past the 100ms deadline -> timeout reply
                pool.submit(chaos_request(id, R"({"mode":"sleep","ms":400})"),
                            deliver);
                break;
            default:
                pool.submit(chaos_request(id, R"({"mode":"ok","reward":0.5})"),
                            deliver);
                break;
        }
    }
    for (int i = 0; i < 600 && total.load() < N; ++i) std::this_thread::sleep_for(25ms);
    pool.stop();
    std::lock_guard<std::mutex> l(mu);
    REQUIRE(total.load() == N);
    REQUIRE(reply_counts.size() == size_t(N));
    for (const auto& [id, count] : reply_counts) CHECK(count == 1);
}

TEST_CASE("loopback client synthesizes nothing when the pool answers") {
    LoopbackRewardClient client(2, 500);
    TaskSpec spec;
    spec.family = Family::tagmath;
    auto prompts = generate(spec, 9, 3, Split::train);
    std::vector<RewardRequest> batch;
    for (size_t i = 0; i < prompts.size(); ++i)
        batch.push_back(task_request("b" + std::to_string(i), prompts[i],
                                     testhelp::gold_response(Family::tagmath,
                                                             prompts[i].payload)));
    auto h = client.submit_async(batch);
    auto replies = client.collect(h);
    REQUIRE(replies.size() == batch.size());
    for (const auto& [id, r] : replies) {
        CHECK(r.reward == 1.0);
        CHECK(r.error_code == "none");
    }
    CHECK_THROWS_AS((void)client.collect(h), std::invalid_argument); // once only
}

TEST_CASE("a wedged worker yields a timeout reply with reward zero") {
    // 1 worker, 100ms service timeout, client guard at 200ms; the job sleeps
    // far past both, so the watchdog's timeout reply (or at worst the guard's
    // synthesized one) must arrive with reward 0, well before the sleep ends
    LoopbackRewardClient client(1, 100);
    auto h = client.submit_async({chaos_request("stuck", R"({"mode":"sleep","ms":3000})")});
    auto t0 = std::chrono::steady_clock::now();
    auto replies = client.collect(h);
    auto waited = std::chrono::steady_clock::now() - t0;
    REQUIRE(replies.size() == 1);
    CHECK(replies["stuck"].reward == 0.0);
    CHECK(replies["stuck"].error_code == "timeout");
    CHECK(std::chrono::duration_cast<std::chrono::milliseconds>(waited).count() < 1500);
}

TEST_CASE("tcp service round-trips requests and survives garbage frames") {
    ServiceConfig cfg;
    cfg.workers = 2;
    cfg.timeout_ms = 500;
    RewardService service(cfg);
    service.start();
    REQUIRE(service.port() > 0);

    SUBCASE("wire client") {
        TcpRewardClient client("127.0.0.1", service.port(), 1000);
        TaskSpec spec;
        spec.family = Family::format;
        auto prompts = generate(spec, 13, 2, Split::train);
        std::vector<RewardRequest> batch;
        batch.push_back(task_request("w0", prompts[0],
                                     testhelp::gold_response(Family::format,
                                                             prompts[0].payload)));
        batch.push_back(task_request("w1", prompts[1], "cat cat cat"));
        auto h = client.submit_async(batch);
        auto replies = client.collect(h);
        REQUIRE(replies.size() == 2);
        CHECK(replies["w0"].reward == 1.0);
        CHECK(replies["w0"].terminated_ok);
        CHECK(replies["w1"].reward < 1.0);
    }

    SUBCASE("garbage frames are counted, skipped, and never answered") {
        RawConn conn(service.port());
        conn.send_line("this is not json");
        conn.send_line(R"({"json":"yes","but":"wrong schema"})");
        RewardRequest ok = chaos_request("after-garbage", R"({"mode":"ok","reward":1.0})");
        conn.send_line(encode_request(ok));
        // the only reply on this connection is for the valid frame
        std::string line = conn.recv_line();
        auto reply = decode_reply(line);
        REQUIRE(reply.has_value());
        CHECK(reply->request_id == "after-garbage");
        CHECK(service.framing_errors() == 2);
    }

    service.stop();
}
