#include <doctest.h>

#include <string>

#include "json.hpp"
#include "tinygrpo/reward_protocol.hpp"

using namespace tinygrpo;

TEST_CASE("request encoding round-trips, embedded newlines included") {
    RewardRequest req;
    req.request_id = "s3-g1-7";
    req.task_id = "arith:5:12";
    req.prompt_payload = R"({"answer":9})";
    req.response_text = "line one\nline \"two\" \\ backslash";
    std::string line = encode_request(req);
    CHECK(line.find('\n') == std::string::npos); // escaping keeps it one line
    auto back = decode_request(line);
    REQUIRE(back.has_value());
    CHECK(back->request_id == req.request_id);
    CHECK(back->task_id == req.task_id);
    CHECK(back->prompt_payload == req.prompt_payload);
    CHECK(back->response_text == req.response_text);
}

TEST_CASE("request wire field order is fixed") {
    RewardRequest req;
    req.request_id = "r";
    req.task_id = "format:1:0";
    req.prompt_payload = "{}";
    req.response_text = "x";
    // documented order: request_id, task_id, prompt, response
    CHECK(encode_request(req) ==
          R"({"request_id":"r","task_id":"format:1:0","prompt":"{}","response":"x"})");
}

TEST_CASE("reply encoding round-trips and keeps field order") {
    RewardReply rep;
    rep.request_id = "abc";
    rep.reward = 0.5;
    rep.parsed_ok = true;
    rep.terminated_ok = false;
    rep.error_code = "none";
    std::string line = encode_reply(rep);
    CHECK(line ==
          R"({"request_id":"abc","reward":0.5,"parsed_ok":true,"terminated_ok":false,"error_code":"none"})");
    auto back = decode_reply(line);
    REQUIRE(back.has_value());
    CHECK(back->reward == 0.5);
    CHECK(back->parsed_ok);
    CHECK(!back->terminated_ok);
    CHECK(back->error_code == "none");
}

TEST_CASE("decoders reject garbage without throwing") {
    std::string err;
    CHECK(!decode_request("not json", &err).has_value());
    CHECK(!err.empty());
    CHECK(!decode_request("{}", nullptr).has_value()); // missing fields
    CHECK(!decode_request(R"({"request_id":5,"task_id":"a","prompt":"p","response":"r"})")
               .has_value()); // wrong type
    CHECK(!decode_reply("", &err).has_value());
    CHECK(!decode_reply(R"({"request_id":"x"})").has_value());
    CHECK(!decode_reply(
               R"({"request_id":"x","reward":2.0,"parsed_ok":true,"terminated_ok":true,"error_code":"none"})")
               .has_value()); // reward outside [0,1]
    CHECK(!decode_reply(
               R"({"request_id":"x","reward":0.5,"parsed_ok":true,"terminated_ok":true,"error_code":"weird"})")
               .has_value()); // unknown error code
}

TEST_CASE("error code whitelist") {
    CHECK(valid_error_code("none"));
    CHECK(valid_error_code("timeout"));
    CHECK(valid_error_code("worker_crash"));
    CHECK(valid_error_code("unknown_task"));
    CHECK(!valid_error_code(""));
    CHECK(!valid_error_code("oops"));
}
