#pragma once

#include <optional>
#include <string>

namespace tinygrpo {

// One verification job. `prompt_payload` is the generator's hidden ground
// truth (a JSON document); `response_text` is the decoded token sequence,
// trailing eos included so the verifier can judge termination.
struct RewardRequest {
    std::string request_id; // unique per connection, opaque
    std::string task_id;    // family-prefixed routing id, e.g. "arith:17:3"
    std::string prompt_payload;
    std::string response_text;
};

struct RewardReply {
    std::string request_id;
    double reward = 0.0;
    bool parsed_ok = false;
    bool terminated_ok = false;
    std::string error_code = "none"; // none | timeout | worker_crash | unknown_task
};

bool valid_error_code(const std::string& code);

// Wire format: one JSON object per line ("\n" terminated). Request fields:
// request_id, task_id, prompt, response. Reply fields: request_id, reward,
// parsed_ok, terminated_ok, error_code. JSON string escaping makes embedded
// newlines round-trip. Encoders return the line WITHOUT the trailing
// newline; decoders take one line and return nullopt (with a diagnostic in
// *err) on malformed input.
std::string encode_request(const RewardRequest& req);
std::optional<RewardRequest> decode_request(const std::string& line,
                                            std::string* err = nullptr);
std::string encode_reply(const RewardReply& reply);
std::optional<RewardReply> decode_reply(const std::string& line,
                                        std::string* err = nullptr);

} // namespace tinygrpo
