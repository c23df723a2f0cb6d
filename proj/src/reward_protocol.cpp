#include "tinygrpo/reward_protocol.hpp"

#include "json.hpp"

namespace tinygrpo {

using ordered_json = nlohmann::ordered_json;

bool valid_error_code(const std::string& code) {
    return code == "none" || code == "timeout" || code == "worker_crash" ||
           code == "unknown_task";
}

std::string encode_request(const RewardRequest& req) {
    ordered_json j;
    j["request_id"] = req.request_id;
    j["task_id"] = req.task_id;
    j["prompt"] = req.prompt_payload;
    j["response"] = req.response_text;
    return j.dump();
}

std::optional<RewardRequest> decode_request(const std::string& line,
                                            std::string* err) {
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        if (err) *err = "not a JSON object";
        return std::nullopt;
    }
    RewardRequest req;
    try {
        req.request_id = j.at("request_id").get<std::string>();
        req.task_id = j.at("task_id").get<std::string>();
        req.prompt_payload = j.at("prompt").get<std::string>();
        req.response_text = j.at("response").get<std::string>();
    } catch (const std::exception& e) {
        if (err) *err = e.what();
        return std::nullopt;
    }
    return req;
}

std::string encode_reply(const RewardReply& reply) {
    ordered_json j;
    j["request_id"] = reply.request_id;
    j["reward"] = reply.reward;
    j["parsed_ok"] = reply.parsed_ok;
    j["terminated_ok"] = reply.terminated_ok;
    j["error_code"] = reply.error_code;
    return j.dump();
}

std::optional<RewardReply> decode_reply(const std::string& line,
                                        std::string* err) {
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        if (err) *err = "not a JSON object";
        return std::nullopt;
    }
    RewardReply reply;
    try {
        reply.request_id = j.at("request_id").get<std::string>();
        reply.reward = j.at("reward").get<double>();
        reply.parsed_ok = j.at("parsed_ok").get<bool>();
        reply.terminated_ok = j.at("terminated_ok").get<bool>();
        reply.error_code = j.at("error_code").get<std::string>();
    } catch (const std::exception& e) {
        if (err) *err = e.what();
        return std::nullopt;
    }
    if (!valid_error_code(reply.error_code)) {
        if (err) *err = "unknown error_code: " + reply.error_code;
        return std::nullopt;
    }
    if (!(reply.reward >= 0.0 && reply.reward <= 1.0)) { // NaN fails too
        if (err) *err = "reward outside [0,1]";
        return std::nullopt;
    }
    return reply;
}

} // namespace tinygrpo
