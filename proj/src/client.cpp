#include "mmpt/client.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mmpt/errors.hpp"
#include "mmpt/log.hpp"

namespace mmpt {

RemoteChatClient::RemoteChatClient(ClientConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.base_url.empty()) {
        throw ConfigError("remote client: base url is not configured");
    }
}

std::string RemoteChatClient::complete(const std::string& prompt) {
    nlohmann::json body = {
        {"model", cfg_.model},
        {"messages", {{{"role", "user"}, {"content", prompt}}}},
    };
    const std::string payload = body.dump();

    std::string last_failure;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) {
            const double delay = cfg_.backoff_sec * static_cast<double>(1 << (attempt - 1));
            log_warn("remote client: retrying after " + last_failure);
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
        httplib::Client http(cfg_.base_url);
        http.set_connection_timeout(cfg_.timeout_sec);
        http.set_read_timeout(cfg_.timeout_sec);
        httplib::Headers headers;
        if (const char* key = std::getenv(cfg_.api_key_env.c_str())) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        auto res = http.Post(cfg_.path, headers, payload, "application/json");
        if (!res) {
            last_failure = "transport failure (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status >= 500) {
            last_failure = "server status " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw TransportError("remote client: status " + std::to_string(res->status) +
                                 " from " + cfg_.base_url);
        }
        try {
            nlohmann::json reply = nlohmann::json::parse(res->body);
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw ParseError("remote client: malformed completion payload", res->body);
        }
    }
    throw TransportError("remote client: " + last_failure + " after " +
                         std::to_string(cfg_.max_retries + 1) + " attempts");
}

std::unique_ptr<ChatClient> make_echo_client() {
    return std::make_unique<CallbackChatClient>(
        [](const std::string& prompt) { return prompt; });
}

}  // namespace mmpt
