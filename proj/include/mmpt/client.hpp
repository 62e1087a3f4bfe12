#pragma once

#include <functional>
#include <memory>
#include <string>

namespace mmpt {

struct ClientConfig {
    std::string base_url;  // e.g. http://judge.internal:8080
    std::string path = "/v1/chat/completions";
    std::string model = "judge";
    std::string api_key_env = "MMPT_API_KEY";
    int max_retries = 3;
    double backoff_sec = 0.5;
    int timeout_sec = 30;
};

class ChatClient {
  public:
    virtual ~ChatClient() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

// Talks to a chat-completion endpoint. Server-side and transport failures are
// retried with exponential backoff, then raised as TransportError.
class RemoteChatClient : public ChatClient {
  public:
    explicit RemoteChatClient(ClientConfig cfg);
    std::string complete(const std::string& prompt) override;

  private:
    ClientConfig cfg_;
};

// Wraps a plain function; the test seam for anything needing a client.
class CallbackChatClient : public ChatClient {
  public:
    explicit CallbackChatClient(std::function<std::string(const std::string&)> fn)
        : fn_(std::move(fn)) {}
    std::string complete(const std::string& prompt) override { return fn_(prompt); }

  private:
    std::function<std::string(const std::string&)> fn_;
};

// Returns the prompt verbatim. Feeding the expansion meta-prompt back through
// its own parser yields exactly the seed prompts, so offline runs degrade to
// the hand-written seeds.
std::unique_ptr<ChatClient> make_echo_client();

}  // namespace mmpt
