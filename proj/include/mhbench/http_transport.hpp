#pragma once
// Chat-completion style HTTP transport. The request body follows the common
// provider convention: {"model", "messages": [{role, content}], "temperature",
// "max_tokens"}; the reply's choices[0].message.content is the completion.

#include <cstdlib>
#include <optional>
#include <string>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"
#include "mhbench/model_gateway.hpp"

namespace mhbench {

/// MHBENCH_API_KEY_<ALIAS>, alias = model id upper-cased with every
/// non-alphanumeric character replaced by '_'.
inline std::string credential_env_var(std::string_view model_id) {
  std::string out = "MHBENCH_API_KEY_";
  for (char c : model_id) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                                                             : '_');
  }
  return out;
}

inline std::optional<std::string> credential_for(std::string_view model_id) {
  if (const char* v = std::getenv(credential_env_var(model_id).c_str()); v && *v) return std::string(v);
  if (const char* v = std::getenv("MHBENCH_API_KEY"); v && *v) return std::string(v);
  return std::nullopt;
}

struct EndpointUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline EndpointUrl split_endpoint(std::string_view url) {
  const size_t scheme = url.find("://");
  if (scheme == std::string_view::npos) throw InvalidInputError("provider_endpoint: expected an http(s) URL");
  const size_t slash = url.find('/', scheme + 3);
  if (slash == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, slash)), std::string(url.substr(slash))};
}

class HttpChatTransport final : public ChatTransport {
 public:
  explicit HttpChatTransport(std::chrono::seconds timeout = std::chrono::seconds(120)) : timeout_(timeout) {}

  std::string send(const ModelDescriptor& model, const CompletionRequest& request) override {
    const auto url = split_endpoint(model.provider_endpoint);
    httplib::Client client(url.origin);
    client.set_connection_timeout(10);
    client.set_read_timeout(static_cast<time_t>(timeout_.count()));

    httplib::Headers headers;
    if (auto key = credential_for(model.model_id)) headers.emplace("Authorization", "Bearer " + *key);

    json messages = json::array();
    if (request.system_text) messages.push_back({{"role", "system"}, {"content", *request.system_text}});
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.text}});
    const json body{{"model", model.version_label.empty() ? model.model_id : model.version_label},
                    {"messages", messages},
                    {"temperature", request.temperature},
                    {"max_tokens", request.max_output_tokens}};

    auto res = client.Post(url.path, headers, body.dump(), "application/json");
    if (!res) throw TransientError("request to " + model.model_id + " failed: " + httplib::to_string(res.error()));
    if (res->status == 401 || res->status == 403) {
      throw AuthenticationError("endpoint for " + model.model_id + " rejected credentials (HTTP " +
                                std::to_string(res->status) + ")");
    }
    if (res->status == 408 || res->status == 429 || res->status >= 500) {
      throw TransientError("endpoint for " + model.model_id + " returned HTTP " + std::to_string(res->status));
    }
    if (res->status < 200 || res->status >= 300) {
      throw BadResponseError("endpoint for " + model.model_id + " returned HTTP " + std::to_string(res->status));
    }
    try {
      const json reply = json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw BadResponseError("unexpected reply shape from " + model.model_id + ": " + e.what());
    }
  }

 private:
  std::chrono::seconds timeout_;
};

}  // namespace mhbench
