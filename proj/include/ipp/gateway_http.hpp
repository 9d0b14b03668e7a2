#pragma once

#include <httplib.h>

#include <string>

#include "ipp/gateway.hpp"

namespace ipp {

// Live transport over cpp-httplib. Split from gateway.hpp so only the
// binaries that actually reach the network compile httplib.
class HttplibTransport : public Transport {
public:
    HttpResponse post_json(const std::string& endpoint, const std::string& body,
                           const std::string& api_key, double timeout_seconds) override {
        auto [base, path] = split_endpoint(endpoint);
        httplib::Client client(base);
        client.set_connection_timeout(std::chrono::duration<double>(timeout_seconds));
        client.set_read_timeout(std::chrono::duration<double>(timeout_seconds));
        client.set_write_timeout(std::chrono::duration<double>(timeout_seconds));
        httplib::Headers headers;
        if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) throw TransportError("connection to " + base + " failed: " +
                                       httplib::to_string(res.error()));
        return HttpResponse{res->status, res->body};
    }

    // "http://host:8080/v1/chat" -> ("http://host:8080", "/v1/chat")
    static std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
        auto scheme_end = endpoint.find("://");
        if (scheme_end == std::string::npos)
            throw ConfigError("endpoint missing scheme: " + endpoint);
        auto path_start = endpoint.find('/', scheme_end + 3);
        if (path_start == std::string::npos) return {endpoint, "/"};
        return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
    }
};

}  // namespace ipp
