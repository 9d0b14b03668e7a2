#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ipp/gateway.hpp"
#include "ipp/sha256.hpp"

namespace ipp::testing {

// Transport that must never be reached; proves replay mode does zero
// network operations.
class ForbiddenTransport : public ipp::Transport {
public:
    ipp::HttpResponse post_json(const std::string&, const std::string&, const std::string&,
                                double) override {
        contacted.store(true);
        throw ipp::TransportError("network contact in a run that promised none");
    }
    std::atomic<bool> contacted{false};
};

// Scripted transport: answers chat requests through a handler on the prompt
// text, and embedding requests with deterministic per-text vectors. Tracks
// concurrency so the in-flight cap is assertable.
class ScriptedTransport : public ipp::Transport {
public:
    using ChatHandler = std::function<std::string(const std::string& prompt)>;

    explicit ScriptedTransport(ChatHandler chat_handler, int embed_dim = 8)
        : chat_handler_(std::move(chat_handler)), embed_dim_(embed_dim) {}

    ipp::HttpResponse post_json(const std::string& endpoint, const std::string& body,
                                const std::string&, double) override {
        int now = 1 + in_flight_.fetch_add(1);
        int seen = max_in_flight_.load();
        while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
        }
        if (dwell_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(dwell_ms_));
        calls_.fetch_add(1);

        ipp::json req = ipp::json::parse(body);
        ipp::json resp;
        if (endpoint.find("embed") != std::string::npos || req.contains("input")) {
            resp["data"] = ipp::json::array();
            for (const auto& text : req.at("input"))
                resp["data"].push_back(
                    ipp::json{{"embedding", embedding_for(text.get<std::string>())}});
        } else {
            std::string prompt = req.at("messages").at(0).at("content").get<std::string>();
            resp["choices"] = ipp::json::array(
                {ipp::json{{"message", ipp::json{{"role", "assistant"},
                                                 {"content", chat_handler_(prompt)}}}}});
        }
        in_flight_.fetch_sub(1);
        return ipp::HttpResponse{200, resp.dump()};
    }

    // unit vector derived from the text hash: deterministic, text-specific
    std::vector<double> embedding_for(const std::string& text) const {
        auto hex = ipp::sha256_hex(text);
        std::vector<double> v(static_cast<std::size_t>(embed_dim_));
        double norm = 0;
        for (int i = 0; i < embed_dim_; ++i) {
            int byte = std::stoi(hex.substr(static_cast<std::size_t>(i) * 2, 2), nullptr, 16);
            v[static_cast<std::size_t>(i)] = (byte - 127.5) / 127.5;
            norm += v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
        }
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;
        return v;
    }

    void set_dwell_ms(int ms) { dwell_ms_ = ms; }
    int calls() const { return calls_.load(); }
    int max_observed_in_flight() const { return max_in_flight_.load(); }

private:
    ChatHandler chat_handler_;
    int embed_dim_;
    int dwell_ms_ = 0;
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
    std::atomic<int> calls_{0};
};

// Fails with a retryable error the first `failures` times, then delegates.
class FlakyTransport : public ipp::Transport {
public:
    FlakyTransport(std::shared_ptr<ipp::Transport> inner, int failures, int status = 500)
        : inner_(std::move(inner)), remaining_(failures), status_(status) {}

    ipp::HttpResponse post_json(const std::string& endpoint, const std::string& body,
                                const std::string& key, double timeout) override {
        if (remaining_.fetch_sub(1) > 0) return ipp::HttpResponse{status_, "synthetic failure"};
        return inner_->post_json(endpoint, body, key, timeout);
    }

private:
    std::shared_ptr<ipp::Transport> inner_;
    std::atomic<int> remaining_;
    int status_;
};

}  // namespace ipp::testing
