#pragma once

#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ipp/corpus.hpp"
#include "ipp/errors.hpp"
#include "ipp/sha256.hpp"
#include "ipp/simulator.hpp"
#include "ipp/text.hpp"

namespace ipp {

enum class GatewayMode { live, record, replay };

inline std::string gateway_mode_name(GatewayMode m) {
    switch (m) {
        case GatewayMode::live: return "live";
        case GatewayMode::record: return "record";
        case GatewayMode::replay: return "replay";
    }
    return "replay";
}

inline GatewayMode gateway_mode_from_name(const std::string& s) {
    if (s == "live") return GatewayMode::live;
    if (s == "record") return GatewayMode::record;
    if (s == "replay") return GatewayMode::replay;
    throw ConfigError("unknown gateway mode '" + s + "'");
}

struct ProviderConfig {
    std::string endpoint;        // e.g. http://localhost:8080/v1/chat/completions
    std::string embed_endpoint;  // optional; endpoint with /embeddings substituted when empty
    std::string model_id;
    double temperature = 0.0;
    int max_in_flight = 4;
    int retry_budget = 3;
    double timeout_seconds = 60.0;
    std::string api_key_env;
    double backoff_base_seconds = 1.0;
    double backoff_cap_seconds = 60.0;

    void validate() const {
        if (max_in_flight < 1) throw ConfigError("provider: max_in_flight must be >= 1");
        if (retry_budget < 0) throw ConfigError("provider: retry_budget must be >= 0");
        if (temperature < 0) throw ConfigError("provider: temperature must be >= 0");
    }
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

// One pluggable seam for all network I/O; tests swap in scripted or
// contact-asserting stubs.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post_json(const std::string& endpoint, const std::string& body,
                                   const std::string& api_key, double timeout_seconds) = 0;
};

// Append-only JSONL response cache. A corrupt line invalidates only itself.
class ResponseCache {
public:
    ResponseCache() = default;

    explicit ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
        if (std::filesystem::exists(path_)) load();
    }

    std::optional<json> lookup(const std::string& key) const {
        std::lock_guard lock(mu_);
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void put(const std::string& key, json entry) {
        entry["key"] = key;
        entry["v"] = 1;
        std::lock_guard lock(mu_);
        if (entries_.count(key)) return;  // exact-match cache: first write wins
        entries_[key] = entry;
        if (!path_.empty()) {
            std::ofstream out(path_, std::ios::binary | std::ios::app);
            if (!out) throw ConfigError("cannot append to cache: " + path_.string());
            out << entry.dump() << '\n';
        }
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }

    std::size_t corrupt_lines() const { return corrupt_lines_; }

    std::string fingerprint() const {
        std::lock_guard lock(mu_);
        if (path_.empty() || !std::filesystem::exists(path_)) return "";
        return file_sha256(path_);
    }

    const std::filesystem::path& path() const { return path_; }

private:
    void load() {
        std::ifstream in(path_, std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("key") || !j.at("key").is_string()) {
                ++corrupt_lines_;
                continue;
            }
            entries_[j.at("key").get<std::string>()] = j;
        }
    }

    std::filesystem::path path_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, json> entries_;
    std::size_t corrupt_lines_ = 0;
};

namespace gwdetail {

class InFlightLimiter {
public:
    explicit InFlightLimiter(int max) : max_(max) {}

    struct Guard {
        InFlightLimiter* limiter;
        ~Guard() {
            if (!limiter) return;
            std::lock_guard lock(limiter->mu_);
            --limiter->count_;
            limiter->cv_.notify_one();
        }
    };

    Guard acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return count_ < max_; });
        ++count_;
        return Guard{this};
    }

private:
    int max_;
    int count_ = 0;
    std::mutex mu_;
    std::condition_variable cv_;
};

inline double backoff_delay(const ProviderConfig& cfg, int attempt) {
    static thread_local std::mt19937_64 jitter_rng(
        std::hash<std::thread::id>{}(std::this_thread::get_id()));
    double base = cfg.backoff_base_seconds * std::pow(2.0, attempt);
    double jitter = uniform_real(jitter_rng) * cfg.backoff_base_seconds;
    return std::min(base + jitter, cfg.backoff_cap_seconds);
}

inline bool retryable_status(int status) {
    return status == 429 || (status >= 500 && status < 600);
}

}  // namespace gwdetail

// HTTP transport over cpp-httplib. Endpoint form: http(s)://host[:port]/path
class HttplibTransport;  // defined in gateway_http.hpp to keep httplib out of every TU

// Provider-agnostic chat + embedding client. One Gateway instance serves
// one provider role (planner, judge, embedder); instances may share a
// ResponseCache and a Transport. All methods are safe for concurrent use
// and never exceed max_in_flight simultaneous HTTP calls.
class Gateway {
public:
    Gateway(ProviderConfig config, GatewayMode mode, std::shared_ptr<ResponseCache> cache,
            std::shared_ptr<Transport> transport)
        : config_(std::move(config)),
          mode_(mode),
          cache_(std::move(cache)),
          transport_(std::move(transport)),
          limiter_(std::make_unique<gwdetail::InFlightLimiter>(config_.max_in_flight)) {
        config_.validate();
        if (!cache_ && mode_ != GatewayMode::live)
            throw ConfigError("gateway: record/replay modes need a response cache");
    }

    const ProviderConfig& config() const { return config_; }
    GatewayMode mode() const { return mode_; }

    static json chat_request_body(const ProviderConfig& cfg, const std::string& prompt) {
        return json{{"model", cfg.model_id},
                    {"temperature", cfg.temperature},
                    {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})}};
    }

    // Exact-match key over a canonical serialization: nlohmann orders object
    // keys lexicographically, so field insertion order cannot change the key.
    static std::string chat_cache_key(const ProviderConfig& cfg, const std::string& prompt) {
        json body = chat_request_body(cfg, prompt);
        return sha256_hex(cfg.endpoint + "\n" + body.dump());
    }

    static std::string embed_cache_key(const ProviderConfig& cfg, const std::string& text) {
        json canonical{{"endpoint", embed_endpoint_of(cfg)},
                       {"input", text},
                       {"model", cfg.model_id}};
        return sha256_hex("embed\n" + canonical.dump());
    }

    /// Chat completion for `prompt`, returned verbatim.
    std::string chat(const std::string& prompt) {
        const std::string key = chat_cache_key(config_, prompt);
        if (mode_ != GatewayMode::live) {
            if (auto hit = cache_->lookup(key)) return hit->at("text").get<std::string>();
            if (mode_ == GatewayMode::replay) throw CacheMissError(key);
        }
        json body = chat_request_body(config_, prompt);
        std::string response_body = round_trip(config_.endpoint, body.dump());
        std::string text = extract_chat_text(response_body);
        if (mode_ == GatewayMode::record)
            cache_->put(key, json{{"kind", "chat"},
                                  {"text", text},
                                  {"created_at", now_iso8601()},
                                  {"mode_recorded", true}});
        return text;
    }

    /// Order-preserving embeddings, cached per individual text.
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) {
        if (texts.empty()) throw DomainError("embed: no texts given");
        std::vector<std::vector<double>> out(texts.size());
        std::vector<std::size_t> misses;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            const std::string key = embed_cache_key(config_, texts[i]);
            if (mode_ != GatewayMode::live) {
                if (auto hit = cache_->lookup(key)) {
                    out[i] = hit->at("vec").get<std::vector<double>>();
                    continue;
                }
                if (mode_ == GatewayMode::replay) throw CacheMissError(key);
            }
            misses.push_back(i);
        }
        if (misses.empty()) return out;

        json body{{"model", config_.model_id}, {"input", json::array()}};
        for (auto i : misses) body["input"].push_back(texts[i]);
        std::string response_body = round_trip(embed_endpoint_of(config_), body.dump());
        json parsed = json::parse(response_body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("data") ||
            parsed.at("data").size() != misses.size())
            throw ParseError("embedding response malformed or wrong batch size");
        for (std::size_t k = 0; k < misses.size(); ++k) {
            auto vec = parsed.at("data").at(k).at("embedding").get<std::vector<double>>();
            out[misses[k]] = vec;
            if (mode_ == GatewayMode::record)
                cache_->put(embed_cache_key(config_, texts[misses[k]]),
                            json{{"kind", "embed"},
                                 {"vec", out[misses[k]]},
                                 {"created_at", now_iso8601()},
                                 {"mode_recorded", true}});
        }
        return out;
    }

private:
    static std::string embed_endpoint_of(const ProviderConfig& cfg) {
        if (!cfg.embed_endpoint.empty()) return cfg.embed_endpoint;
        // conventional sibling path of an OpenAI-style chat endpoint
        std::string ep = cfg.endpoint;
        auto pos = ep.rfind("/chat/completions");
        if (pos != std::string::npos) return ep.substr(0, pos) + "/embeddings";
        return ep;
    }

    static std::string now_iso8601() {
        auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::tm tm{};
        gmtime_r(&t, &tm);
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    static std::string extract_chat_text(const std::string& body) {
        json j = json::parse(body, nullptr, false);
        if (!j.is_discarded()) {
            if (j.contains("choices") && !j.at("choices").empty()) {
                const auto& c0 = j.at("choices").at(0);
                if (c0.contains("message") && c0.at("message").contains("content"))
                    return c0.at("message").at("content").get<std::string>();
                if (c0.contains("text")) return c0.at("text").get<std::string>();
            }
        }
        throw ParseError("chat response body missing choices[0].message.content");
    }

    std::string round_trip(const std::string& endpoint, const std::string& body) {
        if (!transport_)
            throw StateError("gateway has no transport configured for network calls");
        std::string api_key;
        if (!config_.api_key_env.empty()) {
            if (const char* v = std::getenv(config_.api_key_env.c_str())) api_key = v;
        }
        std::string attempt_log;
        for (int attempt = 0; attempt <= config_.retry_budget; ++attempt) {
            if (attempt > 0) {
                auto delay = gwdetail::backoff_delay(config_, attempt - 1);
                std::this_thread::sleep_for(std::chrono::duration<double>(delay));
            }
            try {
                auto guard = limiter_->acquire();
                HttpResponse resp =
                    transport_->post_json(endpoint, body, api_key, config_.timeout_seconds);
                if (resp.status == 200) return resp.body;
                attempt_log += "attempt " + std::to_string(attempt + 1) + ": HTTP " +
                               std::to_string(resp.status) + "; ";
                if (!gwdetail::retryable_status(resp.status))
                    throw TransportError("provider returned HTTP " + std::to_string(resp.status) +
                                         " (" + attempt_log + ")");
            } catch (const TransportError&) {
                throw;
            } catch (const std::exception& e) {
                attempt_log += "attempt " + std::to_string(attempt + 1) + ": " + e.what() + "; ";
            }
        }
        throw TransportError("retries exhausted for " + endpoint + " (" + attempt_log + ")");
    }

    ProviderConfig config_;
    GatewayMode mode_;
    std::shared_ptr<ResponseCache> cache_;
    std::shared_ptr<Transport> transport_;
    std::unique_ptr<gwdetail::InFlightLimiter> limiter_;
};

// --- response parsing -------------------------------------------------------

struct PathMention {
    std::string mention;
    std::optional<ItemId> resolved;
};

namespace gwdetail {

inline std::string clean_mention(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s)
        if (c != '*' && c != '`') out += c;  // markdown emphasis, never title text
    out = std::string(trim(out));
    auto strip_wrap = [&](char c) {
        while (!out.empty() && out.front() == c) out.erase(out.begin());
        while (!out.empty() && out.back() == c) out.pop_back();
    };
    for (char c : {'_', '"', '\''}) strip_wrap(c);
    while (!out.empty() && (out.back() == '.' || out.back() == ',' || out.back() == ';'))
        out.pop_back();
    return std::string(trim(out));
}

inline std::optional<ItemId> resolve_mention(const std::string& mention, const Catalog& catalog) {
    std::vector<std::string> variants{mention};
    if (auto pos = mention.find(" - "); pos != std::string::npos)
        variants.push_back(std::string(trim(mention.substr(0, pos))));
    // LLMs often append ", Genre1, Genre2" after the title
    std::string cut = mention;
    for (int i = 0; i < 2; ++i) {
        auto pos = cut.rfind(',');
        if (pos == std::string::npos) break;
        cut = std::string(trim(cut.substr(0, pos)));
        variants.push_back(cut);
    }
    for (const auto& v : variants) {
        if (v.empty()) continue;
        try {
            if (auto id = resolve_title(v, catalog)) return id;
        } catch (const TitleAmbiguityError&) {
            // ambiguous stays unresolved here; callers log it as off-catalog
        }
    }
    return std::nullopt;
}

struct ListLine {
    enum Kind { numbered, bullet } kind;
    int number = 0;
    std::string text;
};

inline std::optional<ListLine> classify_list_line(const std::string& line) {
    static const std::regex numbered(R"(^\s*(\d{1,3})[.):]\s+(.+)$)");
    static const std::regex bullet(R"(^\s*(?:[-*+]|\xe2\x80\xa2)\s+(.+)$)");
    std::smatch m;
    if (std::regex_match(line, m, numbered))
        return ListLine{ListLine::numbered, std::stoi(m[1].str()), m[2].str()};
    if (std::regex_match(line, m, bullet)) return ListLine{ListLine::bullet, 0, m[1].str()};
    return std::nullopt;
}

}  // namespace gwdetail

// Extracts an ordered list of item mentions from a chat response: numbered
// lists, bulleted lists, or a comma-separated line, in that order of
// preference. When several list blocks appear (tree-of-thought transcripts),
// only the final block — the consolidated answer — is used. Each mention is
// resolved against the catalog; unresolved mentions keep a null id.
inline std::vector<PathMention> parse_path_response(const std::string& text,
                                                    const Catalog& catalog) {
    std::string scope = text;
    {
        // prefer an explicitly marked final section when one exists
        std::string lower = to_lower(text);
        std::size_t best = std::string::npos;
        for (std::string_view marker :
             {"final answer", "final result", "final path", "final influence path"}) {
            auto pos = lower.rfind(marker);
            if (pos != std::string::npos && (best == std::string::npos || pos > best)) best = pos;
        }
        if (best != std::string::npos) scope = text.substr(best);
    }

    auto lines = split(scope, "\n");
    std::vector<std::vector<gwdetail::ListLine>> blocks;
    std::vector<gwdetail::ListLine> current;
    int prev_number = 0;
    auto flush = [&] {
        if (!current.empty()) blocks.push_back(std::move(current));
        current.clear();
        prev_number = 0;
    };
    for (const auto& raw : lines) {
        if (trim(raw).empty()) continue;  // blank lines do not break a list
        auto ll = gwdetail::classify_list_line(raw);
        if (!ll) {
            flush();
            continue;
        }
        if (ll->kind == gwdetail::ListLine::numbered) {
            if (prev_number != 0 && ll->number <= prev_number) flush();  // numbering restarted
            prev_number = ll->number;
        }
        current.push_back(*ll);
    }
    flush();

    std::vector<std::string> mentions;
    if (!blocks.empty()) {
        for (const auto& ll : blocks.back()) {
            auto m = gwdetail::clean_mention(ll.text);
            if (!m.empty()) mentions.push_back(m);
        }
    } else {
        // fallback: last line that splits into two or more comma segments
        for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
            auto segs = split(*it, ",");
            if (segs.size() >= 2) {
                for (const auto& s : segs) {
                    auto m = gwdetail::clean_mention(s);
                    if (!m.empty()) mentions.push_back(m);
                }
                break;
            }
        }
    }
    if (mentions.empty())
        throw ParseError("no item list found in response: " +
                         std::string(text.substr(0, std::min<std::size_t>(text.size(), 160))));

    std::vector<PathMention> out;
    out.reserve(mentions.size());
    for (const auto& m : mentions)
        out.push_back(PathMention{m, gwdetail::resolve_mention(m, catalog)});
    return out;
}

namespace gwdetail {

struct NumberToken {
    double value;
    bool has_decimal;
    std::string text;
};

// Hand-rolled number lexer: grabs standalone numeric tokens and leaves
// things like "v1.2" or "top10" alone.
inline std::vector<NumberToken> number_tokens(const std::string& s) {
    std::vector<NumberToken> out;
    const std::size_t n = s.size();
    std::size_t i = 0;
    auto is_word = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    };
    while (i < n) {
        char c = s[i];
        bool starts_number = std::isdigit(static_cast<unsigned char>(c)) ||
                             ((c == '-' || c == '.') && i + 1 < n &&
                              std::isdigit(static_cast<unsigned char>(s[i + 1])));
        if (!starts_number) {
            ++i;
            continue;
        }
        if (i > 0 && (is_word(s[i - 1]) || s[i - 1] == '.' || s[i - 1] == '-')) {
            // glued to a word or a longer token; skip the whole run
            while (i < n && (is_word(s[i]) || s[i] == '.')) ++i;
            continue;
        }
        std::size_t start = i;
        if (s[i] == '-') ++i;
        while (i < n && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        bool has_decimal = false;
        if (i < n && s[i] == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(s[i + 1]))) {
            has_decimal = true;
            ++i;
            while (i < n && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        }
        // reject version-like tails: 1.2.3
        if (i < n && s[i] == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(s[i + 1]))) {
            while (i < n && (is_word(s[i]) || s[i] == '.')) ++i;
            continue;
        }
        if (i < n && is_word(s[i])) {  // e.g. "10th"
            while (i < n && (is_word(s[i]) || s[i] == '.')) ++i;
            continue;
        }
        std::string tok = s.substr(start, i - start);
        out.push_back(NumberToken{std::stod(tok), has_decimal, tok});
    }
    return out;
}

}  // namespace gwdetail

// Extracts exactly `expected_count` numeric scores in reading order,
// ignoring explanatory prose. Tries, in order: numbers attached to a
// score/probability/relevance/rating label, then decimal-form numbers,
// then all standalone numbers. Every extracted score must lie in [lo, hi];
// out-of-range or miscounted extractions raise ParseError.
inline std::vector<double> parse_scores(const std::string& text, int expected_count, double lo,
                                        double hi) {
    if (expected_count < 1) throw DomainError("parse_scores: expected_count must be >= 1");

    auto finish = [&](std::vector<gwdetail::NumberToken> tokens)
        -> std::optional<std::vector<double>> {
        if (static_cast<int>(tokens.size()) != expected_count) return std::nullopt;
        std::vector<double> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) {
            if (t.value < lo || t.value > hi)
                throw ParseError("score " + t.text + " outside [" + std::to_string(lo) + ", " +
                                 std::to_string(hi) + "]");
            out.push_back(t.value);
        }
        return out;
    };

    // pass 1: labeled scores
    {
        static const std::regex labeled(
            R"((?:score|probability|relevance|rating)[^0-9\-\n]{0,12}(-?(?:\d+\.\d+|\.\d+|\d+)))",
            std::regex::icase);
        std::vector<gwdetail::NumberToken> tokens;
        for (auto it = std::sregex_iterator(text.begin(), text.end(), labeled);
             it != std::sregex_iterator(); ++it) {
            std::string tok = (*it)[1].str();
            tokens.push_back({std::stod(tok), tok.find('.') != std::string::npos, tok});
        }
        if (auto r = finish(std::move(tokens))) return *r;
    }

    auto all_tokens = gwdetail::number_tokens(text);

    // pass 2: decimal-form numbers only (skips years, list indices...)
    {
        std::vector<gwdetail::NumberToken> decimals;
        for (const auto& t : all_tokens)
            if (t.has_decimal) decimals.push_back(t);
        if (auto r = finish(std::move(decimals))) return *r;
    }

    // pass 3: every standalone number
    if (auto r = finish(all_tokens)) return *r;

    throw ParseError("expected " + std::to_string(expected_count) + " scores, found " +
                     std::to_string(all_tokens.size()) + " numeric tokens");
}

// --- embedding providers ----------------------------------------------------

struct EmbeddingVector {
    std::vector<double> values;
    std::string provider_tag;
};

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw DomainError("cosine_similarity: dimension mismatch");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
};

class GatewayEmbedder : public Embedder {
public:
    explicit GatewayEmbedder(std::shared_ptr<Gateway> gateway) : gateway_(std::move(gateway)) {}

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        auto raw = gateway_->embed(texts);
        std::vector<EmbeddingVector> out;
        out.reserve(raw.size());
        for (auto& v : raw)
            out.push_back(EmbeddingVector{std::move(v), gateway_->config().model_id});
        return out;
    }

private:
    std::shared_ptr<Gateway> gateway_;
};

// Offline fallback: catalog titles map to the simulator's learned item
// embeddings, so coherence can be computed with no remote provider at all.
class SimulatorEmbedder : public Embedder {
public:
    SimulatorEmbedder(std::shared_ptr<const SimulatorModel> model,
                      std::shared_ptr<const Catalog> catalog)
        : model_(std::move(model)), catalog_(std::move(catalog)) {}

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            auto id = resolve_title(t, *catalog_);
            if (!id)
                throw DomainError("simulator embedder: text is not a catalog title: " + t);
            VectorXd e = model_->item_embedding(*id);
            EmbeddingVector v;
            v.values.assign(e.data(), e.data() + e.size());
            v.provider_tag = "simulator";
            out.push_back(std::move(v));
        }
        return out;
    }

private:
    std::shared_ptr<const SimulatorModel> model_;
    std::shared_ptr<const Catalog> catalog_;
};

}  // namespace ipp
