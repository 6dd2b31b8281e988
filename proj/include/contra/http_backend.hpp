#pragma once

#include <chrono>
#include <cmath>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "contra/backend.hpp"
#include "contra/error.hpp"
#include "contra/logprob.hpp"
#include "contra/vocab.hpp"

namespace contra {

struct HttpBackendOptions {
    double timeout_sec = 5.0;
    int retries = 2;                   // extra attempts after the first
    std::size_t max_cache_entries = 100000;
};

// Remote conditional distribution. Protocol: POST <endpoint> with
// {"context_ids": [ints]} -> {"logprobs": [floats]} of vocabulary length,
// natural log, normalized within 1e-3 (the client renormalizes exactly).
// Responses are cached by context, so repeating a context inside one decode
// costs one network call.
class HttpBackend final : public LMBackend {
public:
    HttpBackend(const std::string& endpoint, Vocabulary vocab, HttpBackendOptions opts = {})
        : vocab_(std::move(vocab)), opts_(opts) {
        if (vocab_.empty()) throw InvalidParameter("HttpBackend: empty vocabulary");
        parse_endpoint(endpoint);
        client_ = std::make_unique<httplib::Client>(base_url_);
        const auto timeout = std::chrono::microseconds(
            static_cast<long long>(opts_.timeout_sec * 1e6));
        client_->set_connection_timeout(timeout);
        client_->set_read_timeout(timeout);
        client_->set_write_timeout(timeout);
        // Construction health check: an empty context must yield a valid
        // distribution, proving the endpoint is up and the vocabulary agrees.
        fetch(TokenSeq{});
    }

    const Vocabulary& vocab() const override { return vocab_; }

    LogProbVector next_logprobs(const TokenSeq& context) const override {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = cache_.find(context);
            if (it != cache_.end()) return it->second;
        }
        LogProbVector d = fetch(context);
        {
            std::lock_guard<std::mutex> lock(mutex_);
            if (cache_.size() >= opts_.max_cache_entries) cache_.clear();
            cache_.emplace(context, d);
        }
        return d;
    }

private:
    void parse_endpoint(const std::string& endpoint) {
        const auto scheme_end = endpoint.find("://");
        if (scheme_end == std::string::npos)
            throw InvalidParameter("HttpBackend: endpoint must start with http:// or https://");
        const auto path_start = endpoint.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            base_url_ = endpoint;
            path_ = "/";
        } else {
            base_url_ = endpoint.substr(0, path_start);
            path_ = endpoint.substr(path_start);
        }
    }

    LogProbVector fetch(const TokenSeq& context) const {
        nlohmann::json request;
        request["context_ids"] = context;
        const std::string body = request.dump();

        httplib::Result res;
        for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
            res = client_->Post(path_, body, "application/json");
            if (res) break;
        }
        if (!res) {
            const bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                                   res.error() == httplib::Error::Read ||
                                   res.error() == httplib::Error::Write;
            if (timed_out)
                throw HttpError(HttpError::Kind::Timeout,
                                "HttpBackend: request to " + base_url_ + path_ + " timed out");
            throw HttpError(HttpError::Kind::Unreachable,
                            "HttpBackend: cannot reach " + base_url_ + path_ + " (" +
                                httplib::to_string(res.error()) + ")");
        }
        if (res->status != 200)
            throw HttpError(HttpError::Kind::MalformedPayload,
                            "HttpBackend: server returned status " + std::to_string(res->status));

        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw HttpError(HttpError::Kind::MalformedPayload,
                            std::string("HttpBackend: response is not JSON: ") + e.what());
        }
        if (!reply.contains("logprobs") || !reply["logprobs"].is_array())
            throw HttpError(HttpError::Kind::MalformedPayload,
                            "HttpBackend: response has no 'logprobs' array");

        LogProbVector d;
        try {
            d.logp = reply["logprobs"].get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw HttpError(HttpError::Kind::MalformedPayload,
                            std::string("HttpBackend: non-numeric logprobs: ") + e.what());
        }
        if (d.size() != vocab_.size())
            throw HttpError(HttpError::Kind::LengthMismatch,
                            "HttpBackend: expected " + std::to_string(vocab_.size()) +
                                " logprobs, got " + std::to_string(d.size()));
        for (double v : d.logp)
            if (std::isnan(v))
                throw HttpError(HttpError::Kind::MalformedPayload,
                                "HttpBackend: NaN logprob in response");
        const double lse = logsumexp(d.logp);
        if (!std::isfinite(lse) || std::abs(lse) > 1e-3)
            throw HttpError(HttpError::Kind::NotNormalized,
                            "HttpBackend: response logsumexp = " + std::to_string(lse));
        for (double& v : d.logp) v -= lse;
        return d;
    }

    Vocabulary vocab_;
    HttpBackendOptions opts_;
    std::string base_url_;
    std::string path_;
    std::unique_ptr<httplib::Client> client_;
    mutable std::mutex mutex_;
    mutable std::unordered_map<TokenSeq, LogProbVector, detail::TokenSeqHash> cache_;
};

inline std::unique_ptr<LMBackend> http_backend(const std::string& endpoint, Vocabulary vocab,
                                               HttpBackendOptions opts = {}) {
    return std::make_unique<HttpBackend>(endpoint, std::move(vocab), opts);
}

}  // namespace contra
