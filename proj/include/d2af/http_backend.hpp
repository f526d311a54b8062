#pragma once

// Client-side backends that speak the wire protocol over HTTP.

#include "d2af/clients.hpp"
#include "d2af/wire.hpp"

#include <httplib.h>
// glibc's resolv.h (pulled in by httplib) defines _res, which Eigen uses
// as a parameter name
#ifdef _res
#undef _res
#endif

#include <memory>
#include <mutex>
#include <string>

namespace d2af::wire {

/// POSTs a body and returns the reply; throws BackendError when the
/// service cannot be reached.
class Transport {
  public:
    virtual ~Transport() = default;
    virtual HttpReply post(const std::string& path, const std::string& body) const = 0;
};

/// One httplib client per call keeps concurrent callers independent.
class HttplibTransport : public Transport {
  public:
    HttplibTransport(std::string base_url, int timeout_ms) : base_(std::move(base_url)), timeout_ms_(timeout_ms) {
        while (!base_.empty() && base_.back() == '/') base_.pop_back();
        if (base_.rfind("http://", 0) != 0) throw ConfigError("endpoint '" + base_ + "' must start with http://");
    }

    HttpReply post(const std::string& path, const std::string& body) const override {
        httplib::Client cli(base_);
        const auto secs = timeout_ms_ / 1000;
        const auto usecs = (timeout_ms_ % 1000) * 1000;
        cli.set_connection_timeout(secs, usecs);
        cli.set_read_timeout(secs, usecs);
        cli.set_write_timeout(secs, usecs);
        auto res = cli.Post(path, body, "application/json");
        if (!res) throw BackendError("POST " + base_ + path + " failed: " + httplib::to_string(res.error()));
        return {res->status, res->body};
    }

  private:
    std::string base_;
    int timeout_ms_;
};

/// Envelope round trip with response validation.
class Caller {
  public:
    explicit Caller(std::shared_ptr<const Transport> t) : t_(std::move(t)) {}

    ojson call(Kind k, ojson payload) const {
        const ojson req = request_envelope(k, std::move(payload));
        const HttpReply reply = t_->post(route(k), req.dump());
        ojson resp;
        try {
            resp = ojson::parse(reply.body);
        } catch (const std::exception&) {
            if (reply.status != 200) throw BackendError(route(k) + ": HTTP " + std::to_string(reply.status));
            throw MalformedResponse(route(k) + ": response is not JSON");
        }
        if (reply.status != 200) {
            std::string msg = route(k) + ": HTTP " + std::to_string(reply.status);
            if (resp.is_object() && resp.contains("error")) msg += ": " + resp["error"].value("message", std::string{});
            // a 400 means our request was rejected; retrying cannot help
            if (reply.status == 400) throw MalformedResponse(msg);
            throw BackendError(msg);
        }
        validate_response(k, resp);
        if (resp["request_id"] != req["request_id"]) throw MalformedResponse(route(k) + ": request_id not echoed");
        return resp["payload"];
    }

  private:
    std::shared_ptr<const Transport> t_;
};

class HttpCaptioner : public Captioner {
  public:
    explicit HttpCaptioner(Caller c) : c_(std::move(c)) {}
    std::vector<std::string> generate(const CaptionRequest& req) const override {
        return decode_candidates(c_.call(Kind::caption, encode(req)));
    }

  private:
    Caller c_;
};

class HttpGrounder : public Grounder {
  public:
    HttpGrounder(Caller c, std::string role) : c_(std::move(c)), role_(std::move(role)) {}
    GroundingResult ground(const GroundingRequest& req) const override {
        ojson p = encode(req);
        p["role"] = role_;
        return decode_grounding_result(c_.call(Kind::ground, std::move(p)));
    }

  private:
    Caller c_;
    std::string role_;
};

class HttpScorer : public Scorer {
  public:
    explicit HttpScorer(Caller c) : c_(std::move(c)) {}
    double similarity(const SimilarityRequest& req) const override {
        return decode_score(c_.call(Kind::similarity, encode(req)));
    }

  private:
    Caller c_;
};

/// The dimension is learned from the first response and then enforced.
class HttpEmbedder : public Embedder {
  public:
    explicit HttpEmbedder(Caller c) : c_(std::move(c)) {}

    EmbeddingResult embed(const std::string& text) const override {
        auto r = decode_embedding(c_.call(Kind::embed, encode_embed_request(text)));
        std::lock_guard lock(mu_);
        if (dim_ == 0) dim_ = r.dimension;
        else if (r.dimension != dim_) throw MalformedResponse("/embed: dimension changed between calls");
        return r;
    }

    [[nodiscard]] int dimension() const override {
        {
            std::lock_guard lock(mu_);
            if (dim_ != 0) return dim_;
        }
        return embed("dimension probe").dimension;
    }

  private:
    Caller c_;
    mutable std::mutex mu_;
    mutable int dim_ = 0;
};

class HttpSegmenter : public Segmenter {
  public:
    explicit HttpSegmenter(Caller c) : c_(std::move(c)) {}
    RleMask segment(const SegmentRequest& req) const override {
        return decode_mask(c_.call(Kind::segment, encode(req)));
    }

  private:
    Caller c_;
};

/// name -> base URL for any subset of the six backend slots.
inline Backends make_http_backends(const std::map<std::string, std::string>& endpoints, int timeout_ms) {
    Backends b;
    auto caller = [&](const std::string& name) -> std::optional<Caller> {
        auto it = endpoints.find(name);
        if (it == endpoints.end()) return std::nullopt;
        return Caller(std::make_shared<HttplibTransport>(it->second, timeout_ms));
    };
    if (auto c = caller("captioner")) b.captioner = std::make_shared<HttpCaptioner>(*c);
    if (auto c = caller("grounder")) b.grounder = std::make_shared<HttpGrounder>(*c, "detector");
    if (auto c = caller("grounder_lmm")) b.grounder_lmm = std::make_shared<HttpGrounder>(*c, "spatial_lmm");
    if (auto c = caller("scorer")) b.scorer = std::make_shared<HttpScorer>(*c);
    if (auto c = caller("embedder")) b.embedder = std::make_shared<HttpEmbedder>(*c);
    if (auto c = caller("segmenter")) b.segmenter = std::make_shared<HttpSegmenter>(*c);
    return b;
}

} // namespace d2af::wire
