#pragma once

// In-process contracts for the model backends. Implementations must be safe
// to call concurrently (all entry points are const).

#include "d2af/core.hpp"
#include "d2af/image.hpp"
#include "d2af/mask.hpp"
#include "d2af/prompts.hpp"

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace d2af {

/// Where a backend can find the source image.
struct ImageRef {
    std::string image_id;
    std::string uri;
    int width = 0;
    int height = 0;
    std::shared_ptr<const Raster> pixels; // optional inline payload
};

inline ImageRef make_ref(const ImageRecord& img, std::shared_ptr<const Raster> pixels = nullptr) {
    return {img.image_id, img.uri, img.width, img.height, std::move(pixels)};
}

struct CaptionRequest {
    ImageRef image;
    std::optional<BoundingBox> box;
    PromptTemplate prompt_template = PromptTemplate::open_set;
    Slots slots;
    std::string prompt; // rendered text sent to real backends
    int max_candidates = 1;
};

struct GroundingRequest {
    ImageRef image;
    std::string query_text;
};

struct Detection {
    BoundingBox box;
    double confidence = 0.0;
    friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundingResult {
    std::vector<Detection> boxes; // confidence descending
};

struct SimilarityRequest {
    std::string image_id;
    VariantKind kind = VariantKind::crop;
    BoundingBox source_box;
    Raster variant; // 8-bit payload as seen by the scorer
    std::string text;
};

struct EmbeddingResult {
    std::vector<double> vector;
    int dimension = 0;
};

struct SegmentRequest {
    ImageRef image;
    BoundingBox box;
    std::string text;
};

class Captioner {
  public:
    virtual ~Captioner() = default;
    virtual std::vector<std::string> generate(const CaptionRequest& req) const = 0;
};

class Grounder {
  public:
    virtual ~Grounder() = default;
    virtual GroundingResult ground(const GroundingRequest& req) const = 0;
};

class Scorer {
  public:
    virtual ~Scorer() = default;
    virtual double similarity(const SimilarityRequest& req) const = 0;
};

class Embedder {
  public:
    virtual ~Embedder() = default;
    virtual EmbeddingResult embed(const std::string& text) const = 0;
    [[nodiscard]] virtual int dimension() const = 0;
};

class Segmenter {
  public:
    virtual ~Segmenter() = default;
    virtual RleMask segment(const SegmentRequest& req) const = 0;
};

/// The five contracts, with two independent grounders (detector and spatial
/// LMM).
struct Backends {
    std::shared_ptr<const Captioner> captioner;
    std::shared_ptr<const Grounder> grounder;
    std::shared_ptr<const Grounder> grounder_lmm;
    std::shared_ptr<const Scorer> scorer;
    std::shared_ptr<const Embedder> embedder;
    std::shared_ptr<const Segmenter> segmenter;
};

struct RetryPolicy {
    int retries = 2;
    std::chrono::milliseconds backoff{0};
};

/// Retries transient BackendErrors. MalformedResponse is not retried.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
    for (int attempt = 0;; ++attempt) {
        try {
            return fn();
        } catch (const MalformedResponse&) {
            throw;
        } catch (const BackendError&) {
            if (attempt >= policy.retries) throw;
            if (policy.backoff.count() > 0) std::this_thread::sleep_for(policy.backoff);
        }
    }
}

// ---------------------------------------------------------------------------
// Boundary normalization, applied to every backend's output.

inline std::vector<std::string> normalize_candidates(std::vector<std::string> raw) {
    std::vector<std::string> out;
    out.reserve(raw.size());
    for (auto& s : raw) {
        auto t = trim(s);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

/// Clamps boxes into the image, drops boxes that collapse, clamps confidence
/// into [0,1] and sorts by confidence (stable for ties).
inline GroundingResult normalize_grounding(GroundingResult r, const ImageRef& img) {
    ImageRecord rec{img.image_id, img.width, img.height, img.uri};
    GroundingResult out;
    for (const auto& d : r.boxes) {
        if (!d.box.valid() || !std::isfinite(d.confidence)) continue;
        BoundingBox b = d.box;
        if (img.width > 0 && img.height > 0) {
            try {
                b = clamp_to_image(d.box, rec);
            } catch (const InvalidInput&) {
                continue;
            }
        }
        out.boxes.push_back({b, std::clamp(d.confidence, 0.0, 1.0)});
    }
    std::stable_sort(out.boxes.begin(), out.boxes.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    return out;
}

inline EmbeddingResult checked_embedding(EmbeddingResult r, int expected_dim) {
    if (r.dimension != int(r.vector.size()) || (expected_dim > 0 && r.dimension != expected_dim))
        throw MalformedResponse("embedding dimension mismatch");
    for (double v : r.vector)
        if (!std::isfinite(v)) throw MalformedResponse("embedding contains non-finite values");
    return r;
}

} // namespace d2af
