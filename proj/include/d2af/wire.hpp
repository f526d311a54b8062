#pragma once

// JSON wire protocol "d2af_wire_v1" for the five backend contracts.
// Encoders, validating decoders, and a transport-free request handler that
// serves any Backends over the protocol.

#include "d2af/clients.hpp"
#include "d2af/convert.hpp"
#include "d2af/json_util.hpp"
#include "d2af/mask.hpp"
#include "d2af/random.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

namespace d2af::wire {

inline constexpr std::string_view kSchema = "d2af_wire_v1";
inline constexpr std::size_t kMaxInlineBytes = 8u << 20; // base64 text

enum class Kind { caption, ground, similarity, embed, segment };

inline constexpr std::array kAllKinds{Kind::caption, Kind::ground, Kind::similarity, Kind::embed, Kind::segment};

inline std::string_view to_string(Kind k) {
    switch (k) {
    case Kind::caption: return "caption";
    case Kind::ground: return "ground";
    case Kind::similarity: return "similarity";
    case Kind::embed: return "embed";
    case Kind::segment: return "segment";
    }
    return "?";
}

inline std::string route(Kind k) { return "/" + std::string(to_string(k)); }

/// Schema violation with the dotted path of the offending field.
class WireError : public MalformedResponse {
  public:
    WireError(std::string field, const std::string& msg)
        : MalformedResponse(field + ": " + msg), field_(std::move(field)) {}
    [[nodiscard]] const std::string& field() const { return field_; }

  private:
    std::string field_;
};

inline std::optional<Kind> kind_from_string(std::string_view s) {
    for (Kind k : kAllKinds)
        if (to_string(k) == s) return k;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// base64 (OpenSSL EVP block coder)

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), int(bytes.size()));
    out.resize(std::size_t(n));
    return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text, const std::string& field) {
    if (text.size() % 4 != 0) throw WireError(field, "base64 length is not a multiple of 4");
    std::vector<std::uint8_t> out(text.size() / 4 * 3);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), int(text.size()));
    if (n < 0) throw WireError(field, "invalid base64");
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
    out.resize(std::size_t(n) - pad);
    return out;
}

// ---------------------------------------------------------------------------
// Field access with paths

namespace detail {

inline const ojson& need(const ojson& j, const char* key, const std::string& path) {
    if (!j.is_object()) throw WireError(path, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw WireError(path.empty() ? key : path + "." + key, "missing");
    return *it;
}

inline std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

inline std::string get_string(const ojson& j, const char* key, const std::string& path, bool non_empty = false) {
    const auto& v = need(j, key, path);
    if (!v.is_string()) throw WireError(join(path, key), "expected a string");
    auto s = v.get<std::string>();
    if (non_empty && s.empty()) throw WireError(join(path, key), "must not be empty");
    return s;
}

inline double get_number(const ojson& j, const char* key, const std::string& path) {
    const auto& v = need(j, key, path);
    if (!v.is_number()) throw WireError(join(path, key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw WireError(join(path, key), "must be finite");
    return d;
}

inline long long get_int(const ojson& j, const char* key, const std::string& path, long long lo) {
    const auto& v = need(j, key, path);
    if (!v.is_number_integer()) throw WireError(join(path, key), "expected an integer");
    const auto n = v.get<long long>();
    if (n < lo) throw WireError(join(path, key), "must be >= " + std::to_string(lo));
    return n;
}

inline BoundingBox get_box(const ojson& v, const std::string& path) {
    if (!v.is_array() || v.size() != 4) throw WireError(path, "expected [x_min, y_min, x_max, y_max]");
    double c[4];
    for (int i = 0; i < 4; ++i) {
        if (!v[std::size_t(i)].is_number()) throw WireError(path, "box coordinates must be numbers");
        c[i] = v[std::size_t(i)].get<double>();
    }
    BoundingBox b{c[0], c[1], c[2], c[3]};
    if (!b.valid()) throw WireError(path, "box must have x_min < x_max and y_min < y_max");
    return b;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Pixel and image payloads

inline ojson encode_raster(const Raster& r) {
    ojson j;
    j["encoding"] = "raw8_base64";
    j["width"] = r.width;
    j["height"] = r.height;
    j["channels"] = r.channels;
    j["data"] = base64_encode(r.data);
    return j;
}

inline Raster decode_raster(const ojson& j, const std::string& path) {
    using namespace detail;
    if (get_string(j, "encoding", path) != "raw8_base64") throw WireError(join(path, "encoding"), "must be raw8_base64");
    const int w = int(get_int(j, "width", path, 1));
    const int h = int(get_int(j, "height", path, 1));
    const int c = int(get_int(j, "channels", path, 1));
    if (c != 1 && c != 3) throw WireError(join(path, "channels"), "must be 1 or 3");
    const auto data = get_string(j, "data", path);
    if (data.size() > kMaxInlineBytes) throw WireError(join(path, "data"), "inline payload exceeds 8 MiB");
    auto bytes = base64_decode(data, join(path, "data"));
    if (bytes.size() != std::size_t(w) * std::size_t(h) * std::size_t(c))
        throw WireError(join(path, "data"), "byte count does not match width * height * channels");
    Raster r(w, h, c);
    r.data = std::move(bytes);
    return r;
}

/// Inline pixels when available and small enough, otherwise a path
/// reference through `uri`.
inline ojson encode_image(const ImageRef& img) {
    ojson j;
    j["image_id"] = img.image_id;
    j["width"] = img.width;
    j["height"] = img.height;
    j["uri"] = img.uri;
    ojson pixels = nullptr;
    if (img.pixels) {
        const std::size_t b64 = 4 * ((img.pixels->data.size() + 2) / 3);
        if (b64 <= kMaxInlineBytes) pixels = encode_raster(*img.pixels);
        else if (img.uri.empty()) throw InvalidInput("image '" + img.image_id + "' is too large to inline and has no path");
    }
    j["pixels"] = std::move(pixels);
    return j;
}

inline ImageRef decode_image(const ojson& j, const std::string& path) {
    using namespace detail;
    ImageRef r;
    r.image_id = get_string(j, "image_id", path, true);
    r.width = int(get_int(j, "width", path, 1));
    r.height = int(get_int(j, "height", path, 1));
    r.uri = get_string(j, "uri", path);
    const auto& px = need(j, "pixels", path);
    if (!px.is_null()) {
        auto raster = decode_raster(px, join(path, "pixels"));
        if (raster.width != r.width || raster.height != r.height)
            throw WireError(join(path, "pixels"), "size does not match image width/height");
        r.pixels = std::make_shared<const Raster>(std::move(raster));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Payloads per kind

inline ojson encode(const CaptionRequest& r) {
    ojson j;
    j["image"] = encode_image(r.image);
    j["box"] = r.box ? box_to_json(*r.box) : ojson(nullptr);
    j["prompt_template"] = d2af::to_string(r.prompt_template);
    ojson slots = ojson::object();
    for (const auto& [k, v] : r.slots) slots[k] = v;
    j["slots"] = std::move(slots);
    j["prompt"] = r.prompt;
    j["max_candidates"] = r.max_candidates;
    return j;
}

inline CaptionRequest decode_caption_request(const ojson& j, const std::string& path = "payload") {
    using namespace detail;
    CaptionRequest r;
    r.image = decode_image(need(j, "image", path), join(path, "image"));
    const auto& box = need(j, "box", path);
    if (!box.is_null()) r.box = get_box(box, join(path, "box"));
    try {
        r.prompt_template = template_from_string(get_string(j, "prompt_template", path));
    } catch (const InvalidInput&) {
        throw WireError(join(path, "prompt_template"), "unknown template");
    }
    const auto& slots = need(j, "slots", path);
    if (!slots.is_object()) throw WireError(join(path, "slots"), "expected an object");
    for (const auto& [k, v] : slots.items()) {
        if (!v.is_string()) throw WireError(join(path, "slots") + "." + k, "expected a string");
        r.slots[k] = v.get<std::string>();
    }
    const auto want = placeholders(default_template_text(r.prompt_template));
    std::set<std::string> have;
    for (const auto& [k, _] : r.slots) have.insert(k);
    if (have != std::set<std::string>(want.begin(), want.end()))
        throw WireError(join(path, "slots"), "slots must match the template placeholders exactly");
    r.prompt = get_string(j, "prompt", path);
    r.max_candidates = int(get_int(j, "max_candidates", path, 1));
    return r;
}

inline ojson encode_candidates(const std::vector<std::string>& c) {
    ojson j;
    j["candidates"] = c;
    return j;
}

inline std::vector<std::string> decode_candidates(const ojson& j, const std::string& path = "payload") {
    const auto& v = detail::need(j, "candidates", path);
    if (!v.is_array()) throw WireError(path + ".candidates", "expected an array");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_string()) throw WireError(path + ".candidates[" + std::to_string(i) + "]", "expected a string");
        out.push_back(v[i].get<std::string>());
    }
    return out;
}

inline ojson encode(const GroundingRequest& r) {
    ojson j;
    j["image"] = encode_image(r.image);
    j["query_text"] = r.query_text;
    return j;
}

inline GroundingRequest decode_grounding_request(const ojson& j, const std::string& path = "payload") {
    using namespace detail;
    return {decode_image(need(j, "image", path), join(path, "image")), get_string(j, "query_text", path, true)};
}

/// Optional `role` on /ground picks the detector or the spatial LMM;
/// absent means detector.
inline std::string decode_grounding_role(const ojson& j, const std::string& path = "payload") {
    if (!j.contains("role")) return "detector";
    const auto role = detail::get_string(j, "role", path);
    if (role != "detector" && role != "spatial_lmm") throw WireError(detail::join(path, "role"), "must be detector or spatial_lmm");
    return role;
}

inline ojson encode(const GroundingResult& r) {
    ojson boxes = ojson::array();
    for (const auto& d : r.boxes) {
        ojson b;
        b["box"] = box_to_json(d.box);
        b["confidence"] = d.confidence;
        boxes.push_back(std::move(b));
    }
    ojson j;
    j["boxes"] = std::move(boxes);
    return j;
}

inline GroundingResult decode_grounding_result(const ojson& j, const std::string& path = "payload") {
    const auto& v = detail::need(j, "boxes", path);
    if (!v.is_array()) throw WireError(path + ".boxes", "expected an array");
    GroundingResult r;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string p = path + ".boxes[" + std::to_string(i) + "]";
        Detection d;
        d.box = detail::get_box(detail::need(v[i], "box", p), p + ".box");
        d.confidence = detail::get_number(v[i], "confidence", p);
        if (d.confidence < 0.0 || d.confidence > 1.0) throw WireError(p + ".confidence", "must be in [0, 1]");
        r.boxes.push_back(d);
    }
    for (std::size_t i = 1; i < r.boxes.size(); ++i)
        if (r.boxes[i].confidence > r.boxes[i - 1].confidence)
            throw WireError(path + ".boxes", "confidences must be sorted descending");
    return r;
}

inline ojson encode(const SimilarityRequest& r) {
    ojson j;
    j["image_id"] = r.image_id;
    j["variant_kind"] = d2af::to_string(r.kind);
    j["source_box"] = box_to_json(r.source_box);
    j["variant"] = encode_raster(r.variant);
    j["text"] = r.text;
    return j;
}

inline SimilarityRequest decode_similarity_request(const ojson& j, const std::string& path = "payload") {
    using namespace detail;
    SimilarityRequest r;
    r.image_id = get_string(j, "image_id", path, true);
    const auto kind = get_string(j, "variant_kind", path);
    if (kind == "crop") r.kind = VariantKind::crop;
    else if (kind == "background_blur") r.kind = VariantKind::background_blur;
    else throw WireError(join(path, "variant_kind"), "must be crop or background_blur");
    r.source_box = get_box(need(j, "source_box", path), join(path, "source_box"));
    r.variant = decode_raster(need(j, "variant", path), join(path, "variant"));
    r.text = get_string(j, "text", path, true);
    return r;
}

inline ojson encode_score(double s) {
    ojson j;
    j["score"] = s;
    return j;
}

inline double decode_score(const ojson& j, const std::string& path = "payload") {
    return detail::get_number(j, "score", path);
}

inline ojson encode_embed_request(const std::string& text) {
    ojson j;
    j["text"] = text;
    return j;
}

inline std::string decode_embed_request(const ojson& j, const std::string& path = "payload") {
    return detail::get_string(j, "text", path, true);
}

inline ojson encode(const EmbeddingResult& r) {
    ojson j;
    j["vector"] = r.vector;
    j["dimension"] = r.dimension;
    return j;
}

inline EmbeddingResult decode_embedding(const ojson& j, const std::string& path = "payload") {
    using namespace detail;
    EmbeddingResult r;
    r.dimension = int(get_int(j, "dimension", path, 1));
    const auto& v = need(j, "vector", path);
    if (!v.is_array()) throw WireError(join(path, "vector"), "expected an array");
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw WireError(join(path, "vector") + "[" + std::to_string(i) + "]", "expected a number");
        r.vector.push_back(v[i].get<double>());
    }
    if (int(r.vector.size()) != r.dimension) throw WireError(join(path, "vector"), "length does not match dimension");
    return r;
}

inline ojson encode(const SegmentRequest& r) {
    ojson j;
    j["image"] = encode_image(r.image);
    j["box"] = box_to_json(r.box);
    j["text"] = r.text;
    return j;
}

inline SegmentRequest decode_segment_request(const ojson& j, const std::string& path = "payload") {
    using namespace detail;
    SegmentRequest r;
    r.image = decode_image(need(j, "image", path), join(path, "image"));
    r.box = get_box(need(j, "box", path), join(path, "box"));
    r.text = get_string(j, "text", path);
    return r;
}

inline ojson encode(const RleMask& m) {
    ojson j;
    j["width"] = m.width;
    j["height"] = m.height;
    j["rle"] = rle_to_text(m);
    j["area"] = m.area();
    return j;
}

inline RleMask decode_mask(const ojson& j, const std::string& path = "payload") {
    using namespace detail;
    const int w = int(get_int(j, "width", path, 1));
    const int h = int(get_int(j, "height", path, 1));
    RleMask m;
    try {
        m = rle_from_text(get_string(j, "rle", path), w, h);
    } catch (const InvalidInput& e) {
        throw WireError(join(path, "rle"), e.what());
    }
    if (get_int(j, "area", path, 0) != m.area()) throw WireError(join(path, "area"), "does not match the runs");
    return m;
}

// ---------------------------------------------------------------------------
// Envelopes

/// Deterministic id: kind plus a hash of the payload text.
inline std::string make_request_id(Kind k, const ojson& payload) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_str(payload.dump())));
    return std::string(to_string(k)) + "-" + buf;
}

inline ojson request_envelope(Kind k, ojson payload) {
    ojson j;
    j["schema"] = kSchema;
    j["request_id"] = make_request_id(k, payload);
    j["kind"] = to_string(k);
    j["payload"] = std::move(payload);
    return j;
}

inline ojson response_envelope(Kind k, const std::string& request_id, const std::string& model_info, ojson payload) {
    ojson j;
    j["schema"] = kSchema;
    j["request_id"] = request_id;
    j["kind"] = to_string(k);
    j["model_info"] = model_info;
    j["payload"] = std::move(payload);
    return j;
}

inline ojson error_envelope(std::optional<Kind> k, const std::string& request_id, std::string_view code,
                            const std::string& field, const std::string& message) {
    ojson j;
    j["schema"] = kSchema;
    j["request_id"] = request_id;
    j["kind"] = k ? ojson(to_string(*k)) : ojson(nullptr);
    ojson e;
    e["code"] = code;
    e["field"] = field;
    e["message"] = message;
    j["error"] = std::move(e);
    return j;
}

/// Checks the shared envelope fields and returns the payload.
inline const ojson& check_envelope(const ojson& j, Kind k, bool response) {
    using namespace detail;
    if (!j.is_object()) throw WireError("", "envelope must be a JSON object");
    if (get_string(j, "schema", "") != kSchema) throw WireError("schema", "must be " + std::string(kSchema));
    get_string(j, "request_id", "", true);
    if (get_string(j, "kind", "") != to_string(k)) throw WireError("kind", "must be " + std::string(to_string(k)));
    if (response) get_string(j, "model_info", "");
    const auto& p = need(j, "payload", "");
    if (!p.is_object()) throw WireError("payload", "expected an object");
    return p;
}

/// Full request validation; throws WireError naming the field.
inline void validate_request(Kind k, const ojson& j) {
    const ojson& p = check_envelope(j, k, false);
    switch (k) {
    case Kind::caption: decode_caption_request(p); break;
    case Kind::ground:
        decode_grounding_request(p);
        decode_grounding_role(p);
        break;
    case Kind::similarity: decode_similarity_request(p); break;
    case Kind::embed: decode_embed_request(p); break;
    case Kind::segment: decode_segment_request(p); break;
    }
}

inline void validate_response(Kind k, const ojson& j) {
    const ojson& p = check_envelope(j, k, true);
    switch (k) {
    case Kind::caption: decode_candidates(p); break;
    case Kind::ground: decode_grounding_result(p); break;
    case Kind::similarity: decode_score(p); break;
    case Kind::embed: decode_embedding(p); break;
    case Kind::segment: decode_mask(p); break;
    }
}

struct HttpReply {
    int status = 200;
    std::string body;
};

/// Transport-free server side: route + body in, status + body out.
/// 400 schema violation, 404 unknown route, 503 backend not configured,
/// 500 backend failure.
inline HttpReply handle(std::string_view path, std::string_view body, const Backends& b, const std::string& model_info) {
    std::optional<Kind> kind;
    if (path.size() > 1 && path[0] == '/') kind = kind_from_string(path.substr(1));
    std::string request_id;
    auto fail = [&](int status, std::string_view code, const std::string& field, const std::string& msg) {
        return HttpReply{status, error_envelope(kind, request_id, code, field, msg).dump()};
    };
    if (!kind) return fail(404, "unknown_route", "", "no endpoint " + std::string(path));
    ojson j;
    try {
        j = ojson::parse(body);
    } catch (const std::exception& e) {
        return fail(400, "schema_violation", "body", std::string("malformed JSON: ") + e.what());
    }
    if (j.is_object() && j.contains("request_id") && j["request_id"].is_string())
        request_id = j["request_id"].get<std::string>();
    try {
        const ojson& p = check_envelope(j, *kind, false);
        ojson out;
        switch (*kind) {
        case Kind::caption: {
            auto req = decode_caption_request(p);
            if (!b.captioner) return fail(503, "not_loaded", "", "captioner not loaded");
            out = encode_candidates(b.captioner->generate(req));
            break;
        }
        case Kind::ground: {
            auto req = decode_grounding_request(p);
            const auto& g = decode_grounding_role(p) == "spatial_lmm" ? b.grounder_lmm : b.grounder;
            if (!g) return fail(503, "not_loaded", "", "grounder not loaded");
            out = encode(g->ground(req));
            break;
        }
        case Kind::similarity: {
            auto req = decode_similarity_request(p);
            if (!b.scorer) return fail(503, "not_loaded", "", "scorer not loaded");
            out = encode_score(b.scorer->similarity(req));
            break;
        }
        case Kind::embed: {
            auto text = decode_embed_request(p);
            if (!b.embedder) return fail(503, "not_loaded", "", "embedder not loaded");
            out = encode(b.embedder->embed(text));
            break;
        }
        case Kind::segment: {
            auto req = decode_segment_request(p);
            if (!b.segmenter) return fail(503, "not_loaded", "", "segmenter not loaded");
            out = encode(b.segmenter->segment(req));
            break;
        }
        }
        return {200, response_envelope(*kind, request_id, model_info, std::move(out)).dump()};
    } catch (const WireError& e) {
        return fail(400, "schema_violation", e.field(), e.what());
    } catch (const std::exception& e) {
        return fail(500, "inference_failure", "", e.what());
    }
}

} // namespace d2af::wire
