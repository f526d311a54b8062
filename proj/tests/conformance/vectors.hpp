#pragma once

// The 20 conformance vectors: requests built from a small seeded mock
// world, responses produced by the mock backends through wire::handle.
// Shared by the generator and the conformance test so the shipped file
// cannot drift from the code.

#include "d2af/consistency.hpp"
#include "d2af/mock.hpp"
#include "d2af/wire.hpp"

namespace conformance {

inline d2af::mock::WorldConfig world_config() {
    d2af::mock::WorldConfig c;
    c.seed = 7;
    c.images = 4;
    c.target_pairs = 20;
    c.spatial_plants = 2;
    c.semantic_plants = 2;
    c.outlier_plants = 1;
    c.redundant_plants = 1;
    c.width = 96;
    c.height = 72;
    c.reference_captions = 20;
    return c;
}

inline constexpr const char* kModelInfo = "d2af-mock seed=7";

inline d2af::ojson build_vectors() {
    using namespace d2af;
    using wire::Kind;
    const auto world = std::make_shared<const mock::World>(world_config());
    const Backends backends = mock::make_mock_backends(world);
    const auto& scenes = world->scenes();
    auto pixels = [&](const mock::Scene& s) { return std::make_shared<const Raster>(world->render(s)); };
    auto inline_ref = [&](const mock::Scene& s) { return make_ref(s.image, pixels(s)); };
    auto path_ref = [&](const mock::Scene& s) {
        ImageRecord r = s.image;
        r.uri = "/shared/images/" + r.image_id + ".png";
        return make_ref(r);
    };
    auto obj_box = [&](const mock::Scene& s, int i) { return s.objects[std::size_t(i)].box; };

    ojson vectors = ojson::array();
    auto add = [&](const std::string& name, Kind k, ojson payload) {
        const ojson req = wire::request_envelope(k, std::move(payload));
        const auto reply = wire::handle(wire::route(k), req.dump(), backends, kModelInfo);
        if (reply.status != 200) throw InvalidInput("conformance vector " + name + " did not succeed: " + reply.body);
        ojson v;
        v["name"] = name;
        v["route"] = wire::route(k);
        v["request"] = req;
        v["response"] = ojson::parse(reply.body);
        vectors.push_back(std::move(v));
    };

    const auto& s0 = scenes[0];
    const auto& s2 = scenes[2];
    const auto& s3 = scenes[3];

    // caption: one of each prompt family
    {
        CaptionRequest r{inline_ref(s0), std::nullopt, PromptTemplate::category_detect, {{"cls_list", "zebra, apple, toaster, person"}}, {}, 1};
        r.prompt = render(default_template_text(r.prompt_template), r.slots);
        add("caption_category_detect", Kind::caption, wire::encode(r));
    }
    for (auto [name, t] : {std::pair{"caption_closed_short", PromptTemplate::closed_short},
                           std::pair{"caption_closed_long", PromptTemplate::closed_long}}) {
        const auto b = obj_box(s2, 0);
        CaptionRequest r{inline_ref(s2), b, t, {{"box", box_slot(b)}, {"cls", "apple"}}, {}, 3};
        r.prompt = render(default_template_text(t), r.slots);
        add(name, Kind::caption, wire::encode(r));
    }
    {
        CaptionRequest r{path_ref(s3), std::nullopt, PromptTemplate::open_set, {}, {}, 5};
        r.prompt = render(default_template_text(r.prompt_template), r.slots);
        add("caption_open_set_by_path", Kind::caption, wire::encode(r));
    }

    // ground: detector and spatial LMM, category and caption queries
    auto ground = [&](const std::string& name, const mock::Scene& s, const std::string& q, const char* role, bool by_path) {
        ojson p = wire::encode(GroundingRequest{by_path ? path_ref(s) : inline_ref(s), q});
        if (role) p["role"] = role;
        add(name, Kind::ground, std::move(p));
    };
    ground("ground_detector_category", s2, "apple", nullptr, true);
    ground("ground_detector_caption", s0, s0.captions[1].text, "detector", true);
    ground("ground_lmm_caption", s0, s0.captions[1].text, "spatial_lmm", false);
    ground("ground_lmm_no_match", s3, "a purple giraffe on a skateboard", "spatial_lmm", true);

    // similarity: crop and blurred-background variants, matched and mismatched text
    auto similarity = [&](const std::string& name, const mock::Scene& s, int obj, VariantKind kind, const std::string& text) {
        const Raster img = world->render(s);
        const auto b = obj_box(s, obj);
        const ConsistencyConfig cc;
        const Raster v = kind == VariantKind::crop
                             ? crop(img, b)
                             : quantize(composite_background_blur(img, gaussian_blur(img, cc.blur_sigma(img.width, img.height)), b).payload);
        add(name, Kind::similarity, wire::encode(SimilarityRequest{s.image.image_id, kind, b, v, text}));
    };
    similarity("similarity_crop_match", s2, 0, VariantKind::crop, s2.captions[1].text);
    similarity("similarity_blur_match", s2, 0, VariantKind::background_blur, s2.captions[1].text);
    similarity("similarity_crop_mismatch", s0, 0, VariantKind::crop, s0.captions[0].text);
    similarity("similarity_blur_mismatch", s0, 0, VariantKind::background_blur, s0.captions[0].text);

    // embed: the repeated text pins down determinism
    add("embed_short", Kind::embed, wire::encode_embed_request("the leftmost blanket"));
    add("embed_long", Kind::embed, wire::encode_embed_request(s2.captions[2].text));
    add("embed_repeat_a", Kind::embed, wire::encode_embed_request("blue apple with a curved edge"));
    add("embed_repeat_b", Kind::embed, wire::encode_embed_request("blue apple with a curved edge"));

    // segment
    auto segment = [&](const std::string& name, const mock::Scene& s, int obj, const std::string& text, bool by_path) {
        add(name, Kind::segment, wire::encode(SegmentRequest{by_path ? path_ref(s) : inline_ref(s), obj_box(s, obj), text}));
    };
    segment("segment_inline", s0, 0, s0.captions[1].text, false);
    segment("segment_by_path", s2, 1, s2.captions[4].text, true);
    segment("segment_corner_box", s3, 1, s3.captions[3].text, true);
    segment("segment_empty_text", s2, 0, "", true);

    ojson out;
    out["schema"] = wire::kSchema;
    out["model_info"] = kModelInfo;
    out["vectors"] = std::move(vectors);
    return out;
}

} // namespace conformance
