#pragma once

// Pipeline configuration: one flat file of dotted `key = value` lines.
// Every key has a default; unknown keys are errors.

#include "d2af/annotate.hpp"
#include "d2af/consistency.hpp"
#include "d2af/convert.hpp"
#include "d2af/distribution.hpp"
#include "d2af/json_util.hpp"
#include "d2af/mock.hpp"
#include "d2af/random.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace d2af {

inline constexpr std::array<std::string_view, 6> kBackendNames = {"captioner", "grounder", "grounder_lmm",
                                                                  "scorer",    "embedder", "segmenter"};

struct PipelineConfig {
    std::uint64_t seed = 7;
    int parallelism = 0; // 0: one worker per logical core
    bool mock = false;
    double max_failure_rate = 0.05;
    int batch_size = 16;
    int retries = 2;
    int backoff_ms = 0;
    int timeout_ms = 30000;
    std::map<std::string, std::string> endpoints;

    std::string images_dir;
    std::string image_index;
    std::string reference_captions;
    std::string gmm_model;
    std::string templates_dir;
    std::string categories;
    std::string lexicon_dir;

    AnnotationConfig annotate;
    ConsistencyConfig consistency;
    DistributionConfig distribution;
    ConvertConfig convert;
    mock::WorldConfig world;

    [[nodiscard]] int workers() const { return parallelism > 0 ? parallelism : default_parallelism(); }
    [[nodiscard]] RetryPolicy retry() const { return {retries, std::chrono::milliseconds(backoff_ms)}; }

    /// Pushes the single seed into every seeded component.
    void propagate_seed() {
        distribution.seed = seed;
        convert.seed = seed;
        world.seed = seed;
    }

    void validate() const {
        if (parallelism < 0) throw ConfigError("parallelism must be >= 0");
        if (!(max_failure_rate >= 0.0 && max_failure_rate <= 1.0)) throw ConfigError("max_failure_rate must be in [0, 1]");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (retries < 0 || backoff_ms < 0 || timeout_ms < 1) throw ConfigError("retries/backoff_ms/timeout_ms out of range");
        for (const auto& [name, url] : endpoints) {
            if (std::find(kBackendNames.begin(), kBackendNames.end(), name) == kBackendNames.end())
                throw ConfigError("unknown backend '" + name + "'");
            if (mock) throw ConfigError("endpoint." + name + " is set together with mock mode; choose one");
            if (url.empty()) throw ConfigError("endpoint." + name + " is empty");
        }
        annotate.validate();
        consistency.validate();
        distribution.validate();
        convert.validate();
        for (const auto* p : {&images_dir, &image_index, &reference_captions, &gmm_model, &templates_dir, &categories,
                              &lexicon_dir})
            if (!p->empty() && !std::filesystem::exists(*p)) throw ConfigError("path does not exist: " + *p);
    }

    /// Real runs need an endpoint for every backend the command touches.
    void require_backends(std::initializer_list<std::string_view> names) const {
        if (mock) return;
        for (auto n : names)
            if (!endpoints.count(std::string(n)))
                throw ConfigError("no endpoint." + std::string(n) + " configured (or pass --mock)");
    }
};

namespace detail {

inline std::string strip_quotes(std::string s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
        return s.substr(1, s.size() - 2);
    return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const char* b = v.data();
    const char* e = v.data() + v.size();
    if (!v.empty() && *b == '+') ++b;
    auto [p, ec] = std::from_chars(b, e, out);
    if (ec != std::errc{} || p != e) throw ConfigError(key + ": cannot parse '" + v + "' as a number");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

struct Field {
    std::string key;
    bool affects_output;
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, const std::string&)> set;
};

#define D2AF_NUM(KEY, MEMBER, OUT)                                                                              \
    Field {                                                                                                     \
        KEY, OUT, [](const PipelineConfig& c) { return num_text(c.MEMBER); },                                   \
            [](PipelineConfig& c, const std::string& v) { c.MEMBER = parse_number<decltype(c.MEMBER)>(KEY, v); } \
    }
#define D2AF_STR(KEY, MEMBER, OUT)                                                                              \
    Field {                                                                                                     \
        KEY, OUT, [](const PipelineConfig& c) { return c.MEMBER; },                                             \
            [](PipelineConfig& c, const std::string& v) { c.MEMBER = v; }                                       \
    }

template <typename T>
std::string num_text(T v) {
    if constexpr (std::is_floating_point_v<T>) return format_double(v);
    else return std::to_string(v);
}

inline const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f = {
            D2AF_NUM("seed", seed, true),
            D2AF_NUM("parallelism", parallelism, false),
            Field{"mock", true, [](const PipelineConfig& c) { return std::string(c.mock ? "true" : "false"); },
                  [](PipelineConfig& c, const std::string& v) { c.mock = parse_bool("mock", v); }},
            D2AF_NUM("max_failure_rate", max_failure_rate, false),
            D2AF_NUM("batch_size", batch_size, false),
            D2AF_NUM("retries", retries, false),
            D2AF_NUM("backoff_ms", backoff_ms, false),
            D2AF_NUM("timeout_ms", timeout_ms, false),
            D2AF_STR("paths.images_dir", images_dir, false),
            D2AF_STR("paths.image_index", image_index, true),
            D2AF_STR("paths.reference_captions", reference_captions, true),
            D2AF_STR("paths.gmm_model", gmm_model, true),
            D2AF_STR("paths.templates_dir", templates_dir, true),
            D2AF_STR("paths.categories", categories, true),
            D2AF_STR("paths.lexicon_dir", lexicon_dir, true),
            D2AF_NUM("annotate.captions_per_box_per_length", annotate.captions_per_box_per_length, true),
            D2AF_NUM("annotate.max_open_set_items", annotate.max_open_set_items, true),
            D2AF_NUM("annotate.open_set_rounds", annotate.open_set_rounds, true),
            D2AF_NUM("annotate.min_box_confidence", annotate.min_box_confidence, true),
            D2AF_NUM("consistency.tau_spatial", consistency.tau_spatial, true),
            D2AF_NUM("consistency.tau_semantic", consistency.tau_semantic, true),
            D2AF_NUM("consistency.alpha", consistency.alpha, true),
            D2AF_NUM("consistency.blur_sigma_fraction", consistency.blur_sigma_fraction, true),
            Field{"consistency.dump_variants_dir", false,
                  [](const PipelineConfig& c) {
                      return c.consistency.dump_variants_dir ? c.consistency.dump_variants_dir->string() : std::string();
                  },
                  [](PipelineConfig& c, const std::string& v) {
                      if (v.empty()) c.consistency.dump_variants_dir.reset();
                      else c.consistency.dump_variants_dir = v;
                  }},
            D2AF_NUM("distribution.K", distribution.components, true),
            Field{"distribution.reduce_dim", true,
                  [](const PipelineConfig& c) {
                      return c.distribution.reduce_dim ? std::to_string(*c.distribution.reduce_dim) : std::string("none");
                  },
                  [](PipelineConfig& c, const std::string& v) {
                      if (v == "none") c.distribution.reduce_dim.reset();
                      else c.distribution.reduce_dim = parse_number<int>("distribution.reduce_dim", v);
                  }},
            D2AF_NUM("distribution.variance_floor", distribution.variance_floor, true),
            D2AF_NUM("distribution.em_tol", distribution.em_tol, true),
            D2AF_NUM("distribution.em_max_iters", distribution.em_max_iters, true),
            D2AF_NUM("distribution.log_density_floor", distribution.log_density_floor, true),
            D2AF_NUM("distribution.ceiling_percentile", distribution.ceiling_percentile, true),
            D2AF_NUM("convert.max_merge", convert.max_merge, true),
            D2AF_NUM("convert.max_multi_per_image", convert.max_multi_per_image, true),
            D2AF_NUM("convert.merge_iou_limit", convert.merge_iou_limit, true),
            D2AF_NUM("convert.no_target_ratio", convert.no_target_ratio, true),
            D2AF_NUM("convert.mask_dilation", convert.mask_dilation, true),
            D2AF_STR("convert.join_policy", convert.join_policy, true),
            D2AF_NUM("mock.images", world.images, true),
            D2AF_NUM("mock.target_pairs", world.target_pairs, true),
            D2AF_NUM("mock.spatial_plants", world.spatial_plants, true),
            D2AF_NUM("mock.semantic_plants", world.semantic_plants, true),
            D2AF_NUM("mock.outlier_plants", world.outlier_plants, true),
            D2AF_NUM("mock.redundant_plants", world.redundant_plants, true),
            D2AF_NUM("mock.width", world.width, true),
            D2AF_NUM("mock.height", world.height, true),
            D2AF_NUM("mock.embed_dim", world.embed_dim, true),
            D2AF_NUM("mock.clusters", world.clusters, true),
            D2AF_NUM("mock.reference_captions", world.reference_captions, true),
            D2AF_NUM("mock.match_score", world.match_score, true),
            D2AF_NUM("mock.mismatch_score", world.mismatch_score, true),
            D2AF_NUM("mock.score_jitter", world.score_jitter, true),
            D2AF_NUM("mock.box_jitter", world.box_jitter, true),
            D2AF_STR("mock.id_prefix", world.id_prefix, true),
        };
        for (auto name : kBackendNames) {
            const std::string n(name);
            f.push_back(Field{"endpoint." + n, true,
                              [n](const PipelineConfig& c) {
                                  auto it = c.endpoints.find(n);
                                  return it == c.endpoints.end() ? std::string() : it->second;
                              },
                              [n](PipelineConfig& c, const std::string& v) {
                                  if (v.empty()) c.endpoints.erase(n);
                                  else c.endpoints[n] = v;
                              }});
        }
        return f;
    }();
    return table;
}

#undef D2AF_NUM
#undef D2AF_STR

} // namespace detail

inline void set_config_value(PipelineConfig& c, const std::string& key, const std::string& value) {
    for (const auto& f : detail::fields())
        if (f.key == key) {
            f.set(c, detail::strip_quotes(trim(value)));
            return;
        }
    throw ConfigError("unknown config key '" + key + "'");
}

/// `key = value` lines; '#' starts a comment line.
inline void apply_config_text(PipelineConfig& c, std::string_view text, const std::string& origin) {
    std::istringstream in{std::string(text)};
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
        try {
            set_config_value(c, trim(std::string_view(t).substr(0, eq)), t.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
        }
    }
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    PipelineConfig c;
    apply_config_text(c, ss.str(), path.string());
    return c;
}

/// Canonical dump: every key in table order.
inline std::string config_text(const PipelineConfig& c, bool output_keys_only = false) {
    std::string out;
    for (const auto& f : detail::fields()) {
        if (output_keys_only && !f.affects_output) continue;
        out += f.key + " = " + f.get(c) + "\n";
    }
    return out;
}

/// Hash over the keys that can change artifacts. Worker count, retry
/// settings and batch size do not.
inline std::string config_hash(const PipelineConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_str(config_text(c, true))));
    return buf;
}

} // namespace d2af
