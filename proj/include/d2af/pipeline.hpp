#pragma once

// Subcommand bodies shared by the CLI and the tests: annotate, filter,
// fit-gmm, analyze, convert, stats. Checkpoints make annotate and filter
// resumable.

#include "d2af/analysis.hpp"
#include "d2af/annotate.hpp"
#include "d2af/config.hpp"
#include "d2af/consistency.hpp"
#include "d2af/convert.hpp"
#include "d2af/distribution.hpp"
#include "d2af/http_backend.hpp"
#include "d2af/manifest.hpp"
#include "d2af/mock.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace d2af {

namespace fs = std::filesystem;

/// Reads `image_id,filename,width,height` (header line required).
inline std::vector<ImageRecord> read_image_index(const fs::path& path, const fs::path& images_dir) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read image index " + path.string());
    std::string line;
    if (!std::getline(in, line) || trim(line) != "image_id,filename,width,height")
        throw DataError(path.string() + ":1: expected header image_id,filename,width,height");
    std::vector<ImageRecord> out;
    std::set<std::string> seen;
    for (int n = 2; std::getline(in, line); ++n) {
        if (trim(line).empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(trim(cell));
        const std::string where = path.string() + ":" + std::to_string(n) + ": ";
        if (f.size() != 4) throw DataError(where + "expected 4 fields");
        ImageRecord r;
        r.image_id = f[0];
        r.uri = (images_dir / f[1]).string();
        try {
            std::size_t a = 0, b = 0;
            r.width = std::stoi(f[2], &a);
            r.height = std::stoi(f[3], &b);
            if (a != f[2].size() || b != f[3].size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw DataError(where + "width and height must be integers");
        }
        if (r.image_id.empty() || r.width <= 0 || r.height <= 0) throw DataError(where + "invalid image record");
        if (!seen.insert(r.image_id).second) throw DataError(where + "duplicate image_id '" + r.image_id + "'");
        out.push_back(std::move(r));
    }
    return out;
}

/// Everything a command needs besides its file arguments.
struct Runtime {
    PipelineConfig cfg;
    Backends backends;
    std::shared_ptr<const mock::World> world;
    std::vector<ImageRecord> images;
    PixelSource pixels;
    TemplateSet templates;
    Lexicon lexicon = Lexicon::builtin();

    [[nodiscard]] std::map<std::string, ImageRecord> image_map() const {
        std::map<std::string, ImageRecord> m;
        for (const auto& i : images) m.emplace(i.image_id, i);
        return m;
    }
};

/// In mock mode the world supplies images, pixels and backends. Otherwise
/// images come from the index, pixels from `loader`, backends over HTTP.
inline Runtime make_runtime(PipelineConfig cfg, PixelSource loader = {}) {
    cfg.propagate_seed();
    cfg.validate();
    Runtime rt;
    if (!cfg.templates_dir.empty()) rt.templates = TemplateSet::load_dir(cfg.templates_dir);
    if (!cfg.categories.empty()) cfg.annotate.categories = load_lines(cfg.categories);
    cfg.annotate.validate();
    if (!cfg.lexicon_dir.empty()) rt.lexicon = Lexicon::load_dir(cfg.lexicon_dir);
    if (cfg.mock) {
        auto world = std::make_shared<const mock::World>(cfg.world);
        rt.world = world;
        rt.backends = mock::make_mock_backends(world);
        rt.images = world->images();
        rt.pixels = [world](const ImageRecord& r) -> std::shared_ptr<const Raster> {
            const auto* s = world->find(r.image_id);
            if (!s) throw DataError("image '" + r.image_id + "' is not part of the mock world");
            return std::make_shared<const Raster>(world->render(*s));
        };
    } else {
        rt.backends = wire::make_http_backends(cfg.endpoints, cfg.timeout_ms);
        if (!cfg.image_index.empty()) rt.images = read_image_index(cfg.image_index, cfg.images_dir);
        rt.pixels = std::move(loader);
    }
    rt.cfg = std::move(cfg);
    return rt;
}

struct RunSummary {
    std::string command;
    StageMetrics metrics;
    int exit_code = 0;
    bool interrupted = false;
    std::string message;
};

inline ojson metrics_json(const RunSummary& s) {
    ojson j;
    j["command"] = s.command;
    j["exit_code"] = s.exit_code;
    j["interrupted"] = s.interrupted;
    ojson c = ojson::object();
    for (const auto& [k, v] : s.metrics.counters) c[k] = v;
    j["counters"] = std::move(c);
    return j;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::string_view kCheckpointSchema = "d2af_checkpoint_v1";

struct StageCheckpoint {
    std::string stage;
    std::string config_hash;
    std::vector<std::string> processed; // image ids (annotate) or pair ids
    std::size_t manifest_lines = 0;
    bool complete = false;
    StageMetrics counters;
};

inline fs::path checkpoint_path(const fs::path& out) { return fs::path(out.string() + ".ckpt"); }

inline void save_checkpoint(const fs::path& out, const StageCheckpoint& c) {
    ojson j;
    j["schema"] = kCheckpointSchema;
    j["stage"] = c.stage;
    j["config_hash"] = c.config_hash;
    j["processed"] = c.processed;
    j["manifest_lines"] = c.manifest_lines;
    j["complete"] = c.complete;
    ojson k = ojson::object();
    for (const auto& [n, v] : c.counters.counters) k[n] = v;
    j["counters"] = std::move(k);
    write_text_atomic(checkpoint_path(out), j.dump(1) + "\n");
}

inline std::optional<StageCheckpoint> load_checkpoint(const fs::path& out) {
    const auto p = checkpoint_path(out);
    if (!fs::exists(p)) return std::nullopt;
    try {
        const auto j = ojson::parse(read_text(p));
        if (j.at("schema") != kCheckpointSchema) throw DataError("unknown checkpoint schema");
        StageCheckpoint c;
        c.stage = j.at("stage").get<std::string>();
        c.config_hash = j.at("config_hash").get<std::string>();
        c.processed = j.at("processed").get<std::vector<std::string>>();
        c.manifest_lines = j.at("manifest_lines").get<std::size_t>();
        c.complete = j.at("complete").get<bool>();
        for (const auto& [k, v] : j.at("counters").items()) c.counters.counters[k] = v.get<std::int64_t>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint " + p.string() + ": " + e.what());
    }
}

inline void require_same_config(const StageCheckpoint& c, const std::string& hash) {
    if (c.config_hash != hash)
        throw ConfigError("refusing to resume: checkpoint was written with config " + c.config_hash +
                          ", current config is " + hash);
}

// ---------------------------------------------------------------------------
// annotate

struct AnnotateOptions {
    bool resume = false;
    std::optional<std::size_t> stop_after_images; // simulates a kill, for tests
};

inline RunSummary cmd_annotate(const Runtime& rt, const fs::path& out, const AnnotateOptions& opt = {}) {
    rt.cfg.require_backends({"captioner", "grounder"});
    const std::string hash = config_hash(rt.cfg);
    RunSummary sum{"annotate", {}, 0, false, {}};

    StageCheckpoint ck{"annotate", hash, {}, 0, false, {}};
    std::vector<RegionTextPair> pairs;
    if (opt.resume) {
        if (auto prev = load_checkpoint(out)) {
            if (prev->stage != "annotate") throw ConfigError("checkpoint for " + out.string() + " is not from annotate");
            require_same_config(*prev, hash);
            ck = *prev;
            pairs = read_manifest(out, ck.manifest_lines);
        }
    }
    // Rewrite the manifest to exactly the checkpointed prefix; anything a
    // killed run appended after its last checkpoint is discarded.
    write_manifest(out, pairs);
    save_checkpoint(out, ck);

    const std::set<std::string> done(ck.processed.begin(), ck.processed.end());
    std::vector<const ImageRecord*> todo;
    for (const auto& img : rt.images)
        if (!done.count(img.image_id)) todo.push_back(&img);

    const Annotator annotator(rt.backends, rt.templates, rt.cfg.annotate, rt.cfg.retry());
    std::size_t handled = done.size();
    for (std::size_t start = 0; start < todo.size(); start += std::size_t(rt.cfg.batch_size)) {
        const std::size_t n = std::min(todo.size() - start, std::size_t(rt.cfg.batch_size));
        std::vector<std::vector<RegionTextPair>> got(n);
        std::vector<StageMetrics> per(n);
        parallel_for(n, rt.cfg.workers(), [&](std::size_t k) {
            const ImageRecord& img = *todo[start + k];
            std::shared_ptr<const Raster> px;
            try {
                px = rt.pixels ? rt.pixels(img) : nullptr;
                if (!px) throw DataError("no pixels");
                if (px->width != img.width || px->height != img.height)
                    throw DataError("decoded size differs from the index");
            } catch (const DataError& e) {
                std::cerr << "warning: skipping image '" << img.image_id << "': " << e.what() << "\n";
                per[k].add("unreadable_images");
                return;
            }
            try {
                got[k] = annotator.annotate(make_ref(img, px), per[k]);
                per[k].add("images_annotated");
            } catch (const BackendError& e) {
                std::cerr << "warning: " << e.what() << "\n";
                per[k].add("backend_failed_images");
                got[k].clear();
            }
        });
        std::string text;
        for (std::size_t k = 0; k < n; ++k) {
            for (const auto& p : got[k]) {
                text += pair_to_line(p);
                ++ck.manifest_lines;
            }
            ck.processed.push_back(todo[start + k]->image_id);
            ck.counters.merge(per[k]);
        }
        {
            std::ofstream app(out, std::ios::binary | std::ios::app);
            app << text;
            app.flush();
            if (!app) throw DataError("write failed for " + out.string());
        }
        save_checkpoint(out, ck);
        handled += n;
        if (opt.stop_after_images && handled >= *opt.stop_after_images && start + n < todo.size()) {
            sum.interrupted = true;
            sum.metrics = ck.counters;
            sum.message = "stopped after " + std::to_string(handled) + " images";
            return sum;
        }
    }
    ck.complete = true;
    save_checkpoint(out, ck);
    sum.metrics = ck.counters;
    sum.metrics.counters["pairs"] = std::int64_t(ck.manifest_lines);

    const auto unreadable = sum.metrics.get("unreadable_images");
    const auto backend = sum.metrics.get("backend_failed_images");
    const auto failures = unreadable + backend;
    const double rate = rt.images.empty() ? 0.0 : double(failures) / double(rt.images.size());
    if (failures > 0 && !(rate < rt.cfg.max_failure_rate)) {
        sum.exit_code = backend > 0 ? 3 : 2;
        sum.message = "item failure rate " + format_double(rate) + " is not below the bound " +
                      format_double(rt.cfg.max_failure_rate);
    }
    write_text_atomic(fs::path(out.string() + ".metrics.json"), metrics_json(sum).dump(1) + "\n");
    return sum;
}

// ---------------------------------------------------------------------------
// GMM model

inline std::vector<std::string> reference_captions(const Runtime& rt, const std::optional<fs::path>& path) {
    if (path) return load_lines(*path);
    if (!rt.cfg.reference_captions.empty()) return load_lines(rt.cfg.reference_captions);
    if (rt.world) return rt.world->reference_captions();
    throw ConfigError("no reference captions: set paths.reference_captions");
}

inline DensityModel fit_reference_model(const Runtime& rt, const std::vector<std::string>& captions) {
    if (!rt.backends.embedder) throw ConfigError("fitting the density model needs an embedder backend");
    const Embedder& emb = *rt.backends.embedder;
    const int d = emb.dimension();
    Matrix x(Eigen::Index(captions.size()), d);
    parallel_for(captions.size(), rt.cfg.workers(), [&](std::size_t i) {
        const auto e = checked_embedding(with_retries(rt.cfg.retry(), [&] { return emb.embed(captions[i]); }), d);
        for (int c = 0; c < d; ++c) x(Eigen::Index(i), c) = e.vector[std::size_t(c)];
    });
    try {
        return fit_density_model(x, rt.cfg.distribution);
    } catch (const InvalidInput& e) {
        throw DataError(e.what());
    }
}

inline RunSummary cmd_fit_gmm(const Runtime& rt, const std::optional<fs::path>& captions_path, const fs::path& out) {
    rt.cfg.require_backends({"embedder"});
    const auto caps = reference_captions(rt, captions_path);
    const DensityModel m = fit_reference_model(rt, caps);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_text_atomic(out, serialize_model(m));
    RunSummary s{"fit-gmm", {}, 0, false, {}};
    s.metrics.add("reference_captions", std::int64_t(caps.size()));
    s.metrics.add("em_iterations", std::int64_t(m.log_likelihood.size()));
    return s;
}

inline DensityModel obtain_model(const Runtime& rt) {
    if (!rt.cfg.gmm_model.empty()) return load_model(rt.cfg.gmm_model);
    return fit_reference_model(rt, reference_captions(rt, std::nullopt));
}

// ---------------------------------------------------------------------------
// filter

struct FilterOptions {
    bool resume = false;
    bool stop_after_consistency = false; // simulates a kill at the stage boundary
};

inline RunSummary cmd_filter(const Runtime& rt, const fs::path& in, const fs::path& out, const FilterOptions& opt = {}) {
    rt.cfg.require_backends({"grounder", "grounder_lmm", "scorer", "embedder"});
    const std::string hash = config_hash(rt.cfg);
    RunSummary sum{"filter", {}, 0, false, {}};
    std::vector<RegionTextPair> pairs;
    bool consistency_done = false;
    if (opt.resume)
        if (auto prev = load_checkpoint(out); prev && prev->stage == "filter:consistency") {
            require_same_config(*prev, hash);
            pairs = read_manifest(out);
            sum.metrics = prev->counters;
            consistency_done = true;
        }
    if (!consistency_done) {
        pairs = read_manifest(in);
        std::set<std::string> ids;
        for (const auto& p : pairs)
            if (!ids.insert(p.pair_id).second) throw DataError(in.string() + ": duplicate pair_id '" + p.pair_id + "'");
        auto rep = run_consistency_stage(pairs, rt.image_map(), rt.pixels, rt.cfg.consistency, rt.backends,
                                         rt.cfg.workers(), rt.cfg.retry());
        sum.metrics.merge(rep.metrics);
        write_manifest(out, pairs);
        save_checkpoint(out, {"filter:consistency", hash, {}, pairs.size(), false, sum.metrics});
        if (opt.stop_after_consistency) {
            sum.interrupted = true;
            return sum;
        }
    }
    std::size_t candidates = 0;
    for (const auto& p : pairs) candidates += p.status == Status::kept && !(p.scores && p.scores->log_density);
    if (candidates > 0) {
        const DensityModel model = obtain_model(rt);
        auto rep = run_distribution_stage(pairs, model, rt.cfg.distribution, *rt.backends.embedder, rt.cfg.workers(),
                                          rt.cfg.retry());
        for (const auto& [k, v] : rep.metrics.counters) sum.metrics.add("distribution_" + k, v);
    }
    write_manifest(out, pairs);
    for (const auto& p : pairs) sum.metrics.add("status_" + std::string(to_string(p.status)));
    save_checkpoint(out, {"filter", hash, {}, pairs.size(), true, sum.metrics});
    write_text_atomic(fs::path(out.string() + ".metrics.json"), metrics_json(sum).dump(1) + "\n");
    return sum;
}

// ---------------------------------------------------------------------------
// analyze

inline RunSummary cmd_analyze(const Runtime& rt, const std::vector<fs::path>& manifests, const fs::path& out_dir,
                              bool features = true) {
    const LexiconTagger tagger(rt.lexicon);
    std::vector<std::pair<std::string, std::vector<RegionTextPair>>> loaded;
    std::map<std::string, int> used;
    for (const auto& m : manifests) {
        std::string name = m.stem().string();
        if (used[name]++) name += "_" + std::to_string(used[name]);
        loaded.emplace_back(name, read_manifest(m));
    }
    const auto report = quantity_report(loaded, tagger);
    fs::create_directories(out_dir);
    write_text_atomic(out_dir / "report.json", report_to_json(report).dump(2) + "\n");
    write_text_atomic(out_dir / "report.txt", report_to_table(report));
    RunSummary s{"analyze", report.warnings, 0, false, {}};
    if (features) {
        rt.cfg.require_backends({"embedder"});
        if (!rt.backends.embedder) throw ConfigError("feature export needs an embedder backend");
        for (const auto& [name, pairs] : loaded) {
            std::vector<RegionTextPair> live;
            for (const auto& p : pairs)
                if (!is_dropped(p.status)) live.push_back(p);
            std::ostringstream buf;
            export_features(live, *rt.backends.embedder, tagger, buf);
            write_text_atomic(out_dir / ("features_" + name + ".csv"), buf.str());
            s.metrics.add("feature_rows", std::int64_t(live.size()));
        }
    }
    s.metrics.add("manifests", std::int64_t(loaded.size()));
    return s;
}

// ---------------------------------------------------------------------------
// convert

inline RunSummary cmd_convert(const Runtime& rt, const fs::path& manifest, const fs::path& out_dir) {
    rt.cfg.require_backends({"segmenter"});
    if (!rt.backends.segmenter) throw ConfigError("conversion needs a segmenter backend");
    const auto pairs = read_manifest(manifest);
    auto res = rec_to_res(pairs, rt.image_map(), *rt.backends.segmenter, rt.cfg.convert, rt.cfg.workers(), rt.cfg.retry());
    const LexiconTagger tagger(rt.lexicon);
    auto gres = res_to_gres(pairs, res.masks, rt.cfg.convert, tagger);
    fs::create_directories(out_dir);
    write_jsonl(out_dir / "res.jsonl", res.masks, mask_to_json);
    write_jsonl(out_dir / "gres.jsonl", gres.samples, sample_to_json);
    RunSummary s{"convert", res.metrics, 0, false, {}};
    s.metrics.merge(gres.metrics);
    write_text_atomic(out_dir / "metrics.json", metrics_json(s).dump(1) + "\n");
    return s;
}

// ---------------------------------------------------------------------------
// stats

inline std::string manifest_stats(const std::vector<RegionTextPair>& pairs) {
    std::map<std::string, std::int64_t> status, strategy, length;
    for (const auto& p : pairs) {
        ++status[std::string(to_string(p.status))];
        ++strategy[std::string(to_string(p.strategy))];
        ++length[std::string(to_string(p.caption.length_class))];
    }
    std::ostringstream out;
    out << "pairs " << pairs.size() << "\n";
    auto block = [&](const char* title, const std::map<std::string, std::int64_t>& m) {
        out << title << "\n";
        for (const auto& [k, v] : m) out << "  " << std::left << std::setw(18) << k << std::right << std::setw(8) << v << "\n";
    };
    block("status", status);
    block("strategy", strategy);
    block("length", length);
    return out.str();
}

} // namespace d2af
