#pragma once

// Density-band filtering of caption embeddings against a mixture fitted on
// reference captions.

#include "d2af/clients.hpp"
#include "d2af/core.hpp"
#include "d2af/gmm.hpp"
#include "d2af/json_util.hpp"
#include "d2af/metrics.hpp"
#include "d2af/parallel.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace d2af {

struct DistributionConfig {
    int components = 16;
    std::optional<int> reduce_dim = 64;
    double variance_floor = 1e-6;
    double em_tol = 1e-6;
    int em_max_iters = 200;
    std::uint64_t seed = 0;
    double log_density_floor = 0.0;
    double ceiling_percentile = 80.0;

    void validate() const {
        if (components < 1) throw ConfigError("distribution.K must be >= 1");
        if (reduce_dim && *reduce_dim < 1) throw ConfigError("distribution.reduce_dim must be >= 1");
        if (!(variance_floor > 0.0)) throw ConfigError("distribution.variance_floor must be > 0");
        if (!(em_tol >= 0.0)) throw ConfigError("distribution.em_tol must be >= 0");
        if (em_max_iters < 1) throw ConfigError("distribution.em_max_iters must be >= 1");
        // 100 is accepted as "no ceiling"
        if (!(ceiling_percentile > 0.0 && ceiling_percentile <= 100.0))
            throw ConfigError("distribution.ceiling_percentile must be in (0, 100]");
        if (std::isnan(log_density_floor)) throw ConfigError("distribution.log_density_floor is NaN");
    }

    [[nodiscard]] EmOptions em_options() const { return {components, variance_floor, em_tol, em_max_iters, seed}; }
};

/// Reducer plus mixture: everything needed to score a raw embedding.
struct DensityModel {
    LinearReducer reducer;
    MixtureModel mixture;
    DistributionConfig config;
    std::vector<double> log_likelihood;

    [[nodiscard]] double score(std::span<const double> embedding) const {
        const auto reduced = reducer.apply(embedding);
        return log_density(mixture, reduced);
    }
};

/// Row i is the embedding of captions[i].
inline Matrix embed_corpus(const std::vector<std::string>& captions, const Embedder& embedder) {
    const int d = embedder.dimension();
    if (d < 1) throw ConfigError("embedder reports non-positive dimension");
    Matrix out(Eigen::Index(captions.size()), d);
    for (std::size_t i = 0; i < captions.size(); ++i) {
        auto e = checked_embedding(embedder.embed(captions[i]), d);
        for (int j = 0; j < d; ++j) out(Eigen::Index(i), j) = e.vector[std::size_t(j)];
    }
    return out;
}

/// Fits the reducer (when configured) and the mixture on the reference rows.
inline DensityModel fit_density_model(const Matrix& reference, const DistributionConfig& cfg) {
    cfg.validate();
    if (reference.rows() < cfg.components)
        throw InvalidInput("need at least K reference captions: n = " + std::to_string(reference.rows()) +
                           ", K = " + std::to_string(cfg.components));
    DensityModel m;
    m.config = cfg;
    m.reducer = cfg.reduce_dim ? fit_reducer(reference, *cfg.reduce_dim) : identity_reducer(int(reference.cols()));
    const Matrix reduced = m.reducer.apply(reference);
    auto fit = fit_gmm(reduced, cfg.em_options());
    m.mixture = std::move(fit.model);
    m.log_likelihood = std::move(fit.log_likelihood);
    return m;
}

// ---------------------------------------------------------------------------
// Band filter

/// Index into the ascending-sorted scores that acts as the ceiling:
/// ceil(p * n / 100), so exactly ceil(p * n / 100) distinct values sit below
/// it. Returns n (no ceiling) when that index runs off the end.
inline std::size_t ceiling_rank(std::size_t n, double percentile) {
    const double raw = percentile * double(n) / 100.0;
    const auto idx = std::size_t(std::max(0.0, std::ceil(raw - 1e-9)));
    return std::min(idx, n);
}

inline double ceiling_threshold(std::span<const double> scores, double percentile) {
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t idx = ceiling_rank(sorted.size(), percentile);
    return idx < sorted.size() ? sorted[idx] : std::numeric_limits<double>::infinity();
}

/// floor < l < ceiling keeps; l <= floor is an outlier (checked first);
/// l >= ceiling is redundant.
inline Status band_decision(double l, double floor, double ceiling) {
    if (l <= floor) return Status::dropped_outlier;
    if (l >= ceiling) return Status::dropped_redundant;
    return Status::kept;
}

struct BandDecision {
    std::string pair_id;
    double log_density = 0.0;
    Status status = Status::kept;
};

struct Candidate {
    std::string pair_id;
    std::vector<double> embedding;
};

inline std::vector<BandDecision> band_filter(const DensityModel& model, const std::vector<Candidate>& candidates,
                                             const DistributionConfig& cfg) {
    cfg.validate();
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const auto& c : candidates) scores.push_back(model.score(c.embedding));
    const double ceiling = ceiling_threshold(scores, cfg.ceiling_percentile);
    std::vector<BandDecision> out;
    out.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i)
        out.push_back({candidates[i].pair_id, scores[i], band_decision(scores[i], cfg.log_density_floor, ceiling)});
    return out;
}

struct DistributionReport {
    StageMetrics metrics;
    std::size_t candidates = 0;
    double ceiling = 0.0;
};

/// Scores every kept pair that has no log-density yet and applies the band
/// in place. Already scored pairs are skipped, so a second run changes
/// nothing. Embedding failures leave the pair untouched and are counted.
inline DistributionReport run_distribution_stage(std::vector<RegionTextPair>& pairs, const DensityModel& model,
                                                 const DistributionConfig& cfg, const Embedder& embedder,
                                                 int parallelism = 1, const RetryPolicy& retry = {}) {
    cfg.validate();
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        if (pairs[i].status == Status::kept && !(pairs[i].scores && pairs[i].scores->log_density)) idx.push_back(i);
    if (!idx.empty() && embedder.dimension() != model.reducer.input_dim)
        throw ConfigError("embedder dimension " + std::to_string(embedder.dimension()) +
                          " does not match the model input dimension " + std::to_string(model.reducer.input_dim));

    std::vector<std::optional<double>> score(idx.size());
    parallel_for(idx.size(), parallelism, [&](std::size_t k) {
        try {
            const auto e = with_retries(retry, [&] { return embedder.embed(pairs[idx[k]].caption.text); });
            score[k] = model.score(checked_embedding(e, model.reducer.input_dim).vector);
        } catch (const BackendError&) {
        }
    });

    DistributionReport r;
    std::vector<double> scored;
    for (const auto& s : score)
        if (s) scored.push_back(*s);
    r.candidates = scored.size();
    r.ceiling = ceiling_threshold(scored, cfg.ceiling_percentile);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (!score[k]) {
            r.metrics.add("embedder_failures");
            r.metrics.add("retry_pending");
            continue;
        }
        RegionTextPair& p = pairs[idx[k]];
        p.score_record().log_density = *score[k];
        const Status st = band_decision(*score[k], cfg.log_density_floor, r.ceiling);
        p.set_status(st);
        r.metrics.add(std::string(to_string(st)));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Model file: JSON, schema "d2af_gmm_v1".

inline constexpr std::string_view kModelSchema = "d2af_gmm_v1";

inline ojson config_to_json(const DistributionConfig& c) {
    ojson j;
    j["K"] = c.components;
    j["reduce_dim"] = c.reduce_dim ? ojson(*c.reduce_dim) : ojson(nullptr);
    j["variance_floor"] = number_to_json(c.variance_floor);
    j["em_tol"] = number_to_json(c.em_tol);
    j["em_max_iters"] = c.em_max_iters;
    j["seed"] = c.seed;
    j["log_density_floor"] = number_to_json(c.log_density_floor);
    j["ceiling_percentile"] = number_to_json(c.ceiling_percentile);
    return j;
}

inline DistributionConfig config_from_json(const ojson& j) {
    DistributionConfig c;
    c.components = j.at("K").get<int>();
    c.reduce_dim = j.at("reduce_dim").is_null() ? std::nullopt : std::optional<int>(j.at("reduce_dim").get<int>());
    c.variance_floor = number_from_json(j.at("variance_floor"));
    c.em_tol = number_from_json(j.at("em_tol"));
    c.em_max_iters = j.at("em_max_iters").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.log_density_floor = number_from_json(j.at("log_density_floor"));
    c.ceiling_percentile = number_from_json(j.at("ceiling_percentile"));
    return c;
}

inline std::string serialize_model(const DensityModel& m) {
    ojson j;
    j["schema"] = kModelSchema;
    j["K"] = m.mixture.components;
    j["dim"] = m.mixture.dim;
    j["input_dim"] = m.reducer.input_dim;
    j["seed"] = m.config.seed;
    j["config"] = config_to_json(m.config);
    if (m.reducer.identity()) {
        j["reducer"] = nullptr;
    } else {
        ojson r;
        r["mean"] = m.reducer.mean;
        ojson basis = ojson::array();
        for (int i = 0; i < m.reducer.input_dim; ++i) {
            std::vector<double> row(std::size_t(m.reducer.output_dim));
            for (int c = 0; c < m.reducer.output_dim; ++c) row[std::size_t(c)] = m.reducer.basis(i, c);
            basis.push_back(row);
        }
        r["basis"] = std::move(basis);
        j["reducer"] = std::move(r);
    }
    j["variance_floor"] = m.mixture.variance_floor;
    j["weights"] = m.mixture.weights;
    j["means"] = m.mixture.means;
    j["variances"] = m.mixture.variances;
    j["log_likelihood"] = m.log_likelihood;
    return j.dump(1) + "\n";
}

inline DensityModel parse_model(std::string_view text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("model file is not valid JSON: ") + e.what());
    }
    try {
        if (j.at("schema").get<std::string>() != kModelSchema)
            throw DataError("unsupported model schema '" + j.at("schema").get<std::string>() + "'");
        DensityModel m;
        m.config = config_from_json(j.at("config"));
        m.mixture.components = j.at("K").get<int>();
        m.mixture.dim = j.at("dim").get<int>();
        m.mixture.variance_floor = j.at("variance_floor").get<double>();
        m.mixture.weights = j.at("weights").get<std::vector<double>>();
        m.mixture.means = j.at("means").get<std::vector<std::vector<double>>>();
        m.mixture.variances = j.at("variances").get<std::vector<std::vector<double>>>();
        m.log_likelihood = j.at("log_likelihood").get<std::vector<double>>();
        const int input_dim = j.at("input_dim").get<int>();
        if (j.at("reducer").is_null()) {
            m.reducer = identity_reducer(input_dim);
        } else {
            const auto& r = j.at("reducer");
            m.reducer.input_dim = input_dim;
            m.reducer.output_dim = m.mixture.dim;
            m.reducer.mean = r.at("mean").get<std::vector<double>>();
            const auto rows = r.at("basis").get<std::vector<std::vector<double>>>();
            if (int(rows.size()) != input_dim || int(m.reducer.mean.size()) != input_dim)
                throw DataError("reducer shape does not match input_dim");
            m.reducer.basis.resize(input_dim, m.mixture.dim);
            for (int i = 0; i < input_dim; ++i) {
                if (int(rows[std::size_t(i)].size()) != m.mixture.dim) throw DataError("reducer basis row has wrong width");
                for (int c = 0; c < m.mixture.dim; ++c) m.reducer.basis(i, c) = rows[std::size_t(i)][std::size_t(c)];
            }
        }
        validate(m.mixture);
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed model file: ") + e.what());
    } catch (const InvalidInput& e) {
        throw DataError(std::string("invalid model parameters: ") + e.what());
    }
}

inline void save_model(const DensityModel& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write model file " + path.string());
    out << serialize_model(m);
    if (!out) throw DataError("write failed for " + path.string());
}

inline DensityModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read model file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_model(ss.str());
}

} // namespace d2af
