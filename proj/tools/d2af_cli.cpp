// d2af: generate, filter, analyze and convert region-text pseudo labels.

#include "d2af/pipeline.hpp"

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cstdlib>
#include <iostream>

namespace {

using namespace d2af;

/// 8-bit RGB from any format OpenCV can decode.
std::shared_ptr<const Raster> load_rgb(const ImageRecord& rec) {
    const cv::Mat bgr = cv::imread(rec.uri, cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("cannot decode " + rec.uri);
    auto out = std::make_shared<Raster>(bgr.cols, bgr.rows, 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x)
            for (int c = 0; c < 3; ++c) out->at(x, y, c) = row[x][2 - c];
    }
    return out;
}

std::pair<std::string, std::string> split_assignment(const std::string& s, const char* what) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(std::string(what) + " expects NAME=VALUE, got '" + s + "'");
    return {s.substr(0, eq), s.substr(eq + 1)};
}

void report(const RunSummary& s) {
    for (const auto& [k, v] : s.metrics.counters) std::cerr << "  " << k << " = " << v << "\n";
    if (!s.message.empty()) std::cerr << s.command << ": " << s.message << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pseudo-label generation, filtering, analysis and conversion for visual grounding data"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool mock = false;
    std::vector<std::string> endpoints, sets;
    std::optional<int> parallelism;
    bool resume = false;
    app.add_option("--config", config_path, "config file (falls back to $D2AF_CONFIG)");
    app.add_option("--seed", seed, "seed for the mock world, EM and sampling");
    app.add_flag("--mock", mock, "use the seeded mock backends");
    app.add_option("--endpoint", endpoints, "backend endpoint NAME=URL (repeatable)");
    app.add_option("--set", sets, "override a config key KEY=VALUE (repeatable)");
    app.add_option("--parallelism", parallelism, "worker threads (0: all cores)");
    app.add_flag("--resume", resume, "continue from the output's checkpoint");

    std::string out, in, captions_path;
    std::vector<std::string> inputs;
    bool no_features = false;

    auto* annotate = app.add_subcommand("annotate", "generate raw region-text pairs");
    annotate->add_option("-o,--out", out, "output manifest")->required();

    auto* filter = app.add_subcommand("filter", "consistency then distribution filtering");
    filter->add_option("manifest", in, "input manifest")->required();
    filter->add_option("-o,--out", out, "output manifest")->required();

    auto* fit = app.add_subcommand("fit-gmm", "fit the reference density model");
    fit->add_option("--captions", captions_path, "reference captions, one per line");
    fit->add_option("-o,--out", out, "model file")->required();

    auto* analyze = app.add_subcommand("analyze", "subset counts and feature dumps");
    analyze->add_option("manifests", inputs, "manifests to compare")->required();
    analyze->add_option("-o,--out", out, "output directory")->required();
    analyze->add_flag("--no-features", no_features, "skip the embedding feature dump");

    auto* convert = app.add_subcommand("convert", "REC -> RES masks and GRES samples");
    convert->add_option("manifest", in, "filtered manifest")->required();
    convert->add_option("-o,--out", out, "output directory")->required();

    auto* stats = app.add_subcommand("stats", "status, strategy and length counts");
    stats->add_option("manifest", in, "manifest")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (stats->parsed()) {
            std::cout << manifest_stats(read_manifest(in));
            return 0;
        }

        PipelineConfig cfg;
        if (config_path.empty())
            if (const char* env = std::getenv("D2AF_CONFIG")) config_path = env;
        if (!config_path.empty()) cfg = load_config(config_path);
        for (const auto& s : sets) {
            auto [k, v] = split_assignment(s, "--set");
            set_config_value(cfg, k, v);
        }
        if (seed) cfg.seed = *seed;
        if (mock) cfg.mock = true;
        if (parallelism) cfg.parallelism = *parallelism;
        for (const auto& e : endpoints) {
            auto [name, url] = split_assignment(e, "--endpoint");
            set_config_value(cfg, "endpoint." + name, url);
        }

        const Runtime rt = make_runtime(cfg, load_rgb);
        RunSummary sum;
        if (annotate->parsed()) sum = cmd_annotate(rt, out, {resume, std::nullopt});
        else if (filter->parsed()) sum = cmd_filter(rt, in, out, {resume, false});
        else if (fit->parsed())
            sum = cmd_fit_gmm(rt, captions_path.empty() ? std::nullopt : std::optional<fs::path>(captions_path), out);
        else if (analyze->parsed())
            sum = cmd_analyze(rt, std::vector<fs::path>(inputs.begin(), inputs.end()), out, !no_features);
        else if (convert->parsed()) sum = cmd_convert(rt, in, out);
        std::cerr << sum.command << " done\n";
        report(sum);
        return sum.exit_code;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidInput& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
}
