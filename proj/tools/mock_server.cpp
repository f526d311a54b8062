// Serves the seeded mock backends over the wire protocol, so the HTTP path
// can be exercised without real models.

#include "d2af/config.hpp"
#include "d2af/mock.hpp"
#include "d2af/wire.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <iostream>

int main(int argc, char** argv) {
    using namespace d2af;
    CLI::App app{"mock backend server"};
    std::string host = "127.0.0.1", config_path;
    int port = 8080;
    std::uint64_t seed = 7;
    std::vector<std::string> sets;
    app.add_option("--host", host);
    app.add_option("--port", port);
    app.add_option("--seed", seed);
    app.add_option("--config", config_path, "reads the mock.* keys");
    app.add_option("--set", sets, "KEY=VALUE override");
    CLI11_PARSE(app, argc, argv);

    try {
        PipelineConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE");
            set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
        }
        cfg.seed = seed;
        cfg.propagate_seed();
        const auto world = std::make_shared<const mock::World>(cfg.world);
        const Backends backends = mock::make_mock_backends(world);
        const std::string info = "d2af-mock seed=" + std::to_string(seed);

        httplib::Server srv;
        for (wire::Kind k : wire::kAllKinds)
            srv.Post(wire::route(k), [&, k](const httplib::Request& req, httplib::Response& res) {
                const auto r = wire::handle(wire::route(k), req.body, backends, info);
                res.status = r.status;
                res.set_content(r.body, "application/json");
            });
        std::cerr << "serving mock backends on http://" << host << ":" << port << "\n";
        if (!srv.listen(host, port)) {
            std::cerr << "cannot listen on " << host << ":" << port << "\n";
            return 1;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
