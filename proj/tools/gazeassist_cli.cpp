// gazeassist command-line front end.

#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <regex>

#include <CLI11.hpp>
#include <json.hpp>

#include "gazeassist/error.hpp"
#include "gazeassist/eval.hpp"
#include "gazeassist/server.hpp"

using namespace gaze;
using nlohmann::json;

namespace {

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return in;
}

synth::Dataset dataset_from(const std::string& dir, std::uint64_t seed) {
    if (!dir.empty()) return synth::load_dataset(dir);
    synth::SyntheticProfile p;
    p.seed = seed;
    return synth::generate_dataset(p);
}

std::shared_ptr<const net::ModelParams> model_from(const std::string& path, int epochs) {
    if (!path.empty()) return std::make_shared<const net::ModelParams>(net::load_checkpoint(path));
    std::cerr << "no --model given; training a session model (" << epochs << " epochs)\n";
    return std::make_shared<const net::ModelParams>(eval::train_session_model({}, epochs));
}

std::function<std::shared_ptr<inference::LlmClient>()> client_factory(const std::string& kind,
                                                                      const std::string& rules) {
    if (kind == "mock") {
        auto table = rules.empty() ? inference::RuleTable::defaults() : inference::RuleTable::load(rules);
        return [table] { return std::make_shared<inference::MockLlmClient>(table); };
    }
    if (kind == "http") {
        auto cfg = inference::HttpLlmConfig::from_env();
        return [cfg] { return std::make_shared<inference::HttpLlmClient>(cfg); };
    }
    throw ConfigError("--llm must be mock or http");
}

service::Server* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gaze-driven assistive manipulation toolkit"};
    app.require_subcommand(1);

    // ingest
    std::string gaze_path, det_path;
    auto* ingest = app.add_subcommand("ingest", "Validate gaze and detection streams and print statistics");
    ingest->add_option("--gaze", gaze_path, "gaze JSONL")->required();
    ingest->add_option("--frames,--detections", det_path, "frame/detection JSONL")->required();

    // features
    std::string windows_out;
    int sw = 30, stride = 10;
    auto* feats = app.add_subcommand("features", "Cut per-object feature windows from recorded streams");
    feats->add_option("--gaze", gaze_path)->required();
    feats->add_option("--frames,--detections", det_path)->required();
    feats->add_option("--out", windows_out, "windows JSONL (stdout if omitted)");
    feats->add_option("--sw", sw)->check(CLI::PositiveNumber);
    feats->add_option("--stride", stride)->check(CLI::PositiveNumber);

    // gen-data
    std::string data_out;
    std::uint64_t seed = 42;
    int subjects = 8, reps = 5;
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic gaze dataset");
    gen->add_option("--out", data_out)->required();
    gen->add_option("--seed", seed);
    gen->add_option("--subjects", subjects)->check(CLI::PositiveNumber);
    gen->add_option("--repetitions", reps)->check(CLI::PositiveNumber);

    // train
    std::string data_dir, model_out;
    int epochs = 30;
    std::uint64_t train_seed = 0;
    auto* train = app.add_subcommand("train", "Train the intent network on all windows of a dataset");
    train->add_option("--data", data_dir, "dataset directory (generated if omitted)");
    train->add_option("--out", model_out)->required();
    train->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
    train->add_option("--seed", train_seed);

    // gradcheck
    int probes = 200, seeds = 5;
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    grad->add_option("--probes", probes)->check(CLI::PositiveNumber);
    grad->add_option("--seeds", seeds)->check(CLI::PositiveNumber);

    // eval
    std::string mode = "fivefold", baseline = "fixation", report_out;
    int eval_epochs = eval::EvalConfig{}.train.epochs;
    auto* ev = app.add_subcommand("eval", "Cross-validate the intent network against the fixation baseline");
    ev->add_option("--data", data_dir, "dataset directory (generated if omitted)");
    ev->add_option("--mode", mode)->check(CLI::IsMember({"fivefold", "loso"}));
    ev->add_option("--baseline", baseline)->check(CLI::IsMember({"fixation"}));
    ev->add_option("--epochs", eval_epochs)->check(CLI::PositiveNumber);
    ev->add_option("--seed", seed, "dataset seed when generating");
    ev->add_option("--json", report_out, "write the report as JSON");

    // system-eval
    std::string model_path, llm = "mock", rules_path, log_dir;
    double fail_p = 0.0;
    int session_epochs = 6;
    auto* sys = app.add_subcommand("system-eval", "Run the scripted sessions and print stage-gated results");
    sys->add_option("--model", model_path);
    sys->add_option("--model-epochs", session_epochs, "epochs when training a model on the fly");
    sys->add_option("--llm", llm)->check(CLI::IsMember({"mock", "http"}));
    sys->add_option("--rules", rules_path, "mock rule table JSON");
    sys->add_option("--log-dir", log_dir);
    sys->add_option("--fail-first", fail_p, "failure probability injected on attempt 1")
        ->check(CLI::Range(0.0, 1.0));
    sys->add_option("--json", report_out);

    // serve
    std::string bind = "127.0.0.1:8173", fixture_path, fixtures_dir;
    log_dir = "logs";
    auto* serve = app.add_subcommand("serve", "Run the HTTP session service");
    serve->add_option("--bind", bind);
    serve->add_option("--model", model_path);
    serve->add_option("--model-epochs", session_epochs);
    serve->add_option("--fixture", fixture_path, "default world fixture");
    serve->add_option("--fixtures-dir", fixtures_dir, "directory of named world fixtures");
    serve->add_option("--llm", llm)->check(CLI::IsMember({"mock", "http"}));
    serve->add_option("--rules", rules_path);
    serve->add_option("--log-dir", log_dir);

    // replay
    std::string log_path;
    auto* rep = app.add_subcommand("replay", "Replay a session log offline");
    rep->add_option("log", log_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            auto gin = open_in(gaze_path);
            auto din = open_in(det_path);
            const auto gaze = perception::read_gaze_stream(gin);
            const auto frames = perception::ingest_detection_stream(din);
            const auto s = perception::stream_stats(gaze, frames);
            std::cout << json{{"gaze_samples", s.gaze_samples},
                              {"on_screen_samples", s.on_screen_samples},
                              {"gaze_rate_hz", s.gaze_rate_hz},
                              {"frames", s.frames},
                              {"frame_rate_hz", s.frame_rate_hz},
                              {"detections", s.detections},
                              {"tracks", s.tracks},
                              {"frames_with_gaze", s.frames_with_gaze}}
                             .dump(2)
                      << "\n";
        } else if (*feats) {
            auto gin = open_in(gaze_path);
            auto din = open_in(det_path);
            const auto gaze = perception::read_gaze_stream(gin);
            const auto frames = perception::ingest_detection_stream(din);
            std::vector<std::int64_t> times;
            for (const auto& f : frames) times.push_back(f.t_us);
            const auto aligned = perception::align_gaze_to_frames(gaze, times);
            features::FeatureConfig cfg;
            cfg.sw = sw;
            cfg.stride = stride;
            std::ofstream file;
            if (!windows_out.empty()) file.open(windows_out);
            std::ostream& out = windows_out.empty() ? std::cout : file;
            for (const auto& [id, track] : perception::track_objects(frames)) {
                for (const auto& w : features::cut_windows(track, aligned, cfg)) {
                    json rows = json::array();
                    for (int t = 0; t < w.sw; ++t) rows.push_back({w.row(t)[0], w.row(t)[1], w.row(t)[2]});
                    out << json{{"object_id", w.object_id},
                                {"start", w.start_frame},
                                {"values", rows},
                                {"label", w.label ? json(*w.label) : json(nullptr)}}
                               .dump()
                        << "\n";
                }
            }
        } else if (*gen) {
            synth::SyntheticProfile p;
            p.seed = seed;
            p.n_subjects = subjects;
            p.repetitions = reps;
            const auto d = synth::generate_dataset(p);
            synth::write_dataset(d, data_out);
            std::cout << "wrote " << d.trials.size() << " trials to " << data_out << "\n";
        } else if (*train) {
            const auto d = dataset_from(data_dir, seed);
            const auto prepared = eval::prepare_trials(d);
            std::vector<features::FeatureWindow> windows;
            for (const auto& t : prepared) windows.insert(windows.end(), t.windows.begin(), t.windows.end());
            net::TrainConfig tc;
            tc.epochs = epochs;
            tc.seed = train_seed;
            net::ModelConfig mc;
            mc.seed = train_seed;
            const auto r = net::train(windows, tc, mc);
            for (const auto& m : r.history) {
                std::cout << "epoch " << m.epoch << "  loss " << m.loss << "  acc " << m.accuracy << "\n";
            }
            net::save_checkpoint(r.params, model_out);
            std::cout << "saved " << model_out << " (" << windows.size() << " windows)\n";
        } else if (*grad) {
            double worst = 0.0;
            for (int s = 0; s < seeds; ++s) {
                net::ModelConfig mc;
                mc.seed = static_cast<std::uint64_t>(s);
                const auto params = net::ModelParams::initialize(mc);
                const auto r = net::gradient_check(params, probes, static_cast<std::uint64_t>(s));
                std::cout << "seed " << s << ": max rel error " << r.max_rel_error << " (" << r.worst_tensor << ")\n";
                worst = std::max(worst, r.max_rel_error);
            }
            std::cout << (worst < 1e-4 ? "OK" : "FAIL") << " worst " << worst << "\n";
            return worst < 1e-4 ? 0 : 1;
        } else if (*ev) {
            const auto d = dataset_from(data_dir, seed);
            const auto prepared = eval::prepare_trials(d);
            eval::EvalConfig cfg;
            cfg.train.epochs = eval_epochs;
            const auto report = eval::cross_validate(prepared, mode, cfg, [](const eval::FoldResult& f) {
                std::cerr << f.name << ": network " << f.network_accuracy << " baseline " << f.baseline_accuracy
                          << " (" << f.seconds << " s)\n";
            });
            std::cout << report.table();
            if (!report_out.empty()) std::ofstream(report_out) << report.to_json().dump(2) << "\n";
        } else if (*sys) {
            eval::PipelineConfig pc;
            pc.model = model_from(model_path, session_epochs);
            pc.make_client = client_factory(llm, rules_path);
            if (!log_dir.empty()) pc.log_dir = log_dir;
            if (fail_p > 0.0) {
                pc.session.execution.failures.probability = fail_p;
                pc.session.execution.failures.attempts = {1};
            }
            const auto sessions = eval::scripted_sessions();
            const auto report = eval::run_system_eval(sessions, pc);
            std::cout << report.table();
            if (!report_out.empty()) std::ofstream(report_out) << report.to_json().dump(2) << "\n";
        } else if (*serve) {
            static const std::regex addr(R"(^(.+):(\d+)$)");
            std::smatch m;
            if (!std::regex_match(bind, m, addr)) throw ConfigError("--bind expects host:port");
            service::ServerConfig sc;
            sc.host = m[1];
            sc.port = std::stoi(m[2]);
            if (!fixture_path.empty()) sc.default_world = world::load_world(fixture_path);
            sc.fixtures_dir = fixtures_dir;
            sc.log_dir = log_dir;
            sc.model = model_from(model_path, session_epochs);
            sc.make_client = client_factory(llm, rules_path);
            service::Server server(sc);
            const int port = server.bind();
            std::cout << "listening on " << sc.host << ":" << port << std::endl;
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            server.run();
            g_server = nullptr;
        } else if (*rep) {
            const auto r = service::replay_file(log_path);
            json traj = json::array();
            for (auto p : r.trajectory) traj.push_back(service::to_string(p));
            std::cout << json{{"session", r.session_id},
                              {"trajectory", traj},
                              {"terminal", service::to_string(r.terminal)},
                              {"decisions", r.decisions}}
                             .dump(2)
                      << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
