#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gazeassist/confirmation.hpp"
#include "gazeassist/error.hpp"
#include "gazeassist/eval.hpp"
#include "gazeassist/inference.hpp"
#include "gazeassist/intent_net.hpp"
#include "gazeassist/planner.hpp"
#include "gazeassist/session.hpp"

namespace py = pybind11;
using namespace gaze;
using nlohmann::json;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& o) {
    return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

features::WindowBatch batch_from(py::array_t<double, py::array::c_style | py::array::forcecast> x) {
    if (x.ndim() != 3 || x.shape(2) != features::kNumFeatures) {
        throw ShapeError("expected an array of shape (batch, window, 3)");
    }
    features::WindowBatch b;
    b.bs = static_cast<int>(x.shape(0));
    b.sw = static_cast<int>(x.shape(1));
    b.values.assign(x.data(), x.data() + x.size());
    return b;
}

std::vector<features::FeatureWindow> windows_from(py::array_t<double, py::array::c_style | py::array::forcecast> x,
                                                  py::array_t<int, py::array::c_style | py::array::forcecast> y) {
    const auto b = batch_from(x);
    if (y.ndim() != 1 || y.shape(0) != b.bs) throw ShapeError("labels must have shape (batch,)");
    std::vector<features::FeatureWindow> out(static_cast<std::size_t>(b.bs));
    const std::size_t stride = static_cast<std::size_t>(b.sw) * features::kNumFeatures;
    for (int i = 0; i < b.bs; ++i) {
        auto& w = out[static_cast<std::size_t>(i)];
        w.object_id = "w" + std::to_string(i);
        w.sw = b.sw;
        w.values.assign(b.values.begin() + i * stride, b.values.begin() + (i + 1) * stride);
        w.label = y.at(i);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Gaze-driven intention recognition, confirmation and planning core.";

    py::register_exception<Error>(m, "GazeError");

    // features
    m.def("half_diagonal", [](double w, double h) {
        return features::half_diagonal(Box{0.0, 0.0, w, h});
    });
    m.def(
        "gaze_ratio",
        [](std::array<double, 4> box, double gx, double gy, double eps, double cap) {
            return features::gaze_ratio(Box{box[0], box[1], box[2], box[3]}, Point{gx, gy}, eps, cap);
        },
        py::arg("box"), py::arg("gx"), py::arg("gy"), py::arg("eps") = 1e-6, py::arg("cap") = 10.0,
        "box is (x_min, y_min, x_max, y_max)");

    // intent network
    py::class_<net::ModelParams>(m, "IntentModel")
        .def_static(
            "initialize",
            [](std::uint64_t seed) {
                net::ModelConfig c;
                c.seed = seed;
                return net::ModelParams::initialize(c);
            },
            py::arg("seed") = 0)
        .def_static("load", &net::load_checkpoint)
        .def("save", [](const net::ModelParams& p, const std::string& path) { net::save_checkpoint(p, path); })
        .def_property_readonly("n_params", [](const net::ModelParams& p) { return p.values.size(); })
        .def("predict", [](const net::ModelParams& p, py::array_t<double, py::array::c_style | py::array::forcecast> x) {
            const auto b = batch_from(x);
            const auto y = net::forward(b, p);
            return py::array_t<double>(std::vector<py::ssize_t>{static_cast<py::ssize_t>(y.size())}, y.data());
        });

    m.def(
        "train",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
           py::array_t<int, py::array::c_style | py::array::forcecast> y, int epochs, std::uint64_t seed) {
            const auto windows = windows_from(x, y);
            net::TrainConfig tc;
            tc.epochs = epochs;
            tc.seed = seed;
            net::ModelConfig mc;
            mc.seed = seed;
            net::TrainResult r;
            {
                py::gil_scoped_release release;
                r = net::train(windows, tc, mc);
            }
            py::list history;
            for (const auto& h : r.history) {
                history.append(py::dict(py::arg("epoch") = h.epoch, py::arg("loss") = h.loss,
                                        py::arg("accuracy") = h.accuracy));
            }
            return py::make_tuple(std::move(r.params), history);
        },
        py::arg("x"), py::arg("y"), py::arg("epochs") = 30, py::arg("seed") = 0);

    m.def(
        "gradient_check",
        [](std::uint64_t seed, int probes) {
            net::ModelConfig c;
            c.seed = seed;
            const auto r = net::gradient_check(net::ModelParams::initialize(c), probes, seed);
            return py::dict(py::arg("max_rel_error") = r.max_rel_error, py::arg("worst_tensor") = r.worst_tensor,
                            py::arg("probes") = r.probes);
        },
        py::arg("seed") = 0, py::arg("probes") = 50);

    m.def(
        "separable_windows",
        [](std::size_t n, int sw, std::uint64_t seed) {
            const auto ws = synth::separable_windows(n, sw, seed);
            py::array_t<double> x({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(sw),
                                   static_cast<py::ssize_t>(features::kNumFeatures)});
            py::array_t<int> y(std::vector<py::ssize_t>{static_cast<py::ssize_t>(n)});
            auto xm = x.mutable_unchecked<3>();
            auto ym = y.mutable_unchecked<1>();
            for (std::size_t i = 0; i < n; ++i) {
                for (int t = 0; t < sw; ++t) {
                    for (int f = 0; f < features::kNumFeatures; ++f) xm(i, t, f) = ws[i].row(t)[f];
                }
                ym(i) = *ws[i].label;
            }
            return py::make_tuple(x, y);
        },
        py::arg("n"), py::arg("sw") = 30, py::arg("seed") = 0);

    // intention inference
    m.def("build_prompt", [](const std::vector<std::string>& labels) {
        const auto p = inference::build_prompt(labels);
        return py::make_tuple(p.system, p.user);
    });
    m.def("parse_numbered_list", &inference::parse_numbered_list);
    m.def("mock_reply", [](const std::string& user_prompt) {
        return inference::mock_llm_reply(inference::RuleTable::defaults(), user_prompt);
    });
    m.def("infer_intentions", [](const std::vector<std::string>& labels) {
        inference::MockLlmClient client;
        py::list out;
        for (const auto& p : inference::infer_intentions(inference::build_prompt(labels), client)) {
            out.append(py::dict(py::arg("rank") = p.rank, py::arg("description") = p.description,
                                py::arg("source_objects") = p.source_objects));
        }
        return out;
    });

    // confirmation
    m.def(
        "classify_region",
        [](double gx, double gy, double height) {
            confirmation::RegionLayout layout;
            layout.height = height;
            return confirmation::to_string(confirmation::classify_region(Point{gx, gy}, layout));
        },
        py::arg("gx"), py::arg("gy"), py::arg("height") = 1080.0);
    m.def(
        "confirm",
        [](const std::vector<std::string>& proposals, const std::vector<std::tuple<std::int64_t, double, double>>& gaze,
           std::int64_t dwell_us, std::int64_t timeout_us) {
            std::vector<inference::IntentProposal> props;
            for (std::size_t i = 0; i < proposals.size(); ++i) {
                props.push_back({static_cast<int>(i) + 1, proposals[i], {}});
            }
            std::vector<GazeSample> stream;
            for (const auto& [t, x, y] : gaze) stream.push_back(GazeSample{t, x, y, true});
            confirmation::ConfirmationConfig cfg;
            cfg.dwell_us = dwell_us;
            cfg.timeout_us = timeout_us;
            const auto r = confirmation::run_confirmation(props, stream, cfg);
            return r.accepted ? py::object(py::str(r.accepted->description)) : py::object(py::none());
        },
        py::arg("proposals"), py::arg("gaze"), py::arg("dwell_us") = 800'000, py::arg("timeout_us") = 10'000'000,
        "gaze is a list of (t_us, gx, gy); returns the accepted proposal or None");

    // planning and execution
    m.def("canonical_plan", [](const std::string& intention, const py::dict& world) {
        const auto steps = planner::canonical_plan(intention, world::world_from_json(from_py(world)));
        return steps ? to_py(planner::steps_to_json(*steps)) : py::object(py::none());
    });
    m.def("validate_plan", [](const py::list& steps, const py::dict& world) {
        py::list out;
        for (const auto& v : planner::validate(planner::steps_from_json(from_py(steps)),
                                               world::world_from_json(from_py(world)))) {
            out.append(py::make_tuple(v.step, v.message));
        }
        return out;
    });
    m.def(
        "execute",
        [](const py::list& steps, const py::dict& world, double failure_probability, std::uint64_t seed) {
            planner::ActionPlan plan;
            plan.steps = planner::steps_from_json(from_py(steps));
            planner::ExecConfig cfg;
            cfg.failures.probability = failure_probability;
            cfg.failures.seed = seed;
            const auto r = planner::execute(plan, world::world_from_json(from_py(world)), cfg);
            return py::dict(py::arg("success") = r.success, py::arg("attempts") = r.attempts,
                            py::arg("world") = to_py(world::world_to_json(r.world)));
        },
        py::arg("steps"), py::arg("world"), py::arg("failure_probability") = 0.0, py::arg("seed") = 0);

    // sessions
    m.def("replay", [](const std::string& path) {
        const auto r = service::replay_file(path);
        py::list traj;
        for (auto p : r.trajectory) traj.append(service::to_string(p));
        return py::dict(py::arg("session") = r.session_id, py::arg("trajectory") = traj,
                        py::arg("terminal") = service::to_string(r.terminal), py::arg("decisions") = to_py(r.decisions));
    });
    m.def(
        "system_eval",
        [](const net::ModelParams& model, double fail_first, const std::string& log_dir) {
            eval::PipelineConfig pc;
            pc.model = std::make_shared<const net::ModelParams>(model);
            pc.make_client = [] { return std::make_shared<inference::MockLlmClient>(); };
            if (!log_dir.empty()) pc.log_dir = log_dir;
            if (fail_first > 0.0) {
                pc.session.execution.failures.probability = fail_first;
                pc.session.execution.failures.attempts = {1};
            }
            const auto sessions = eval::scripted_sessions();
            eval::StageReport r;
            {
                py::gil_scoped_release release;
                r = eval::run_system_eval(sessions, pc);
            }
            return to_py(r.to_json());
        },
        py::arg("model"), py::arg("fail_first") = 0.0, py::arg("log_dir") = "");
    m.def(
        "train_session_model",
        [](int epochs, std::uint64_t seed) {
            py::gil_scoped_release release;
            return eval::train_session_model({}, epochs, seed);
        },
        py::arg("epochs") = 6, py::arg("seed") = 0);
}
