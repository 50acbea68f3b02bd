#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tactile/artifact.hpp"
#include "tactile/errors.hpp"
#include "tactile/experiment.hpp"
#include "tactile/extract_env.hpp"
#include "tactile/geometry.hpp"
#include "tactile/grasp_env.hpp"
#include "tactile/seed.hpp"
#include "tactile/service.hpp"

namespace py = pybind11;
using namespace tactile;
using nlohmann::json;

// JSON crosses the boundary as text; the Python package turns it into dicts.
namespace {

std::array<double, 4> quat(const Quaternion& q) { return {q.w, q.x, q.y, q.z}; }
Quaternion quat(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }

py::dict extract_step(const extract::ExtractStep& s) {
  py::dict d;
  d["observation"] = s.observation;
  d["reward"] = s.reward;
  d["done"] = s.done;
  d["kind"] = extract::to_string(s.kind);
  d["jammed"] = s.jammed;
  d["workspace_limited"] = s.workspace_limited;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Tactile manipulation workbench core";

  static PyObject* base = py::exception<Error>(m, "TactileError").release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = py::reinterpret_borrow<py::object>(base)(e.what());
      err.attr("kind") = e.kind();
      PyErr_SetObject(base, err.ptr());
    }
  });

  m.def("config_hash", [](const std::string& j) { return config_hash(json::parse(j)); });
  m.def("derive_seed", [](std::uint64_t parent, const std::string& label) { return derive_seed(parent, label); });
  m.def("derive_seed_index", [](std::uint64_t parent, std::uint64_t i) { return derive_seed(parent, i); });
  m.def("data_root", [] { return data_root(); });

  m.def("quat_multiply", [](const std::array<double, 4>& a, const std::array<double, 4>& b) {
    return quat(quat_multiply(quat(a), quat(b)));
  });
  m.def("axis_angle", [](const std::array<double, 3>& axis, double angle) {
    return quat(axis_angle({axis[0], axis[1], axis[2]}, angle));
  });
  m.def("quat_delta", [](const std::array<double, 4>& now, const std::array<double, 4>& before) {
    return quat(quat_delta(quat(now), quat(before)));
  });

  // Rewards on constructed states.
  m.def(
      "grasp_reward",
      [](double baro0, double baro1, double tilt0, double tilt1, bool lift_stable) {
        const grasp::GraspConfig c;
        sim::ModulePair mods{};
        mods[0].baro = baro0;
        mods[1].baro = baro1;
        const auto r = grasp::compute_reward(mods, {tilt0, tilt1}, lift_stable, c.baro_threshold, c.tilt_threshold);
        return py::make_tuple(r.reward, grasp::to_string(r.kind));
      },
      py::arg("baro0"), py::arg("baro1"), py::arg("tilt0"), py::arg("tilt1"), py::arg("lift_stable"));
  m.def(
      "extract_reward",
      [](double p0, double p1, double rise, double delta_height) {
        const auto r = extract::compute_reward({p0, p1}, rise, delta_height, extract::ExtractConfig{});
        return py::make_tuple(r.reward, extract::to_string(r.kind));
      },
      py::arg("p0"), py::arg("p1"), py::arg("rise"), py::arg("delta_height"));

  py::class_<extract::ExtractEnv>(m, "ExtractEnv")
      .def(py::init([](const std::string& config) {
             return extract::ExtractEnv(config.empty() ? extract::ExtractConfig{}
                                                       : extract::extract_config_from_json(json::parse(config)));
           }),
           py::arg("config") = "")
      .def(
          "reset",
          [](extract::ExtractEnv& e, const std::string& peg, double yaw_deg, std::uint64_t seed) {
            return e.reset(sim::peg_profile_from_string(peg), yaw_deg * kPi / 180.0, seed);
          },
          py::arg("peg"), py::arg("yaw_deg"), py::arg("seed"))
      .def("step", [](extract::ExtractEnv& e, const std::string& key) {
        return extract_step(e.step(extract::action_from_token(key)));
      })
      .def("start_recording", &extract::ExtractEnv::start_recording, py::arg("path"), py::arg("timestamp"))
      .def("teleop_step", [](extract::ExtractEnv& e, const std::string& key) { return extract_step(e.teleop_step(key)); })
      .def("stop_recording", &extract::ExtractEnv::stop_recording)
      .def_property_readonly("recording", &extract::ExtractEnv::recording)
      .def_property_readonly("observation", &extract::ExtractEnv::observation)
      .def_property_readonly("rise", &extract::ExtractEnv::rise)
      .def_property_readonly("steps", &extract::ExtractEnv::steps)
      .def_property_readonly("done", &extract::ExtractEnv::done)
      .def_property_readonly("goal_rise", [](const extract::ExtractEnv& e) { return e.config().goal_rise(); });

  m.def("read_demo_file", [](const std::filesystem::path& p) {
    const auto f = extract::read_demo_file(p);
    py::dict header;
    header["peg"] = sim::to_string(f.header.peg);
    header["yaw_deg"] = f.header.yaw_deg;
    header["seed"] = f.header.seed;
    header["timestamp"] = f.header.timestamp;
    header["config_hash"] = f.header.config_hash;
    py::list records;
    for (const auto& r : f.records) records.append(py::make_tuple(r.observation, r.action));
    return py::make_tuple(header, records);
  });

  py::class_<grasp::GraspEnv>(m, "GraspEnv")
      .def(py::init([](const std::string& config) {
             return grasp::GraspEnv(config.empty() ? grasp::GraspConfig{}
                                                   : grasp::grasp_config_from_json(json::parse(config)));
           }),
           py::arg("config") = "")
      .def("reset", py::overload_cast<std::uint64_t>(&grasp::GraspEnv::reset), py::arg("seed"))
      .def("step",
           [](grasp::GraspEnv& e, double a) {
             const auto s = e.step(a);
             py::dict d;
             d["observation"] = s.observation;
             d["reward"] = s.reward;
             d["done"] = s.done;
             d["kind"] = grasp::to_string(s.kind);
             return d;
           })
      .def_property_readonly("position", &grasp::GraspEnv::position)
      .def_property_readonly("steps", &grasp::GraspEnv::steps)
      .def_property_readonly("done", &grasp::GraspEnv::done);

  m.def(
      "run_experiment",
      [](const std::string& config, const std::function<void(const std::string&)>& on_event) {
        experiment::MetricsSink sink;
        if (on_event) {
          sink = [&](const json& e) {
            py::gil_scoped_acquire gil;
            on_event(e.dump());
          };
        }
        const auto c = experiment::run_config_from_json(json::parse(config));
        py::gil_scoped_release release;
        return experiment::run_experiment(c, sink).summary.dump();
      },
      py::arg("config"), py::arg("on_event") = nullptr);
  m.def("verify_run", [](const std::filesystem::path& dir) { return experiment::verify_run(dir).dump(); });
  m.def("check_summary", [](const std::string& summary) {
    std::vector<std::tuple<std::string, bool, std::string>> out;
    for (const auto& c : experiment::check_summary(json::parse(summary))) out.emplace_back(c.name, c.pass, c.detail);
    return out;
  });

  py::class_<service::Hub>(m, "Hub")
      .def(py::init([](const std::filesystem::path& demo_dir, const std::function<double()>& clock) {
             service::Hub::Options o;
             o.demo_dir = demo_dir;
             if (clock) o.clock = clock;
             return std::make_unique<service::Hub>(o);
           }),
           py::arg("demo_dir"), py::arg("clock") = nullptr)
      .def("connect", &service::Hub::connect)
      .def("disconnect", &service::Hub::disconnect)
      .def("handle",
           [](service::Hub& h, int id, const std::string& text) {
             std::vector<std::pair<int, std::string>> out;
             for (auto& a : h.handle(id, text)) out.emplace_back(a.to, std::move(a.text));
             return out;
           })
      .def("poll",
           [](service::Hub& h) {
             std::vector<std::pair<int, std::string>> out;
             for (auto& a : h.poll()) out.emplace_back(a.to, std::move(a.text));
             return out;
           })
      .def("snapshot", [](const service::Hub& h) { return h.snapshot().dump(); });

  m.attr("PROTOCOL_VERSION") = service::kProtocolVersion;
  m.attr("PROTOCOL_NAME") = service::kProtocolName;
}
