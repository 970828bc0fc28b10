// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Arrays cross the boundary as float64 numpy copies; the
// C++ side keeps ownership of networks and configs.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hyperalign/bench.hpp"
#include "hyperalign/checkpoint.hpp"
#include "hyperalign/pipeline.hpp"

namespace py = pybind11;
using namespace hyperalign;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
    const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
    return Tensor(Shape{rows, cols}, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

std::vector<std::size_t> conditions(const ExperimentConfig& cfg, std::size_t count, long condition) {
    if (condition < 0) return cycling_conditions(count, cfg.mixture.num_conditions());
    if (static_cast<std::size_t>(condition) >= cfg.mixture.num_conditions())
        throw std::out_of_range("condition " + std::to_string(condition) + " out of range");
    return std::vector<std::size_t>(count, static_cast<std::size_t>(condition));
}

Array sample(const ExperimentConfig& cfg, const DenoiserNet& net, const std::string& method, std::size_t count,
             long condition, const HyperNet* hnet, std::optional<std::vector<int>> keysteps,
             std::optional<std::uint64_t> seed) {
    MethodContext ctx{&cfg, cfg.process(), &net, hnet, std::nullopt};
    if (keysteps) {
        KeystepSchedule k{cfg.steps, *keysteps};
        k.validate();
        ctx.keysteps = k;
    } else if (method == "hyper_P") {
        ctx.keysteps = experiment_keysteps(cfg, net);
    }
    const auto cond = conditions(cfg, count, condition);
    if (cond.empty()) return to_array(Tensor(Shape{0, cfg.mixture.dim()}));
    Tensor x;
    {
        py::gil_scoped_release release;
        x = run_method(ctx, method, cond, seed.value_or(cfg.seed));
    }
    return to_array(x);
}

py::dict record_dict(const MetricsRecord& r) {
    py::dict d;
    d["method"] = r.method;
    d["condition"] = r.condition;
    d["mean_reward"] = r.mean_reward;
    d["reward_stderr"] = r.reward_stderr;
    d["kl_target"] = r.kl_target;
    d["kl_base"] = r.kl_base;
    d["sw2_data"] = r.sw2_data;
    d["diversity"] = r.diversity;
    d["seconds_per_sample"] = r.seconds_per_sample;
    d["samples"] = r.samples;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Conditional diffusion alignment with hypernetwork-generated LoRA deltas";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);

    py::class_<ExperimentConfig>(m, "Config")
        .def_static(
            "load", [](const std::filesystem::path& p) { return load_config(p); }, py::arg("path"))
        .def_static(
            "from_json",
            [](const std::string& text, const std::filesystem::path& base_dir) {
                return parse_config(nlohmann::json::parse(text), base_dir);
            },
            py::arg("text"), py::arg("base_dir") = ".")
        .def_readonly("seed", &ExperimentConfig::seed)
        .def_readonly("steps", &ExperimentConfig::steps)
        .def_property_readonly("output_dir", [](const ExperimentConfig& c) { return c.output_dir; })
        .def_property_readonly("num_conditions", [](const ExperimentConfig& c) { return c.mixture.num_conditions(); })
        .def("reseed", &ExperimentConfig::reseed, py::arg("seed"))
        .def("to_json", [](const ExperimentConfig& c) { return c.to_json().dump(); })
        .def("hash", &ExperimentConfig::hash);

    py::class_<DenoiserNet>(m, "Denoiser")
        .def_static(
            "load", [](const std::filesystem::path& p) { return load_denoiser(p); }, py::arg("path"))
        .def(
            "save", [](const DenoiserNet& n, const std::filesystem::path& p) { return save_denoiser(p, n); },
            py::arg("path"))
        .def("digest", [](const DenoiserNet& n) { return denoiser_digest(n); })
        .def_property_readonly("num_layers", &DenoiserNet::num_layers);

    py::class_<HyperNet>(m, "HyperNet")
        .def_static(
            "load", [](const std::filesystem::path& p, const DenoiserNet& base) { return load_hypernet(p, base); },
            py::arg("path"), py::arg("base"))
        .def(
            "save",
            [](const HyperNet& h, const std::filesystem::path& p, const DenoiserNet& base) {
                return save_hypernet(p, h, base);
            },
            py::arg("path"), py::arg("base"))
        .def_property_readonly("parameter_count", &HyperNet::parameter_count);

    m.def(
        "train_base",
        [](const ExperimentConfig& cfg) {
            py::gil_scoped_release release;
            TrainResult r = run_train_base(cfg);
            return std::make_pair(std::move(r.net), std::move(r.losses));
        },
        py::arg("config"), "Train the base denoiser; returns (denoiser, per-iteration losses).");

    m.def(
        "align",
        [](const ExperimentConfig& cfg, const DenoiserNet& net) {
            py::gil_scoped_release release;
            return run_align(cfg, net).hnet;
        },
        py::arg("config"), py::arg("base"), "Train the hypernetwork against a frozen base.");

    m.def(
        "sample",
        [](const ExperimentConfig& cfg, const DenoiserNet& net, const std::string& method, std::size_t count,
           long condition, const HyperNet* hnet, std::optional<std::vector<int>> keysteps,
           std::optional<std::uint64_t> seed) {
            return sample(cfg, net, method, count, condition, hnet, std::move(keysteps), seed);
        },
        py::arg("config"), py::arg("base"), py::arg("method") = "base", py::arg("count") = 100,
        py::arg("condition") = -1, py::arg("hypernet") = nullptr, py::arg("keysteps") = std::nullopt,
        py::arg("seed") = std::nullopt,
        "Samples of one method: base, guided, bon, eps_greedy, hyper_S, hyper_I or hyper_P. "
        "condition=-1 cycles through every condition.");

    m.def(
        "select_keysteps",
        [](const ExperimentConfig& cfg, const DenoiserNet& net) {
            py::gil_scoped_release release;
            return run_select_keysteps(cfg, net).schedule.steps;
        },
        py::arg("config"), py::arg("base"));

    m.def(
        "reward",
        [](const ExperimentConfig& cfg, const Array& x, const std::vector<std::size_t>& cond) {
            return to_array(reward_batch(to_tensor(x), cond, cfg.reward).reshaped(Shape{cond.size(), 1}));
        },
        py::arg("config"), py::arg("x"), py::arg("cond"), "Rewards as an (n, 1) array.");

    m.def(
        "grid_kl",
        [](const ExperimentConfig& cfg, const Array& x, std::size_t c, bool tilted) {
            return grid_kl(to_tensor(x), experiment_target(cfg, tilted), c);
        },
        py::arg("config"), py::arg("x"), py::arg("condition"), py::arg("tilted") = true);
    m.def(
        "sliced_w2",
        [](const Array& a, const Array& b, std::size_t projections, std::uint64_t seed) {
            return sliced_w2(to_tensor(a), to_tensor(b), projections, seed);
        },
        py::arg("a"), py::arg("b"), py::arg("projections") = 128, py::arg("seed") = 0);
    m.def(
        "diversity", [](const Array& x) { return diversity(to_tensor(x)); }, py::arg("x"));

    m.def(
        "bench",
        [](const ExperimentConfig& cfg) {
            BenchResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(cfg);
            }
            py::list out;
            for (const auto& rec : r.summary) out.append(record_dict(rec));
            return out;
        },
        py::arg("config"), "Run the configured benchmark; returns the pooled record of each method.");
}
