#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "deco/checkpoint.hpp"
#include "deco/commands.hpp"
#include "deco/deco.hpp"
#include "deco/depth.hpp"
#include "deco/handcrafted.hpp"
#include "deco/mapping.hpp"
#include "deco/report.hpp"

namespace py = pybind11;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

// (H, W) or (H, W, C) arrays to and from interleaved images.
template <typename T, int C>
deco::Image<T, C> to_image(const Array<T>& a) {
    const bool ok = C == 1 ? (a.ndim() == 2 || (a.ndim() == 3 && a.shape(2) == 1)) : (a.ndim() == 3 && a.shape(2) == C);
    if (!ok) throw py::value_error("expected an array of shape (H, W" + std::string(C == 1 ? ")" : ", 3)"));
    deco::Image<T, C> img(std::size_t(a.shape(1)), std::size_t(a.shape(0)));
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
}

template <typename T, int C>
py::array_t<T> to_array(const deco::Image<T, C>& img) {
    std::vector<py::ssize_t> shape{py::ssize_t(img.height), py::ssize_t(img.width)};
    if (C > 1) shape.push_back(C);
    py::array_t<T> a(shape);
    std::copy(img.data.begin(), img.data.end(), a.mutable_data());
    return a;
}

deco::SurfaceNormalsParams normals_params(const py::object& params) {
    deco::SurfaceNormalsParams p;
    if (params.is_none()) return p;
    const std::string text = py::module_::import("json").attr("dumps")(params).cast<std::string>();
    try {
        deco::from_json(nlohmann::json::parse(text), p);
    } catch (const nlohmann::json::exception& e) {
        throw deco::ConfigError(std::string("surface_normals: ") + e.what());
    }
    return p;
}

class DecoColorizer {
public:
    explicit DecoColorizer(const std::filesystem::path& checkpoint)
        : model_(deco::DecoModel::from_checkpoint(deco::load_checkpoint(checkpoint))) {
        model_.set_frozen(true);
    }

    py::array_t<std::uint8_t> colorize(const Array<std::uint16_t>& depth) {
        const deco::DepthMap d = to_image<std::uint16_t, 1>(depth);
        return to_array(deco::colorize_image(model_, deco::depth_to_gray(d, model_.config().input_size)));
    }

    int input_size() const { return model_.config().input_size; }
    std::string checksum() { return model_.checksum(); }

private:
    deco::DecoModel model_;
};

}  // namespace

PYBIND11_MODULE(_deco, m) {
    m.doc() = "Native core of the deco package.";

    auto base = py::register_exception<deco::Error>(m, "DecoError", PyExc_RuntimeError);
    py::register_exception<deco::ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<deco::DataError>(m, "DataError", base.ptr());
    py::register_exception<deco::TrainingError>(m, "TrainingError", base.ptr());
    py::register_exception<deco::MissingArtifactError>(m, "MissingArtifactError", base.ptr());
    py::register_exception<deco::ProtocolError>(m, "ProtocolError", base.ptr());

    m.def("version", &deco::version);

    m.def("commands", [] {
        std::vector<std::string> names;
        for (deco::Command c : deco::all_commands()) names.push_back(deco::to_string(c));
        return names;
    });

    m.def(
        "run_command",
        [](const std::string& command, const std::filesystem::path& config,
           std::optional<std::filesystem::path> output_dir, std::optional<std::uint64_t> seed) {
            deco::CommandOptions options;
            options.command = deco::parse_command(command);
            options.config = config;
            options.output_dir = std::move(output_dir);
            options.seed = seed;
            deco::CommandResult r;
            {
                py::gil_scoped_release release;
                r = deco::run_command(options);
            }
            py::dict out;
            out["output_dir"] = r.output_dir;
            out["outputs"] = r.outputs;
            return out;
        },
        py::arg("command"), py::arg("config"), py::arg("output_dir") = py::none(), py::arg("seed") = py::none(),
        "Run one subcommand; returns the output directory and the sorted list of files written.");

    m.def(
        "normalize_depth",
        [](const Array<std::uint16_t>& depth) { return to_array(deco::normalize_depth(to_image<std::uint16_t, 1>(depth))); },
        py::arg("depth"), "uint16 depth (0 = missing) to uint8 gray over the valid range.");

    m.def(
        "colorjet", [](const Array<std::uint8_t>& gray) { return to_array(deco::colorjet_map(to_image<std::uint8_t, 1>(gray))); },
        py::arg("gray"));

    m.def(
        "compute_normals",
        [](const Array<std::uint16_t>& depth, double unit_scale) {
            return to_array(deco::compute_normals(to_image<std::uint16_t, 1>(depth), unit_scale));
        },
        py::arg("depth"), py::arg("unit_scale") = 1.0, "Unit normals as an (H, W, 3) float64 array.");

    m.def(
        "recursive_median_fill",
        [](const Array<std::uint16_t>& depth, int k) {
            return to_array(deco::recursive_median_fill(to_image<std::uint16_t, 1>(depth), k));
        },
        py::arg("depth"), py::arg("k") = 5);

    m.def(
        "colorize_depth",
        [](const std::string& mapping, const Array<std::uint16_t>& depth, int size, const py::object& params) {
            const deco::MappingKind kind = deco::parse_mapping(mapping);
            return to_array(
                deco::handcrafted_colorization(kind, to_image<std::uint16_t, 1>(depth), size, normals_params(params)));
        },
        py::arg("mapping"), py::arg("depth"), py::arg("size"), py::arg("surface_normals") = py::none(),
        "Hand-crafted mapping (gray, colorjet, surface_normals, surface_normals_pp) at size x size.");

    py::class_<DecoColorizer>(m, "DecoColorizer")
        .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
        .def("colorize", &DecoColorizer::colorize, py::arg("depth"))
        .def_property_readonly("input_size", &DecoColorizer::input_size)
        .def("checksum", &DecoColorizer::checksum);

    m.def(
        "fuse_predictions",
        [](const std::vector<double>& rgb, const std::vector<double>& depth, double alpha) {
            if (rgb.size() != depth.size()) throw py::value_error("rgb and depth scores differ in length");
            return deco::fuse_predictions(rgb, depth, alpha);
        },
        py::arg("rgb"), py::arg("depth"), py::arg("alpha"));

    m.def(
        "cross_validate_alpha",
        [](const std::vector<std::vector<double>>& rgb, const std::vector<std::vector<double>>& depth,
           const std::vector<int>& labels, std::optional<std::vector<double>> grid) {
            return deco::cross_validate_alpha(rgb, depth, labels, grid ? *grid : deco::default_alpha_grid());
        },
        py::arg("rgb"), py::arg("depth"), py::arg("labels"), py::arg("grid") = py::none());

    m.def(
        "load_checkpoint",
        [](const std::filesystem::path& path) {
            const deco::Checkpoint c = deco::load_checkpoint(path);
            py::dict tensors;
            for (const deco::NamedTensor& e : c.entries) {
                std::vector<py::ssize_t> shape(e.tensor.shape().begin(), e.tensor.shape().end());
                py::array_t<double> a(shape);
                const std::vector<double> v = e.tensor.to_vector();
                std::copy(v.begin(), v.end(), a.mutable_data());
                tensors[py::str(e.name)] = a;
            }
            return py::make_tuple(tensors, py::module_::import("json").attr("loads")(c.metadata));
        },
        py::arg("path"), "(tensors by name, metadata dict)");

    m.def("sha256_file", &deco::sha256_file, py::arg("path"));
}
