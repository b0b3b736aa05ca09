#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vtcfed/data.hpp"
#include "vtcfed/fed.hpp"
#include "vtcfed/harness.hpp"
#include "vtcfed/losses.hpp"
#include "vtcfed/zoo.hpp"

namespace py = pybind11;
using namespace vtcfed;

namespace {

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const Arr& a) {
    std::vector<long> shape(static_cast<size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> out(shape);
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

fed::RunConfig config_from_dict(const py::dict& d) {
    harness::KVConfig kv;
    kv.set("schema_version", "1");
    for (const auto& item : d) kv.set(py::str(item.first), py::str(item.second));
    return harness::load_run_config(kv);
}

py::dict run_from_config(const fed::RunConfig& config, const std::string& out_dir) {
    const auto result = fed::run_experiment(config, out_dir);
    py::dict out;
    out["final_mean_acc"] = result.final_mean_acc;
    out["pre_finetune_mean_acc"] = result.pre_finetune_mean_acc;
    out["total_bytes"] = ledger_total(result.ledger);
    out["decoder_state_elements"] = result.decoder_state_elements;
    out["generated_classes"] = result.generated_classes;
    py::list rounds;
    for (const auto& m : result.metrics) {
        py::dict r;
        r["round"] = m.round;
        r["phase"] = m.phase;
        r["mean_acc"] = m.mean_acc;
        r["per_client_acc"] = m.per_client_acc;
        r["ledger_bytes"] = m.ledger_bytes;
        rounds.append(r);
    }
    out["metrics"] = rounds;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "federated learning with a variational transposed-convolution decoder";

    m.def(
        "reconstruction_loss",
        [](const Arr& x_gen, const Arr& x) { return reconstruction_loss(tensor_from_array(x_gen), tensor_from_array(x)); },
        py::arg("x_gen"), py::arg("x"), "Squared Euclidean distance over all elements.");

    m.def("kl_gaussian", &kl_gaussian, py::arg("z"), py::arg("c"), py::arg("sigma"),
          "KL( N(z, diag(sigma^2)) || N(c, I) ), computed analytically.");

    m.def("reparameterize", &reparameterize, py::arg("z"), py::arg("sigma"), py::arg("noise"),
          "z + sigma * noise, elementwise.");

    m.def(
        "dm_loss",
        [](const std::map<int, std::vector<Vec>>& groups, const std::map<int, Vec>& prototypes) {
            LatentGroups lg(groups.begin(), groups.end());
            PrototypeMap pm(prototypes.begin(), prototypes.end());
            return dm_loss(lg, pm);
        },
        py::arg("latent_groups"), py::arg("prototypes"),
        "Class-grouped mean squared distance to prototypes, summed over classes.");

    m.def(
        "classification_loss", [](const Vec& scores, int label) { return zoo::classification_loss(scores, label); },
        py::arg("scores"), py::arg("label"), "Cross-entropy on unnormalized scores.");

    m.def(
        "dirichlet_partition",
        [](const std::vector<int>& labels, int clients, double alpha, std::uint64_t seed) {
            return data::dirichlet_partition(labels, clients, alpha, seed).shards;
        },
        py::arg("labels"), py::arg("clients"), py::arg("alpha"), py::arg("seed"),
        "Per-class Dirichlet(alpha) split; returns one index list per client.");

    m.def(
        "generate_synthetic",
        [](const py::dict& config, const std::map<int, Vec>& prototypes, const Vec& sigma, int samples,
           std::uint64_t seed) {
            const fed::RunConfig c = config_from_dict(config);
            const auto profile = zoo::profile_by_name(c.profile);
            auto decoder = zoo::build_vtc_decoder(profile, c.resolved_p(profile), seed);
            PrototypeMap pm(prototypes.begin(), prototypes.end());
            RandomStream rng(derive_seed(seed, stream_tag::kGenerate));
            const auto synth = fed::generate_synthetic(decoder, pm, sigma, samples, rng);
            return py::make_tuple(array_from_tensor(synth.xs), synth.ys);
        },
        py::arg("config"), py::arg("prototypes"), py::arg("sigma"), py::arg("samples"), py::arg("seed"),
        "Decode prototype-centred Gaussian latents with a freshly built decoder.");

    m.def(
        "run_experiment", [](const py::dict& config, const std::string& out_dir) {
            return run_from_config(config_from_dict(config), out_dir);
        },
        py::arg("config"), py::arg("out_dir") = std::string(),
        "Run the full protocol from a config dict; returns summary metrics.");

    m.def(
        "run_experiment_file", [](const std::string& config_path, const std::string& out_dir) {
            return run_from_config(harness::load_run_config(harness::KVConfig::parse_file(config_path)), out_dir);
        },
        py::arg("config_path"), py::arg("out_dir") = std::string(),
        "Run the full protocol from a config file; returns summary metrics.");

    m.attr("SIGMA_FLOOR") = kSigmaFloor;
}
