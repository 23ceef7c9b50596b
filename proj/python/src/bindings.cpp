// pybind11 surface: tensor-level ops, metrics, dataset helpers and the
// SagVae model with train/evaluate/save/load.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sagvae/data.hpp"
#include "sagvae/metrics.hpp"
#include "sagvae/training.hpp"

namespace py = pybind11;
using namespace sagvae;

namespace {

Tensor tensor_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> numpy_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

ModelConfig model_config_from_dict(const py::dict& d) {
  ModelConfig cfg;
  cfg.n = d["n"].cast<int>();
  cfg.d = d.contains("d") ? d["d"].cast<int>() : 1;
  if (d.contains("latent_mode"))
    cfg.latent_mode = latent_mode_from_string(d["latent_mode"].cast<std::string>());
  if (d.contains("latent_dim")) cfg.latent_dim = d["latent_dim"].cast<int>();
  if (d.contains("enc_hidden")) cfg.enc_hidden = d["enc_hidden"].cast<std::vector<int>>();
  if (d.contains("edge_hidden")) cfg.edge_hidden = d["edge_hidden"].cast<std::vector<int>>();
  if (d.contains("dec_hidden")) cfg.dec_hidden = d["dec_hidden"].cast<std::vector<int>>();
  if (d.contains("output_activation"))
    cfg.output_activation = d["output_activation"].cast<std::string>() == "sigmoid"
                                ? OutputActivation::kSigmoid
                                : OutputActivation::kIdentity;
  if (d.contains("prior_p")) cfg.prior_p = d["prior_p"].cast<double>();
  if (d.contains("identity_adjacency"))
    cfg.identity_adjacency = d["identity_adjacency"].cast<bool>();
  return cfg;
}

py::dict model_config_to_dict(const ModelConfig& cfg) {
  py::dict d;
  d["n"] = cfg.n;
  d["d"] = cfg.d;
  d["latent_mode"] = to_string(cfg.latent_mode);
  d["latent_dim"] = cfg.latent_dim;
  d["enc_hidden"] = cfg.enc_hidden;
  d["edge_hidden"] = cfg.edge_hidden;
  d["dec_hidden"] = cfg.dec_hidden;
  d["output_activation"] =
      cfg.output_activation == OutputActivation::kSigmoid ? "sigmoid" : "identity";
  d["prior_p"] = cfg.prior_p;
  d["identity_adjacency"] = cfg.identity_adjacency;
  return d;
}

TrainConfig train_config_from_dict(const py::dict& d) {
  TrainConfig cfg;
  if (d.contains("epochs")) cfg.epochs = d["epochs"].cast<int>();
  if (d.contains("batch_size")) cfg.batch_size = d["batch_size"].cast<int>();
  if (d.contains("learning_rate")) cfg.learning_rate = d["learning_rate"].cast<double>();
  if (d.contains("tau_start")) cfg.tau_start = d["tau_start"].cast<double>();
  if (d.contains("tau_end")) cfg.tau_end = d["tau_end"].cast<double>();
  if (d.contains("tau_anneal_epochs")) cfg.tau_anneal_epochs = d["tau_anneal_epochs"].cast<int>();
  if (d.contains("beta_a")) cfg.beta_a = d["beta_a"].cast<double>();
  if (d.contains("seed")) cfg.seed = d["seed"].cast<uint64_t>();
  if (d.contains("recon_loss"))
    cfg.recon_loss = d["recon_loss"].cast<std::string>() == "bernoulli"
                         ? ReconLoss::kBernoulli
                         : ReconLoss::kSquaredError;
  if (d.contains("divergence_limit")) cfg.divergence_limit = d["divergence_limit"].cast<double>();
  if (d.contains("checkpoint_path")) cfg.checkpoint_path = d["checkpoint_path"].cast<std::string>();
  if (d.contains("verbose")) cfg.verbose = d["verbose"].cast<bool>();
  return cfg;
}

Tensor flatten_features(const Tensor& t) {
  if (t.ndim() == 2) return t;
  if (t.ndim() == 3)
    return Tensor({t.dim(0), t.dim(1) * t.dim(2)},
                  std::vector<double>(t.data(), t.data() + t.size()));
  throw std::invalid_argument("features must be [m,n*d] or [m,n,d]");
}

class PyModel {
 public:
  PyModel(const py::dict& cfg, uint64_t seed) {
    RngStream rng(seed);
    model_ = std::make_unique<SagVae>(model_config_from_dict(cfg), rng);
  }
  explicit PyModel(std::unique_ptr<SagVae> m) : model_(std::move(m)) {}

  py::list train_model(const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                       const py::dict& opts) {
    Tensor flat = flatten_features(tensor_from_numpy(x));
    TrainReport rep = train(*model_, flat, train_config_from_dict(opts));
    if (rep.aborted) throw std::runtime_error("training aborted: " + rep.abort_reason);
    py::list rows;
    for (const EpochStats& e : rep.epochs) {
      py::dict r;
      r["epoch"] = e.epoch;
      r["recon"] = e.recon;
      r["kl_z"] = e.kl_z;
      r["kl_a"] = e.kl_a;
      r["total"] = e.total;
      rows.append(r);
    }
    return rows;
  }

  py::array_t<double> edge_probs(
      const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
    return numpy_from_tensor(edge_probabilities(*model_, flatten_features(tensor_from_numpy(x))));
  }

  py::array_t<double> reconstruct(
      const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
    return numpy_from_tensor(reconstruct_mean(*model_, flatten_features(tensor_from_numpy(x))));
  }

  void save(const std::string& path) const { model_->save_checkpoint(path); }
  py::dict config() const { return model_config_to_dict(model_->config()); }
  int64_t parameter_count() const { return model_->params().total_size(); }

  static PyModel load(const std::string& path) {
    return PyModel(std::make_unique<SagVae>(SagVae::load_checkpoint(path)));
  }

 private:
  std::unique_ptr<SagVae> model_;
};

}  // namespace

PYBIND11_MODULE(_sagvae, m) {
  m.doc() = "SAG-VAE: joint inference of data representations and a latent feature graph";

  m.def(
      "normalize_adjacency",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
        Tape t;
        return numpy_from_tensor(t.val(normalize_adjacency(t, t.constant(tensor_from_numpy(a)))));
      },
      py::arg("adjacency"), "Symmetric degree normalization of A+I.");

  m.def(
      "masked_softmax",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& mask) {
        Tape t;
        return numpy_from_tensor(
            t.val(t.masked_softmax(t.constant(tensor_from_numpy(logits)),
                                   tensor_from_numpy(mask))));
      },
      py::arg("logits"), py::arg("mask"));

  m.def(
      "gumbel_softmax_sample",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& log_alpha,
         double tau, uint64_t seed) {
        RngStream rng(seed);
        return numpy_from_tensor(
            sample_gumbel_softmax_value(tensor_from_numpy(log_alpha), tau, rng).simplex);
      },
      py::arg("log_alpha"), py::arg("tau"), py::arg("seed") = 0);

  m.def(
      "kl_gaussian_std",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& mu,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& logvar) {
        return kl_gaussian_std_value(tensor_from_numpy(mu), tensor_from_numpy(logvar));
      },
      py::arg("mu"), py::arg("logvar"));

  m.def(
      "kl_edge",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& q, double p) {
        return kl_edge_value(tensor_from_numpy(q), {p, 1.0 - p});
      },
      py::arg("q_probs"), py::arg("prior_p"));

  m.def(
      "edge_prf",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probs,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& truth,
         double threshold) {
        EdgeMetrics em = edge_prf(tensor_from_numpy(probs), tensor_from_numpy(truth), threshold);
        py::dict d;
        d["precision"] = em.precision;
        d["recall"] = em.recall;
        d["f1"] = em.f1;
        d["tp"] = em.tp;
        d["fp"] = em.fp;
        d["fn"] = em.fn;
        d["threshold"] = em.threshold;
        return d;
      },
      py::arg("pred_probs"), py::arg("true_adj"), py::arg("threshold") = 0.5);

  m.def(
      "pairwise_product_baseline",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& features) {
        return numpy_from_tensor(pairwise_product_baseline(tensor_from_numpy(features)));
      },
      py::arg("features"), "sigmoid of node-feature dot products, averaged over samples");

  m.def(
      "gen_karate",
      [](const std::string& edges_csv, const std::string& labels_csv, int patterns, int samples,
         int dim, uint64_t seed) {
        KarateGenConfig cfg;
        cfg.edges_csv = edges_csv;
        cfg.labels_csv = labels_csv;
        cfg.n_patterns = patterns;
        cfg.samples_per_pattern = samples;
        cfg.feature_dim = dim;
        cfg.seed = seed;
        py::list out;
        for (const GraphDataset& ds : gen_karate_synthetic(cfg)) {
          py::dict d;
          d["features"] = numpy_from_tensor(ds.features);
          d["adjacency"] = numpy_from_tensor(ds.true_adjacency);
          d["labels"] = ds.node_labels;
          d["holdout"] = ds.holdout;
          out.append(d);
        }
        return out;
      },
      py::arg("edges_csv"), py::arg("labels_csv"), py::arg("patterns") = 5,
      py::arg("samples") = 32, py::arg("dim") = 8, py::arg("seed") = 0);

  m.def(
      "perturb_uniform",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img, int n_pixels,
         uint64_t seed) {
        RngStream rng(seed);
        return numpy_from_tensor(perturb_uniform(tensor_from_numpy(img), n_pixels, rng));
      },
      py::arg("image"), py::arg("n_pixels"), py::arg("seed") = 0);

  m.def(
      "load_idx",
      [](const std::string& images, const std::string& labels, const std::vector<int>& filter) {
        ImageDataset ds = load_idx_images(images, labels, filter);
        py::dict d;
        d["images"] = numpy_from_tensor(ds.images);
        d["labels"] = ds.labels;
        d["side"] = ds.side;
        return d;
      },
      py::arg("images_path"), py::arg("labels_path"),
      py::arg("class_filter") = std::vector<int>{});

  py::class_<PyModel>(m, "Model")
      .def(py::init<const py::dict&, uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def("train", &PyModel::train_model, py::arg("features"), py::arg("options") = py::dict())
      .def("edge_probabilities", &PyModel::edge_probs, py::arg("features"))
      .def("reconstruct", &PyModel::reconstruct, py::arg("features"))
      .def("save", &PyModel::save, py::arg("path"))
      .def_static("load", &PyModel::load, py::arg("path"))
      .def_property_readonly("config", &PyModel::config)
      .def_property_readonly("parameter_count", &PyModel::parameter_count);
}
