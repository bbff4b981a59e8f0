// Python module exposing the main operations: noise schedules and the forward
// process, timestep resampling, the procedural dataset and its condition
// extractors, denoiser/adapter construction + training + checkpoints, and the
// structure-guided reverse sampler. Arrays cross the boundary as float32
// numpy, images as (C, H, W), batches as (B, C, H, W).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "lcdg/harness.hpp"
#include "lcdg/model_io.hpp"

namespace py = pybind11;
using namespace lcdg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> tensor_from_array(const FloatArray& a) {
  Shape shape(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[size_t(i)] = int(a.shape(i));
  std::vector<float> values(a.data(), a.data() + a.size());
  return Tensor<float>(shape, std::move(values));
}

py::array_t<float> array_from_tensor(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

Image image_from_array(const FloatArray& a) {
  if (a.ndim() != 3) throw ValueError("image arrays must be (channels, height, width)");
  Image img;
  img.channels = int(a.shape(0));
  img.height = int(a.shape(1));
  img.width = int(a.shape(2));
  img.data.assign(a.data(), a.data() + a.size());
  return img;
}

py::array_t<float> array_from_image(const Image& img) {
  py::array_t<float> out({py::ssize_t(img.channels), py::ssize_t(img.height),
                          py::ssize_t(img.width)});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

py::array_t<double> array_from_doubles(const std::vector<double>& v) {
  py::array_t<double> out(std::vector<py::ssize_t>{py::ssize_t(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

AlphaMode alpha_mode_from_name(const std::string& name) {
  if (name == "verbatim") return AlphaMode::verbatim;
  if (name == "norm_ratio") return AlphaMode::norm_ratio;
  if (name == "fixed") return AlphaMode::fixed;
  throw ValueError("unknown alpha mode: " + name);
}

// Thin owners so python holds models by reference semantics.
struct PyDenoiser {
  std::unique_ptr<DenoiserModel<float>> model;
};

struct PyAdapter {
  std::unique_ptr<ConditionAdapter<float>> model;
  CondKind kind = CondKind::edge;
};

py::dict report_dict(const TrainReport& r) {
  py::dict d;
  d["initial_loss"] = r.initial_loss;
  d["final_loss"] = r.final_loss;
  d["steps"] = r.steps_done;
  py::list curve;
  for (const auto& [step, loss] : r.loss_curve) curve.append(py::make_tuple(step, loss));
  d["loss_curve"] = curve;
  return d;
}

TrainOpts opts_from_args(int batch_size, double lr, uint64_t seed, double p_uncond) {
  TrainOpts o;
  o.batch_size = batch_size;
  o.lr = lr;
  o.seed = seed;
  o.p_uncond = p_uncond;
  return o;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "structure-guided diffusion core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  py::class_<NoiseSchedule>(m, "Schedule", "Linear-beta noise schedule")
      .def(py::init([](int T, double beta_start, double beta_end) {
             return make_schedule(T, beta_start, beta_end);
           }),
           py::arg("T") = 1000, py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02)
      .def_readonly("T", &NoiseSchedule::T)
      .def_property_readonly(
          "betas", [](const NoiseSchedule& s) { return array_from_doubles(s.betas); })
      .def_property_readonly(
          "alphas", [](const NoiseSchedule& s) { return array_from_doubles(s.alphas); })
      .def_property_readonly(
          "alpha_bars", [](const NoiseSchedule& s) { return array_from_doubles(s.alpha_bars); })
      .def_property_readonly("posterior_vars", [](const NoiseSchedule& s) {
        return array_from_doubles(s.posterior_vars);
      });

  m.def("resample_timestep", &resample_timestep, py::arg("t"), py::arg("T"), py::arg("n"),
        "Deterministic high-noise-biased timestep map");


  m.def(
      "q_sample",
      [](const NoiseSchedule& sched, const FloatArray& x0, const std::vector<int>& t,
         uint64_t seed) {
        Tensor<float> z0 = tensor_from_array(x0);
        if (z0.shape().size() != 4) throw ValueError("x0 must be (batch, C, H, W)");
        if (int(t.size()) != z0.shape()[0]) throw ValueError("len(t) must equal the batch size");
        RngStream rng(seed);
        Tensor<float> eps = Tensor<float>::randn(z0.shape(), rng);
        Tensor<float> zt = q_sample(z0, t, eps, sched);
        return py::make_tuple(array_from_tensor(zt), array_from_tensor(eps));
      },
      py::arg("schedule"), py::arg("x0"), py::arg("t"), py::arg("seed") = 0,
      "Forward-diffuse x0 to the given timesteps; returns (z_t, eps)");

  py::class_<ProceduralDataset>(m, "Dataset", "Procedural shape scenes with exact geometry")
      .def(py::init([](int n, int image_size, int channels, uint64_t seed, double val_frac) {
             DatasetConfig c;
             c.n = n;
             c.image_size = image_size;
             c.channels = channels;
             c.seed = seed;
             c.val_frac = val_frac;
             return gen_dataset(c);
           }),
           py::arg("n") = 512, py::arg("image_size") = 32, py::arg("channels") = 1,
           py::arg("seed") = 0, py::arg("val_frac") = 0.25)
      .def("__len__", [](const ProceduralDataset& d) { return d.items.size(); })
      .def("image",
           [](const ProceduralDataset& d, size_t i) {
             return array_from_image(d.items.at(i).image);
           })
      .def("label", [](const ProceduralDataset& d, size_t i) { return d.items.at(i).label; })
      .def("shape_class",
           [](const ProceduralDataset& d, size_t i) { return d.items.at(i).shape_class; })
      .def("val_indices", &ProceduralDataset::val_indices)
      .def_property_readonly("num_classes", &ProceduralDataset::num_classes);

  m.def(
      "condition",
      [](const ProceduralDataset& data, size_t index, const std::string& kind) {
        ConditionMap c = eval_condition(data.items.at(index), cond_kind_from_name(kind));
        return array_from_image(c.map);
      },
      py::arg("dataset"), py::arg("index"), py::arg("kind"),
      "Deterministic inference-style condition map in [0, 1]");

  py::class_<PyDenoiser>(m, "Denoiser", "Tapped U-Net noise predictor")
      .def(py::init([](int image_size, int channels, int base_channels, int num_classes,
                       int pe_dim, int emb_dim, uint64_t seed) {
             DenoiserConfig c;
             c.image_size = image_size;
             c.in_channels = channels;
             c.base_channels = base_channels;
             c.num_classes = num_classes;
             c.pe_dim = pe_dim;
             c.emb_dim = emb_dim;
             return PyDenoiser{std::make_unique<DenoiserModel<float>>(c, seed)};
           }),
           py::arg("image_size") = 32, py::arg("channels") = 1, py::arg("base_channels") = 32,
           py::arg("num_classes") = 4, py::arg("pe_dim") = 64, py::arg("emb_dim") = 128,
           py::arg("seed") = 0)
      .def_property_readonly("param_count",
                             [](PyDenoiser& d) { return d.model->param_count(); })
      .def_property_readonly("arch_hash", [](PyDenoiser& d) { return d.model->arch_hash(); })
      .def_property_readonly("null_class",
                             [](const PyDenoiser& d) { return d.model->null_class(); })
      .def("describe", [](PyDenoiser& d) { return d.model->describe(); })
      .def(
          "eps",
          [](PyDenoiser& d, const FloatArray& z, const std::vector<int>& t,
             const std::vector<int>& cls) {
            return array_from_tensor(d.model->eps(tensor_from_array(z), t, cls));
          },
          py::arg("z"), py::arg("t"), py::arg("cls"), "Predict noise for a (B, C, H, W) batch")
      .def("save",
           [](PyDenoiser& d, const std::string& path) {
             save_checkpoint(checkpoint_from_denoiser(*d.model), path);
           })
      .def_static("load", [](const std::string& path) {
        Checkpoint ck = load_checkpoint(path);
        return PyDenoiser{std::make_unique<DenoiserModel<float>>(denoiser_from_checkpoint(ck))};
      });

  py::class_<PyAdapter>(m, "Adapter", "Condition head over frozen denoiser taps")
      .def(py::init([](const PyDenoiser& den, const std::string& kind,
                       const std::string& size_class, uint64_t seed) {
             CondKind k = cond_kind_from_name(kind);
             const DenoiserConfig& dc = den.model->config();
             AdapterConfig c;
             c.in_channels = 0;
             for (const TapInfo& tap : den.model->tap_spec()) c.in_channels += tap.channels;
             c.cond_channels = cond_channels(k);
             c.height = dc.image_size;
             c.width = dc.image_size;
             c.size_class = size_class;
             c.pe_dim = dc.pe_dim;
             c.emb_dim = dc.emb_dim;
             return PyAdapter{std::make_unique<ConditionAdapter<float>>(c, seed), k};
           }),
           py::arg("denoiser"), py::arg("kind"), py::arg("size_class") = "default",
           py::arg("seed") = 0)
      .def_property_readonly("kind",
                             [](const PyAdapter& a) { return cond_kind_name(a.kind); })
      .def_property_readonly("param_count",
                             [](PyAdapter& a) { return a.model->param_count(); })
      .def_property_readonly("arch_hash", [](PyAdapter& a) { return a.model->arch_hash(); })
      .def("describe", [](PyAdapter& a) { return a.model->describe(); })
      .def("save",
           [](PyAdapter& a, const std::string& path) {
             save_checkpoint(checkpoint_from_adapter(*a.model, cond_kind_name(a.kind)), path);
           })
      .def_static("load", [](const std::string& path) {
        Checkpoint ck = load_checkpoint(path);
        return PyAdapter{
            std::make_unique<ConditionAdapter<float>>(adapter_from_checkpoint(ck)),
            cond_kind_from_name(adapter_domain(ck))};
      });

  m.def(
      "train_denoiser",
      [](PyDenoiser& den, const ProceduralDataset& data, const NoiseSchedule& sched, int steps,
         int batch_size, double lr, uint64_t seed, double p_uncond) {
        DenoiserTrainer trainer(*den.model, data, sched,
                                opts_from_args(batch_size, lr, seed, p_uncond));
        return report_dict(trainer.run(steps));
      },
      py::arg("denoiser"), py::arg("dataset"), py::arg("schedule"), py::arg("steps"),
      py::arg("batch_size") = 16, py::arg("lr") = 1e-4, py::arg("seed") = 0,
      py::arg("p_uncond") = 0.1, "Noise-prediction training; returns the loss report");

  m.def(
      "train_adapter",
      [](PyAdapter& ada, PyDenoiser& den, const ProceduralDataset& data,
         const NoiseSchedule& sched, int steps, int batch_size, double lr, uint64_t seed,
         double resample_n) {
        TimestepSampler ts;
        ts.mode = resample_n > 0 ? TimestepSampler::Mode::resampled
                                 : TimestepSampler::Mode::uniform;
        ts.n = resample_n > 0 ? resample_n : 2.0;
        ts.T = sched.T;
        AdapterTrainer trainer(*ada.model, *den.model, data, ada.kind, sched, ts,
                               opts_from_args(batch_size, lr, seed, 0.1));
        return report_dict(trainer.run(steps));
      },
      py::arg("adapter"), py::arg("denoiser"), py::arg("dataset"), py::arg("schedule"),
      py::arg("steps"), py::arg("batch_size") = 16, py::arg("lr") = 1e-4, py::arg("seed") = 0,
      py::arg("resample_n") = 2.0,
      "Condition-reconstruction training against the frozen denoiser; resample_n <= 0 draws "
      "timesteps uniformly");

  m.def(
      "sample_guided",
      [](PyDenoiser& den, PyAdapter& ada, const NoiseSchedule& sched, const FloatArray& condition,
         int count, int cls, double beta, int t_trunc, double omega, const std::string& sampler,
         int ddim_steps, double ddim_eta, bool ssc, const std::string& alpha_mode,
         double fixed_alpha, uint64_t seed) {
        GuidanceConfig g;
        g.beta = beta;
        g.t_trunc = t_trunc > 0 ? t_trunc : sched.T / 2;
        g.omega = omega;
        if (sampler == "ddpm")
          g.kind = SamplerKind::ddpm;
        else if (sampler == "ddim")
          g.kind = SamplerKind::ddim;
        else
          throw ValueError("unknown sampler: " + sampler);
        g.ddim_steps = ddim_steps;
        g.ddim_eta = ddim_eta;
        g.ssc = ssc;
        g.alpha_mode = alpha_mode_from_name(alpha_mode);
        g.fixed_alpha = fixed_alpha;
        g.seed = seed;
        validate_guidance(g, sched.T);

        const DenoiserConfig& dc = den.model->config();
        SampleRequest req;
        req.batch = count;
        req.channels = dc.in_channels;
        req.height = dc.image_size;
        req.width = dc.image_size;
        req.cls.assign(size_t(count), cls);
        Image cond = image_from_array(condition);
        req.c_ext = images_to_tensor<float>(std::vector<Image>(size_t(count), cond));

        AdapterGuidedModel model(*den.model, *ada.model);
        SampleResult res = sample_guided(model, sched, g, req);

        py::list trace;
        for (const StepTrace& tr : res.trace) {
          py::dict d;
          d["level"] = tr.level;
          d["t_index"] = tr.t_index;
          d["guided"] = tr.guided;
          d["distance"] = tr.distance;
          d["alpha"] = tr.alpha;
          d["grad_norm"] = tr.grad_norm;
          trace.append(d);
        }
        return py::make_tuple(array_from_tensor(res.z0), trace);
      },
      py::arg("denoiser"), py::arg("adapter"), py::arg("schedule"), py::arg("condition"),
      py::arg("count") = 1, py::arg("cls") = 0, py::arg("beta") = 2.0, py::arg("t_trunc") = 0,
      py::arg("omega") = 6.0, py::arg("sampler") = "ddpm", py::arg("ddim_steps") = 50,
      py::arg("ddim_eta") = 0.0, py::arg("ssc") = false, py::arg("alpha_mode") = "verbatim",
      py::arg("fixed_alpha") = 1.0, py::arg("seed") = 0,
      "Reverse-sample `count` chains toward the (C, H, W) condition map in [0, 1]; "
      "returns (samples, per-step trace). t_trunc <= 0 means T/2.");

  m.def(
      "fidelity",
      [](const FloatArray& samples, const FloatArray& condition, const std::string& kind) {
        Tensor<float> batch = tensor_from_array(samples);
        if (batch.shape().size() != 4) throw ValueError("samples must be (batch, C, H, W)");
        std::vector<Image> imgs;
        for (int b = 0; b < batch.shape()[0]; ++b) imgs.push_back(tensor_to_image(batch, b));
        ConditionMap target;
        target.kind = cond_kind_from_name(kind);
        target.map = image_from_array(condition);
        return fidelity_metric(imgs, target);
      },
      py::arg("samples"), py::arg("condition"), py::arg("kind"),
      "Mean squared distance between re-extracted and target conditions (lower is better)");
}
