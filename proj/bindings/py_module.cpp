#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "spikedrive/dataset.hpp"
#include "spikedrive/energy.hpp"
#include "spikedrive/lif.hpp"
#include "spikedrive/metrics.hpp"
#include "spikedrive/perception.hpp"

namespace py = pybind11;
using namespace spikedrive;

namespace {

TensorD tensor_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int64_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  TensorD t(shape);
  std::memcpy(t.data(), a.data(), sizeof(double) * static_cast<size_t>(t.size()));
  return t;
}

py::array_t<double> array_from(const TensorD& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::memcpy(a.mutable_data(), t.data(), sizeof(double) * static_cast<size_t>(t.size()));
  return a;
}

Tensor<int32_t> int_tensor_from(
    const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int64_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  Tensor<int32_t> t(shape);
  std::memcpy(t.data(), a.data(), sizeof(int32_t) * static_cast<size_t>(t.size()));
  return t;
}

LifParams params_of(double beta, double u_th, double u_reset, double width) {
  LifParams p;
  p.beta = beta;
  p.u_th = u_th;
  p.u_reset = u_reset;
  p.surrogate_width = width;
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "spikedrive core operations";

  py::register_exception<ContractError>(m, "ContractError");
  py::register_exception<FlaggedError>(m, "FlaggedError");

  m.def(
      "lif_step",
      [](py::array_t<double> carry, py::array_t<double> x, double beta,
         double u_th, double u_reset) {
        auto step = lif_step(params_of(beta, u_th, u_reset, 1.0),
                             constant(tensor_from(carry)), constant(tensor_from(x)));
        return py::make_tuple(array_from(step.spikes->value),
                              array_from(step.carry->value));
      },
      py::arg("carry"), py::arg("x"), py::arg("beta") = 0.5,
      py::arg("u_th") = 1.0, py::arg("u_reset") = 0.0,
      "One LIF membrane update; returns (spikes, new_carry).");

  m.def(
      "lif_sequence",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> xs,
         double beta, double u_th, double u_reset) {
        if (xs.ndim() < 1) throw ContractError("lif_sequence: need a time axis");
        const py::ssize_t T = xs.shape(0);
        std::vector<int64_t> inner_shape(xs.ndim() - 1);
        int64_t inner = 1;
        for (py::ssize_t i = 1; i < xs.ndim(); ++i) {
          inner_shape[static_cast<size_t>(i - 1)] = xs.shape(i);
          inner *= xs.shape(i);
        }
        if (inner_shape.empty()) {
          inner_shape = {1};
        }
        std::vector<Value<double>> inputs;
        for (py::ssize_t t = 0; t < T; ++t) {
          TensorD step(inner_shape);
          std::memcpy(step.data(), xs.data() + t * inner,
                      sizeof(double) * static_cast<size_t>(inner));
          inputs.push_back(constant(std::move(step)));
        }
        auto seq = lif_sequence(params_of(beta, u_th, u_reset, 1.0), inputs);
        std::vector<py::ssize_t> out_shape(xs.shape(), xs.shape() + xs.ndim());
        if (xs.ndim() == 1) out_shape = {T, 1};
        py::array_t<double> out(out_shape);
        for (py::ssize_t t = 0; t < T; ++t)
          std::memcpy(out.mutable_data() + t * inner,
                      seq.steps[static_cast<size_t>(t)]->value.data(),
                      sizeof(double) * static_cast<size_t>(inner));
        return out;
      },
      py::arg("inputs"), py::arg("beta") = 0.5, py::arg("u_th") = 1.0,
      py::arg("u_reset") = 0.0,
      "Fold the LIF recurrence over the leading time axis.");

  m.def("surrogate_backward", &surrogate_backward<double>, py::arg("u_minus_th"),
        py::arg("width") = 1.0,
        "Triangular surrogate gradient max(0, 1 - |u|/w) / w.");

  m.def(
      "fuse_history",
      [](const std::vector<py::array_t<double>>& grids, double alpha) {
        std::vector<Value<double>> values;
        for (const auto& g : grids) values.push_back(constant(tensor_from(g)));
        // wrap flat arrays as [1,1,...] if needed: fusion only needs uniform shapes
        std::vector<py::array_t<double>> out;
        std::vector<Value<double>> fused;
        {
          // fuse on [1,1,H,W]-style tensors; accept any shape by flattening
          std::vector<Value<double>> wrapped;
          for (const auto& v : values) {
            TensorD t({1, 1, 1, v->value.size()});
            std::memcpy(t.data(), v->value.data(),
                        sizeof(double) * static_cast<size_t>(v->value.size()));
            wrapped.push_back(constant(std::move(t)));
          }
          fused = fuse_bev_history(wrapped, alpha);
        }
        for (size_t i = 0; i < fused.size(); ++i) {
          TensorD t(values[i]->value.shape());
          std::memcpy(t.data(), fused[i]->value.data(),
                      sizeof(double) * static_cast<size_t>(t.size()));
          out.push_back(array_from(t));
        }
        return out;
      },
      py::arg("grids"), py::arg("alpha") = 0.5,
      "Discounted BEV history fusion x~_t = b_t + sum_i alpha^i x~_{t-i}.");

  m.def(
      "bicycle_step",
      [](double x, double y, double heading, double speed, double accel,
         double steer, double dt, double wheelbase) {
        EgoState s{x, y, heading, speed};
        EgoState n = bicycle_step(s, {accel, steer}, dt, wheelbase);
        return py::make_tuple(n.x, n.y, n.heading, n.speed);
      },
      py::arg("x"), py::arg("y"), py::arg("heading"), py::arg("speed"),
      py::arg("accel"), py::arg("steer"), py::arg("dt") = 0.5,
      py::arg("wheelbase") = 2.7);

  m.def(
      "sample_trajectories",
      [](double x, double y, double heading, double speed) {
        PlannerParams params;
        auto trajs = sample_trajectories(EgoState{x, y, heading, speed}, params);
        const py::ssize_t n = static_cast<py::ssize_t>(trajs.size());
        const py::ssize_t k = static_cast<py::ssize_t>(trajs[0].poses.size());
        py::array_t<double> out({n, k, static_cast<py::ssize_t>(4)});
        auto buf = out.mutable_unchecked<3>();
        for (py::ssize_t i = 0; i < n; ++i)
          for (py::ssize_t j = 0; j < k; ++j) {
            const auto& p = trajs[static_cast<size_t>(i)].poses[static_cast<size_t>(j)];
            buf(i, j, 0) = p.x;
            buf(i, j, 1) = p.y;
            buf(i, j, 2) = p.heading;
            buf(i, j, 3) = p.speed;
          }
        return out;
      },
      py::arg("x") = 0.0, py::arg("y") = 0.0, py::arg("heading") = 0.0,
      py::arg("speed") = 4.0,
      "Deterministic (steer x speed) trajectory grid; [n, steps+1, 4] poses.");

  m.def(
      "segmentation_iou",
      [](py::array_t<double> a, py::array_t<double> b) {
        return segmentation_iou(tensor_from(a).cast<float>(),
                                tensor_from(b).cast<float>());
      },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "panoptic_metrics",
      [](py::array_t<int32_t> pred, py::array_t<int32_t> gt) {
        auto rep = panoptic_metrics(int_tensor_from(pred), int_tensor_from(gt));
        py::dict d;
        d["pq"] = rep.pq;
        d["sq"] = rep.sq;
        d["rq"] = rep.rq;
        d["iou"] = rep.iou;
        d["empty_scene"] = rep.empty_scene;
        return d;
      },
      py::arg("pred_ids"), py::arg("gt_ids"));

  m.def(
      "layer_sops",
      [](double flops, double fr, int64_t timesteps) {
        return layer_sops(LayerProfile{"layer", "conv", false, flops, fr, timesteps});
      },
      py::arg("flops"), py::arg("fr"), py::arg("T"));

  m.def(
      "estimate_energy",
      [](const std::vector<py::dict>& profiles, const std::string& kind) {
        std::vector<LayerProfile> ps;
        for (const auto& d : profiles) {
          LayerProfile p;
          p.id = d["id"].cast<std::string>();
          p.kind = d["kind"].cast<std::string>();
          p.is_first = d["is_first"].cast<bool>();
          p.flops = d["flops"].cast<double>();
          p.fr = d["fr"].cast<double>();
          p.timesteps = d["T"].cast<int64_t>();
          ps.push_back(std::move(p));
        }
        EnergyModel model;
        auto rep = estimate_energy(
            ps, model, kind == "ann" ? EnergyKind::Ann : EnergyKind::Snn);
        py::dict out;
        out["total_pj"] = rep.total_pj;
        out["total_mj"] = rep.total_mj;
        py::list layers;
        for (const auto& row : rep.layers) {
          py::dict r;
          r["id"] = row.id;
          r["pj"] = row.pj;
          layers.append(r);
        }
        out["layers"] = layers;
        return out;
      },
      py::arg("profiles"), py::arg("kind") = "snn");

  m.def("energy_ratio", &energy_ratio, py::arg("e_a"), py::arg("e_b"));

  m.def(
      "measure_firing_rate",
      [](py::array_t<double> spikes) {
        return measure_firing_rate(tensor_from(spikes));
      },
      py::arg("spikes"));

  m.def(
      "generate_dataset",
      [](const std::string& dir, uint64_t seed, int64_t scenes,
         std::pair<int64_t, int64_t> image, int64_t bev_cells,
         double bev_resolution, int64_t n_cameras, int64_t n_vehicles,
         int64_t n_pedestrians) {
        ScenarioConfig cfg;
        cfg.image_h = image.first;
        cfg.image_w = image.second;
        cfg.bev.cells = bev_cells;
        cfg.bev.resolution = bev_resolution;
        cfg.n_cameras = n_cameras;
        cfg.n_vehicles = n_vehicles;
        cfg.n_pedestrians = n_pedestrians;
        generate_dataset(cfg, seed, scenes, dir);
      },
      py::arg("dir"), py::arg("seed") = 42, py::arg("scenes") = 4,
      py::arg("image") = std::make_pair(int64_t(16), int64_t(24)),
      py::arg("bev_cells") = 16, py::arg("bev_resolution") = 0.75,
      py::arg("n_cameras") = 4, py::arg("n_vehicles") = 2,
      py::arg("n_pedestrians") = 1,
      "Write a synthetic scenario dataset (manifest + raw f32 blobs).");
}
