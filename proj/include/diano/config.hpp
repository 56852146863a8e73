#pragma once

/// @file config.hpp
/// @brief JSON run configuration: model, latent PDE and training settings.

#include <fstream>
#include <set>

#include <json.hpp>

#include "diano/training.hpp"

namespace diano {

using Json = nlohmann::json;

inline const char* dtype_name(DType d) { return d == DType::float32 ? "float32" : "float64"; }

inline DType dtype_from_name(const std::string& s) {
  if (s == "float32") return DType::float32;
  if (s == "float64") return DType::float64;
  throw Error("unknown dtype '" + s + "' (float32|float64)");
}

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
    case Activation::gelu: return "gelu";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& s) {
  for (auto a : {Activation::identity, Activation::relu, Activation::silu, Activation::gelu})
    if (s == activation_name(a)) return a;
  throw Error("unknown activation '" + s + "'");
}

struct RunConfig {
  ModelSpec model;
  TrainConfig train;
  DType dtype = DType::float32;
};

namespace detail {

/// Rejects keys outside `allowed` so typos in run files surface early.
inline void check_keys(const Json& j, const std::set<std::string>& allowed, const char* where) {
  if (!j.is_object()) throw Error(std::string(where) + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw Error(std::string(where) + ": unknown key '" + k + "'");
  }
}

template <class V>
void read_opt(const Json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace detail

inline Json to_json(const PdeConfig& c) {
  return Json{{"model", pde_model_name(c.model)},
              {"nu", c.nu},
              {"V", c.V},
              {"rho", c.rho},
              {"dt", c.dt},
              {"n_steps", c.n_steps},
              {"jacobi_tol", c.jacobi_tol},
              {"jacobi_max_iter", c.jacobi_max_iter},
              {"scheme", scheme_name(c.scheme)},
              {"compact_alpha", c.compact.alpha},
              {"compact_a", c.compact.a},
              {"ppe_bias", c.ppe_bias},
              {"instability_factor", c.instability_factor},
              {"learnable", c.learnable}};
}

inline PdeConfig pde_config_from_json(const Json& j) {
  detail::check_keys(j,
                     {"model", "nu", "V", "rho", "dt", "n_steps", "jacobi_tol", "jacobi_max_iter",
                      "scheme", "compact_alpha", "compact_a", "ppe_bias", "instability_factor",
                      "learnable"},
                     "pde");
  PdeConfig c;
  if (j.contains("model")) c.model = pde_model_from_name(j.at("model").get<std::string>());
  if (j.contains("scheme")) c.scheme = scheme_from_name(j.at("scheme").get<std::string>());
  detail::read_opt(j, "nu", c.nu);
  detail::read_opt(j, "V", c.V);
  detail::read_opt(j, "rho", c.rho);
  detail::read_opt(j, "dt", c.dt);
  detail::read_opt(j, "n_steps", c.n_steps);
  detail::read_opt(j, "jacobi_tol", c.jacobi_tol);
  detail::read_opt(j, "jacobi_max_iter", c.jacobi_max_iter);
  detail::read_opt(j, "compact_alpha", c.compact.alpha);
  detail::read_opt(j, "compact_a", c.compact.a);
  detail::read_opt(j, "ppe_bias", c.ppe_bias);
  detail::read_opt(j, "instability_factor", c.instability_factor);
  detail::read_opt(j, "learnable", c.learnable);
  return c;
}

inline Json to_json(const ModelSpec& s) {
  return Json{{"variant", variant_name(s.variant)},
              {"fourier_modes", s.fourier_modes},
              {"compression_ratio", s.compression_ratio},
              {"width", s.width},
              {"in_channels", s.in_channels},
              {"out_channels", s.out_channels},
              {"activation", activation_name(s.activation)},
              {"grid", s.grid},
              {"latent_dim", s.latent_dim},
              {"nn_hidden", s.nn_hidden},
              {"cnn_channels", s.cnn_channels},
              {"collapse_axis", s.collapse_axis},
              {"geometric_blocks", s.geometric_blocks},
              {"ppe_laplacian", s.ppe_laplacian},
              {"pde", to_json(s.pde)},
              {"seed", s.seed}};
}

inline ModelSpec model_spec_from_json(const Json& j) {
  detail::check_keys(j,
                     {"variant", "fourier_modes", "compression_ratio", "width", "in_channels",
                      "out_channels", "activation", "grid", "latent_dim", "nn_hidden",
                      "cnn_channels", "collapse_axis", "geometric_blocks", "ppe_laplacian", "pde",
                      "seed"},
                     "model");
  ModelSpec s;
  if (j.contains("variant")) s.variant = variant_from_name(j.at("variant").get<std::string>());
  if (j.contains("activation")) s.activation = activation_from_name(j.at("activation").get<std::string>());
  if (j.contains("pde")) s.pde = pde_config_from_json(j.at("pde"));
  detail::read_opt(j, "fourier_modes", s.fourier_modes);
  detail::read_opt(j, "compression_ratio", s.compression_ratio);
  detail::read_opt(j, "width", s.width);
  detail::read_opt(j, "in_channels", s.in_channels);
  detail::read_opt(j, "out_channels", s.out_channels);
  detail::read_opt(j, "grid", s.grid);
  detail::read_opt(j, "latent_dim", s.latent_dim);
  detail::read_opt(j, "nn_hidden", s.nn_hidden);
  detail::read_opt(j, "cnn_channels", s.cnn_channels);
  detail::read_opt(j, "collapse_axis", s.collapse_axis);
  detail::read_opt(j, "geometric_blocks", s.geometric_blocks);
  detail::read_opt(j, "ppe_laplacian", s.ppe_laplacian);
  detail::read_opt(j, "seed", s.seed);
  return s;
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"epochs", c.epochs},         {"batch_size", c.batch_size},
              {"lr0", c.lr0},               {"step_epoch", c.step_epoch},
              {"decay_rate", c.decay_rate}, {"seed", c.seed},
              {"clip_norm", c.clip_norm},   {"test_every", c.test_every}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  detail::check_keys(j,
                     {"epochs", "batch_size", "lr0", "step_epoch", "decay_rate", "seed",
                      "clip_norm", "test_every"},
                     "train");
  TrainConfig c;
  detail::read_opt(j, "epochs", c.epochs);
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "lr0", c.lr0);
  detail::read_opt(j, "step_epoch", c.step_epoch);
  detail::read_opt(j, "decay_rate", c.decay_rate);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "clip_norm", c.clip_norm);
  detail::read_opt(j, "test_every", c.test_every);
  return c;
}

inline Json to_json(const RunConfig& r) {
  return Json{{"model", to_json(r.model)},
              {"train", to_json(r.train)},
              {"dtype", dtype_name(r.dtype)}};
}

inline RunConfig run_config_from_json(const Json& j) {
  detail::check_keys(j, {"model", "train", "dtype"}, "run config");
  RunConfig r;
  if (j.contains("model")) r.model = model_spec_from_json(j.at("model"));
  if (j.contains("train")) r.train = train_config_from_json(j.at("train"));
  if (j.contains("dtype")) r.dtype = dtype_from_name(j.at("dtype").get<std::string>());
  r.train.validate();
  return r;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw Error("write to '" + path + "' failed");
}

inline RunConfig load_run_config(const std::string& path) {
  try {
    return run_config_from_json(read_json_file(path));
  } catch (const Json::exception& e) {
    throw Error("run config '" + path + "': " + e.what());
  }
}

}  // namespace diano
