#pragma once

/// @file models.hpp
/// @brief The four latent-PDE autoencoder variants and the two baseline
/// autoencoders, assembled from layers.hpp and pde.hpp.

#include <bit>
#include <optional>

#include "diano/layers.hpp"
#include "diano/log.hpp"
#include "diano/pde.hpp"

namespace diano {

enum class Variant { static_ae, temporal, geometric, fusion, nn_ae, cnn_ae };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::static_ae: return "static";
    case Variant::temporal: return "temporal";
    case Variant::geometric: return "geometric";
    case Variant::fusion: return "fusion";
    case Variant::nn_ae: return "nn_ae";
    case Variant::cnn_ae: return "cnn_ae";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  for (auto v : {Variant::static_ae, Variant::temporal, Variant::geometric, Variant::fusion,
                 Variant::nn_ae, Variant::cnn_ae}) {
    if (s == variant_name(v)) return v;
  }
  throw Error("unknown model variant '" + s + "'");
}

/// Whether training pairs snapshot n with snapshot n + 1.
inline bool is_temporal(Variant v) { return v == Variant::temporal || v == Variant::geometric; }

struct ModelSpec {
  Variant variant = Variant::static_ae;
  std::size_t fourier_modes = 8;
  /// Per-axis spatial reduction between input and latent (power of two).
  std::size_t compression_ratio = 4;
  std::size_t width = 32;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Activation activation = Activation::gelu;
  /// Input spatial sizes. Required by nn_ae and geometric; checked by all.
  std::vector<std::size_t> grid;
  /// Bottleneck length of nn_ae.
  std::size_t latent_dim = 16;
  std::vector<std::size_t> nn_hidden{2048, 512, 128};
  std::vector<std::size_t> cnn_channels{64, 128, 256};
  /// Spatial axis averaged away by the geometric variant.
  std::size_t collapse_axis = 1;
  /// Fourier blocks on each side of the geometric latent.
  std::size_t geometric_blocks = 1;
  /// Fusion: run Point-Jacobi on the latent RHS (false: RHS only).
  bool ppe_laplacian = true;
  PdeConfig pde{};
  std::uint64_t seed = 0;

  std::size_t n_stages() const {
    return static_cast<std::size_t>(std::countr_zero(compression_ratio));
  }

  std::size_t spatial_dims() const {
    if (!grid.empty()) return grid.size();
    return variant == Variant::fusion ? 3 : 2;
  }

  /// Latent model implied by the collapse axis of the geometric variant.
  PdeModel geometric_pde_model() const {
    return collapse_axis == 1 ? PdeModel::vte_linear_1d_x : PdeModel::vte_linear_1d_y;
  }

  void validate() const {
    const bool symmetric = variant == Variant::static_ae || variant == Variant::temporal ||
                           variant == Variant::fusion;
    if (symmetric && !std::has_single_bit(compression_ratio)) {
      throw Error("ModelSpec: compression_ratio must be a power of two");
    }
    if (width == 0 || in_channels == 0 || out_channels == 0) {
      throw Error("ModelSpec: widths and channel counts must be positive");
    }
    if (fourier_modes == 0 && variant != Variant::nn_ae && variant != Variant::cnn_ae) {
      throw Error("ModelSpec: fourier_modes must be positive");
    }
    for (auto n : grid) {
      if (symmetric && n % compression_ratio != 0) {
        throw ShapeError("ModelSpec: grid size " + std::to_string(n) +
                         " is not divisible by the compression ratio");
      }
    }
    switch (variant) {
      case Variant::temporal:
        if (!is_vte(pde.model) || pde.model == PdeModel::vte_nonlinear) {
          throw Error("ModelSpec: temporal variant needs a linear vorticity-transport model");
        }
        if (pde.model != PdeModel::vte_linear_1d_x && pde.model != PdeModel::vte_linear_1d_y &&
            spatial_dims() != 2) {
          throw Error("ModelSpec: 2-d vorticity transport needs a 2-d grid");
        }
        break;
      case Variant::geometric:
        if (grid.size() != 2) throw Error("ModelSpec: geometric variant needs a 2-d grid");
        if (collapse_axis > 1) throw Error("ModelSpec: collapse_axis must be 0 or 1");
        if (pde.model != geometric_pde_model()) {
          throw Error(std::string("ModelSpec: collapsing axis ") + std::to_string(collapse_axis) +
                      " leaves a latent governed by " + pde_model_name(geometric_pde_model()) +
                      ", not " + pde_model_name(pde.model));
        }
        break;
      case Variant::fusion:
        if (pde.model != PdeModel::ppe_3d) throw Error("ModelSpec: fusion variant needs ppe_3d");
        if (spatial_dims() != 3) throw Error("ModelSpec: fusion variant needs a 3-d grid");
        break;
      case Variant::nn_ae:
        if (grid.empty()) throw Error("ModelSpec: nn_ae needs the input grid size");
        if (latent_dim != 8 && latent_dim != 16 && latent_dim != 32) {
          warn("nn_ae latent_dim " + std::to_string(latent_dim) +
               " is outside the studied set {8, 16, 32}");
        }
        break;
      case Variant::cnn_ae:
        if (cnn_channels.size() != 3) throw Error("ModelSpec: cnn_ae needs three channel widths");
        for (auto n : grid) {
          if (n % 8 != 0) throw ShapeError("ModelSpec: cnn_ae input must be divisible by 8");
        }
        break;
      case Variant::static_ae:
        break;
    }
    if (variant == Variant::temporal || variant == Variant::geometric || variant == Variant::fusion) {
      pde.validate();
    }
  }
};

template <Real T>
class Model {
 public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(spec_.seed);
    build(rng);
  }

  const ModelSpec& spec() const { return spec_; }
  /// Mutable PDE settings (time step, tolerances) for evaluation studies.
  PdeConfig& pde_config() { return spec_.pde; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  std::size_t parameter_count() const { return store_.count(); }

  /// Number of input fields per sample (3 for fusion, otherwise 1).
  std::size_t n_inputs() const { return spec_.variant == Variant::fusion ? 3 : 1; }

  /// Fluid mask on the input grid; required by the fusion variant.
  void set_mask(const GeometryMask<T>& mask) {
    mask_ = mask;
    latent_mask_ = downsample_mask(mask, spec_.compression_ratio);
  }
  bool has_mask() const { return mask_.has_value(); }

  /// Latent PDE coefficients, tape-attached when they are trainable.
  PdeParameters<T> pde_parameters(const ParamView<T>& p) const {
    auto par = PdeParameters<T>::from(spec_.pde);
    if (pde_nu_) {
      par.nu = p[*pde_nu_];
      par.V = p[*pde_V_];
      par.rho = p[*pde_rho_];
    }
    return par;
  }

  // -------------------------------------------------------------------------

  /// Maps one input field to its latent representation. Fusion encodes each
  /// velocity component with encoder `which`.
  GridField<T> encode(const GridField<T>& x, const ParamView<T>& p, std::size_t which = 0) const {
    check_input(x);
    switch (spec_.variant) {
      case Variant::nn_ae: {
        const std::size_t nb = x.batch();
        Tensor<T> h = reshape(x.values(), {nb, x.values().numel() / nb});
        for (std::size_t i = 0; i < nn_enc_.size(); ++i) {
          h = dense(h, p[nn_enc_[i].weight], &p[nn_enc_[i].bias]);
          if (i + 1 < nn_enc_.size()) h = relu(h);
        }
        return GridField<T>::unit(reshape(h, {nb, 1, spec_.latent_dim}));
      }
      case Variant::cnn_ae: {
        Tensor<T> h = x.values();
        for (const auto& l : cnn_enc_) h = silu(apply_conv(h, l, p));
        return x.regridded(h);
      }
      case Variant::geometric: {
        GridField<T> h = lift(x, enc_[0].lift, p);
        for (const auto& b : enc_[0].blocks) h = fourier_block(h, b, p);
        const std::size_t c = spec_.collapse_axis, keep = 1 - c;
        std::vector<std::size_t> f{1, 1};
        f[c] = x.size(c);
        h = downsample_avg(h, f);
        Tensor<T> z = apply_pointwise(h.values(), enc_[0].collapse, p);
        z = reshape(z, {x.batch(), 1, x.size(keep)});
        return GridField<T>(z, {x.extents()[keep]});
      }
      default: {
        const auto& e = enc_.at(which);
        GridField<T> h = lift(x, e.lift, p);
        for (const auto& b : e.blocks) h = downsample_avg(fourier_block(h, b, p), {2});
        return h.with_values(apply_pointwise(h.values(), e.collapse, p));
      }
    }
  }

  /// Maps a latent field back to the output grid with the given extents.
  GridField<T> decode(const GridField<T>& z, const ParamView<T>& p,
                      const std::vector<Extent>& extents) const {
    switch (spec_.variant) {
      case Variant::nn_ae: {
        const std::size_t nb = z.batch();
        Tensor<T> h = reshape(z.values(), {nb, spec_.latent_dim});
        for (std::size_t i = 0; i < nn_dec_.size(); ++i) {
          h = dense(h, p[nn_dec_[i].weight], &p[nn_dec_[i].bias]);
          if (i + 1 < nn_dec_.size()) h = relu(h);
        }
        Shape s{nb, spec_.out_channels};
        s.insert(s.end(), spec_.grid.begin(), spec_.grid.end());
        return GridField<T>(reshape(h, s), extents);
      }
      case Variant::cnn_ae: {
        Tensor<T> h = z.values();
        for (std::size_t i = 0; i < cnn_dec_.size(); ++i) {
          h = apply_conv(h, cnn_dec_[i], p);
          if (i + 1 < cnn_dec_.size()) h = silu(h);
        }
        return GridField<T>(h, extents);
      }
      case Variant::geometric: {
        const std::size_t c = spec_.collapse_axis;
        Shape s{z.batch(), 1, 1, 1};
        s[2 + (1 - c)] = z.size(0);
        GridField<T> h(reshape(z.values(), s), extents);
        h = h.with_values(apply_pointwise(h.values(), dec_.expand, p));
        h = upsample_tconv(h, dec_.ups[0], p);
        for (const auto& b : dec_.blocks) h = fourier_block(h, b, p);
        return project(h, dec_.project, p);
      }
      default: {
        GridField<T> h(z.values(), extents);
        h = h.with_values(apply_pointwise(h.values(), dec_.expand, p));
        for (std::size_t s = 0; s < dec_.blocks.size(); ++s) {
          h = upsample_tconv(fourier_block(h, dec_.blocks[s], p), dec_.ups[s], p);
        }
        return project(h, dec_.project, p);
      }
    }
  }

  /// One latent PDE advance (temporal and geometric variants).
  GridField<T> advance(const GridField<T>& z, const ParamView<T>& p) const {
    return advance_vte(z, spec_.pde, pde_parameters(p));
  }

  /// Latent pressure from the three velocity latents (fusion variant).
  GridField<T> latent_pressure(const GridField<T>& u, const GridField<T>& v, const GridField<T>& w,
                               const ParamView<T>& p) const {
    if (!latent_mask_) throw Error("fusion model: mask missing; call set_mask first");
    const auto par = pde_parameters(p);
    if (spec_.ppe_laplacian) return solve_ppe(u, v, w, *latent_mask_, spec_.pde, par).pressure;
    return ppe_rhs_only(u, v, w, *latent_mask_, spec_.pde, par);
  }

  /// Reconstruction of the same snapshot, ignoring any latent PDE.
  GridField<T> forward_static(const GridField<T>& x, const ParamView<T>& p) const {
    return decode(encode(x, p), p, x.extents());
  }

  /// The variant's full forward map.
  GridField<T> forward(const std::vector<GridField<T>>& inputs, const ParamView<T>& p) const {
    if (inputs.size() != n_inputs()) {
      throw ShapeError("model expects " + std::to_string(n_inputs()) + " input fields");
    }
    const auto& x = inputs[0];
    switch (spec_.variant) {
      case Variant::temporal:
      case Variant::geometric:
        return decode(advance(encode(x, p), p), p, x.extents());
      case Variant::fusion: {
        for (std::size_t i = 1; i < 3; ++i) {
          if (inputs[i].values().shape() != x.values().shape()) {
            throw ShapeError("fusion model: velocity components differ in shape");
          }
        }
        auto zp = latent_pressure(encode(inputs[0], p, 0), encode(inputs[1], p, 1),
                                  encode(inputs[2], p, 2), p);
        return decode(zp, p, x.extents());
      }
      default:
        return forward_static(x, p);
    }
  }

  GridField<T> forward(const std::vector<GridField<T>>& inputs) const {
    return forward(inputs, store_.values());
  }

 private:
  struct Encoder {
    PointwiseMlp lift;
    std::vector<FourierBlock> blocks;
    LinearLayer collapse;
  };
  struct Decoder {
    LinearLayer expand;
    std::vector<FourierBlock> blocks;
    std::vector<UpsampleLayer> ups;
    PointwiseMlp project;
  };

  void check_input(const GridField<T>& x) const {
    if (x.channels() != spec_.in_channels) {
      throw ShapeError("model expects " + std::to_string(spec_.in_channels) +
                       " input channels, got " + std::to_string(x.channels()));
    }
    if (x.spatial_dims() != spec_.spatial_dims()) {
      throw ShapeError("model expects a " + std::to_string(spec_.spatial_dims()) +
                       "-d field, got " + std::to_string(x.spatial_dims()) + "-d");
    }
    if (!spec_.grid.empty() && x.sizes() != spec_.grid &&
        (spec_.variant == Variant::nn_ae || spec_.variant == Variant::geometric)) {
      throw ShapeError("model was built for a different grid");
    }
    if (spec_.variant == Variant::static_ae || spec_.variant == Variant::temporal ||
        spec_.variant == Variant::fusion) {
      for (auto n : x.sizes()) {
        if (n % spec_.compression_ratio != 0) {
          throw ShapeError("input size " + std::to_string(n) +
                           " is not divisible by the compression ratio");
        }
      }
    }
  }

  void build(Rng& rng) {
    const auto& s = spec_;
    const std::size_t d = s.spatial_dims();
    const std::size_t w = s.width;
    switch (s.variant) {
      case Variant::nn_ae: {
        std::size_t in = s.in_channels, out = s.out_channels;
        for (auto n : s.grid) {
          in *= n;
          out *= n;
        }
        std::vector<std::size_t> widths{in};
        widths.insert(widths.end(), s.nn_hidden.begin(), s.nn_hidden.end());
        widths.push_back(s.latent_dim);
        for (std::size_t i = 0; i + 1 < widths.size(); ++i)
          nn_enc_.push_back(make_dense(store_, "enc." + std::to_string(i), widths[i], widths[i + 1], rng));
        std::vector<std::size_t> back(widths.rbegin(), widths.rend());
        back.back() = out;
        for (std::size_t i = 0; i + 1 < back.size(); ++i)
          nn_dec_.push_back(make_dense(store_, "dec." + std::to_string(i), back[i], back[i + 1], rng));
        break;
      }
      case Variant::cnn_ae: {
        const auto& c = s.cnn_channels;
        const ConvGeometry down{{2}, {1}, {}}, same{{1}, {1}, {}}, up{{2}, {1}, {1}};
        const std::vector<std::size_t> enc{s.in_channels, c[0], c[1], c[2], c[1], c[0], 1};
        for (std::size_t i = 0; i < 6; ++i)
          cnn_enc_.push_back(make_conv(store_, "enc." + std::to_string(i), enc[i], enc[i + 1], d, 3,
                                       i < 3 ? down : same, false, rng));
        const std::vector<std::size_t> dec{1, c[0], c[1], c[2], c[1], c[0], s.out_channels};
        for (std::size_t i = 0; i < 6; ++i)
          cnn_dec_.push_back(make_conv(store_, "dec." + std::to_string(i), dec[i], dec[i + 1], d, 3,
                                       i < 3 ? same : up, true, rng));
        break;
      }
      case Variant::geometric: {
        Encoder e;
        e.lift = make_lift(store_, "enc.lift", s.in_channels, w, s.activation, rng);
        for (std::size_t i = 0; i < s.geometric_blocks; ++i)
          e.blocks.push_back(make_fourier_block(store_, "enc.block" + std::to_string(i), w, d,
                                                s.fourier_modes, s.activation, rng));
        e.collapse = make_pointwise_linear(store_, "enc.collapse", w, 1, rng);
        enc_.push_back(std::move(e));
        dec_.expand = make_pointwise_linear(store_, "dec.expand", 1, w, rng);
        std::vector<std::size_t> f{1, 1};
        f[s.collapse_axis] = s.grid[s.collapse_axis];
        dec_.ups.push_back(make_upsample(store_, "dec.restore", w, w, f, rng, true));
        for (std::size_t i = 0; i < s.geometric_blocks; ++i)
          dec_.blocks.push_back(make_fourier_block(store_, "dec.block" + std::to_string(i), w, d,
                                                   s.fourier_modes, s.activation, rng));
        dec_.project = make_project(store_, "dec.project", w, s.out_channels, s.activation, rng);
        break;
      }
      default: {
        const std::size_t n_enc = s.variant == Variant::fusion ? 3 : 1;
        const std::size_t stages = s.n_stages();
        for (std::size_t k = 0; k < n_enc; ++k) {
          const std::string pre = n_enc == 1 ? "enc" : "enc" + std::to_string(k);
          Encoder e;
          e.lift = make_lift(store_, pre + ".lift", s.in_channels, w, s.activation, rng);
          for (std::size_t i = 0; i < stages; ++i)
            e.blocks.push_back(make_fourier_block(store_, pre + ".block" + std::to_string(i), w, d,
                                                  s.fourier_modes, s.activation, rng));
          e.collapse = make_pointwise_linear(store_, pre + ".collapse", w, 1, rng);
          enc_.push_back(std::move(e));
        }
        dec_.expand = make_pointwise_linear(store_, "dec.expand", 1, w, rng);
        for (std::size_t i = 0; i < stages; ++i) {
          dec_.blocks.push_back(make_fourier_block(store_, "dec.block" + std::to_string(i), w, d,
                                                   s.fourier_modes, s.activation, rng));
          dec_.ups.push_back(make_upsample(store_, "dec.up" + std::to_string(i), w, w,
                                           std::vector<std::size_t>(d, 2), rng));
        }
        dec_.project = make_project(store_, "dec.project", w, s.out_channels, s.activation, rng);
        break;
      }
    }
    const bool has_pde = s.variant == Variant::temporal || s.variant == Variant::geometric ||
                         s.variant == Variant::fusion;
    if (has_pde && s.pde.learnable) {
      pde_nu_ = store_.add("pde.nu", Tensor<T>::scalar(static_cast<T>(s.pde.nu)));
      pde_V_ = store_.add("pde.V", Tensor<T>::scalar(static_cast<T>(s.pde.V)));
      pde_rho_ = store_.add("pde.rho", Tensor<T>::scalar(static_cast<T>(s.pde.rho)));
    }
  }

  ModelSpec spec_;
  ParamStore<T> store_;
  std::vector<Encoder> enc_;
  Decoder dec_;
  std::vector<LinearLayer> nn_enc_, nn_dec_;
  std::vector<ConvLayer> cnn_enc_, cnn_dec_;
  std::optional<std::size_t> pde_nu_, pde_V_, pde_rho_;
  std::optional<GeometryMask<T>> mask_;
  std::optional<GeometryMask<T>> latent_mask_;
};

}  // namespace diano
