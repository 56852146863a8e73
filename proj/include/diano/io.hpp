#pragma once

/// @file io.hpp
/// @brief Snapshot files, sidecars, dataset manifests, checkpoints,
/// normalization, resampling and CSV/PGM export.
///
/// Snapshot layout (little-endian):
///   "DIAF" | u16 version | u8 dtype (1 float32, 2 float64) | u8 n_axes |
///   u64 size[n_axes] | f64 (min, max)[n_axes] | row-major payload

#include <bit>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <map>

#include "diano/config.hpp"

namespace diano {

namespace fs = std::filesystem;

class FormatError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class U>
void put_le(std::ostream& out, U v) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                  std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                     std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
  const auto b = std::bit_cast<Bits>(v);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((b >> (8 * i)) & 0xFF);
  out.write(buf, sizeof(U));
}

template <class U>
U get_le(std::istream& in, const std::string& path) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                  std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                     std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw FormatError("'" + path + "': truncated file");
  }
  Bits b = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) b |= static_cast<Bits>(buf[i]) << (8 * i);
  return std::bit_cast<U>(b);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return in;
}

template <Real T>
void put_values(std::ostream& out, std::span<const T> v) {
  for (T x : v) put_le(out, x);
}

/// Reads `n` values stored with `dtype`, converting to T.
template <Real T>
std::vector<T> get_values(std::istream& in, DType dtype, std::size_t n, const std::string& path) {
  std::vector<T> v(n);
  for (auto& x : v) {
    x = dtype == DType::float32 ? static_cast<T>(get_le<float>(in, path))
                                : static_cast<T>(get_le<double>(in, path));
  }
  return v;
}

inline DType dtype_from_code(std::uint8_t code, const std::string& path) {
  if (code == 1) return DType::float32;
  if (code == 2) return DType::float64;
  throw FormatError("'" + path + "': unknown dtype code " + std::to_string(code));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Snapshot files

inline constexpr std::uint16_t kSnapshotVersion = 1;

struct SnapshotHeader {
  DType dtype = DType::float32;
  Shape sizes;
  std::vector<Extent> extents;
};

/// Writes a single-sample, single-channel field.
template <Real T>
void save_snapshot(const std::string& path, const GridField<T>& f) {
  if (f.batch() != 1 || f.channels() != 1) {
    throw ShapeError("save_snapshot: expects one sample with one channel");
  }
  auto out = detail::open_out(path);
  out.write("DIAF", 4);
  detail::put_le(out, kSnapshotVersion);
  detail::put_le(out, static_cast<std::uint8_t>(dtype_of<T>()));
  detail::put_le(out, static_cast<std::uint8_t>(f.spatial_dims()));
  for (auto n : f.sizes()) detail::put_le(out, static_cast<std::uint64_t>(n));
  for (const auto& e : f.extents()) {
    detail::put_le(out, e.min);
    detail::put_le(out, e.max);
  }
  detail::put_values<T>(out, f.values().values());
  if (!out) throw Error("write to '" + path + "' failed");
}

namespace detail {

inline SnapshotHeader read_header(std::istream& in, const std::string& path) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("'" + path + "': truncated file");
  if (std::memcmp(magic, "DIAF", 4) != 0) throw FormatError("'" + path + "': not a snapshot file (bad magic)");
  const auto version = get_le<std::uint16_t>(in, path);
  if (version != kSnapshotVersion) {
    throw FormatError("'" + path + "': unsupported snapshot version " + std::to_string(version));
  }
  SnapshotHeader h;
  h.dtype = dtype_from_code(get_le<std::uint8_t>(in, path), path);
  const auto n_axes = get_le<std::uint8_t>(in, path);
  if (n_axes < 1 || n_axes > 3) throw FormatError("'" + path + "': bad axis count");
  for (std::size_t a = 0; a < n_axes; ++a) h.sizes.push_back(get_le<std::uint64_t>(in, path));
  for (std::size_t a = 0; a < n_axes; ++a) {
    Extent e;
    e.min = get_le<double>(in, path);
    e.max = get_le<double>(in, path);
    h.extents.push_back(e);
  }
  return h;
}

}  // namespace detail

inline SnapshotHeader read_snapshot_header(const std::string& path) {
  auto in = detail::open_in(path);
  return detail::read_header(in, path);
}

/// Loads a snapshot as a [1, 1, n...] field, converting the payload to T.
template <Real T>
GridField<T> load_snapshot(const std::string& path) {
  auto in = detail::open_in(path);
  const auto h = detail::read_header(in, path);
  auto v = detail::get_values<T>(in, h.dtype, shape_numel(h.sizes), path);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("'" + path + "': trailing bytes");
  Shape s{1, 1};
  s.insert(s.end(), h.sizes.begin(), h.sizes.end());
  return GridField<T>(Tensor<T>(s, std::move(v)), h.extents);
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormKind { maxabs, minmax };

/// normalized = (raw - offset) / scale.
struct Normalization {
  NormKind kind = NormKind::maxabs;
  double offset = 0.0;
  double scale = 1.0;

  Json to_json() const {
    return Json{{"kind", kind == NormKind::maxabs ? "maxabs" : "minmax"},
                {"offset", offset},
                {"scale", scale}};
  }
  static Normalization from_json(const Json& j) {
    Normalization n;
    const auto k = j.at("kind").get<std::string>();
    if (k == "maxabs") n.kind = NormKind::maxabs;
    else if (k == "minmax") n.kind = NormKind::minmax;
    else throw FormatError("unknown normalization kind '" + k + "'");
    n.offset = j.at("offset").get<double>();
    n.scale = j.at("scale").get<double>();
    return n;
  }
};

/// Constants spanning all given fields. An all-zero (or constant) input
/// records scale 1 so the map stays invertible.
template <Real T>
Normalization fit_normalization(const std::vector<GridField<T>>& fields, NormKind kind) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, mabs = 0.0;
  for (const auto& f : fields) {
    for (T v : f.values().values()) {
      lo = std::min(lo, double(v));
      hi = std::max(hi, double(v));
      mabs = std::max(mabs, std::abs(double(v)));
    }
  }
  Normalization n;
  n.kind = kind;
  if (fields.empty()) return n;
  if (kind == NormKind::maxabs) {
    n.scale = mabs > 0 ? mabs : 1.0;
  } else {
    n.offset = lo;
    n.scale = hi > lo ? hi - lo : 1.0;
  }
  return n;
}

template <Real T>
GridField<T> apply_normalization(const GridField<T>& f, const Normalization& n) {
  std::vector<T> v(f.values().numel());
  const auto src = f.values().values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>((double(src[i]) - n.offset) / n.scale);
  return f.with_values(Tensor<T>(f.values().shape(), std::move(v)));
}

template <Real T>
GridField<T> denormalize(const GridField<T>& f, const Normalization& n) {
  std::vector<T> v(f.values().numel());
  const auto src = f.values().values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(double(src[i]) * n.scale + n.offset);
  return f.with_values(Tensor<T>(f.values().shape(), std::move(v)));
}

/// Fits one set of constants over all fields and applies it.
template <Real T>
std::pair<std::vector<GridField<T>>, Normalization> normalize(const std::vector<GridField<T>>& fields,
                                                              NormKind kind) {
  const auto n = fit_normalization(fields, kind);
  std::vector<GridField<T>> out;
  for (const auto& f : fields) out.push_back(apply_normalization(f, n));
  return {out, n};
}

// ---------------------------------------------------------------------------
// Resampling

/// Multilinear interpolation onto a uniform grid with the same extents.
/// Grid points include both ends of every extent.
template <Real T>
GridField<T> resample(const GridField<T>& f, const std::vector<std::size_t>& target) {
  const std::size_t d = f.spatial_dims();
  if (target.size() != d) throw ShapeError("resample: target rank differs from field rank");
  for (auto n : target) {
    if (n < 2) throw ShapeError("resample: target sizes must be >= 2");
  }
  const auto src = f.sizes();
  for (auto n : src) {
    if (n < 2) throw ShapeError("resample: source sizes must be >= 2");
  }
  // Per axis: lower source index and weight of the upper neighbour.
  std::vector<std::vector<std::size_t>> lo(d);
  std::vector<std::vector<double>> wt(d);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t i = 0; i < target[a]; ++i) {
      const double pos = double(i) * double(src[a] - 1) / double(target[a] - 1);
      std::size_t l = std::min(static_cast<std::size_t>(pos), src[a] - 2);
      lo[a].push_back(l);
      wt[a].push_back(pos - double(l));
    }
  }
  std::vector<std::size_t> sstride(d, 1);
  for (std::size_t a = d - 1; a-- > 0;) sstride[a] = sstride[a + 1] * src[a + 1];
  const std::size_t src_n = shape_numel(src), dst_n = shape_numel(target);
  const std::size_t planes = f.batch() * f.channels();
  const auto in = f.values().values();
  std::vector<T> out(planes * dst_n);
  std::vector<std::size_t> idx(d);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t o = 0; o < dst_n; ++o) {
      std::size_t rem = o;
      for (std::size_t a = d; a-- > 0;) {
        idx[a] = rem % target[a];
        rem /= target[a];
      }
      double acc = 0.0;
      for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
        double w = 1.0;
        std::size_t off = 0;
        for (std::size_t a = 0; a < d; ++a) {
          const bool up = (corner >> a) & 1;
          const double t = wt[a][idx[a]];
          w *= up ? t : 1.0 - t;
          off += (lo[a][idx[a]] + (up ? 1 : 0)) * sstride[a];
        }
        if (w != 0.0) acc += w * double(in[p * src_n + off]);
      }
      out[p * dst_n + o] = static_cast<T>(acc);
    }
  }
  Shape s{f.batch(), f.channels()};
  s.insert(s.end(), target.begin(), target.end());
  return f.regridded(Tensor<T>(s, std::move(out)));
}

// ---------------------------------------------------------------------------
// Sidecars and manifests

struct SnapshotMeta {
  Normalization normalization;
  double dt = 0.0;
  Json generator = Json::object();
};

inline std::string sidecar_path(const std::string& snapshot_path) { return snapshot_path + ".json"; }

inline void save_sidecar(const std::string& snapshot_path, const SnapshotMeta& m) {
  write_json_file(sidecar_path(snapshot_path),
                  Json{{"normalization", m.normalization.to_json()}, {"dt", m.dt}, {"generator", m.generator}});
}

inline SnapshotMeta load_sidecar(const std::string& snapshot_path) {
  const auto j = read_json_file(sidecar_path(snapshot_path));
  SnapshotMeta m;
  m.normalization = Normalization::from_json(j.at("normalization"));
  m.dt = j.at("dt").get<double>();
  m.generator = j.value("generator", Json::object());
  return m;
}

/// Field roles a dataset may carry.
inline const std::set<std::string>& field_roles() {
  static const std::set<std::string> roles{"vorticity", "u", "v", "w", "pressure", "mask"};
  return roles;
}

struct DatasetManifest {
  std::string name;
  /// Snapshot files per role, relative to the manifest directory.
  std::map<std::string, std::vector<std::string>> files;
  std::map<std::string, Normalization> normalization;
  std::uint64_t split_seed = 0;
  double dt = 0.0;
  /// Inflow waveform sampled once per snapshot (pulsatile cases).
  std::vector<double> waveform;
  /// Waveform period in snapshots; 0 when not periodic.
  std::size_t period = 0;
  DType dtype = DType::float32;
  Json generator = Json::object();

  std::size_t size() const {
    for (const auto& [role, list] : files)
      if (role != "mask") return list.size();
    return 0;
  }
  bool has(const std::string& role) const { return files.count(role) && !files.at(role).empty(); }
};

inline constexpr const char* kManifestName = "manifest.json";

inline Json to_json(const DatasetManifest& m) {
  Json files = Json::object(), norm = Json::object();
  for (const auto& [r, l] : m.files) files[r] = l;
  for (const auto& [r, n] : m.normalization) norm[r] = n.to_json();
  return Json{{"format", "diano-dataset"},
              {"version", 1},
              {"name", m.name},
              {"files", files},
              {"normalization", norm},
              {"split_seed", m.split_seed},
              {"dt", m.dt},
              {"waveform", m.waveform},
              {"period", m.period},
              {"dtype", dtype_name(m.dtype)},
              {"generator", m.generator}};
}

inline DatasetManifest manifest_from_json(const Json& j) {
  if (j.value("format", "") != "diano-dataset") throw FormatError("not a dataset manifest");
  DatasetManifest m;
  m.name = j.value("name", "");
  for (const auto& [r, l] : j.at("files").items()) {
    if (!field_roles().count(r)) throw FormatError("manifest: unknown field role '" + r + "'");
    m.files[r] = l.get<std::vector<std::string>>();
  }
  const Json norm = j.value("normalization", Json::object());
  for (const auto& [r, n] : norm.items()) m.normalization[r] = Normalization::from_json(n);
  m.split_seed = j.value("split_seed", std::uint64_t{0});
  m.dt = j.value("dt", 0.0);
  m.waveform = j.value("waveform", std::vector<double>{});
  m.period = j.value("period", std::size_t{0});
  m.dtype = dtype_from_name(j.value("dtype", std::string("float32")));
  m.generator = j.value("generator", Json::object());
  return m;
}

/// Accepts a dataset directory or the manifest file itself.
inline fs::path manifest_file(const std::string& path) {
  fs::path p(path);
  return fs::is_directory(p) ? p / kManifestName : p;
}

inline DatasetManifest load_manifest(const std::string& path) {
  try {
    return manifest_from_json(read_json_file(manifest_file(path).string()));
  } catch (const Json::exception& e) {
    throw FormatError("manifest '" + path + "': " + e.what());
  }
}

/// Loads all snapshots of one role; they must share grid and dtype.
template <Real T>
std::vector<GridField<T>> load_role(const std::string& dataset, const DatasetManifest& m,
                                    const std::string& role) {
  if (!m.has(role)) throw Error("dataset has no '" + role + "' fields");
  const auto dir = manifest_file(dataset).parent_path();
  std::vector<GridField<T>> out;
  std::optional<SnapshotHeader> first;
  for (const auto& f : m.files.at(role)) {
    const auto path = (dir / f).string();
    const auto h = read_snapshot_header(path);
    if (first && (h.sizes != first->sizes || h.extents != first->extents || h.dtype != first->dtype)) {
      throw FormatError("dataset: '" + f + "' differs in grid or dtype from the first snapshot");
    }
    first = h;
    out.push_back(load_snapshot<T>(path));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

/// CSV rows "x,y,value" (1-d: y = 0; 3-d: "x,y,z,value") with 17
/// significant digits, header first.
template <Real T>
void export_csv(const GridField<T>& f, const std::string& path) {
  if (f.batch() != 1 || f.channels() != 1) throw ShapeError("export: expects one sample with one channel");
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  const std::size_t d = f.spatial_dims();
  out << (d == 3 ? "x,y,z,value\n" : "x,y,value\n");
  out << std::setprecision(17);
  const auto v = f.values().values();
  const auto sz = f.sizes();
  for (std::size_t k = 0; k < v.size(); ++k) {
    std::size_t rem = k;
    std::vector<std::size_t> idx(d);
    for (std::size_t a = d; a-- > 0;) {
      idx[a] = rem % sz[a];
      rem /= sz[a];
    }
    for (std::size_t a = 0; a < d; ++a) out << f.coordinate(a, idx[a]) << ',';
    if (d == 1) out << 0.0 << ',';
    out << double(v[k]) << '\n';
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

/// Binary 8-bit PGM, rows along axis 0, min-max mapped; a constant field
/// is written as mid gray.
template <Real T>
void export_pgm(const GridField<T>& f, const std::string& path) {
  if (f.batch() != 1 || f.channels() != 1) throw ShapeError("export: expects one sample with one channel");
  if (f.spatial_dims() > 2) throw ShapeError("export_pgm: 1-d or 2-d fields only");
  const std::size_t rows = f.spatial_dims() == 2 ? f.size(0) : 1;
  const std::size_t cols = f.spatial_dims() == 2 ? f.size(1) : f.size(0);
  const auto v = f.values().values();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  for (T x : v) {
    const double t = *hi > *lo ? (double(x) - double(*lo)) / (double(*hi) - double(*lo)) : 0.5;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

enum class ExportFormat { csv, pgm, diaf };

inline ExportFormat export_format_from_name(const std::string& s) {
  if (s == "csv") return ExportFormat::csv;
  if (s == "pgm") return ExportFormat::pgm;
  if (s == "diaf") return ExportFormat::diaf;
  throw Error("unknown export format '" + s + "' (csv|pgm|diaf)");
}

template <Real T>
void export_field(const GridField<T>& f, const std::string& path, ExportFormat fmt) {
  switch (fmt) {
    case ExportFormat::csv: export_csv(f, path); break;
    case ExportFormat::pgm: export_pgm(f, path); break;
    case ExportFormat::diaf: save_snapshot(path, f); break;
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// "DIAC" | u16 version | u8 dtype | u64 json length | json text |
// for each parameter: values, Adam m, Adam v (dtype, little-endian)

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <Real T>
struct Checkpoint {
  RunConfig config;
  std::vector<std::string> names;
  TrainState<T> state;
  /// Free-form run facts (dataset path, final metrics, outcome).
  Json info = Json::object();
};

template <Real T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& c) {
  const auto& s = c.state;
  if (c.names.size() != s.params.size() || s.adam.m.size() != s.params.size()) {
    throw Error("save_checkpoint: parameter, name and optimizer counts differ");
  }
  Json params = Json::array();
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    params.push_back(Json{{"name", c.names[i]}, {"shape", s.params[i].shape()}});
  }
  Json history = Json::array();
  for (const auto& r : s.history) {
    history.push_back(Json{{"epoch", r.epoch},
                           {"lr", r.lr},
                           {"train_loss", r.train_loss},
                           {"test_loss", std::isnan(r.test_loss) ? Json(nullptr) : Json(r.test_loss)}});
  }
  RunConfig cfg = c.config;
  cfg.dtype = dtype_of<T>();
  const Json meta{{"config", to_json(cfg)},
                  {"params", params},
                  {"epoch", s.epoch},
                  {"adam", {{"beta1", s.adam.beta1}, {"beta2", s.adam.beta2}, {"eps", s.adam.eps}, {"step", s.adam.step}}},
                  {"rng", s.rng_text()},
                  {"history", history},
                  {"info", c.info}};
  const std::string text = meta.dump();
  auto out = detail::open_out(path);
  out.write("DIAC", 4);
  detail::put_le(out, kCheckpointVersion);
  detail::put_le(out, static_cast<std::uint8_t>(dtype_of<T>()));
  detail::put_le(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    detail::put_values<T>(out, s.params[i].values());
    detail::put_values<T>(out, std::span<const T>(s.adam.m[i]));
    detail::put_values<T>(out, std::span<const T>(s.adam.v[i]));
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

namespace detail {

inline std::pair<DType, Json> read_checkpoint_head(std::istream& in, const std::string& path) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("'" + path + "': truncated file");
  if (std::memcmp(magic, "DIAC", 4) != 0) throw FormatError("'" + path + "': not a checkpoint (bad magic)");
  const auto version = get_le<std::uint16_t>(in, path);
  if (version != kCheckpointVersion) {
    throw FormatError("'" + path + "': unsupported checkpoint version " + std::to_string(version));
  }
  const DType dtype = dtype_from_code(get_le<std::uint8_t>(in, path), path);
  const auto len = get_le<std::uint64_t>(in, path);
  if (len > (std::uint64_t{1} << 32)) throw FormatError("'" + path + "': corrupt header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("'" + path + "': truncated file");
  try {
    return {dtype, Json::parse(text)};
  } catch (const Json::exception& e) {
    throw FormatError("'" + path + "': corrupt checkpoint header: " + e.what());
  }
}

}  // namespace detail

inline DType checkpoint_dtype(const std::string& path) {
  auto in = detail::open_in(path);
  return detail::read_checkpoint_head(in, path).first;
}

template <Real T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  auto in = detail::open_in(path);
  const auto [dtype, meta] = detail::read_checkpoint_head(in, path);
  if (dtype != dtype_of<T>()) {
    throw FormatError("'" + path + "': checkpoint holds " + dtype_name(dtype) + " parameters");
  }
  Checkpoint<T> c;
  try {
    c.config = run_config_from_json(meta.at("config"));
    auto& s = c.state;
    s.epoch = meta.at("epoch").get<std::size_t>();
    const auto& a = meta.at("adam");
    s.adam.beta1 = a.at("beta1").get<double>();
    s.adam.beta2 = a.at("beta2").get<double>();
    s.adam.eps = a.at("eps").get<double>();
    s.adam.step = a.at("step").get<std::uint64_t>();
    s.set_rng_text(meta.at("rng").get<std::string>());
    for (const auto& r : meta.at("history")) {
      EpochRecord e;
      e.epoch = r.at("epoch").get<std::size_t>();
      e.lr = r.at("lr").get<double>();
      e.train_loss = r.at("train_loss").get<double>();
      if (!r.at("test_loss").is_null()) e.test_loss = r.at("test_loss").get<double>();
      s.history.push_back(e);
    }
    c.info = meta.value("info", Json::object());
    for (const auto& p : meta.at("params")) {
      c.names.push_back(p.at("name").get<std::string>());
      const Shape shape = p.at("shape").get<Shape>();
      const std::size_t n = shape_numel(shape);
      s.params.emplace_back(shape, detail::get_values<T>(in, dtype, n, path));
      s.adam.m.push_back(detail::get_values<T>(in, dtype, n, path));
      s.adam.v.push_back(detail::get_values<T>(in, dtype, n, path));
    }
  } catch (const Json::exception& e) {
    throw FormatError("'" + path + "': corrupt checkpoint header: " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("'" + path + "': trailing bytes");
  return c;
}

/// Builds the model described by a checkpoint and installs its parameters.
template <Real T>
Model<T> model_from_checkpoint(const Checkpoint<T>& c) {
  Model<T> m(c.config.model);
  auto& store = m.params();
  if (store.size() != c.names.size()) throw FormatError("checkpoint does not match its model spec");
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.names()[i] != c.names[i] || store[i].shape() != c.state.params[i].shape()) {
      throw FormatError("checkpoint parameter '" + c.names[i] + "' does not match the model");
    }
    store.values()[i] = c.state.params[i];
  }
  return m;
}

}  // namespace diano
