#pragma once

#include "fmri_analysis.hpp"
#include "regularizer.hpp"
#include "ssdu_masking.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

namespace smsr::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum class DType { Float32, Complex64 };

inline char const *dtypeName(DType d) { return d == DType::Float32 ? "float32" : "complex64"; }

inline std::set<std::string> const &axisNames()
{
  // "param" is reserved for flat network checkpoints.
  static std::set<std::string> const names = {"coil", "slice", "row", "col", "frame", "param"};
  return names;
}

/// An array on disk: `<stem>.json` manifest plus `<stem>.bin` little-endian float32 payload
/// (complex values interleaved real, imag).
struct Container
{
  DType dtype = DType::Float32;
  std::vector<Index> shape;
  std::vector<std::string> axes;
  std::vector<float> payload;
  json meta = json::object(); // seed, provenance, scaling, config hash

  Index elements() const
  {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
  }
  Index floatsPerElement() const { return dtype == DType::Complex64 ? 2 : 1; }

  void validate() const
  {
    if (shape.size() != axes.size()) { throw ContractViolation("Container: shape and axes differ in rank"); }
    for (auto const &a : axes) {
      if (!axisNames().count(a)) { throw ContractViolation("Container: unknown axis name '" + a + "'"); }
    }
    for (auto d : shape) {
      if (d < 0) { throw ContractViolation("Container: negative extent"); }
    }
    if (static_cast<Index>(payload.size()) != elements() * floatsPerElement()) {
      throw ContractViolation("Container: payload size does not match the shape");
    }
  }
};

namespace detail {

inline std::uint32_t toLittle(std::uint32_t v)
{
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
  return v;
}

} // namespace detail

inline fs::path manifestPath(fs::path const &stem) { return fs::path(stem.string() + ".json"); }
inline fs::path payloadPath(fs::path const &stem) { return fs::path(stem.string() + ".bin"); }
inline bool exists(fs::path const &stem) { return fs::exists(manifestPath(stem)) && fs::exists(payloadPath(stem)); }

inline void write(fs::path const &stem, Container const &c)
{
  c.validate();
  if (stem.has_parent_path()) { fs::create_directories(stem.parent_path()); }
  json m;
  m["dtype"] = dtypeName(c.dtype);
  m["shape"] = c.shape;
  m["axes"] = c.axes;
  m["byte_order"] = "little";
  m["payload"] = payloadPath(stem).filename().string();
  for (auto const &[k, v] : c.meta.items()) { m[k] = v; }
  {
    std::ofstream f(manifestPath(stem));
    if (!f) { throw DataError("cannot write " + manifestPath(stem).string()); }
    f << m.dump(2) << '\n';
  }
  std::vector<std::uint32_t> raw(c.payload.size());
  for (std::size_t i = 0; i < raw.size(); ++i) { raw[i] = detail::toLittle(std::bit_cast<std::uint32_t>(c.payload[i])); }
  std::ofstream f(payloadPath(stem), std::ios::binary);
  if (!f) { throw DataError("cannot write " + payloadPath(stem).string()); }
  f.write(reinterpret_cast<char const *>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
}

inline Container read(fs::path const &stem)
{
  std::ifstream mf(manifestPath(stem));
  if (!mf) { throw DataError("missing container manifest " + manifestPath(stem).string()); }
  json m;
  try {
    m = json::parse(mf);
  } catch (json::exception const &e) {
    throw DataError("malformed manifest " + manifestPath(stem).string() + ": " + e.what());
  }
  Container c;
  auto const dt = m.at("dtype").get<std::string>();
  if (dt == "float32") {
    c.dtype = DType::Float32;
  } else if (dt == "complex64") {
    c.dtype = DType::Complex64;
  } else {
    throw DataError("unsupported dtype " + dt);
  }
  c.shape = m.at("shape").get<std::vector<Index>>();
  c.axes = m.at("axes").get<std::vector<std::string>>();
  for (auto const &[k, v] : m.items()) {
    if (k != "dtype" && k != "shape" && k != "axes" && k != "byte_order" && k != "payload") { c.meta[k] = v; }
  }
  std::ifstream pf(payloadPath(stem), std::ios::binary | std::ios::ate);
  if (!pf) { throw DataError("missing container payload " + payloadPath(stem).string()); }
  auto const bytes = static_cast<Index>(pf.tellg());
  Index const expect = c.elements() * c.floatsPerElement() * 4;
  if (bytes != expect) {
    throw DataError("payload " + payloadPath(stem).string() + " has " + std::to_string(bytes) + " bytes, manifest implies " +
                    std::to_string(expect));
  }
  pf.seekg(0);
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(bytes / 4));
  pf.read(reinterpret_cast<char *>(raw.data()), bytes);
  c.payload.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) { c.payload[i] = std::bit_cast<float>(detail::toLittle(raw[i])); }
  c.validate();
  return c;
}

// Conversions between in-memory arrays and containers.

template <std::size_t Rank>
Container fromComplex(Tensor<Cx<double>, Rank> const &t, std::vector<std::string> axes, json meta = json::object())
{
  Container c;
  c.dtype = DType::Complex64;
  c.shape.assign(t.dims().begin(), t.dims().end());
  c.axes = std::move(axes);
  c.meta = std::move(meta);
  c.payload.resize(static_cast<std::size_t>(2 * t.size()));
  for (Index i = 0; i < t.size(); ++i) {
    c.payload[static_cast<std::size_t>(2 * i)] = static_cast<float>(t[i].real());
    c.payload[static_cast<std::size_t>(2 * i + 1)] = static_cast<float>(t[i].imag());
  }
  return c;
}

template <class T, std::size_t Rank>
Container fromReal(Tensor<T, Rank> const &t, std::vector<std::string> axes, json meta = json::object())
{
  Container c;
  c.dtype = DType::Float32;
  c.shape.assign(t.dims().begin(), t.dims().end());
  c.axes = std::move(axes);
  c.meta = std::move(meta);
  c.payload.resize(static_cast<std::size_t>(t.size()));
  for (Index i = 0; i < t.size(); ++i) { c.payload[static_cast<std::size_t>(i)] = static_cast<float>(t[i]); }
  return c;
}

template <std::size_t Rank>
Tensor<Cx<double>, Rank> toComplex(Container const &c, std::vector<std::string> const &axes)
{
  if (c.dtype != DType::Complex64 || c.axes != axes) { throw DataError("container layout differs from the expected complex array"); }
  typename Tensor<Cx<double>, Rank>::Dims dims;
  std::copy(c.shape.begin(), c.shape.end(), dims.begin());
  Tensor<Cx<double>, Rank> t(dims);
  for (Index i = 0; i < t.size(); ++i) {
    t[i] = {c.payload[static_cast<std::size_t>(2 * i)], c.payload[static_cast<std::size_t>(2 * i + 1)]};
  }
  return t;
}

template <class T, std::size_t Rank>
Tensor<T, Rank> toReal(Container const &c, std::vector<std::string> const &axes)
{
  if (c.dtype != DType::Float32 || c.axes != axes) { throw DataError("container layout differs from the expected real array"); }
  typename Tensor<T, Rank>::Dims dims;
  std::copy(c.shape.begin(), c.shape.end(), dims.begin());
  Tensor<T, Rank> t(dims);
  for (Index i = 0; i < t.size(); ++i) { t[i] = static_cast<T>(c.payload[static_cast<std::size_t>(i)]); }
  return t;
}

/// Frames stacked along a leading "frame" axis.
template <class Frame>
Container fromFrames(std::vector<Frame> const &frames, std::vector<std::string> axes, json meta = json::object())
{
  require(!frames.empty(), "fromFrames: no frames");
  auto const one = fromComplex(frames[0].data, axes);
  Container c = one;
  c.shape.insert(c.shape.begin(), static_cast<Index>(frames.size()));
  c.axes.insert(c.axes.begin(), "frame");
  c.meta = std::move(meta);
  c.payload.clear();
  c.payload.reserve(one.payload.size() * frames.size());
  for (auto const &f : frames) {
    auto const part = fromComplex(f.data, axes);
    if (part.shape != one.shape) { throw ContractViolation("fromFrames: frames differ in shape"); }
    c.payload.insert(c.payload.end(), part.payload.begin(), part.payload.end());
  }
  return c;
}

template <class Frame>
std::vector<Frame> toFrames(Container const &c, std::vector<std::string> const &axes)
{
  if (c.axes.empty() || c.axes[0] != "frame") { throw DataError("container has no leading frame axis"); }
  Container one = c;
  one.shape.erase(one.shape.begin());
  one.axes.erase(one.axes.begin());
  Index const per = one.elements() * 2;
  std::vector<Frame> out;
  for (Index t = 0; t < c.shape[0]; ++t) {
    one.payload.assign(c.payload.begin() + t * per, c.payload.begin() + (t + 1) * per);
    out.emplace_back(toComplex<3>(one, axes));
  }
  return out;
}

inline Container fromMask(Tensor<std::uint8_t, 2> const &m, json meta = json::object())
{
  return fromReal(m, {"row", "col"}, std::move(meta));
}

inline Tensor<std::uint8_t, 2> toMask(Container const &c)
{
  auto m = toReal<float, 2>(c, {"row", "col"});
  Tensor<std::uint8_t, 2> out(m.dims());
  for (Index i = 0; i < m.size(); ++i) { out[i] = m[i] != 0.0f; }
  return out;
}

inline json acsJson(AcsRegion const &a) { return {a.row_begin, a.row_end, a.col_begin, a.col_end}; }
inline AcsRegion acsFromJson(json const &j)
{
  auto const v = j.get<std::vector<Index>>();
  if (v.size() != 4) { throw DataError("malformed ACS region"); }
  return {v[0], v[1], v[2], v[3]};
}

inline Container fromPattern(SamplingPattern const &p, json meta = json::object())
{
  meta["acs"] = acsJson(p.acs);
  return fromMask(p.mask, std::move(meta));
}

inline SamplingPattern toPattern(Container const &c)
{
  AcsRegion acs;
  if (c.meta.contains("acs")) { acs = acsFromJson(c.meta["acs"]); }
  return SamplingPattern(toMask(c), acs);
}

/// Flat checkpoint: weights followed by mu along a "param" axis, architecture in the manifest.
/// Stored as float32 like every other payload.
inline Container fromParams(NetworkParams const &p, json meta = json::object())
{
  Container c;
  c.dtype = DType::Float32;
  c.shape = {static_cast<Index>(p.weights.size() + 1)};
  c.axes = {"param"};
  c.meta = std::move(meta);
  c.meta["network"] = {{"n_residual_blocks", p.config.n_residual_blocks},
                       {"channels", p.config.channels},
                       {"kernel_size", p.config.kernel_size},
                       {"residual_scaling", p.config.residual_scaling},
                       {"mu_learnable", p.mu_learnable},
                       {"trainable_parameters", count_params(p)}};
  c.payload.reserve(p.weights.size() + 1);
  for (double w : p.weights) { c.payload.push_back(static_cast<float>(w)); }
  c.payload.push_back(static_cast<float>(p.mu));
  return c;
}

inline NetworkParams toParams(Container const &c)
{
  if (c.axes != std::vector<std::string>{"param"} || !c.meta.contains("network")) {
    throw DataError("container is not a network checkpoint");
  }
  auto const &n = c.meta["network"];
  NetworkParams p;
  p.config.n_residual_blocks = n.at("n_residual_blocks").get<int>();
  p.config.channels = n.at("channels").get<int>();
  p.config.kernel_size = n.at("kernel_size").get<int>();
  p.config.residual_scaling = n.at("residual_scaling").get<double>();
  p.mu_learnable = n.at("mu_learnable").get<bool>();
  p.config.validate();
  if (c.shape[0] != p.config.weightCount() + 1) { throw DataError("checkpoint length does not match its architecture"); }
  p.weights.assign(c.payload.begin(), c.payload.end() - 1);
  p.mu = c.payload.back();
  return p;
}

/// Round every value through float32 so in-memory parameters equal what a checkpoint stores.
inline NetworkParams roundToStored(NetworkParams p)
{
  for (auto &w : p.weights) { w = static_cast<float>(w); }
  p.mu = static_cast<float>(p.mu);
  return p;
}

} // namespace smsr::io
