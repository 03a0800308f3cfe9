#include "mate/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace mate {

Shape3 parse_shape(const std::string& text) {
  Index dims[3];
  std::size_t at = 0;
  for (int i = 0; i < 3; ++i) {
    const std::size_t next = i < 2 ? text.find_first_of("xX", at) : text.size();
    if (next == std::string::npos) throw std::invalid_argument("shape '" + text + "' must look like TxHxW");
    const std::string part = text.substr(at, next - at);
    std::size_t used = 0;
    try {
      dims[i] = std::stoll(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (part.empty() || used != part.size()) throw std::invalid_argument("shape '" + text + "' must look like TxHxW");
    at = next + 1;
  }
  return {dims[0], dims[1], dims[2]};
}

namespace {

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& at) {
  if (at + sizeof(T) > in.size()) throw std::runtime_error("truncated file");
  char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + at, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  at += sizeof(T);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::uint16_t narrow_dim(Index v) {
  if (v < 1 || v > std::numeric_limits<std::uint16_t>::max())
    throw std::domain_error("tensor dimension " + std::to_string(v) + " does not fit the 16-bit header field");
  return static_cast<std::uint16_t>(v);
}

}  // namespace

std::string encode_tensor(const Tensor& tensor) {
  std::string out = "MATE";
  put<std::uint16_t>(out, kTensorFormatVersion);
  put<std::uint16_t>(out, 4);
  put(out, narrow_dim(tensor.shape.t_len));
  put(out, narrow_dim(tensor.shape.h_len));
  put(out, narrow_dim(tensor.shape.w_len));
  put(out, narrow_dim(tensor.channels()));
  for (Index i = 0; i < tensor.tokens(); ++i)
    for (Index c = 0; c < tensor.channels(); ++c) put<double>(out, tensor.data(i, c));
  return out;
}

Tensor decode_tensor(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "MATE") != 0) throw std::runtime_error("not a MATE tensor file");
  std::size_t at = 4;
  const auto version = take<std::uint16_t>(bytes, at);
  const auto rank = take<std::uint16_t>(bytes, at);
  if (version != kTensorFormatVersion) throw std::runtime_error("unsupported tensor format version");
  if (rank != 4) throw std::runtime_error("tensor rank must be 4");
  Index dims[4];
  for (auto& d : dims) d = take<std::uint16_t>(bytes, at);
  Tensor t(Shape3(dims[0], dims[1], dims[2]), dims[3]);
  if (bytes.size() != 16 + static_cast<std::size_t>(t.data.size()) * 8) throw std::runtime_error("tensor payload size mismatch");
  for (Index i = 0; i < t.tokens(); ++i)
    for (Index c = 0; c < t.channels(); ++c) t.data(i, c) = take<double>(bytes, at);
  return t;
}

void write_tensor_file(const std::string& path, const Tensor& tensor) { spit(path, encode_tensor(tensor)); }

Tensor read_tensor_file(const std::string& path) { return decode_tensor(slurp(path)); }

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out = "MATECKPT";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, 0);
  const std::string text = ckpt.config.serialize();
  put<std::uint64_t>(out, text.size());
  out += text;
  const Vec flat = ckpt.weights.pack();
  put<std::uint64_t>(out, static_cast<std::uint64_t>(flat.size()));
  for (Index i = 0; i < flat.size(); ++i) put<double>(out, flat[i]);
  spit(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = slurp(path);
  if (bytes.compare(0, 8, "MATECKPT") != 0) throw std::runtime_error("'" + path + "' is not a MATE checkpoint");
  std::size_t at = 8;
  if (take<std::uint32_t>(bytes, at) != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  take<std::uint32_t>(bytes, at);
  const auto text_len = take<std::uint64_t>(bytes, at);
  if (at + text_len > bytes.size()) throw std::runtime_error("truncated checkpoint");
  Checkpoint ckpt;
  ckpt.config = RunConfig::parse(bytes.substr(at, text_len));
  at += text_len;
  std::mt19937_64 rng(0);
  ckpt.weights = init_denoiser(ckpt.config.model, rng, 1.0);
  const auto count = take<std::uint64_t>(bytes, at);
  if (static_cast<Index>(count) != ckpt.weights.parameter_count())
    throw std::runtime_error("checkpoint parameter count does not match its config");
  Vec flat(static_cast<Index>(count));
  for (Index i = 0; i < flat.size(); ++i) flat[i] = take<double>(bytes, at);
  ckpt.weights.unpack(flat);
  return ckpt;
}

}  // namespace mate
