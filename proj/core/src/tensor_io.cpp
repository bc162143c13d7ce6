#include "dgcn/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace dgcn {

namespace {

constexpr std::size_t kMaxHeader = 4096;

template <typename U>
void put_le(std::byte* dst, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = static_cast<std::byte>((bits >> (8 * i)) & 0xFF);
}

template <typename U>
U get_le(const std::byte* src) {
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(std::to_integer<unsigned>(src[i])) << (8 * i);
  return bits;
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

std::size_t scalar_size(DType dtype) { return dtype == DType::f32 ? 4 : 8; }

}  // namespace

template <typename T>
Tensor<T> TensorRecord::to_tensor(bool* converted) const {
  const std::size_t count = numel(shape);
  std::vector<T> values(count);
  if (dtype == DType::f32) {
    for (std::size_t i = 0; i < count; ++i)
      values[i] = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(payload.data() + 4 * i)));
  } else {
    for (std::size_t i = 0; i < count; ++i)
      values[i] = static_cast<T>(std::bit_cast<double>(get_le<std::uint64_t>(payload.data() + 8 * i)));
  }
  if (converted) *converted = dtype != dtype_of<T>();
  return Tensor<T>::from(shape, std::move(values));
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  std::ostringstream header;
  header << "TNSR " << to_string(dtype_of<T>()) << ' ' << t.ndim();
  for (auto extent : t.shape()) header << ' ' << extent;
  header << '\n';
  os << header.str();
  auto values = t.data();
  std::vector<std::byte> buffer(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) put_le(buffer.data() + i * sizeof(T), std::bit_cast<Bits<T>>(values[i]));
  os.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
  if (!os) throw FormatError("failed writing tensor payload");
}

TensorRecord read_tensor_record(std::istream& is) {
  std::string line;
  char ch;
  while (is.get(ch) && ch != '\n') {
    line.push_back(ch);
    if (line.size() > kMaxHeader) throw FormatError("tensor header too long");
  }
  if (!is) throw FormatError(line.empty() ? "missing tensor record" : "truncated tensor header");
  std::istringstream header(line);
  std::string tag, dtype;
  std::size_t ndim = 0;
  if (!(header >> tag) || tag != "TNSR") throw FormatError("bad tensor tag '" + tag + "' (expected TNSR)");
  if (!(header >> dtype >> ndim)) throw FormatError("malformed tensor header '" + line + "'");
  TensorRecord rec;
  rec.dtype = dtype_from_string(dtype);
  for (std::size_t i = 0; i < ndim; ++i) {
    std::size_t extent = 0;
    if (!(header >> extent) || extent == 0) throw FormatError("malformed tensor extents in '" + line + "'");
    rec.shape.push_back(extent);
  }
  std::string extra;
  if (header >> extra) throw FormatError("trailing fields in tensor header '" + line + "'");
  rec.payload.resize(numel(rec.shape) * scalar_size(rec.dtype));
  is.read(reinterpret_cast<char*>(rec.payload.data()), static_cast<std::streamsize>(rec.payload.size()));
  if (static_cast<std::size_t>(is.gcount()) != rec.payload.size()) {
    throw FormatError("truncated tensor payload: expected " + std::to_string(rec.payload.size()) + " bytes, got " +
                      std::to_string(is.gcount()));
  }
  return rec;
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor<T>(is);
}

template Tensor<float> TensorRecord::to_tensor<float>(bool*) const;
template Tensor<double> TensorRecord::to_tensor<double>(bool*) const;
template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace dgcn
