#include "hoverpost/npy.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <fstream>
#include <iterator>
#include <numeric>

static_assert(std::endian::native == std::endian::little, "NPY payloads are read without byte swapping");

namespace hoverpost {

namespace {

constexpr std::uint8_t kMagic[] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
constexpr std::size_t kAlign = 64;

struct Header {
  std::string descr;
  bool fortran_order = false;
  std::vector<std::size_t> shape;
  std::size_t payload_offset = 0;
};

[[noreturn]] void bad_header(const std::string& why) {
  throw Error(ErrorCode::kBadMagic, "malformed NPY header: " + why);
}

std::size_t skip_ws(std::string_view s, std::size_t i) {
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return i;
}

// Position just past "'key':" in the header dict.
std::size_t find_value(std::string_view dict, std::string_view key) {
  const std::string quoted = "'" + std::string(key) + "'";
  auto pos = dict.find(quoted);
  if (pos == std::string_view::npos) bad_header("missing key " + std::string(key));
  pos = skip_ws(dict, pos + quoted.size());
  if (pos >= dict.size() || dict[pos] != ':') bad_header("expected ':' after " + std::string(key));
  return skip_ws(dict, pos + 1);
}

Header parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 10 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw Error(ErrorCode::kBadMagic, "missing \\x93NUMPY magic");
  const int major = bytes[6];
  std::size_t header_len = 0;
  std::size_t prefix = 0;
  if (major == 1) {
    header_len = bytes[8] | (std::size_t{bytes[9]} << 8);
    prefix = 10;
  } else if (major == 2) {
    if (bytes.size() < 12) throw Error(ErrorCode::kBadMagic, "truncated version 2.0 preamble");
    header_len = bytes[8] | (std::size_t{bytes[9]} << 8) | (std::size_t{bytes[10]} << 16) |
                 (std::size_t{bytes[11]} << 24);
    prefix = 12;
  } else {
    throw Error(ErrorCode::kBadMagic, "unsupported NPY version " + std::to_string(major));
  }
  if (bytes.size() < prefix + header_len) bad_header("header extends past end of file");

  const std::string_view dict(reinterpret_cast<const char*>(bytes.data() + prefix), header_len);
  Header h;
  h.payload_offset = prefix + header_len;

  auto pos = find_value(dict, "descr");
  if (pos >= dict.size() || (dict[pos] != '\'' && dict[pos] != '"')) bad_header("descr is not a string");
  const char quote = dict[pos];
  const auto end = dict.find(quote, pos + 1);
  if (end == std::string_view::npos) bad_header("unterminated descr");
  h.descr = std::string(dict.substr(pos + 1, end - pos - 1));

  pos = find_value(dict, "fortran_order");
  if (dict.substr(pos, 4) == "True") {
    h.fortran_order = true;
  } else if (dict.substr(pos, 5) == "False") {
    h.fortran_order = false;
  } else {
    bad_header("fortran_order is not a bool");
  }

  pos = find_value(dict, "shape");
  if (pos >= dict.size() || dict[pos] != '(') bad_header("shape is not a tuple");
  ++pos;
  while (true) {
    pos = skip_ws(dict, pos);
    if (pos >= dict.size()) bad_header("unterminated shape");
    if (dict[pos] == ')') break;
    if (!std::isdigit(static_cast<unsigned char>(dict[pos]))) bad_header("non-integer extent");
    std::size_t v = 0;
    while (pos < dict.size() && std::isdigit(static_cast<unsigned char>(dict[pos])))
      v = v * 10 + static_cast<std::size_t>(dict[pos++] - '0');
    h.shape.push_back(v);
    pos = skip_ws(dict, pos);
    if (pos < dict.size() && dict[pos] == ',') ++pos;
  }
  return h;
}

Dtype dtype_from_descr(std::string_view descr) {
  static constexpr Dtype kAll[] = {Dtype::kF32, Dtype::kF64, Dtype::kU8,
                                   Dtype::kU16, Dtype::kU32, Dtype::kI32};
  for (Dtype d : kAll) {
    if (descr == dtype_descr(d)) return d;
  }
  // Single-byte types carry no meaningful byte order.
  if (descr == "<u1" || descr == "=u1") return Dtype::kU8;
  throw Error(ErrorCode::kUnsupportedDtype, "dtype '" + std::string(descr) + "'");
}

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Reorders a column-major payload into row-major order.
std::vector<std::uint8_t> fortran_to_c(std::span<const std::uint8_t> src,
                                       const std::vector<std::size_t>& shape, std::size_t item) {
  const std::size_t n = product(shape);
  std::vector<std::uint8_t> dst(src.size());
  const std::size_t rank = shape.size();
  std::vector<std::size_t> idx(rank, 0);
  std::vector<std::size_t> fstride(rank, 1);
  for (std::size_t d = 1; d < rank; ++d) fstride[d] = fstride[d - 1] * shape[d - 1];
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t f = 0;
    for (std::size_t d = 0; d < rank; ++d) f += idx[d] * fstride[d];
    std::memcpy(dst.data() + c * item, src.data() + f * item, item);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return dst;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class From, class To>
void convert(const std::vector<std::uint8_t>& bytes, std::vector<To>& out) {
  const std::size_t n = bytes.size() / sizeof(From);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    From v;
    std::memcpy(&v, bytes.data() + i * sizeof(From), sizeof(From));
    out[i] = static_cast<To>(v);
  }
}

}  // namespace

std::size_t item_size(Dtype dtype) {
  switch (dtype) {
    case Dtype::kF32: return 4;
    case Dtype::kF64: return 8;
    case Dtype::kU8: return 1;
    case Dtype::kU16: return 2;
    case Dtype::kU32: return 4;
    case Dtype::kI32: return 4;
  }
  return 0;
}

std::string_view dtype_descr(Dtype dtype) {
  switch (dtype) {
    case Dtype::kF32: return "<f4";
    case Dtype::kF64: return "<f8";
    case Dtype::kU8: return "|u1";
    case Dtype::kU16: return "<u2";
    case Dtype::kU32: return "<u4";
    case Dtype::kI32: return "<i4";
  }
  return "";
}

std::string_view dtype_name(Dtype dtype) {
  switch (dtype) {
    case Dtype::kF32: return "f32";
    case Dtype::kF64: return "f64";
    case Dtype::kU8: return "u8";
    case Dtype::kU16: return "u16";
    case Dtype::kU32: return "u32";
    case Dtype::kI32: return "i32";
  }
  return "";
}

std::size_t NpyArray::count() const { return product(shape); }

std::string NpyArray::shape_str() const {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <class T>
std::vector<T> NpyArray::cast() const {
  std::vector<T> out;
  switch (dtype) {
    case Dtype::kF32: convert<float>(data, out); break;
    case Dtype::kF64: convert<double>(data, out); break;
    case Dtype::kU8: convert<std::uint8_t>(data, out); break;
    case Dtype::kU16: convert<std::uint16_t>(data, out); break;
    case Dtype::kU32: convert<std::uint32_t>(data, out); break;
    case Dtype::kI32: convert<std::int32_t>(data, out); break;
  }
  return out;
}

template std::vector<float> NpyArray::cast<float>() const;
template std::vector<double> NpyArray::cast<double>() const;
template std::vector<std::uint8_t> NpyArray::cast<std::uint8_t>() const;
template std::vector<std::uint16_t> NpyArray::cast<std::uint16_t>() const;
template std::vector<std::uint32_t> NpyArray::cast<std::uint32_t>() const;
template std::vector<std::int32_t> NpyArray::cast<std::int32_t>() const;

NpyArray parse_npy(std::span<const std::uint8_t> bytes) {
  const Header h = parse_header(bytes);
  NpyArray a;
  a.dtype = dtype_from_descr(h.descr);
  a.shape = h.shape;
  const std::size_t expected = a.count() * item_size(a.dtype);
  const std::size_t actual = bytes.size() - h.payload_offset;
  if (actual != expected) {
    throw Error(ErrorCode::kTruncatedPayload, "payload has " + std::to_string(actual) + " bytes, shape " +
                                                  a.shape_str() + " needs " + std::to_string(expected));
  }
  const auto payload = bytes.subspan(h.payload_offset);
  if (h.fortran_order && a.shape.size() > 1) {
    a.data = fortran_to_c(payload, a.shape, item_size(a.dtype));
  } else {
    a.data.assign(payload.begin(), payload.end());
  }
  a.fortran_order = false;
  return a;
}

std::vector<std::uint8_t> serialize_npy(const NpyArray& array) {
  if (array.data.size() != array.count() * item_size(array.dtype))
    throw Error(ErrorCode::kShapeMismatch, "payload size does not match shape " + array.shape_str());
  if (array.fortran_order) throw Error(ErrorCode::kInvalidArgument, "only C-ordered arrays are written");

  std::string dict = "{'descr': '" + std::string(dtype_descr(array.dtype)) +
                     "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < array.shape.size(); ++i) {
    if (i) dict += ", ";
    dict += std::to_string(array.shape[i]);
  }
  if (array.shape.size() == 1) dict += ",";
  dict += "), }";
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((kAlign - unpadded % kAlign) % kAlign, ' ');
  dict += '\n';
  if (dict.size() > 0xFFFF) throw Error(ErrorCode::kInvalidArgument, "header too long for version 1.0");

  std::vector<std::uint8_t> out;
  out.reserve(10 + dict.size() + array.data.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(dict.size() & 0xFF));
  out.push_back(static_cast<std::uint8_t>(dict.size() >> 8));
  out.insert(out.end(), dict.begin(), dict.end());
  out.insert(out.end(), array.data.begin(), array.data.end());
  return out;
}

NpyArray read_npy(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  try {
    return parse_npy(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_npy(const NpyArray& array, const std::filesystem::path& path) {
  const auto bytes = serialize_npy(array);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

std::vector<std::string> read_npy_strings(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const Header h = parse_header(bytes);
  if (h.descr.size() < 3 || h.descr[0] != '<' || h.descr[1] != 'U')
    throw Error(ErrorCode::kUnsupportedDtype, path.string() + ": expected a unicode string array, got '" +
                                                  h.descr + "'");
  const std::size_t width = std::stoul(h.descr.substr(2));
  const std::size_t n = product(h.shape);
  if (bytes.size() - h.payload_offset != n * width * 4)
    throw Error(ErrorCode::kTruncatedPayload, path.string());
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    for (std::size_t j = 0; j < width; ++j) {
      std::uint32_t cp;
      std::memcpy(&cp, bytes.data() + h.payload_offset + (i * width + j) * 4, 4);
      if (cp == 0) break;
      s += cp < 0x80 ? static_cast<char>(cp) : '?';
    }
    out.push_back(std::move(s));
  }
  return out;
}

template <class T>
Tensor<T> to_tensor(const NpyArray& array) {
  if (array.shape.size() != 2 && array.shape.size() != 3)
    throw Error(ErrorCode::kShapeMismatch, "expected a 2-D or 3-D array, got " + array.shape_str());
  Shape s{static_cast<int>(array.shape[0]), static_cast<int>(array.shape[1]),
          array.shape.size() == 3 ? static_cast<int>(array.shape[2]) : 1};
  return Tensor<T>(s, array.cast<T>());
}

template Tensor<float> to_tensor<float>(const NpyArray&);
template Tensor<double> to_tensor<double>(const NpyArray&);
template Tensor<std::uint8_t> to_tensor<std::uint8_t>(const NpyArray&);
template Tensor<std::uint32_t> to_tensor<std::uint32_t>(const NpyArray&);
template Tensor<std::int32_t> to_tensor<std::int32_t>(const NpyArray&);

}  // namespace hoverpost
