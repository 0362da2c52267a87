#include "pmim/serialize.hpp"

#include <array>
#include <limits>

namespace pmim {

size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::f32:
      return 4;
    case Dtype::f64:
      return 8;
    case Dtype::i32:
      return 4;
  }
  throw data_error("unknown dtype code " + std::to_string(static_cast<int>(d)));
}

std::string dtype_name(Dtype d) {
  switch (d) {
    case Dtype::f32:
      return "f32";
    case Dtype::f64:
      return "f64";
    case Dtype::i32:
      return "i32";
  }
  return "?";
}

Dtype dtype_from_name(const std::string& s) {
  if (s == "f32") return Dtype::f32;
  if (s == "f64") return Dtype::f64;
  if (s == "i32") return Dtype::i32;
  throw data_error("unknown dtype name '" + s + "'");
}

uint64_t RawTensor::elem_count() const {
  uint64_t n = 1;
  for (uint64_t d : dims) {
    PMIM_CHECK_DATA(d == 0 || n <= std::numeric_limits<uint64_t>::max() / d,
                    "tensor dimension product overflows");
    n *= d;
  }
  return n;
}

namespace io {

void put_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  PMIM_CHECK_DATA(out.good(), "write failed after ", n, " bytes");
}

void put_u32(std::ostream& out, uint32_t v) { put_bytes(out, &v, 4); }
void put_u64(std::ostream& out, uint64_t v) { put_bytes(out, &v, 8); }

void get_bytes(std::istream& in, void* p, size_t n, const std::string& what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  PMIM_CHECK_DATA(static_cast<size_t>(in.gcount()) == n, what, ": expected ", n,
                  " bytes, got ", in.gcount());
}

uint32_t get_u32(std::istream& in, const std::string& what) {
  uint32_t v = 0;
  get_bytes(in, &v, 4, what);
  return v;
}

uint64_t get_u64(std::istream& in, const std::string& what) {
  uint64_t v = 0;
  get_bytes(in, &v, 8, what);
  return v;
}

void expect_eof(std::istream& in, const std::string& what) {
  in.peek();
  PMIM_CHECK_DATA(in.eof(), what, ": trailing bytes after expected end of file");
}

std::ifstream open_input(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  PMIM_CHECK_CONFIG(f.is_open(), "cannot open '", path, "' for reading");
  return f;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  PMIM_CHECK_CONFIG(f.is_open(), "cannot open '", path, "' for writing");
  return f;
}

}  // namespace io

namespace {
constexpr std::array<char, 4> kMagic = {'R', 'T', 'E', 'N'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kMaxRank = 8;
constexpr uint64_t kMaxElems = uint64_t(1) << 32;
}  // namespace

void write_raw_tensor(const std::string& path, const RawTensor& t) {
  PMIM_CHECK(t.data.size() == t.elem_count() * dtype_size(t.dtype),
             "raw tensor payload inconsistent with dims");
  PMIM_CHECK(t.dims.size() <= kMaxRank, "raw tensor rank too large");
  auto out = io::open_output(path);
  io::put_bytes(out, kMagic.data(), 4);
  io::put_u32(out, kVersion);
  const uint8_t dtype = static_cast<uint8_t>(t.dtype);
  const uint8_t rank = static_cast<uint8_t>(t.dims.size());
  io::put_bytes(out, &dtype, 1);
  io::put_bytes(out, &rank, 1);
  for (uint64_t d : t.dims) io::put_u64(out, d);
  if (!t.data.empty()) io::put_bytes(out, t.data.data(), t.data.size());
}

RawTensor read_raw_tensor(const std::string& path) {
  auto in = io::open_input(path);
  std::array<char, 4> magic{};
  io::get_bytes(in, magic.data(), 4, path + ": magic");
  PMIM_CHECK_DATA(magic == kMagic, path, ": bad magic (not a raw tensor file)");
  const uint32_t version = io::get_u32(in, path + ": version");
  PMIM_CHECK_DATA(version == kVersion, path, ": unsupported version ", version,
                  " (expected ", kVersion, ")");
  uint8_t dtype = 0, rank = 0;
  io::get_bytes(in, &dtype, 1, path + ": dtype");
  io::get_bytes(in, &rank, 1, path + ": rank");
  PMIM_CHECK_DATA(dtype >= 1 && dtype <= 3, path, ": unknown dtype code ",
                  int(dtype));
  PMIM_CHECK_DATA(rank <= kMaxRank, path, ": rank ", int(rank), " exceeds limit ",
                  int(kMaxRank));
  RawTensor t;
  t.dtype = static_cast<Dtype>(dtype);
  t.dims.resize(rank);
  for (auto& d : t.dims) d = io::get_u64(in, path + ": dims");
  const uint64_t elems = t.elem_count();
  PMIM_CHECK_DATA(elems <= kMaxElems, path, ": element count ", elems,
                  " exceeds limit");
  t.data.resize(static_cast<size_t>(elems) * dtype_size(t.dtype));
  if (!t.data.empty())
    io::get_bytes(in, t.data.data(), t.data.size(), path + ": payload");
  io::expect_eof(in, path);
  return t;
}

RawTensor tensor_from_ints(const std::vector<int32_t>& v,
                           std::vector<uint64_t> dims) {
  RawTensor t;
  t.dtype = Dtype::i32;
  t.dims = std::move(dims);
  PMIM_CHECK(t.elem_count() == v.size(), "int tensor dims inconsistent");
  t.data.resize(4 * v.size());
  if (!v.empty()) std::memcpy(t.data.data(), v.data(), t.data.size());
  return t;
}

std::vector<int32_t> ints_from_tensor(const RawTensor& t, const std::string& what) {
  PMIM_CHECK_DATA(t.dtype == Dtype::i32, what, ": dtype is ", dtype_name(t.dtype),
                  ", expected i32");
  std::vector<int32_t> v(static_cast<size_t>(t.elem_count()));
  if (!v.empty()) std::memcpy(v.data(), t.data.data(), t.data.size());
  return v;
}

}  // namespace pmim
