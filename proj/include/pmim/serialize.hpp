#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pmim/errors.hpp"
#include "pmim/mat.hpp"

namespace pmim {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

enum class Dtype : uint8_t { f32 = 1, f64 = 2, i32 = 3 };

size_t dtype_size(Dtype d);
std::string dtype_name(Dtype d);
Dtype dtype_from_name(const std::string& s);

// Flat n-dimensional tensor with raw little-endian storage.
struct RawTensor {
  Dtype dtype = Dtype::f32;
  std::vector<uint64_t> dims;
  std::vector<unsigned char> data;

  uint64_t elem_count() const;
  size_t byte_count() const { return data.size(); }
};

// File layout: "RTEN" | u32 version | u8 dtype | u8 rank | rank x u64 dims |
// little-endian payload. No trailing bytes allowed.
void write_raw_tensor(const std::string& path, const RawTensor& t);
RawTensor read_raw_tensor(const std::string& path);

template <class S>
RawTensor tensor_from_matrix(const Mat<S>& m) {
  RawTensor t;
  t.dtype = sizeof(S) == 4 ? Dtype::f32 : Dtype::f64;
  t.dims = {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())};
  t.data.resize(sizeof(S) * static_cast<size_t>(m.size()));
  if (!t.data.empty()) std::memcpy(t.data.data(), m.data(), t.data.size());
  return t;
}

template <class S>
Mat<S> matrix_from_tensor(const RawTensor& t, const std::string& what) {
  const Dtype want = sizeof(S) == 4 ? Dtype::f32 : Dtype::f64;
  PMIM_CHECK_DATA(t.dtype == want, what, ": dtype is ", dtype_name(t.dtype),
                  ", expected ", dtype_name(want));
  PMIM_CHECK_DATA(t.dims.size() == 2, what, ": rank is ", t.dims.size(),
                  ", expected 2");
  Mat<S> m(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]));
  PMIM_CHECK_DATA(t.data.size() == sizeof(S) * static_cast<size_t>(m.size()), what,
                  ": payload size mismatch");
  if (!t.data.empty()) std::memcpy(m.data(), t.data.data(), t.data.size());
  return m;
}

RawTensor tensor_from_ints(const std::vector<int32_t>& v,
                           std::vector<uint64_t> dims);
std::vector<int32_t> ints_from_tensor(const RawTensor& t, const std::string& what);

// Low-level helpers shared by the tensor, image and checkpoint writers.
namespace io {

void put_bytes(std::ostream& out, const void* p, size_t n);
void put_u32(std::ostream& out, uint32_t v);
void put_u64(std::ostream& out, uint64_t v);
void get_bytes(std::istream& in, void* p, size_t n, const std::string& what);
uint32_t get_u32(std::istream& in, const std::string& what);
uint64_t get_u64(std::istream& in, const std::string& what);
void expect_eof(std::istream& in, const std::string& what);
std::ifstream open_input(const std::string& path);
std::ofstream open_output(const std::string& path);

}  // namespace io

}  // namespace pmim
