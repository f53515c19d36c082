#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "lspec/tensor.hpp"

namespace lspec {

// Raw NPY v1.0 array: little-endian f4/f8, C order, any rank.
struct NpyArray {
  std::vector<Index> shape;
  bool is_f8 = true;
  std::vector<float> f4;
  std::vector<double> f8;

  Index count() const {
    Index n = 1;
    for (Index s : shape) n *= s;
    return n;
  }
};

namespace detail {

inline std::string npy_header_dict(const std::string& descr,
                                   const std::vector<Index>& shape) {
  std::ostringstream os;
  os << "{'descr': '" << descr << "', 'fortran_order': False, 'shape': (";
  for (size_t i = 0; i < shape.size(); ++i) {
    os << shape[i];
    if (shape.size() == 1 || i + 1 < shape.size()) os << ",";
    if (i + 1 < shape.size()) os << " ";
  }
  os << "), }";
  return os.str();
}

inline std::string parse_quoted_after(const std::string& header,
                                      const std::string& key,
                                      const std::string& path) {
  size_t k = header.find(key);
  if (k == std::string::npos)
    throw std::runtime_error(path + ": malformed npy header, missing " + key);
  size_t a = header.find('\'', k + key.size());
  size_t b = header.find('\'', a + 1);
  if (a == std::string::npos || b == std::string::npos)
    throw std::runtime_error(path + ": malformed npy header value for " + key);
  return header.substr(a + 1, b - a - 1);
}

}  // namespace detail

inline NpyArray read_npy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0)
    throw std::runtime_error(path + ": not an NPY file (bad magic)");
  const unsigned major = static_cast<unsigned char>(bytes[6]);
  const unsigned minor = static_cast<unsigned char>(bytes[7]);
  if (major != 1 || minor != 0)
    throw std::runtime_error(path + ": unsupported NPY version " +
                             std::to_string(major) + "." + std::to_string(minor));
  const size_t hlen = static_cast<unsigned char>(bytes[8]) |
                      (static_cast<unsigned char>(bytes[9]) << 8);
  if (bytes.size() < 10 + hlen)
    throw std::runtime_error(path + ": truncated NPY header");
  const std::string header = bytes.substr(10, hlen);

  const std::string descr = detail::parse_quoted_after(header, "'descr'", path);
  NpyArray out;
  if (descr == "<f8")
    out.is_f8 = true;
  else if (descr == "<f4")
    out.is_f8 = false;
  else
    throw std::runtime_error(path + ": unsupported dtype '" + descr +
                             "' (expected <f4 or <f8)");

  size_t fo = header.find("'fortran_order'");
  if (fo == std::string::npos || header.find("False", fo) == std::string::npos)
    throw std::runtime_error(path + ": only C-order (fortran_order: False) supported");

  size_t sp = header.find("'shape'");
  if (sp == std::string::npos)
    throw std::runtime_error(path + ": malformed npy header, missing shape");
  size_t open = header.find('(', sp);
  size_t close = header.find(')', open);
  if (open == std::string::npos || close == std::string::npos)
    throw std::runtime_error(path + ": malformed shape tuple");
  std::string tup = header.substr(open + 1, close - open - 1);
  std::stringstream ts(tup);
  std::string tok;
  while (std::getline(ts, tok, ',')) {
    std::string trimmed;
    for (char ch : tok)
      if (!std::isspace(static_cast<unsigned char>(ch))) trimmed += ch;
    if (trimmed.empty()) continue;
    out.shape.push_back(static_cast<Index>(std::stoll(trimmed)));
  }

  const size_t item = out.is_f8 ? 8 : 4;
  const size_t want = static_cast<size_t>(out.count()) * item;
  const size_t have = bytes.size() - 10 - hlen;
  if (have != want)
    throw std::runtime_error(path + ": payload size mismatch (" +
                             std::to_string(have) + " bytes, expected " +
                             std::to_string(want) + ")");
  const char* payload = bytes.data() + 10 + hlen;
  if (out.is_f8) {
    out.f8.resize(out.count());
    std::memcpy(out.f8.data(), payload, want);
  } else {
    out.f4.resize(out.count());
    std::memcpy(out.f4.data(), payload, want);
  }
  return out;
}

template <class Scalar>
void write_npy(const std::string& path, const std::vector<Index>& shape,
               const Scalar* data, Index n) {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  Index total = 1;
  for (Index s : shape) total *= s;
  if (total != n) throw std::invalid_argument("write_npy: shape/count mismatch");

  std::string dict = detail::npy_header_dict(
      std::is_same_v<Scalar, double> ? "<f8" : "<f4", shape);
  size_t unpadded = 10 + dict.size() + 1;
  size_t padded = ((unpadded + 63) / 64) * 64;
  dict.append(padded - unpadded, ' ');
  dict.push_back('\n');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write("\x93NUMPY\x01\x00", 8);
  const uint16_t hlen = static_cast<uint16_t>(dict.size());
  const char lenb[2] = {static_cast<char>(hlen & 0xff),
                        static_cast<char>(hlen >> 8)};
  out.write(lenb, 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(sizeof(Scalar) * n));
  if (!out) throw std::runtime_error(path + ": write failed");
}

using AnyBatch = std::variant<LatentBatch<float>, LatentBatch<double>>;

namespace detail {

template <class Scalar>
LatentBatch<Scalar> batch_from_values(const std::vector<Index>& shape,
                                      const Scalar* values) {
  TensorDims dims;
  Index b = 1;
  if (shape.size() == 5) {
    b = shape[0];
    dims = {shape[1], shape[2], shape[3], shape[4]};
  } else {
    dims = {shape[0], shape[1], shape[2], shape[3]};
  }
  if (b < 1) throw std::runtime_error("batch dimension must be >= 1");
  check_dims(dims);
  std::vector<LatentTensor<Scalar>> items;
  items.reserve(b);
  for (Index i = 0; i < b; ++i) {
    PositionMatrix<Scalar> m(dims.positions(), dims.c);
    std::memcpy(m.data(), values + i * dims.size(),
                sizeof(Scalar) * dims.size());
    items.emplace_back(dims, std::move(m));
  }
  LatentBatch<Scalar> batch(std::move(items));
  batch.require_finite("read_tensor");
  return batch;
}

inline AnyBatch batch_from_npy(const NpyArray& arr, const std::string& path) {
  if (arr.shape.size() != 4 && arr.shape.size() != 5)
    throw std::runtime_error(path + ": expected rank 4 (T,H,W,C) or rank 5 " +
                             "(B,T,H,W,C), got rank " +
                             std::to_string(arr.shape.size()));
  if (arr.is_f8) return batch_from_values<double>(arr.shape, arr.f8.data());
  return batch_from_values<float>(arr.shape, arr.f4.data());
}

}  // namespace detail

// Reads a batch from a rank-4/5 NPY file, or from a directory of rank-4 NPY
// files (sorted by name, shared dims and dtype). Dtype is preserved as-is.
inline AnyBatch read_tensor(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".npy")
        files.push_back(entry.path().string());
    }
    if (files.empty())
      throw std::runtime_error(path + ": directory contains no .npy files");
    std::sort(files.begin(), files.end());
    std::vector<AnyBatch> parts;
    parts.reserve(files.size());
    for (const auto& f : files)
      parts.push_back(detail::batch_from_npy(read_npy(f), f));
    return std::visit(
        [&]<class S>(const LatentBatch<S>& first) -> AnyBatch {
          std::vector<LatentTensor<S>> items;
          for (auto& part : parts) {
            auto* same = std::get_if<LatentBatch<S>>(&part);
            if (same == nullptr)
              throw std::runtime_error(path + ": mixed dtypes in directory");
            if (!(same->dims() == first.dims()))
              throw std::runtime_error(path + ": mixed shapes in directory");
            for (const auto& item : same->items()) items.push_back(item);
          }
          return LatentBatch<S>(std::move(items));
        },
        parts.front());
  }
  return detail::batch_from_npy(read_npy(path), path);
}

// Writes rank-4 for a single tensor, rank-5 for a multi-item batch.
template <class Scalar>
void write_tensor(const LatentBatch<Scalar>& batch, const std::string& path) {
  const TensorDims& d = batch.dims();
  std::vector<Scalar> flat;
  flat.resize(static_cast<size_t>(batch.size()) * d.size());
  for (Index i = 0; i < batch.size(); ++i)
    std::memcpy(flat.data() + i * d.size(), batch[i].data(),
                sizeof(Scalar) * d.size());
  if (batch.size() == 1) {
    write_npy(path, {d.t, d.h, d.w, d.c}, flat.data(), d.size());
  } else {
    write_npy(path, {batch.size(), d.t, d.h, d.w, d.c}, flat.data(),
              static_cast<Index>(flat.size()));
  }
}

}  // namespace lspec
