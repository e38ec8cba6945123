#include "structfill/npy.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sfill {

namespace {

const char kMagic[] = "\x93NUMPY";

std::string shape_tuple(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << shape[i] << ", ";
  os << ")";
  return os.str();
}

void write_npy(const std::string& path, const void* data, size_t elem_size,
               const char* descr, const std::vector<int64_t>& shape) {
  std::ostringstream hd;
  hd << "{'descr': '" << descr << "', 'fortran_order': False, 'shape': "
     << shape_tuple(shape) << ", }";
  std::string header = hd.str();
  // total header (magic 6 + version 2 + len 2 + dict) padded to 64 bytes, '\n' last
  size_t total = 10 + header.size() + 1;
  size_t pad = (64 - total % 64) % 64;
  header.append(pad, ' ');
  header.push_back('\n');

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("npy_save: cannot open " + path);
  f.write(kMagic, 6);
  f.put('\x01');
  f.put('\x00');
  const uint16_t hlen = static_cast<uint16_t>(header.size());
  f.put(static_cast<char>(hlen & 0xff));
  f.put(static_cast<char>(hlen >> 8));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n * elem_size));
  if (!f) throw std::runtime_error("npy_save: write failed for " + path);
}

// pulls the value after `key` in the header dict, trimming spaces
std::string dict_value(const std::string& h, const std::string& key) {
  const size_t k = h.find("'" + key + "'");
  if (k == std::string::npos) throw std::runtime_error("npy_load: header missing " + key);
  size_t p = h.find(':', k);
  if (p == std::string::npos) throw std::runtime_error("npy_load: malformed header");
  ++p;
  while (p < h.size() && h[p] == ' ') ++p;
  size_t e = p;
  if (h[p] == '(') {
    e = h.find(')', p);
    if (e == std::string::npos) throw std::runtime_error("npy_load: malformed shape");
    ++e;
  } else if (h[p] == '\'') {
    e = h.find('\'', p + 1);
    if (e == std::string::npos) throw std::runtime_error("npy_load: malformed string");
    ++e;
  } else {
    while (e < h.size() && h[e] != ',' && h[e] != '}') ++e;
  }
  return h.substr(p, e - p);
}

}  // namespace

std::vector<double> NpyArray::as_f64() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  if (is_f64()) {
    std::memcpy(out.data(), raw.data(), out.size() * sizeof(double));
  } else {
    const float* p = f32();
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(p[i]);
  }
  return out;
}

void npy_save(const std::string& path, const float* data, const std::vector<int64_t>& shape) {
  write_npy(path, data, sizeof(float), "<f4", shape);
}

void npy_save(const std::string& path, const double* data, const std::vector<int64_t>& shape) {
  write_npy(path, data, sizeof(double), "<f8", shape);
}

NpyArray npy_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("npy_load: cannot open " + path);
  char magic[6];
  f.read(magic, 6);
  if (!f || std::memcmp(magic, kMagic, 6) != 0)
    throw std::runtime_error("npy_load: bad magic in " + path);
  unsigned char ver[2];
  f.read(reinterpret_cast<char*>(ver), 2);
  if (ver[0] != 1)
    throw std::runtime_error("npy_load: unsupported version " + std::to_string(ver[0]));
  unsigned char lenb[2];
  f.read(reinterpret_cast<char*>(lenb), 2);
  const size_t hlen = static_cast<size_t>(lenb[0]) | (static_cast<size_t>(lenb[1]) << 8);
  std::string header(hlen, '\0');
  f.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("npy_load: truncated header in " + path);

  NpyArray arr;
  std::string descr = dict_value(header, "descr");
  if (descr.size() >= 2 && descr.front() == '\'') descr = descr.substr(1, descr.size() - 2);
  arr.descr = descr;
  if (arr.descr != "<f4" && arr.descr != "<f8")
    throw std::runtime_error("npy_load: unsupported dtype " + arr.descr);
  if (dict_value(header, "fortran_order").find("True") != std::string::npos)
    throw std::runtime_error("npy_load: fortran order not supported");

  std::string shp = dict_value(header, "shape");
  // strip parentheses, split on commas
  for (size_t i = 1; i + 1 < shp.size();) {
    size_t e = shp.find(',', i);
    if (e == std::string::npos) e = shp.size() - 1;
    std::string tok = shp.substr(i, e - i);
    size_t b = tok.find_first_not_of(' ');
    if (b != std::string::npos) {
      size_t t = tok.find_last_not_of(' ');
      tok = tok.substr(b, t - b + 1);
      if (!tok.empty()) arr.shape.push_back(std::stoll(tok));
    }
    i = e + 1;
  }

  const size_t elem = arr.is_f32() ? 4 : 8;
  arr.raw.resize(static_cast<size_t>(arr.numel()) * elem);
  f.read(reinterpret_cast<char*>(arr.raw.data()), static_cast<std::streamsize>(arr.raw.size()));
  if (!f) throw std::runtime_error("npy_load: truncated data in " + path);
  return arr;
}

}  // namespace sfill
