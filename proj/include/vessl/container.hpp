#ifndef VESSL_CONTAINER_HPP
#define VESSL_CONTAINER_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vessl/common.hpp"
#include "vessl/ppam.hpp"

namespace vessl {

// Little-endian binary container for named arrays, with a format version and
// the cue-extraction fingerprint baked into the header. Loading checks the
// version; inference commands additionally refuse fingerprint mismatches.
class ArrayContainer {
 public:
  static constexpr char kMagic[8] = {'V', 'S', 'S', 'L', 'A', 'R', 'R', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  enum class DType : std::uint8_t { f64 = 0, i64 = 1, u8 = 2 };

  struct Entry {
    DType dtype;
    std::vector<std::uint64_t> shape;
    std::vector<unsigned char> bytes;

    std::size_t elements() const {
      std::size_t n = 1;
      for (auto s : shape) n *= static_cast<std::size_t>(s);
      return n;
    }
  };

  std::uint64_t fingerprint = 0;

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  void put_matrix(const std::string& name, const Eigen::MatrixXd& m) {
    Entry e;
    e.dtype = DType::f64;
    e.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    e.bytes.resize(static_cast<std::size_t>(m.size()) * 8);
    // row-major on disk
    std::vector<double> tmp(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        tmp[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    std::memcpy(e.bytes.data(), tmp.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  void put_vector(const std::string& name, const Eigen::VectorXd& v) {
    Entry e;
    e.dtype = DType::f64;
    e.shape = {static_cast<std::uint64_t>(v.size())};
    e.bytes.resize(static_cast<std::size_t>(v.size()) * 8);
    std::memcpy(e.bytes.data(), v.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  void put_scalar(const std::string& name, std::int64_t v) {
    Entry e;
    e.dtype = DType::i64;
    e.shape = {1};
    e.bytes.resize(8);
    std::memcpy(e.bytes.data(), &v, 8);
    entries_[name] = std::move(e);
  }

  void put_int_matrix(const std::string& name, const Eigen::MatrixXi& m) {
    Entry e;
    e.dtype = DType::i64;
    e.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    std::vector<std::int64_t> tmp(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        tmp[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    e.bytes.resize(tmp.size() * 8);
    std::memcpy(e.bytes.data(), tmp.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  void put_bytes(const std::string& name, const std::string& data) {
    Entry e;
    e.dtype = DType::u8;
    e.shape = {static_cast<std::uint64_t>(data.size())};
    e.bytes.assign(data.begin(), data.end());
    entries_[name] = std::move(e);
  }

  const Entry& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw Error(ErrorCategory::io_error, "container entry missing: " + name);
    return it->second;
  }

  Eigen::MatrixXd get_matrix(const std::string& name) const {
    const Entry& e = get(name);
    if (e.dtype != DType::f64 || e.shape.size() != 2)
      throw Error(ErrorCategory::io_error, "entry is not an f64 matrix: " + name);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(e.shape[0]), static_cast<Eigen::Index>(e.shape[1]));
    const double* p = reinterpret_cast<const double*>(e.bytes.data());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = p[r * m.cols() + c];
    return m;
  }

  Eigen::VectorXd get_vector(const std::string& name) const {
    const Entry& e = get(name);
    if (e.dtype != DType::f64 || e.shape.size() != 1)
      throw Error(ErrorCategory::io_error, "entry is not an f64 vector: " + name);
    Eigen::VectorXd v(static_cast<Eigen::Index>(e.shape[0]));
    std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
    return v;
  }

  std::int64_t get_scalar(const std::string& name) const {
    const Entry& e = get(name);
    if (e.dtype != DType::i64 || e.elements() != 1)
      throw Error(ErrorCategory::io_error, "entry is not an i64 scalar: " + name);
    std::int64_t v;
    std::memcpy(&v, e.bytes.data(), 8);
    return v;
  }

  Eigen::MatrixXi get_int_matrix(const std::string& name) const {
    const Entry& e = get(name);
    if (e.dtype != DType::i64 || e.shape.size() != 2)
      throw Error(ErrorCategory::io_error, "entry is not an i64 matrix: " + name);
    Eigen::MatrixXi m(static_cast<Eigen::Index>(e.shape[0]), static_cast<Eigen::Index>(e.shape[1]));
    const std::int64_t* p = reinterpret_cast<const std::int64_t*>(e.bytes.data());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        m(r, c) = static_cast<int>(p[r * m.cols() + c]);
    return m;
  }

  std::string get_bytes(const std::string& name) const {
    const Entry& e = get(name);
    return std::string(e.bytes.begin(), e.bytes.end());
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCategory::io_error, "cannot write " + path);
    f.write(kMagic, 8);
    write_u32(f, kVersion);
    write_u64(f, fingerprint);
    write_u32(f, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {  // std::map: deterministic order
      write_u32(f, static_cast<std::uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      f.put(static_cast<char>(e.dtype));
      f.put(static_cast<char>(e.shape.size()));
      for (auto s : e.shape) write_u64(f, s);
      f.write(reinterpret_cast<const char*>(e.bytes.data()),
              static_cast<std::streamsize>(e.bytes.size()));
    }
    if (!f) throw Error(ErrorCategory::io_error, "short write to " + path);
  }

  static ArrayContainer load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCategory::missing_file, "cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
      throw Error(ErrorCategory::io_error, "not a container file: " + path);
    ArrayContainer c;
    const std::uint32_t version = read_u32(f);
    if (version != kVersion)
      throw Error(ErrorCategory::io_error, "unsupported container version");
    c.fingerprint = read_u64(f);
    const std::uint32_t n = read_u32(f);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t name_len = read_u32(f);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      Entry e;
      e.dtype = static_cast<DType>(f.get());
      const int ndim = f.get();
      std::size_t elems = 1;
      for (int d = 0; d < ndim; ++d) {
        e.shape.push_back(read_u64(f));
        elems *= static_cast<std::size_t>(e.shape.back());
      }
      const std::size_t esize = e.dtype == DType::u8 ? 1 : 8;
      e.bytes.resize(elems * esize);
      f.read(reinterpret_cast<char*>(e.bytes.data()),
             static_cast<std::streamsize>(e.bytes.size()));
      if (!f) throw Error(ErrorCategory::io_error, "truncated container: " + path);
      c.entries_[name] = std::move(e);
    }
    return c;
  }

 private:
  static void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void write_u64(std::ofstream& f, std::uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
  }
  static std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static std::uint64_t read_u64(std::ifstream& f) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }

  std::map<std::string, Entry> entries_;
};

// model <-> container, optionally under a key prefix so a scale ladder can
// share one file
inline void put_model(ArrayContainer& c, const PpamModel& model,
                      const std::string& prefix = "") {
  const int K = model.K(), L = model.L(), D = model.D();
  c.put_scalar(prefix + "K", K);
  c.put_scalar(prefix + "L", L);
  c.put_scalar(prefix + "D", D);
  Eigen::MatrixXd cs(K, L), gs(K, L * L), bs(K, D);
  Eigen::MatrixXd as(K, D * L);
  for (int k = 0; k < K; ++k) {
    cs.row(k) = model.c[static_cast<std::size_t>(k)].transpose();
    bs.row(k) = model.b[static_cast<std::size_t>(k)].transpose();
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < L; ++j)
        gs(k, i * L + j) = model.gamma[static_cast<std::size_t>(k)](i, j);
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < L; ++j)
        as(k, i * L + j) = model.A[static_cast<std::size_t>(k)](i, j);
  }
  c.put_matrix(prefix + "c", cs);
  c.put_matrix(prefix + "gamma", gs);
  c.put_matrix(prefix + "A", as);
  c.put_matrix(prefix + "b", bs);
  c.put_vector(prefix + "sigma2", model.sigma2);
}

inline PpamModel get_model(const ArrayContainer& c, const std::string& prefix = "") {
  PpamModel m;
  const int K = static_cast<int>(c.get_scalar(prefix + "K"));
  const int L = static_cast<int>(c.get_scalar(prefix + "L"));
  const int D = static_cast<int>(c.get_scalar(prefix + "D"));
  const Eigen::MatrixXd cs = c.get_matrix(prefix + "c");
  const Eigen::MatrixXd gs = c.get_matrix(prefix + "gamma");
  const Eigen::MatrixXd as = c.get_matrix(prefix + "A");
  const Eigen::MatrixXd bs = c.get_matrix(prefix + "b");
  m.sigma2 = c.get_vector(prefix + "sigma2");
  m.c.resize(static_cast<std::size_t>(K));
  m.gamma.resize(static_cast<std::size_t>(K));
  m.A.resize(static_cast<std::size_t>(K));
  m.b.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    m.c[static_cast<std::size_t>(k)] = cs.row(k).transpose();
    m.b[static_cast<std::size_t>(k)] = bs.row(k).transpose();
    m.gamma[static_cast<std::size_t>(k)].resize(L, L);
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < L; ++j)
        m.gamma[static_cast<std::size_t>(k)](i, j) = gs(k, i * L + j);
    m.A[static_cast<std::size_t>(k)].resize(D, L);
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < L; ++j)
        m.A[static_cast<std::size_t>(k)](i, j) = as(k, i * L + j);
  }
  m.validate();
  return m;
}

}  // namespace vessl

#endif
