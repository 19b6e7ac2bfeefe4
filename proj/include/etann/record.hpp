#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "etann/symtensor.hpp"

namespace etann {

/// Column layout of one training sample:
///   t, eps(6), eps_rate(6), z(nz), z_rate(nz), sig(6), psi, d[, xi(nxi), xi_rate(nxi)]
/// Strain rates are exactly constant within each generation interval; all
/// other rates are first-order backward differences assigned to the interval
/// start, and never cross a path re-initialization.
struct DatasetSchema {
  int nz = 0;
  int nxi = 0;

  int row_width() const { return 21 + 2 * nz + 2 * nxi; }
  int col_t() const { return 0; }
  int col_eps() const { return 1; }
  int col_eps_rate() const { return 7; }
  int col_z() const { return 13; }
  int col_z_rate() const { return 13 + nz; }
  int col_sig() const { return 13 + 2 * nz; }
  int col_psi() const { return 19 + 2 * nz; }
  int col_d() const { return 20 + 2 * nz; }
  int col_xi() const { return 21 + 2 * nz; }
  int col_xi_rate() const { return 21 + 2 * nz + nxi; }

  bool operator==(const DatasetSchema&) const = default;
};

class Dataset {
 public:
  DatasetSchema schema;
  nlohmann::json meta;       // generator config, conventions, units, seed
  std::vector<double> rows;  // row-major, 64-bit

  std::size_t n_records() const {
    return rows.size() / static_cast<std::size_t>(schema.row_width());
  }

  std::span<double> row(std::size_t i) {
    const std::size_t w = static_cast<std::size_t>(schema.row_width());
    return {rows.data() + i * w, w};
  }
  std::span<const double> row(std::size_t i) const {
    const std::size_t w = static_cast<std::size_t>(schema.row_width());
    return {rows.data() + i * w, w};
  }

  SymTensor6 eps(std::size_t i) const { return tensor_at(i, schema.col_eps()); }
  SymTensor6 eps_rate(std::size_t i) const { return tensor_at(i, schema.col_eps_rate()); }
  SymTensor6 sig(std::size_t i) const { return tensor_at(i, schema.col_sig()); }
  double t(std::size_t i) const { return row(i)[static_cast<std::size_t>(schema.col_t())]; }
  double psi(std::size_t i) const { return row(i)[static_cast<std::size_t>(schema.col_psi())]; }
  double d(std::size_t i) const { return row(i)[static_cast<std::size_t>(schema.col_d())]; }
  std::span<const double> z(std::size_t i) const {
    return row(i).subspan(static_cast<std::size_t>(schema.col_z()),
                          static_cast<std::size_t>(schema.nz));
  }
  std::span<const double> z_rate(std::size_t i) const {
    return row(i).subspan(static_cast<std::size_t>(schema.col_z_rate()),
                          static_cast<std::size_t>(schema.nz));
  }
  std::span<const double> xi(std::size_t i) const {
    return row(i).subspan(static_cast<std::size_t>(schema.col_xi()),
                          static_cast<std::size_t>(schema.nxi));
  }
  std::span<const double> xi_rate(std::size_t i) const {
    return row(i).subspan(static_cast<std::size_t>(schema.col_xi_rate()),
                          static_cast<std::size_t>(schema.nxi));
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("Dataset::save: cannot open " + path);
    nlohmann::json header = meta;
    header["format"] = "etann-dataset";
    header["format_version"] = 1;
    header["nz"] = schema.nz;
    header["nxi"] = schema.nxi;
    header["row_width"] = schema.row_width();
    header["n_records"] = n_records();
    const std::string hs = header.dump();
    os << "ETANN-DATASET v1\n" << hs << "\n#BINARY " << rows.size() << "\n";
    os.write(reinterpret_cast<const char*>(rows.data()),
             static_cast<std::streamsize>(rows.size() * sizeof(double)));
  }

  static Dataset load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("Dataset::load: cannot open " + path);
    std::string line;
    std::getline(is, line);
    if (line != "ETANN-DATASET v1") throw std::runtime_error("Dataset::load: bad magic in " + path);
    std::getline(is, line);
    Dataset ds;
    ds.meta = nlohmann::json::parse(line);
    ds.schema.nz = ds.meta.at("nz").get<int>();
    ds.schema.nxi = ds.meta.at("nxi").get<int>();
    std::getline(is, line);
    if (line.rfind("#BINARY ", 0) != 0) throw std::runtime_error("Dataset::load: missing blob");
    const std::size_t n = std::stoull(line.substr(8));
    ds.rows.resize(n);
    is.read(reinterpret_cast<char*>(ds.rows.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("Dataset::load: truncated blob in " + path);
    return ds;
  }

  void to_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("Dataset::to_csv: cannot open " + path);
    os.precision(17);
    os << "t";
    const char* eps_names[6] = {"11", "22", "33", "12", "13", "23"};
    for (const char* n : eps_names) os << ",eps_" << n;
    for (const char* n : eps_names) os << ",eps_rate_" << n;
    for (int j = 0; j < schema.nz; ++j) os << ",z_" << j;
    for (int j = 0; j < schema.nz; ++j) os << ",z_rate_" << j;
    for (const char* n : eps_names) os << ",sig_" << n;
    os << ",psi,d";
    for (int j = 0; j < schema.nxi; ++j) os << ",xi_" << j;
    for (int j = 0; j < schema.nxi; ++j) os << ",xi_rate_" << j;
    os << "\n";
    for (std::size_t i = 0; i < n_records(); ++i) {
      const auto r = row(i);
      for (std::size_t j = 0; j < r.size(); ++j) {
        if (j) os << ",";
        os << r[j];
      }
      os << "\n";
    }
  }

 private:
  SymTensor6 tensor_at(std::size_t i, int col) const {
    const auto r = row(i);
    SymTensor6 t;
    for (int j = 0; j < 6; ++j)
      t.c[static_cast<std::size_t>(j)] = r[static_cast<std::size_t>(col + j)];
    return t;
  }
};

}  // namespace etann
