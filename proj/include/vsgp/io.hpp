#pragma once

#include "vsgp/samplers.hpp"

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace vsgp {

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// Numeric CSV; a non-numeric first line is treated as a header. '#' lines are skipped.
Matrix read_csv_matrix(const std::string& path, std::vector<std::string>* header = nullptr);
void write_csv_matrix(const std::string& path, const Matrix& values, const std::vector<std::string>& header);

/// Columns x_1..x_D, y.
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const std::string& path, const Dataset& data);

Locations read_locations_csv(const std::string& path);

/// Header for the chain CSV with D length-scale and M inducing dimensions.
std::vector<std::string> chain_columns(Eigen::Index D, Eigen::Index M);

/// Streams chain rows as they are produced.
class ChainCsvWriter {
 public:
  ChainCsvWriter(const std::string& path, Eigen::Index D, Eigen::Index M, const std::string& config_hash,
                 int burn_in, int thin, bool is_signed);
  void write(const ChainRow& row);

 private:
  std::ofstream out_;
  Eigen::Index D_;
  Eigen::Index M_;
};

void write_chain_csv(const std::string& path, const SignedChain& chain, const std::string& config_hash);

/// Reads a chain written by ChainCsvWriter; rows, burn-in, thinning and signedness are restored.
SignedChain read_chain_csv(const std::string& path, std::string* config_hash = nullptr);

/// 64-bit FNV-1a digest as 16 hex characters.
std::string fnv1a_hex(const std::string& text);

}  // namespace vsgp
