#ifndef GRIDEDGE_IO_HPP
#define GRIDEDGE_IO_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gridedge/feeder.hpp"

namespace gridedge::io {

using Eigen::MatrixXd;

// Matrix CSV layout: header "channel,0,1,..." (column timestamps in minutes
// or sample indices), then one labeled row per channel. Values are written
// with round-trip precision so identical data produce identical bytes.
void write_matrix_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& row_labels,
                      const MatrixXd& values);

struct LabeledMatrix {
  std::vector<std::string> labels;
  MatrixXd values;
};

LabeledMatrix read_matrix_csv(const std::filesystem::path& path);

// Feeder description files: "gridedge-feeder/1" JSON schema. Complex values
// are [re, im] pairs, admittances in siemens, voltages in volts.
feeder::FeederDescription read_feeder_json(const std::filesystem::path& path);
void write_feeder_json(const std::filesystem::path& path,
                       const feeder::FeederDescription& desc);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// FNV-1a 64-bit content hash used by run manifests.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hash_hex(const std::string& bytes);
std::string file_hash_hex(const std::filesystem::path& path);

std::vector<std::string> numbered_labels(const std::string& prefix, int count,
                                         int first = 1);

}  // namespace gridedge::io

#endif  // GRIDEDGE_IO_HPP
