#include "gridedge/io.hpp"

#include <json.hpp>

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gridedge::io {

using nlohmann::json;

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int phase_from_char(char c) {
  switch (c) {
    case 'a': return 0;
    case 'b': return 1;
    case 'c': return 2;
    default: throw IoError(std::string("invalid phase character '") + c + "'");
  }
}

char phase_to_char(int p) { return static_cast<char>('a' + p); }

json complex_to_json(const std::complex<double>& z) {
  return json::array({z.real(), z.imag()});
}

std::complex<double> complex_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) {
    throw IoError("complex values must be [re, im] pairs");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

void write_matrix_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& row_labels,
                      const MatrixXd& values) {
  if (static_cast<int>(row_labels.size()) != values.rows()) {
    throw IoError("row label count does not match matrix rows for " + path.string());
  }
  std::ostringstream out;
  out << "channel";
  for (int j = 0; j < values.cols(); ++j) out << "," << j;
  out << "\n";
  for (int i = 0; i < values.rows(); ++i) {
    out << row_labels[i];
    for (int j = 0; j < values.cols(); ++j) out << "," << format_double(values(i, j));
    out << "\n";
  }
  write_text_file(path, out.str());
}

LabeledMatrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty CSV " + path.string());

  std::vector<std::vector<double>> rows;
  LabeledMatrix out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    if (!std::getline(ss, cell, ',')) continue;
    out.labels.push_back(cell);
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("bad numeric cell '" + cell + "' in " + path.string());
      }
    }
    rows.push_back(std::move(row));
  }
  const int r = static_cast<int>(rows.size());
  const int c = r > 0 ? static_cast<int>(rows[0].size()) : 0;
  out.values.resize(r, c);
  for (int i = 0; i < r; ++i) {
    if (static_cast<int>(rows[i].size()) != c) {
      throw IoError("ragged CSV row in " + path.string());
    }
    for (int j = 0; j < c; ++j) out.values(i, j) = rows[i][j];
  }
  return out;
}

feeder::FeederDescription read_feeder_json(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw IoError("cannot parse " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "gridedge-feeder/1") {
    throw IoError(path.string() + ": unsupported or missing feeder format tag");
  }

  feeder::FeederDescription desc;
  try {
    for (const auto& jb : j.at("buses")) {
      feeder::BusSpec bus;
      bus.id = jb.at("id").get<std::string>();
      for (char c : jb.at("phases").get<std::string>()) {
        bus.phases.push_back(phase_from_char(c));
      }
      bus.is_reference = jb.value("reference", false);
      desc.buses.push_back(std::move(bus));
    }
    for (const auto& jl : j.at("lines")) {
      feeder::LineSpec line;
      line.from = jl.at("from").get<std::string>();
      line.to = jl.at("to").get<std::string>();
      const auto& y = jl.at("y");
      if (!y.is_array() || y.size() != 3) {
        throw IoError("line admittance must be a 3x3 block of [re, im] pairs");
      }
      for (int p = 0; p < 3; ++p) {
        for (int q = 0; q < 3; ++q) {
          line.y(p, q) = complex_from_json(y[p][q]);
        }
      }
      desc.lines.push_back(std::move(line));
    }
    for (const auto& jl : j.at("loads")) {
      feeder::LoadSpec load;
      load.bus = jl.at("bus").get<std::string>();
      const std::string phase = jl.at("phase").get<std::string>();
      if (phase.size() != 1) throw IoError("load phase must be a single character");
      load.phase = phase_from_char(phase[0]);
      load.node = jl.at("node").get<int>();
      desc.loads.push_back(std::move(load));
    }
    const auto& v0 = j.at("v0");
    desc.v0.resize(v0.size());
    for (size_t i = 0; i < v0.size(); ++i) desc.v0[i] = complex_from_json(v0[i]);
    if (j.contains("sensors")) {
      for (const auto& js : j.at("sensors")) {
        feeder::SensorPlacement s;
        const std::string kind = js.at("kind").get<std::string>();
        if (kind == "feeder-head-power") {
          s.kind = feeder::SensorPlacement::Kind::FeederHeadPower;
        } else if (kind == "lateral-power") {
          s.kind = feeder::SensorPlacement::Kind::LateralPower;
        } else {
          throw IoError("unknown sensor kind '" + kind + "'");
        }
        s.bus = js.at("bus").get<std::string>();
        if (js.contains("downstream")) {
          s.downstream = js.at("downstream").get<std::vector<int>>();
        }
        desc.sensors.push_back(std::move(s));
      }
    }
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return desc;
}

void write_feeder_json(const std::filesystem::path& path,
                       const feeder::FeederDescription& desc) {
  json j;
  j["format"] = "gridedge-feeder/1";
  j["buses"] = json::array();
  for (const auto& bus : desc.buses) {
    std::string phases;
    for (int p : bus.phases) phases += phase_to_char(p);
    json jb{{"id", bus.id}, {"phases", phases}};
    if (bus.is_reference) jb["reference"] = true;
    j["buses"].push_back(std::move(jb));
  }
  j["lines"] = json::array();
  for (const auto& line : desc.lines) {
    json y = json::array();
    for (int p = 0; p < 3; ++p) {
      json row = json::array();
      for (int q = 0; q < 3; ++q) row.push_back(complex_to_json(line.y(p, q)));
      y.push_back(std::move(row));
    }
    j["lines"].push_back({{"from", line.from}, {"to", line.to}, {"y", std::move(y)}});
  }
  j["loads"] = json::array();
  for (const auto& load : desc.loads) {
    j["loads"].push_back({{"bus", load.bus},
                          {"phase", std::string(1, phase_to_char(load.phase))},
                          {"node", load.node}});
  }
  j["v0"] = json::array();
  for (int i = 0; i < desc.v0.size(); ++i) j["v0"].push_back(complex_to_json(desc.v0[i]));
  j["sensors"] = json::array();
  for (const auto& s : desc.sensors) {
    json js{{"kind", s.kind == feeder::SensorPlacement::Kind::FeederHeadPower
                         ? "feeder-head-power"
                         : "lateral-power"},
            {"bus", s.bus}};
    if (!s.downstream.empty()) js["downstream"] = s.downstream;
    j["sensors"].push_back(std::move(js));
  }
  write_text_file(path, j.dump(2) + "\n");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

std::string hash_hex(const std::string& bytes) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(bytes));
  return buf;
}

std::string file_hash_hex(const std::filesystem::path& path) {
  return hash_hex(read_text_file(path));
}

std::vector<std::string> numbered_labels(const std::string& prefix, int count,
                                         int first) {
  std::vector<std::string> labels;
  labels.reserve(count);
  for (int i = 0; i < count; ++i) {
    labels.push_back(prefix + std::to_string(first + i));
  }
  return labels;
}

}  // namespace gridedge::io
