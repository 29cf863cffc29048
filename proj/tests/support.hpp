#pragma once

#include "nlinv/dsl.hpp"

#include <fstream>
#include <sstream>
#include <string>

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlinv::dsl::LoopProgram load_benchmark(const std::string& name) {
  return nlinv::dsl::parse_program(read_file(std::string(NLINV_SOURCE_DIR) + "/benchmarks/" + name + ".loop"), name);
}
