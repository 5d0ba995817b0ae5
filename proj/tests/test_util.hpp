// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "reflectmt/util.hpp"

namespace rmtest {

inline std::string source_path(const std::string& rel) {
  return std::string(REFLECTMT_SOURCE_DIR) + "/" + rel;
}

inline std::string read_fixture(const std::string& rel) {
  return reflectmt::read_file(source_path(rel));
}

}  // namespace rmtest
