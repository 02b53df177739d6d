#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "capsforge/error.hpp"
#include "capsforge/model_io.hpp"

namespace testutil {

/// Code of the capsforge::Error thrown by f, or nullopt when none is thrown.
template <class F>
std::optional<capsforge::Errc> error_code(F&& f) {
  try {
    f();
  } catch (const capsforge::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(CAPSFORGE_TEST_DATA_DIR) / name;
}

inline std::string data_text(const std::string& name) { return capsforge::read_text_file(data_path(name)); }

}  // namespace testutil
