#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace capsforge {

/// Error categories shared by every module. The names returned by
/// to_string() are part of the CLI and HTTP output.
enum class Errc {
  shape_mismatch,
  stride_mismatch,
  window_mismatch,
  bias_mismatch,
  data_type_mismatch,
  cycle_detected,
  dangling_edge,
  duplicate_edge,
  self_loop,
  precondition,
  empty_subset,
  overlapping_networks,
  unknown_node,
  multiple_components_remain,
  missing_input,
  input_shape_mismatch,
  not_connected,
  not_acyclic,
  degenerate,
  unsupported,
  domain_error,
  missing_target,
  stale_cache,
  invalid_config,
  incompatible_back_end,
  syntax_error,
  unknown_symbol_kind,
  unresolved_reference,
  shape_errors,
  format_error,
  hash_mismatch,
  io_error,
};

std::string_view to_string(Errc code);

/// One located problem. `where` is a vertex id, an edge "tail->head",
/// a document field path or a byte offset.
struct Diagnostic {
  Errc code;
  std::string where;
  std::string message;

  std::string str() const;
  friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::string where = {});
  Error(Errc code, const std::string& message, std::vector<Diagnostic> diagnostics);

  Errc code() const noexcept { return code_; }
  const std::string& where() const noexcept { return where_; }
  /// The message without the code and location prefix.
  const std::string& message() const noexcept { return message_; }
  const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

 private:
  Errc code_;
  std::string where_;
  std::string message_;
  std::vector<Diagnostic> diagnostics_;
};

}  // namespace capsforge
