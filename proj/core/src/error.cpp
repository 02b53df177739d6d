#include "capsforge/error.hpp"

namespace capsforge {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::stride_mismatch: return "StrideMismatch";
    case Errc::window_mismatch: return "WindowMismatch";
    case Errc::bias_mismatch: return "BiasMismatch";
    case Errc::data_type_mismatch: return "DataTypeMismatch";
    case Errc::cycle_detected: return "CycleDetected";
    case Errc::dangling_edge: return "DanglingEdge";
    case Errc::duplicate_edge: return "DuplicateEdge";
    case Errc::self_loop: return "SelfLoop";
    case Errc::precondition: return "PreconditionViolation";
    case Errc::empty_subset: return "EmptySubset";
    case Errc::overlapping_networks: return "OverlappingNetworks";
    case Errc::unknown_node: return "UnknownNode";
    case Errc::multiple_components_remain: return "MultipleComponentsRemain";
    case Errc::missing_input: return "MissingInput";
    case Errc::input_shape_mismatch: return "InputShapeMismatch";
    case Errc::not_connected: return "NotConnected";
    case Errc::not_acyclic: return "NotAcyclic";
    case Errc::degenerate: return "Degenerate";
    case Errc::unsupported: return "Unsupported";
    case Errc::domain_error: return "DomainError";
    case Errc::missing_target: return "MissingTarget";
    case Errc::stale_cache: return "StaleCache";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::incompatible_back_end: return "IncompatibleBackEnd";
    case Errc::syntax_error: return "SyntaxError";
    case Errc::unknown_symbol_kind: return "UnknownSymbolKind";
    case Errc::unresolved_reference: return "UnresolvedReference";
    case Errc::shape_errors: return "ShapeErrors";
    case Errc::format_error: return "FormatError";
    case Errc::hash_mismatch: return "HashMismatch";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

std::string Diagnostic::str() const {
  std::string out{to_string(code)};
  if (!where.empty()) out += "(" + where + ")";
  if (!message.empty()) out += ": " + message;
  return out;
}

namespace {

std::string compose(Errc code, const std::string& message, const std::string& where) {
  return Diagnostic{code, where, message}.str();
}

std::string compose(Errc code, const std::string& message, const std::vector<Diagnostic>& diags) {
  std::string out = compose(code, message, std::string{});
  for (const auto& d : diags) out += "\n  " + d.str();
  return out;
}

}  // namespace

Error::Error(Errc code, const std::string& message, std::string where)
    : std::runtime_error(compose(code, message, where)), code_(code), where_(std::move(where)), message_(message) {}

Error::Error(Errc code, const std::string& message, std::vector<Diagnostic> diagnostics)
    : std::runtime_error(compose(code, message, diagnostics)),
      code_(code),
      message_(message),
      diagnostics_(std::move(diagnostics)) {}

}  // namespace capsforge
