#pragma once

#include <optional>
#include <string>
#include <vector>

#include "capsforge/model_io.hpp"

namespace capsforge {

struct VertexShapeRow {
  VertexId id;
  std::string kind;
  std::optional<Shape> total_shape;  // U, non-input capsules
  std::optional<Shape> output_shape;
};

/// Outcome of validating a parsed document. Lowering failures are data
/// here; only malformed documents throw (from parse_document).
struct ValidationReport {
  bool valid = false;
  std::string document_hash;
  std::vector<VertexShapeRow> vertices;
  /// "layered" or "skip"; empty when the graph cannot be classified.
  std::string layering;
  std::vector<std::vector<VertexId>> layers;
  std::vector<Diagnostic> errors;
};

ValidationReport validate_document(const GraphDocument& doc);

/// Canonical JSON text of a report.
std::string to_json(const ValidationReport& report);

/// Human-readable multi-line rendering.
std::string to_text(const ValidationReport& report);

/// {"code", "where", "message"} list as JSON text.
std::string diagnostics_json(const std::vector<Diagnostic>& diags);

}  // namespace capsforge
