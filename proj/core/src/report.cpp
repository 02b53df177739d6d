#include "capsforge/report.hpp"

#include <sstream>

#include <json.hpp>

namespace capsforge {

using nlohmann::json;

namespace {

json diagnostics_to_json(const std::vector<Diagnostic>& diags) {
  json out = json::array();
  for (const auto& d : diags) {
    out.push_back({{"code", std::string(to_string(d.code))}, {"where", d.where}, {"message", d.message}});
  }
  return out;
}

}  // namespace

ValidationReport validate_document(const GraphDocument& doc) {
  ValidationReport report;
  report.document_hash = document_hash(doc);
  std::map<VertexId, std::string> kinds;
  for (const auto& c : doc.graph.capsules) kinds[c.id] = std::string(to_string(c.kind));
  try {
    const auto net = lower_symbols(doc.graph);
    const auto& shapes = net.shape_report();
    for (const auto& id : net.dag().vertices()) {
      VertexShapeRow row{id, kinds[id], std::nullopt, std::nullopt};
      if (auto it = shapes.total_shape.find(id); it != shapes.total_shape.end()) row.total_shape = it->second;
      if (auto it = shapes.output_shape.find(id); it != shapes.output_shape.end()) row.output_shape = it->second;
      report.vertices.push_back(std::move(row));
    }
    if (!net.roles().outputs.empty()) {
      const auto layering = classify_layering(net.dag());
      report.layering = layering.layered() ? "layered" : "skip";
      if (layering.layered()) report.layers = layering.layering->layers;
    }
    report.valid = true;
  } catch (const Error& e) {
    if (e.diagnostics().empty()) {
      report.errors.push_back({e.code(), e.where(), e.message()});
    } else {
      report.errors = e.diagnostics();
    }
    for (const auto& c : doc.graph.capsules) report.vertices.push_back({c.id, kinds[c.id], std::nullopt, std::nullopt});
  }
  return report;
}

std::string to_json(const ValidationReport& report) {
  json vertices = json::array();
  for (const auto& row : report.vertices) {
    json v{{"id", row.id}, {"kind", row.kind}};
    v["total_shape"] = row.total_shape ? json(*row.total_shape) : json(nullptr);
    v["output_shape"] = row.output_shape ? json(*row.output_shape) : json(nullptr);
    vertices.push_back(std::move(v));
  }
  json out{{"valid", report.valid},
           {"document_hash", report.document_hash},
           {"vertices", vertices},
           {"layering", report.layering.empty() ? json(nullptr) : json(report.layering)},
           {"layers", report.layers},
           {"errors", diagnostics_to_json(report.errors)}};
  return out.dump(2) + "\n";
}

std::string to_text(const ValidationReport& report) {
  std::ostringstream out;
  for (const auto& row : report.vertices) {
    out << row.id << "  " << row.kind;
    if (row.total_shape) out << "  in " << to_string(*row.total_shape);
    if (row.output_shape) out << "  out " << to_string(*row.output_shape);
    out << "\n";
  }
  if (!report.layering.empty()) out << "classification: " << report.layering << "\n";
  for (const auto& d : report.errors) out << "error: " << d.str() << "\n";
  out << (report.valid ? "valid" : "invalid") << "\n";
  return out.str();
}

std::string diagnostics_json(const std::vector<Diagnostic>& diags) { return diagnostics_to_json(diags).dump(2) + "\n"; }

}  // namespace capsforge
