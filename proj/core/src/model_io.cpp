#include "capsforge/model_io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

namespace capsforge {

using nlohmann::json;

namespace {

[[noreturn]] void syntax(const std::string& path, const std::string& msg) {
  throw Error(Errc::syntax_error, msg, path);
}

std::string line_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    syntax(line_column(text, e.byte == 0 ? 0 : e.byte - 1), e.what());
  }
}

std::string dump_canonical(const json& j) { return j.dump(2) + "\n"; }

const json& field(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) syntax(path, std::string("missing field \"") + key + "\"");
  return *it;
}

std::string string_field(const json& obj, const char* key, const std::string& path) {
  const auto& v = field(obj, key, path);
  if (!v.is_string()) syntax(path + "." + key, "expected a string");
  return v.get<std::string>();
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& path) {
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      syntax(path + "." + key, "unknown field");
    }
  }
}

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64_le(std::vector<std::uint8_t>& out, double v) { put_u64_le(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

json payload_to_json(const Tensor& t) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(t.size() * 8);
  for (double v : t.data()) put_f64_le(bytes, v);
  return json{{"shape", t.shape()}, {"dtype", std::string(to_string(t.dtype()))},
              {"data", base64_encode(bytes)}};
}

Tensor payload_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) syntax(path, "expected a payload object");
  reject_unknown_keys(j, {"shape", "dtype", "data"}, path);
  const auto& shape_j = field(j, "shape", path);
  if (!shape_j.is_array() || shape_j.empty()) syntax(path + ".shape", "expected a non-empty array");
  Shape shape;
  for (const auto& d : shape_j) {
    if (!d.is_number_unsigned() || d.get<std::size_t>() == 0) {
      syntax(path + ".shape", "extents must be positive integers");
    }
    shape.push_back(d.get<std::size_t>());
  }
  const auto dtype = parse_dtype(string_field(j, "dtype", path));
  if (!dtype) syntax(path + ".dtype", "unknown dtype");
  std::vector<std::uint8_t> bytes;
  try {
    bytes = base64_decode(string_field(j, "data", path));
  } catch (const Error& e) {
    syntax(path + ".data", e.message());
  }
  const std::size_t count = element_count(shape);
  if (bytes.size() != count * 8) {
    syntax(path + ".data", "payload holds " + std::to_string(bytes.size()) + " bytes, shape " +
                               to_string(shape) + " needs " + std::to_string(count * 8));
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(get_u64_le(&bytes[i * 8]));
  return Tensor(shape, std::move(values), *dtype);
}

/// Reads one attribute object against the catalog schema of `kind`.
std::map<std::string, json> read_attributes(const json& attrs, const SymbolDef& def,
                                            const std::string& path) {
  if (!attrs.is_object()) syntax(path, "expected an object");
  std::map<std::string, json> out;
  for (const auto& [key, value] : attrs.items()) {
    auto it = std::find_if(def.attributes.begin(), def.attributes.end(),
                           [&](const AttributeDef& a) { return a.name == key; });
    if (it == def.attributes.end()) syntax(path + "." + key, "unknown attribute for " + def.kind);
    switch (it->type) {
      case AttrType::integer:
        if (!value.is_number_unsigned()) syntax(path + "." + key, "expected a non-negative integer");
        break;
      case AttrType::number:
        if (!value.is_number()) syntax(path + "." + key, "expected a number");
        break;
      case AttrType::dtype:
        if (!value.is_string() || !parse_dtype(value.get<std::string>())) {
          syntax(path + "." + key, "expected float32 or float64");
        }
        break;
    }
    out[key] = value;
  }
  for (const auto& a : def.attributes) {
    if (a.required && !out.contains(a.name)) syntax(path, "missing attribute \"" + a.name + "\"");
  }
  return out;
}

std::size_t int_attr(const std::map<std::string, json>& attrs, const char* name, std::size_t fallback) {
  auto it = attrs.find(name);
  return it == attrs.end() ? fallback : it->second.get<std::size_t>();
}

const SymbolDef& symbol_def(const json& obj, SymbolCategory category, const std::string& path) {
  const auto kind = string_field(obj, "kind", path);
  const auto* def = find_symbol(kind);
  if (def == nullptr) throw Error(Errc::unknown_symbol_kind, "unknown symbol kind \"" + kind + "\"", path + ".kind");
  if (def->category != category) {
    throw Error(Errc::unknown_symbol_kind,
                "\"" + kind + "\" is a " + std::string(to_string(def->category)) + " symbol, expected " +
                    std::string(to_string(category)),
                path + ".kind");
  }
  return *def;
}

CapsuleSymbol parse_capsule(const json& j, const std::string& path) {
  if (!j.is_object()) syntax(path, "expected an object");
  reject_unknown_keys(j, {"id", "kind", "attributes", "bias"}, path);
  CapsuleSymbol c;
  c.id = string_field(j, "id", path);
  if (c.id.empty()) syntax(path + ".id", "empty id");
  const auto& def = symbol_def(j, SymbolCategory::capsule, path);
  c.kind = *parse_capsule_kind(def.kind);
  const auto attrs = read_attributes(field(j, "attributes", path), def, path + ".attributes");
  c.attrs.dimension = int_attr(attrs, "dimension", 0);
  c.attrs.height = int_attr(attrs, "height", 0);
  c.attrs.width = int_attr(attrs, "width", 0);
  c.attrs.channels = int_attr(attrs, "channels", 0);
  c.attrs.window_height = int_attr(attrs, "window_height", 0);
  c.attrs.window_width = int_attr(attrs, "window_width", 0);
  if (auto it = attrs.find("dtype"); it != attrs.end()) c.attrs.dtype = *parse_dtype(it->second.get<std::string>());
  if (auto it = j.find("bias"); it != j.end()) c.bias = payload_from_json(*it, path + ".bias");
  return c;
}

ConnectionSymbol parse_connection(const json& j, const std::string& path) {
  if (!j.is_object()) syntax(path, "expected an object");
  reject_unknown_keys(j, {"tail", "head", "kind", "attributes", "weight"}, path);
  ConnectionSymbol c;
  c.tail = string_field(j, "tail", path);
  c.head = string_field(j, "head", path);
  const auto& def = symbol_def(j, SymbolCategory::connection, path);
  c.kind = *parse_connection_kind(def.kind);
  const json empty = json::object();
  auto it_attrs = j.find("attributes");
  const auto attrs = read_attributes(it_attrs == j.end() ? empty : *it_attrs, def, path + ".attributes");
  c.attrs.kernels = int_attr(attrs, "kernels", 0);
  c.attrs.kernel_height = int_attr(attrs, "kernel_height", 0);
  c.attrs.kernel_width = int_attr(attrs, "kernel_width", 0);
  c.attrs.channels = int_attr(attrs, "channels", 0);
  c.attrs.stride = int_attr(attrs, "stride", 1);
  c.attrs.height = int_attr(attrs, "height", 0);
  c.attrs.width = int_attr(attrs, "width", 0);
  if (auto it = attrs.find("dtype"); it != attrs.end()) c.attrs.dtype = *parse_dtype(it->second.get<std::string>());
  if (auto it = j.find("weight"); it != j.end()) c.weight = payload_from_json(*it, path + ".weight");
  return c;
}

json capsule_to_json(const CapsuleSymbol& c) {
  json attrs;
  const auto& a = c.attrs;
  if (is_2d(c.kind)) {
    attrs["height"] = a.height;
    attrs["width"] = a.width;
    attrs["channels"] = a.channels;
  } else {
    attrs["dimension"] = a.dimension;
  }
  if (c.kind == CapsuleKind::maxpool_2d) {
    attrs["window_height"] = a.window_height;
    attrs["window_width"] = a.window_width;
  }
  attrs["dtype"] = std::string(to_string(a.dtype));
  json j{{"id", c.id}, {"kind", std::string(to_string(c.kind))}, {"attributes", attrs}};
  if (!c.bias.empty()) j["bias"] = payload_to_json(c.bias);
  return j;
}

json connection_to_json(const ConnectionSymbol& c) {
  json attrs = json::object();
  const auto& a = c.attrs;
  if (c.kind == ConnectionKind::convolutional) {
    attrs["kernels"] = a.kernels;
    attrs["kernel_height"] = a.kernel_height;
    attrs["kernel_width"] = a.kernel_width;
    attrs["stride"] = a.stride;
    if (a.channels != 0) attrs["channels"] = a.channels;
  } else if (c.kind == ConnectionKind::full) {
    attrs["height"] = a.height;
    if (a.width != 0) attrs["width"] = a.width;
  }
  if (a.dtype) attrs["dtype"] = std::string(to_string(*a.dtype));
  json j{{"tail", c.tail}, {"head", c.head}, {"kind", std::string(to_string(c.kind))}, {"attributes", attrs}};
  if (!c.weight.empty()) j["weight"] = payload_to_json(c.weight);
  return j;
}

}  // namespace

GraphDocument parse_document(std::string_view text) {
  const json root = parse_json(text);
  if (!root.is_object()) syntax("$", "document must be a JSON object");
  reject_unknown_keys(root, {"format_version", "metadata", "capsules", "connections"}, "$");
  const auto version = string_field(root, "format_version", "$");
  if (version != kFormatVersion) {
    syntax("format_version", "unsupported format_version \"" + version + "\"");
  }

  GraphDocument doc;
  if (auto it = root.find("metadata"); it != root.end()) {
    if (!it->is_object()) syntax("metadata", "expected an object");
    json extra = *it;
    if (auto n = extra.find("name"); n != extra.end()) {
      if (!n->is_string()) syntax("metadata.name", "expected a string");
      doc.name = n->get<std::string>();
      extra.erase("name");
    }
    if (auto s = extra.find("seed"); s != extra.end()) {
      if (!s->is_number_unsigned()) syntax("metadata.seed", "expected a non-negative integer");
      doc.graph.seed = s->get<std::uint64_t>();
      extra.erase("seed");
    }
    doc.extra_metadata = extra.dump();
  }

  const auto& caps = field(root, "capsules", "$");
  if (!caps.is_array()) syntax("capsules", "expected an array");
  if (caps.empty()) syntax("capsules", "a network needs at least one capsule");
  std::set<VertexId> ids;
  for (std::size_t i = 0; i < caps.size(); ++i) {
    const std::string path = "capsules[" + std::to_string(i) + "]";
    auto c = parse_capsule(caps[i], path);
    if (!ids.insert(c.id).second) syntax(path + ".id", "duplicate capsule id \"" + c.id + "\"");
    doc.graph.capsules.push_back(std::move(c));
  }

  if (auto it = root.find("connections"); it != root.end()) {
    if (!it->is_array()) syntax("connections", "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string path = "connections[" + std::to_string(i) + "]";
      auto c = parse_connection((*it)[i], path);
      if (!ids.contains(c.tail)) {
        throw Error(Errc::unresolved_reference, "unknown capsule \"" + c.tail + "\"", path + ".tail");
      }
      if (!ids.contains(c.head)) {
        throw Error(Errc::unresolved_reference, "unknown capsule \"" + c.head + "\"", path + ".head");
      }
      doc.graph.connections.push_back(std::move(c));
    }
  }
  return doc;
}

CapsuleNetwork parse_graph_document(std::string_view text) { return lower_symbols(parse_document(text).graph); }

std::string serialize(const GraphDocument& doc) {
  json meta = doc.extra_metadata.empty() ? json::object() : json::parse(doc.extra_metadata);
  meta["name"] = doc.name;
  meta["seed"] = doc.graph.seed;
  json caps = json::array();
  for (const auto& c : doc.graph.capsules) caps.push_back(capsule_to_json(c));
  json conns = json::array();
  for (const auto& c : doc.graph.connections) conns.push_back(connection_to_json(c));
  json root{{"format_version", std::string(kFormatVersion)},
            {"metadata", meta},
            {"capsules", caps},
            {"connections", conns}};
  return dump_canonical(root);
}

GraphDocument document_from_network(const CapsuleNetwork& net, std::string name) {
  GraphDocument doc;
  doc.name = std::move(name);
  const auto& ids = net.dag().vertices();
  auto unsupported = [&](const std::string& what, const std::string& where) {
    return Error(Errc::unsupported, what + " has no catalog symbol", where);
  };
  for (std::size_t v = 0; v < net.vertex_count(); ++v) {
    CapsuleSymbol c;
    c.id = ids[v];
    c.attrs.dtype = net.dtype();
    const Shape shape = net.is_input(v) ? net.input_shape(v) : net.bias(v).shape();
    const bool two_d = shape.size() == 3;
    if (shape.size() != 1 && !two_d) throw unsupported("shape " + to_string(shape), c.id);
    if (net.is_input(v)) {
      c.kind = two_d ? CapsuleKind::data_2d : CapsuleKind::data_1d;
    } else {
      const auto& fn = net.fn(v);
      switch (fn.kind) {
        case CapsuleFnKind::relu: c.kind = two_d ? CapsuleKind::relu_2d : CapsuleKind::relu_1d; break;
        case CapsuleFnKind::identity:
          if (two_d) throw unsupported("2D identity", c.id);
          c.kind = CapsuleKind::identity_1d;
          break;
        case CapsuleFnKind::softmax:
          if (two_d) throw unsupported("2D softmax", c.id);
          c.kind = CapsuleKind::softmax_1d;
          break;
        case CapsuleFnKind::maxpool:
          if (!two_d) throw unsupported("1D maxpool", c.id);
          c.kind = CapsuleKind::maxpool_2d;
          c.attrs.window_height = fn.window_h;
          c.attrs.window_width = fn.window_w;
          break;
        default: throw unsupported(fn.name(), c.id);
      }
      c.bias = net.bias(v);
    }
    if (two_d) {
      c.attrs.channels = shape[0];
      c.attrs.height = shape[1];
      c.attrs.width = shape[2];
    } else {
      c.attrs.dimension = shape[0];
    }
    doc.graph.capsules.push_back(std::move(c));
  }
  for (std::size_t e = 0; e < net.connection_count(); ++e) {
    const auto& spec = net.connection(e);
    ConnectionSymbol c;
    c.tail = spec.tail;
    c.head = spec.head;
    const auto& ws = spec.weight.shape();
    switch (spec.op.kind) {
      case WeightingKind::matmul:
        c.kind = ConnectionKind::full;
        c.attrs.height = ws[0];
        c.attrs.width = ws[1];
        break;
      case WeightingKind::conv:
        c.kind = ConnectionKind::convolutional;
        c.attrs.kernels = ws[0];
        c.attrs.channels = ws[1];
        c.attrs.kernel_height = ws[2];
        c.attrs.kernel_width = ws[3];
        c.attrs.stride = spec.op.stride;
        break;
      case WeightingKind::transfer: c.kind = ConnectionKind::transfer; break;
      case WeightingKind::reshape_flatten: c.kind = ConnectionKind::reshaping; break;
      default: throw unsupported(spec.op.name(), spec.tail + "->" + spec.head);
    }
    c.weight = spec.weight;
    doc.graph.connections.push_back(std::move(c));
  }
  return doc;
}

void embed_parameters(GraphDocument& doc, const CapsuleNetwork& net) {
  if (doc.graph.capsules.size() != net.vertex_count() ||
      doc.graph.connections.size() != net.connection_count()) {
    throw Error(Errc::precondition, "network was not lowered from this document");
  }
  for (std::size_t v = 0; v < net.vertex_count(); ++v) {
    if (!net.is_input(v)) doc.graph.capsules[v].bias = net.bias(v);
  }
  for (std::size_t e = 0; e < net.connection_count(); ++e) {
    if (!net.weight(e).empty()) doc.graph.connections[e].weight = net.weight(e);
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::io_error, "sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string document_hash(const GraphDocument& doc) { return sha256_hex(serialize(doc)); }

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += {kB64[n >> 18], kB64[(n >> 12) & 63], kB64[(n >> 6) & 63], kB64[n & 63]};
  }
  if (const auto rest = bytes.size() - i; rest == 1) {
    const std::uint32_t n = bytes[i] << 16;
    out += {kB64[n >> 18], kB64[(n >> 12) & 63], '=', '='};
  } else if (rest == 2) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += {kB64[n >> 18], kB64[(n >> 12) & 63], kB64[(n >> 6) & 63], '='};
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(Errc::format_error, "base64 length is not a multiple of 4");
  auto value = [&](char ch, std::size_t pos) -> std::uint32_t {
    const char* p = std::strchr(kB64, ch);
    if (ch == '\0' || p == nullptr) {
      throw Error(Errc::format_error, "invalid base64 character at offset " + std::to_string(pos));
    }
    return static_cast<std::uint32_t>(p - kB64);
  };
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    const int pad = last ? (text[i + 3] == '=') + (text[i + 2] == '=') : 0;
    if (pad == 1 && text[i + 2] == '=') throw Error(Errc::format_error, "misplaced base64 padding");
    std::uint32_t n = (value(text[i], i) << 18) | (value(text[i + 1], i + 1) << 12);
    if (pad < 2) n |= value(text[i + 2], i + 2) << 6;
    if (pad < 1) n |= value(text[i + 3], i + 3);
    out.push_back(static_cast<std::uint8_t>(n >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((n >> 8) & 0xFF));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(n & 0xFF));
  }
  return out;
}

namespace {

std::string dot_quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out.push_back('\\');
    out.push_back(ch);
  }
  return out + "\"";
}

}  // namespace

std::string export_dot(const CapsuleNetwork& net, const std::map<VertexId, std::string>& kinds) {
  std::ostringstream out;
  out << "digraph capsnet {\n  rankdir=LR;\n  node [shape=box];\n";
  const auto& report = net.shape_report();
  for (std::size_t v = 0; v < net.vertex_count(); ++v) {
    const auto& id = net.dag().vertices()[v];
    std::string kind;
    if (auto it = kinds.find(id); it != kinds.end()) {
      kind = it->second;
    } else {
      kind = net.is_input(v) ? "input" : net.fn(v).name();
    }
    std::string shape = "?";
    if (auto it = report.output_shape.find(id); it != report.output_shape.end()) shape = to_string(it->second);
    out << "  " << dot_quote(id) << " [label=" << dot_quote(id + "\\n" + kind + " " + shape) << "];\n";
  }
  for (std::size_t e = 0; e < net.connection_count(); ++e) {
    const auto& c = net.connection(e);
    std::string label = c.op.name();
    if (!c.weight.empty()) label += " " + to_string(c.weight.shape());
    out << "  " << dot_quote(c.tail) << " -> " << dot_quote(c.head) << " [label=" << dot_quote(label) << "];\n";
  }
  out << "}\n";
  return out.str();
}

DatasetSpec dataset_spec_for(const CapsuleNetwork& net) {
  DatasetSpec spec;
  spec.input = net.single_input();
  spec.output = net.single_output();
  spec.feature_shape = net.input_shape(net.dag().index_of(spec.input));
  spec.target_shape = net.shape_report().output_shape.at(spec.output);
  spec.dtype = net.dtype();
  return spec;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<TrainingPair> parse_csv_dataset(std::string_view text, const DatasetSpec& spec) {
  const std::size_t nf = element_count(spec.feature_shape), nt = element_count(spec.target_shape);
  std::vector<TrainingPair> pairs;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    std::vector<double> values;
    while (true) {
      const auto comma = line.find(',');
      const auto cell = trim(line.substr(0, comma));
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size()) {
        throw Error(Errc::format_error, "non-numeric field \"" + std::string(cell) + "\"",
                    "line " + std::to_string(line_no));
      }
      values.push_back(v);
      if (comma == std::string_view::npos) break;
      line.remove_prefix(comma + 1);
    }
    if (values.size() != nf + nt) {
      throw Error(Errc::format_error,
                  "expected " + std::to_string(nf + nt) + " fields, got " + std::to_string(values.size()),
                  "line " + std::to_string(line_no));
    }
    TrainingPair p;
    p.inputs[spec.input] = Tensor(spec.feature_shape, {values.begin(), values.begin() + nf}, spec.dtype);
    p.targets[spec.output] = Tensor(spec.target_shape, {values.begin() + nf, values.end()}, spec.dtype);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::size_t IdxHeader::element_size() const {
  switch (type_code) {
    case 0x08:
    case 0x09: return 1;
    case 0x0B: return 2;
    case 0x0C:
    case 0x0D: return 4;
    case 0x0E: return 8;
    default: return 0;
  }
}

std::size_t IdxHeader::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

namespace {

std::uint32_t get_u32_be(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

}  // namespace

IdxHeader read_idx_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw Error(Errc::format_error, "truncated IDX magic", "byte 0");
  if (bytes[0] != 0 || bytes[1] != 0) throw Error(Errc::format_error, "bad IDX magic", "byte 0");
  IdxHeader h;
  h.type_code = bytes[2];
  if (h.element_size() == 0) throw Error(Errc::format_error, "unknown IDX element type", "byte 2");
  const std::size_t rank = bytes[3];
  if (rank == 0) throw Error(Errc::format_error, "IDX rank must be positive", "byte 3");
  h.data_offset = 4 + 4 * rank;
  if (bytes.size() < h.data_offset) {
    throw Error(Errc::format_error, "truncated IDX dimension header", "byte " + std::to_string(bytes.size()));
  }
  for (std::size_t i = 0; i < rank; ++i) h.dims.push_back(get_u32_be(&bytes[4 + 4 * i]));
  return h;
}

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  IdxArray out;
  out.header = read_idx_header(bytes);
  const auto& h = out.header;
  const std::size_t n = h.element_count(), size = h.element_size();
  const std::size_t available = bytes.size() - h.data_offset;
  if (available < n * size) {
    throw Error(Errc::format_error,
                "truncated IDX payload: need " + std::to_string(n * size) + " bytes, found " +
                    std::to_string(available),
                "byte " + std::to_string(bytes.size()));
  }
  if (available > n * size) {
    throw Error(Errc::format_error, std::to_string(available - n * size) + " trailing bytes after IDX payload",
                "byte " + std::to_string(h.data_offset + n * size));
  }
  out.values.resize(n);
  const std::uint8_t* p = bytes.data() + h.data_offset;
  for (std::size_t i = 0; i < n; ++i, p += size) {
    switch (h.type_code) {
      case 0x08: out.values[i] = p[0]; break;
      case 0x09: out.values[i] = static_cast<std::int8_t>(p[0]); break;
      case 0x0B: out.values[i] = static_cast<std::int16_t>((p[0] << 8) | p[1]); break;
      case 0x0C: out.values[i] = static_cast<std::int32_t>(get_u32_be(p)); break;
      case 0x0D: out.values[i] = std::bit_cast<float>(get_u32_be(p)); break;
      case 0x0E: {
        const std::uint64_t v = (std::uint64_t{get_u32_be(p)} << 32) | get_u32_be(p + 4);
        out.values[i] = std::bit_cast<double>(v);
        break;
      }
    }
  }
  return out;
}

std::vector<TrainingPair> idx_dataset(const IdxArray& images, const IdxArray& labels,
                                      const DatasetSpec& spec, double scale) {
  if (labels.header.dims.size() != 1) throw Error(Errc::format_error, "IDX labels must be one-dimensional");
  const std::size_t count = labels.header.dims[0];
  if (images.header.dims[0] != count) {
    throw Error(Errc::format_error, std::to_string(images.header.dims[0]) + " images vs " +
                                        std::to_string(count) + " labels");
  }
  const std::size_t per = count == 0 ? 0 : images.values.size() / count;
  if (per != element_count(spec.feature_shape)) {
    throw Error(Errc::shape_mismatch, "IDX record holds " + std::to_string(per) + " values, input " +
                                          to_string(spec.feature_shape) + " needs " +
                                          std::to_string(element_count(spec.feature_shape)));
  }
  const std::size_t classes = element_count(spec.target_shape);
  std::vector<TrainingPair> pairs;
  pairs.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double label = labels.values[k];
    if (label < 0 || label >= static_cast<double>(classes) || label != std::floor(label)) {
      throw Error(Errc::format_error, "label " + std::to_string(label) + " outside [0, " +
                                          std::to_string(classes) + ")",
                  "record " + std::to_string(k));
    }
    std::vector<double> x(images.values.begin() + k * per, images.values.begin() + (k + 1) * per);
    for (auto& v : x) v *= scale;
    Tensor t(spec.target_shape, spec.dtype);
    t[static_cast<std::size_t>(label)] = 1.0;
    TrainingPair p;
    p.inputs[spec.input] = Tensor(spec.feature_shape, std::move(x), spec.dtype);
    p.targets[spec.output] = std::move(t);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open file", path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open file", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write file", path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(Errc::io_error, "write failed", path.string());
}

std::vector<TrainingPair> load_dataset(const std::string& path, const DatasetSpec& spec) {
  if (path.size() >= 4 && path.ends_with(".csv")) return parse_csv_dataset(read_text_file(path), spec);
  const auto comma = path.find(',');
  if (comma == std::string::npos) {
    throw Error(Errc::format_error, "IDX datasets are given as images,labels", path);
  }
  const auto images = parse_idx(read_file_bytes(path.substr(0, comma)));
  const auto labels = parse_idx(read_file_bytes(path.substr(comma + 1)));
  const double scale = images.header.type_code == 0x08 ? 1.0 / 255.0 : 1.0;
  return idx_dataset(images, labels, spec, scale);
}

Checkpoint make_checkpoint(const CapsuleNetwork& net, std::string document_hash, std::uint64_t iteration,
                           std::vector<double> loss_history) {
  Checkpoint c{std::move(document_hash), iteration, std::move(loss_history), {}};
  for (std::size_t e = 0; e < net.connection_count(); ++e) {
    if (net.weight(e).empty()) continue;
    const auto& conn = net.connection(e);
    c.parameters.emplace_back("w:" + conn.tail + "->" + conn.head, net.weight(e));
  }
  for (std::size_t v = 0; v < net.vertex_count(); ++v) {
    if (!net.is_input(v)) c.parameters.emplace_back("b:" + net.dag().vertices()[v], net.bias(v));
  }
  return c;
}

void apply_checkpoint(const Checkpoint& ckpt, CapsuleNetwork& net, std::string_view document_hash) {
  if (ckpt.document_hash != document_hash) {
    throw Error(Errc::hash_mismatch, "checkpoint was written for document " + ckpt.document_hash);
  }
  const auto expected = make_checkpoint(net, {}, 0, {});
  if (expected.parameters.size() != ckpt.parameters.size()) {
    throw Error(Errc::format_error, "checkpoint holds " + std::to_string(ckpt.parameters.size()) +
                                        " tensors, network has " +
                                        std::to_string(expected.parameters.size()));
  }
  std::map<std::string, const Tensor*> by_key;
  for (const auto& [key, t] : ckpt.parameters) by_key[key] = &t;
  for (const auto& [key, t] : expected.parameters) {
    auto it = by_key.find(key);
    if (it == by_key.end()) throw Error(Errc::format_error, "checkpoint is missing a tensor", key);
    if (it->second->shape() != t.shape() || it->second->dtype() != t.dtype()) {
      throw Error(Errc::format_error, "tensor " + to_string(it->second->shape()) + " vs " + to_string(t.shape()),
                  key);
    }
  }
  for (std::size_t e = 0; e < net.connection_count(); ++e) {
    if (net.weight(e).empty()) continue;
    const auto& conn = net.connection(e);
    net.set_weight(e, *by_key.at("w:" + conn.tail + "->" + conn.head));
  }
  for (std::size_t v = 0; v < net.vertex_count(); ++v) {
    if (!net.is_input(v)) net.set_bias(v, *by_key.at("b:" + net.dag().vertices()[v]));
  }
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  const std::uint8_t* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw Error(Errc::format_error, "truncated checkpoint", "byte " + std::to_string(pos_));
    }
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t u64() { return get_u64_le(take(8)); }
  std::uint32_t u32() { return get_u32_le(take(4)); }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

int hex_digit(char ch) {
  if (ch >= '0' && ch <= '9') return ch - '0';
  if (ch >= 'a' && ch <= 'f') return ch - 'a' + 10;
  return -1;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.document_hash.size() != 64 ||
      !std::all_of(ckpt.document_hash.begin(), ckpt.document_hash.end(), [](char c) { return hex_digit(c) >= 0; })) {
    throw Error(Errc::format_error, "document hash must be 64 lowercase hex digits");
  }
  std::vector<std::uint8_t> out{'C', 'F', 'C', 'K'};
  put_u32_le(out, kCheckpointVersion);
  for (std::size_t i = 0; i < 64; i += 2) {
    out.push_back(static_cast<std::uint8_t>(hex_digit(ckpt.document_hash[i]) * 16 + hex_digit(ckpt.document_hash[i + 1])));
  }
  put_u64_le(out, ckpt.iteration);
  put_u64_le(out, ckpt.loss_history.size());
  for (double l : ckpt.loss_history) put_f64_le(out, l);
  put_u64_le(out, ckpt.parameters.size());
  for (const auto& [key, t] : ckpt.parameters) {
    put_u32_le(out, static_cast<std::uint32_t>(key.size()));
    out.insert(out.end(), key.begin(), key.end());
    out.push_back(t.dtype() == DType::f32 ? 0 : 1);
    put_u32_le(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u64_le(out, d);
    for (double v : t.data()) put_f64_le(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto* magic = r.take(4);
  if (std::memcmp(magic, "CFCK", 4) != 0) throw Error(Errc::format_error, "bad checkpoint magic", "byte 0");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw Error(Errc::format_error, "unsupported checkpoint version " + std::to_string(v), "byte 4");
  }
  Checkpoint c;
  static const char* hex = "0123456789abcdef";
  const auto* h = r.take(32);
  for (int i = 0; i < 32; ++i) {
    c.document_hash.push_back(hex[h[i] >> 4]);
    c.document_hash.push_back(hex[h[i] & 0xF]);
  }
  c.iteration = r.u64();
  const auto n_loss = r.u64();
  if (n_loss > bytes.size() / 8) throw Error(Errc::format_error, "loss history length out of range", "byte " + std::to_string(r.pos() - 8));
  for (std::uint64_t i = 0; i < n_loss; ++i) c.loss_history.push_back(std::bit_cast<double>(r.u64()));
  const auto n_tensors = r.u64();
  for (std::uint64_t k = 0; k < n_tensors; ++k) {
    const auto key_len = r.u32();
    const auto* key = r.take(key_len);
    const auto dtype_pos = r.pos();
    const auto dtype_byte = *r.take(1);
    if (dtype_byte > 1) throw Error(Errc::format_error, "bad dtype tag", "byte " + std::to_string(dtype_pos));
    const auto rank = r.u32();
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = r.u64();
      if (d == 0 || d > bytes.size()) throw Error(Errc::format_error, "bad extent", "byte " + std::to_string(r.pos() - 8));
      shape.push_back(d);
      count *= d;
    }
    if (count > bytes.size() / 8) throw Error(Errc::format_error, "tensor exceeds file", "byte " + std::to_string(r.pos()));
    std::vector<double> values(count);
    for (auto& v : values) v = std::bit_cast<double>(r.u64());
    c.parameters.emplace_back(std::string(reinterpret_cast<const char*>(key), key_len),
                              Tensor(shape, std::move(values), dtype_byte == 0 ? DType::f32 : DType::f64));
  }
  if (!r.done()) throw Error(Errc::format_error, "trailing bytes", "byte " + std::to_string(r.pos()));
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  write_text_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

std::string serialize_catalog(const std::vector<SymbolDef>& defs) {
  json symbols = json::array();
  for (const auto& d : defs) {
    json attrs = json::array();
    for (const auto& a : d.attributes) {
      attrs.push_back({{"name", a.name},
                       {"label", a.label},
                       {"type", std::string(to_string(a.type))},
                       {"default", a.default_value},
                       {"required", a.required}});
    }
    symbols.push_back({{"kind", d.kind},
                       {"category", std::string(to_string(d.category))},
                       {"label", d.label},
                       {"attributes", attrs},
                       {"back_end", d.back_end},
                       {"weight_structure", d.weight_structure},
                       {"front_end", d.front_end}});
  }
  return dump_canonical(json{{"format_version", std::string(kFormatVersion)}, {"symbols", symbols}});
}

std::vector<SymbolDef> parse_catalog(std::string_view text) {
  const json root = parse_json(text);
  if (!root.is_object()) syntax("$", "catalog must be a JSON object");
  const auto& symbols = field(root, "symbols", "$");
  if (!symbols.is_array()) syntax("symbols", "expected an array");
  std::vector<SymbolDef> defs;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const std::string path = "symbols[" + std::to_string(i) + "]";
    const auto& s = symbols[i];
    SymbolDef d;
    d.kind = string_field(s, "kind", path);
    const auto category = string_field(s, "category", path);
    if (category == "capsule") {
      d.category = SymbolCategory::capsule;
    } else if (category == "connection") {
      d.category = SymbolCategory::connection;
    } else if (category == "plain") {
      d.category = SymbolCategory::plain;
    } else {
      syntax(path + ".category", "unknown category");
    }
    d.label = string_field(s, "label", path);
    d.back_end = string_field(s, "back_end", path);
    d.weight_structure = string_field(s, "weight_structure", path);
    d.front_end = string_field(s, "front_end", path);
    const auto& attrs = field(s, "attributes", path);
    for (std::size_t k = 0; k < attrs.size(); ++k) {
      const std::string apath = path + ".attributes[" + std::to_string(k) + "]";
      AttributeDef a;
      a.name = string_field(attrs[k], "name", apath);
      a.label = string_field(attrs[k], "label", apath);
      const auto type = string_field(attrs[k], "type", apath);
      if (type == "integer") {
        a.type = AttrType::integer;
      } else if (type == "number") {
        a.type = AttrType::number;
      } else if (type == "dtype") {
        a.type = AttrType::dtype;
      } else {
        syntax(apath + ".type", "unknown attribute type");
      }
      a.default_value = string_field(attrs[k], "default", apath);
      const auto& req = field(attrs[k], "required", apath);
      if (!req.is_boolean()) syntax(apath + ".required", "expected a boolean");
      a.required = req.get<bool>();
      d.attributes.push_back(std::move(a));
    }
    defs.push_back(std::move(d));
  }
  return defs;
}

}  // namespace capsforge
