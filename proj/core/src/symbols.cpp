#include "capsforge/symbols.hpp"

#include <map>
#include <set>

namespace capsforge {

std::string_view to_string(SymbolCategory c) {
  switch (c) {
    case SymbolCategory::capsule: return "capsule";
    case SymbolCategory::connection: return "connection";
    case SymbolCategory::plain: return "plain";
  }
  return "?";
}

std::string_view to_string(AttrType t) {
  switch (t) {
    case AttrType::integer: return "integer";
    case AttrType::number: return "number";
    case AttrType::dtype: return "dtype";
  }
  return "?";
}

namespace {

AttributeDef integer(std::string name, std::string label, std::string def = {}) {
  const bool required = def.empty();
  return {std::move(name), std::move(label), AttrType::integer, std::move(def), required};
}

AttributeDef dtype_attr() { return {"dtype", "data type", AttrType::dtype, "float64", false}; }

std::vector<SymbolDef> build_catalog() {
  const auto dim = integer("dimension", "dimension M");
  const auto height = integer("height", "height M");
  const auto width = integer("width", "width N");
  const auto channels = integer("channels", "channel number d");
  std::vector<SymbolDef> c;
  c.push_back({"data_1d", SymbolCategory::capsule, "1D-data capsule", {dim, dtype_attr()}, {}, {}, {}});
  c.push_back({"data_2d", SymbolCategory::capsule, "2D-data capsule",
               {height, width, channels, dtype_attr()}, {}, {}, {}});
  c.push_back({"relu_2d", SymbolCategory::capsule, "2D-ReLU capsule",
               {height, width, channels, dtype_attr()}, {}, {}, {}});
  c.push_back({"maxpool_2d", SymbolCategory::capsule, "2D-maximum downsampling capsule",
               {height, width, channels, integer("window_height", "window height lambda"),
                integer("window_width", "window width tau"), dtype_attr()},
               {}, {}, {}});
  c.push_back({"identity_1d", SymbolCategory::capsule, "1D-identical capsule", {dim, dtype_attr()}, {}, {}, {}});
  c.push_back({"relu_1d", SymbolCategory::capsule, "1D-ReLU capsule", {dim, dtype_attr()}, {}, {}, {}});
  c.push_back({"softmax_1d", SymbolCategory::capsule, "1D-softmax capsule", {dim, dtype_attr()}, {}, {}, {}});

  c.push_back({"convolutional", SymbolCategory::connection, "convolutional connection",
               {integer("kernels", "kernel number k"), integer("kernel_height", "kernel height m"),
                integer("kernel_width", "kernel width n"), integer("channels", "channel number d", "0"),
                integer("stride", "stride s", "1"), dtype_attr()},
               "height M, width N, channel number d, data type T",
               "kernel number k, height m, width n, channel number d, stride s, data type T",
               "height (M-m)/s+1, width (N-n)/s+1, channel number k, data type T"});
  c.push_back({"transfer", SymbolCategory::connection, "transfer connection", {dtype_attr()},
               "height M, width N, channel number d, data type T",
               "identity matrix of height M, width M (no free parameters)",
               "height M, width N, channel number d, data type T"});
  c.push_back({"reshaping", SymbolCategory::connection, "reshaping connection", {dtype_attr()},
               "height M, width N, channel number d, data type T",
               "row selectors W_1..W_M (no free parameters)", "dimension dMN, data type T"});
  c.push_back({"full", SymbolCategory::connection, "full connection",
               {integer("height", "height M"), integer("width", "width N", "0"), dtype_attr()},
               "dimension N, data type T", "height M, width N, data type T",
               "dimension M, data type T"});

  c.push_back({"data_neuron", SymbolCategory::plain, "data neuron", {dtype_attr()}, {}, {}, {}});
  c.push_back({"relu_neuron", SymbolCategory::plain, "ReLU neuron", {dtype_attr()}, {}, {}, {}});
  c.push_back({"identity_neuron", SymbolCategory::plain, "identical neuron", {dtype_attr()}, {}, {}, {}});
  const AttributeDef strength{"strength", "weight strength w", AttrType::number, "1", false};
  c.push_back({"arrow_amplifying_connection", SymbolCategory::plain, "arrow amplifying connection",
               {strength, dtype_attr()}, "scalar x", "weight strength w", "scalar y = w x"});
  c.push_back({"amplifying_connection", SymbolCategory::plain, "amplifying connection",
               {strength, dtype_attr()}, "scalar x", "weight strength w", "scalar y = w x"});
  return c;
}

}  // namespace

const std::vector<SymbolDef>& catalog() {
  static const std::vector<SymbolDef> defs = build_catalog();
  return defs;
}

const SymbolDef* find_symbol(std::string_view kind) {
  for (const auto& def : catalog()) {
    if (def.kind == kind) return &def;
  }
  return nullptr;
}

std::string_view to_string(CapsuleKind k) {
  switch (k) {
    case CapsuleKind::data_1d: return "data_1d";
    case CapsuleKind::data_2d: return "data_2d";
    case CapsuleKind::relu_2d: return "relu_2d";
    case CapsuleKind::maxpool_2d: return "maxpool_2d";
    case CapsuleKind::identity_1d: return "identity_1d";
    case CapsuleKind::relu_1d: return "relu_1d";
    case CapsuleKind::softmax_1d: return "softmax_1d";
  }
  return "?";
}

std::string_view to_string(ConnectionKind k) {
  switch (k) {
    case ConnectionKind::convolutional: return "convolutional";
    case ConnectionKind::transfer: return "transfer";
    case ConnectionKind::reshaping: return "reshaping";
    case ConnectionKind::full: return "full";
  }
  return "?";
}

std::optional<CapsuleKind> parse_capsule_kind(std::string_view text) {
  for (auto k : {CapsuleKind::data_1d, CapsuleKind::data_2d, CapsuleKind::relu_2d,
                 CapsuleKind::maxpool_2d, CapsuleKind::identity_1d, CapsuleKind::relu_1d,
                 CapsuleKind::softmax_1d}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

std::optional<ConnectionKind> parse_connection_kind(std::string_view text) {
  for (auto k : {ConnectionKind::convolutional, ConnectionKind::transfer, ConnectionKind::reshaping,
                 ConnectionKind::full}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

bool is_data(CapsuleKind k) { return k == CapsuleKind::data_1d || k == CapsuleKind::data_2d; }

bool is_2d(CapsuleKind k) {
  return k == CapsuleKind::data_2d || k == CapsuleKind::relu_2d || k == CapsuleKind::maxpool_2d;
}

std::vector<Diagnostic> check_capsule_attrs(const CapsuleSymbol& capsule) {
  std::vector<Diagnostic> out;
  const auto& a = capsule.attrs;
  auto fail = [&](Errc code, std::string msg) { out.push_back({code, capsule.id, std::move(msg)}); };
  if (is_2d(capsule.kind)) {
    if (a.height == 0) fail(Errc::shape_mismatch, "height must be positive");
    if (a.width == 0) fail(Errc::shape_mismatch, "width must be positive");
    if (a.channels == 0) fail(Errc::shape_mismatch, "channels must be positive");
    if (a.dimension != 0) fail(Errc::shape_mismatch, "2D capsules take no dimension attribute");
  } else {
    if (a.dimension == 0) fail(Errc::shape_mismatch, "dimension must be positive");
    if (a.height != 0 || a.width != 0 || a.channels != 0) {
      fail(Errc::shape_mismatch, "1D capsules take no height/width/channels attributes");
    }
  }
  if (capsule.kind == CapsuleKind::maxpool_2d) {
    if (a.window_height == 0 || a.window_width == 0) {
      fail(Errc::window_mismatch, "window must be positive");
    } else if ((a.height != 0 && a.height % a.window_height != 0) ||
               (a.width != 0 && a.width % a.window_width != 0)) {
      fail(Errc::window_mismatch, "window " + std::to_string(a.window_height) + "x" +
                                      std::to_string(a.window_width) + " does not tile " +
                                      std::to_string(a.height) + "x" + std::to_string(a.width));
    }
  } else if (a.window_height != 0 || a.window_width != 0) {
    fail(Errc::window_mismatch, "only maxpool capsules take a window");
  }
  return out;
}

Structure input_structure(const CapsuleSymbol& capsule) {
  const auto& a = capsule.attrs;
  if (is_2d(capsule.kind)) return {{a.channels, a.height, a.width}, a.dtype};
  return {{a.dimension}, a.dtype};
}

Structure output_structure(const CapsuleSymbol& capsule) {
  auto s = input_structure(capsule);
  const auto& a = capsule.attrs;
  if (capsule.kind == CapsuleKind::maxpool_2d && a.window_height > 0 && a.window_width > 0) {
    s.shape[1] /= a.window_height;
    s.shape[2] /= a.window_width;
  }
  return s;
}

Structure infer_front_attrs(const ConnectionSymbol& conn, const CapsuleSymbol& back) {
  const auto b = output_structure(back);
  const auto& a = conn.attrs;
  const std::string where = conn.tail + "->" + conn.head;
  auto incompatible = [&](const std::string& msg) {
    return Error(Errc::incompatible_back_end, std::string(to_string(conn.kind)) + ": " + msg, where);
  };
  switch (conn.kind) {
    case ConnectionKind::convolutional: {
      if (b.shape.size() != 3) throw incompatible("needs a 2D back end, got " + to_string(b.shape));
      if (a.kernels == 0 || a.kernel_height == 0 || a.kernel_width == 0 || a.stride == 0) {
        throw incompatible("kernel number, size and stride must be positive");
      }
      if (a.channels != 0 && a.channels != b.shape[0]) {
        throw incompatible("kernel channels " + std::to_string(a.channels) + " vs back end channels " +
                           std::to_string(b.shape[0]));
      }
      if (a.kernel_height > b.shape[1] || a.kernel_width > b.shape[2]) {
        throw incompatible("kernel " + std::to_string(a.kernel_height) + "x" +
                           std::to_string(a.kernel_width) + " exceeds back end " +
                           std::to_string(b.shape[1]) + "x" + std::to_string(b.shape[2]));
      }
      const auto dh = b.shape[1] - a.kernel_height, dw = b.shape[2] - a.kernel_width;
      if (dh % a.stride != 0 || dw % a.stride != 0) {
        throw Error(Errc::stride_mismatch,
                    "stride " + std::to_string(a.stride) + " does not divide " +
                        std::to_string(dh) + "x" + std::to_string(dw),
                    where);
      }
      return {{a.kernels, dh / a.stride + 1, dw / a.stride + 1}, b.dtype};
    }
    case ConnectionKind::transfer:
      return b;
    case ConnectionKind::reshaping:
      if (b.shape.size() != 3) throw incompatible("needs a 2D back end, got " + to_string(b.shape));
      return {{element_count(b.shape)}, b.dtype};
    case ConnectionKind::full:
      if (b.shape.size() != 1) throw incompatible("needs a 1D back end, got " + to_string(b.shape));
      if (a.height == 0) throw incompatible("weight height must be positive");
      if (a.width != 0 && a.width != b.shape[0]) {
        throw incompatible("weight width " + std::to_string(a.width) + " vs back end dimension " +
                           std::to_string(b.shape[0]));
      }
      return {{a.height}, b.dtype};
  }
  throw incompatible("unknown connection kind");
}

std::vector<Diagnostic> check_connection_compat(const ConnectionSymbol& conn,
                                                const CapsuleSymbol& back,
                                                const CapsuleSymbol& front) {
  std::vector<Diagnostic> out;
  const std::string where = conn.tail + "->" + conn.head;
  if (conn.attrs.dtype && *conn.attrs.dtype != back.attrs.dtype) {
    out.push_back({Errc::data_type_mismatch, where,
                   "connection " + std::string(to_string(*conn.attrs.dtype)) + " vs back end " +
                       std::string(to_string(back.attrs.dtype))});
  }
  Structure inferred;
  try {
    inferred = infer_front_attrs(conn, back);
  } catch (const Error& e) {
    out.push_back({e.code(), where, e.message()});
    return out;
  }
  const auto declared = input_structure(front);
  if (inferred.shape.size() != declared.shape.size()) {
    out.push_back({Errc::shape_mismatch, where,
                   "front end " + to_string(inferred.shape) + " vs " + front.id + " " +
                       to_string(declared.shape)});
  } else if (inferred.shape.size() == 1) {
    if (inferred.shape[0] != declared.shape[0]) {
      out.push_back({Errc::shape_mismatch, where,
                     "dimension " + std::to_string(inferred.shape[0]) + " vs " + front.id + " " +
                         std::to_string(declared.shape[0])});
    }
  } else {
    static const char* names[] = {"channels", "height", "width"};
    for (std::size_t i = 0; i < 3; ++i) {
      if (inferred.shape[i] != declared.shape[i]) {
        out.push_back({Errc::shape_mismatch, where,
                       std::string(names[i]) + " " + std::to_string(inferred.shape[i]) + " vs " +
                           front.id + " " + std::to_string(declared.shape[i])});
      }
    }
  }
  if (inferred.dtype != declared.dtype) {
    out.push_back({Errc::data_type_mismatch, where,
                   "front end " + std::string(to_string(inferred.dtype)) + " vs " + front.id + " " +
                       std::string(to_string(declared.dtype))});
  }
  return out;
}

CapsuleFn capsule_fn_of(const CapsuleSymbol& capsule) {
  switch (capsule.kind) {
    case CapsuleKind::relu_2d:
    case CapsuleKind::relu_1d: return CapsuleFn::relu();
    case CapsuleKind::maxpool_2d:
      return CapsuleFn::maxpool(capsule.attrs.window_height, capsule.attrs.window_width);
    case CapsuleKind::softmax_1d: return CapsuleFn::softmax();
    default: return CapsuleFn::identity();
  }
}

WeightingOp weighting_of(const ConnectionSymbol& conn) {
  switch (conn.kind) {
    case ConnectionKind::convolutional: return WeightingOp::conv(conn.attrs.stride);
    case ConnectionKind::transfer: return WeightingOp::transfer();
    case ConnectionKind::reshaping: return WeightingOp::reshape_flatten();
    case ConnectionKind::full: return WeightingOp::matmul();
  }
  return WeightingOp::transfer();
}

CapsuleNetwork lower_symbols(const SymbolGraph& graph) {
  std::map<VertexId, std::size_t> index;
  std::vector<Diagnostic> errors;
  for (std::size_t i = 0; i < graph.capsules.size(); ++i) {
    const auto& c = graph.capsules[i];
    if (!index.emplace(c.id, i).second) {
      errors.push_back({Errc::precondition, c.id, "duplicate capsule id"});
    }
    auto attr_errors = check_capsule_attrs(c);
    errors.insert(errors.end(), attr_errors.begin(), attr_errors.end());
  }
  for (const auto& conn : graph.connections) {
    for (const auto* id : {&conn.tail, &conn.head}) {
      if (!index.contains(*id)) {
        throw Error(Errc::unresolved_reference, "connection refers to unknown capsule " + *id, *id);
      }
    }
  }

  std::set<VertexId> has_incoming;
  std::vector<Shape> weight_shapes(graph.connections.size());
  for (std::size_t e = 0; e < graph.connections.size(); ++e) {
    const auto& conn = graph.connections[e];
    const auto& back = graph.capsules[index.at(conn.tail)];
    const auto& front = graph.capsules[index.at(conn.head)];
    has_incoming.insert(conn.head);
    auto compat = check_connection_compat(conn, back, front);
    errors.insert(errors.end(), compat.begin(), compat.end());
    if (!compat.empty()) continue;
    const auto b = output_structure(back).shape;
    if (conn.kind == ConnectionKind::convolutional) {
      weight_shapes[e] = {conn.attrs.kernels, b[0], conn.attrs.kernel_height, conn.attrs.kernel_width};
    } else if (conn.kind == ConnectionKind::full) {
      weight_shapes[e] = {conn.attrs.height, b[0]};
    }
  }
  for (const auto& c : graph.capsules) {
    if (is_data(c.kind) && has_incoming.contains(c.id)) {
      errors.push_back({Errc::precondition, c.id, "data capsules cannot have incoming connections"});
    } else if (!is_data(c.kind) && !has_incoming.contains(c.id)) {
      errors.push_back({Errc::precondition, c.id, "capsule has no incoming connection"});
    }
  }
  if (!errors.empty()) {
    throw Error(Errc::shape_errors, std::to_string(errors.size()) + " symbol error(s)", std::move(errors));
  }

  std::vector<VertexSpec> vertices;
  for (const auto& c : graph.capsules) {
    const auto s = input_structure(c);
    if (is_data(c.kind)) {
      vertices.push_back(InputSpec{c.id, s.shape, s.dtype});
    } else {
      vertices.push_back(CapsuleSpec{c.id, capsule_fn_of(c), Tensor(s.shape, s.dtype)});
    }
  }
  std::vector<ConnectionSpec> connections;
  for (std::size_t e = 0; e < graph.connections.size(); ++e) {
    const auto& conn = graph.connections[e];
    const auto dtype = graph.capsules[index.at(conn.tail)].attrs.dtype;
    Tensor w = weight_shapes[e].empty() ? Tensor() : Tensor(weight_shapes[e], dtype);
    connections.push_back({conn.tail, conn.head, weighting_of(conn), std::move(w)});
  }
  auto net = CapsuleNetwork::create(std::move(vertices), std::move(connections));
  if (!net.shape_report().ok()) {
    throw Error(Errc::shape_errors, "lowered network fails shape validation", net.shape_report().errors);
  }
  initialize_parameters(net, graph.seed);

  std::vector<Diagnostic> payload_errors;
  for (std::size_t v = 0; v < graph.capsules.size(); ++v) {
    const auto& bias = graph.capsules[v].bias;
    if (bias.empty()) continue;
    if (net.is_input(v)) {
      payload_errors.push_back({Errc::bias_mismatch, graph.capsules[v].id, "data capsules carry no bias"});
      continue;
    }
    try {
      net.set_bias(v, bias);
    } catch (const Error& e) {
      payload_errors.push_back({e.code(), graph.capsules[v].id, e.message()});
    }
  }
  for (std::size_t e = 0; e < graph.connections.size(); ++e) {
    const auto& conn = graph.connections[e];
    if (conn.weight.empty()) continue;
    try {
      net.set_weight(e, conn.weight);
    } catch (const Error& err) {
      payload_errors.push_back({err.code(), conn.tail + "->" + conn.head, err.message()});
    }
  }
  if (!payload_errors.empty()) {
    throw Error(Errc::shape_errors, "parameter payloads do not fit the network", std::move(payload_errors));
  }
  return net;
}

}  // namespace capsforge
