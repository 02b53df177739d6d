#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "capsforge/capsule.hpp"

namespace capsforge {

enum class SymbolCategory { capsule, connection, plain };

enum class AttrType { integer, number, dtype };

std::string_view to_string(SymbolCategory c);
std::string_view to_string(AttrType t);

struct AttributeDef {
  std::string name;
  std::string label;
  AttrType type = AttrType::integer;
  /// Textual default; empty when the attribute is required.
  std::string default_value;
  bool required = true;

  friend bool operator==(const AttributeDef&, const AttributeDef&) = default;
};

struct SymbolDef {
  std::string kind;
  SymbolCategory category = SymbolCategory::capsule;
  std::string label;
  std::vector<AttributeDef> attributes;
  /// Connection structure descriptions (back end, weight, front end).
  std::string back_end;
  std::string weight_structure;
  std::string front_end;

  friend bool operator==(const SymbolDef&, const SymbolDef&) = default;
};

/// The closed v1 catalog: capsules, then connections, then plain symbols.
const std::vector<SymbolDef>& catalog();
const SymbolDef* find_symbol(std::string_view kind);

enum class CapsuleKind { data_1d, data_2d, relu_2d, maxpool_2d, identity_1d, relu_1d, softmax_1d };
enum class ConnectionKind { convolutional, transfer, reshaping, full };

std::string_view to_string(CapsuleKind k);
std::string_view to_string(ConnectionKind k);
std::optional<CapsuleKind> parse_capsule_kind(std::string_view text);
std::optional<ConnectionKind> parse_connection_kind(std::string_view text);

bool is_data(CapsuleKind k);
bool is_2d(CapsuleKind k);

/// Attributes of a capsule symbol. One-dimensional kinds use `dimension`;
/// two-dimensional kinds use height, width and channels. All describe the
/// capsule's input; a maxpool capsule's output is height/window_height by
/// width/window_width.
struct CapsuleAttrs {
  std::size_t dimension = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t window_height = 0;
  std::size_t window_width = 0;
  DType dtype = DType::f64;

  friend bool operator==(const CapsuleAttrs&, const CapsuleAttrs&) = default;
};

/// Weight-structure attributes of a connection symbol. Zero means "take it
/// from the back end" for `channels` (convolutional) and `width` (full).
struct ConnectionAttrs {
  std::size_t kernels = 0;
  std::size_t kernel_height = 0;
  std::size_t kernel_width = 0;
  std::size_t channels = 0;
  std::size_t stride = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::optional<DType> dtype;

  friend bool operator==(const ConnectionAttrs&, const ConnectionAttrs&) = default;
};

struct CapsuleSymbol {
  VertexId id;
  CapsuleKind kind = CapsuleKind::data_1d;
  CapsuleAttrs attrs;
  Tensor bias;  // empty: zero bias

  friend bool operator==(const CapsuleSymbol&, const CapsuleSymbol&) = default;
};

struct ConnectionSymbol {
  VertexId tail;
  VertexId head;
  ConnectionKind kind = ConnectionKind::full;
  ConnectionAttrs attrs;
  Tensor weight;  // empty: seeded initialization

  friend bool operator==(const ConnectionSymbol&, const ConnectionSymbol&) = default;
};

struct SymbolGraph {
  std::vector<CapsuleSymbol> capsules;
  std::vector<ConnectionSymbol> connections;
  std::uint64_t seed = 0;

  friend bool operator==(const SymbolGraph&, const SymbolGraph&) = default;
};

/// A tensor structure: shape ({M} or {d, M, N}) and data type.
struct Structure {
  Shape shape;
  DType dtype = DType::f64;

  friend bool operator==(const Structure&, const Structure&) = default;
};

/// Attribute-level checks of one capsule (positive extents, the attributes
/// its kind requires, window divisibility).
std::vector<Diagnostic> check_capsule_attrs(const CapsuleSymbol& capsule);

Structure input_structure(const CapsuleSymbol& capsule);
Structure output_structure(const CapsuleSymbol& capsule);

/// Front-end structure produced by `conn` from the back capsule's output.
/// Throws IncompatibleBackEnd or StrideMismatch.
Structure infer_front_attrs(const ConnectionSymbol& conn, const CapsuleSymbol& back);

/// Every clash between the inferred front end and the declared front
/// capsule; empty when compatible.
std::vector<Diagnostic> check_connection_compat(const ConnectionSymbol& conn,
                                                const CapsuleSymbol& back,
                                                const CapsuleSymbol& front);

/// Lowers a symbol graph to a capsule network. Missing weights get the
/// seeded initialization, missing biases are zero. Throws
/// UnresolvedReference, or ShapeErrors with every collected diagnostic.
CapsuleNetwork lower_symbols(const SymbolGraph& graph);

/// The capsule function of a capsule kind.
CapsuleFn capsule_fn_of(const CapsuleSymbol& capsule);
/// The weighting operation of a connection kind.
WeightingOp weighting_of(const ConnectionSymbol& conn);

}  // namespace capsforge
