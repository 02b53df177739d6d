#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capsforge/backprop.hpp"
#include "capsforge/capsule.hpp"
#include "capsforge/symbols.hpp"

namespace capsforge {

inline constexpr std::string_view kFormatVersion = "capsforge/1";

/// A persisted drawing: symbols plus connections and document metadata.
struct GraphDocument {
  std::string name;
  SymbolGraph graph;  // graph.seed is the metadata seed
  /// Any further metadata keys (editor positions and the like), kept as
  /// canonical JSON object text.
  std::string extra_metadata = "{}";

  friend bool operator==(const GraphDocument&, const GraphDocument&) = default;
};

/// Parses and schema-checks a document without lowering it. Errors carry
/// a field path ("capsules[2].attributes.height") or a line/column.
/// Throws SyntaxError, UnknownSymbolKind or UnresolvedReference.
GraphDocument parse_document(std::string_view text);

/// parse_document followed by lower_symbols; additionally throws
/// ShapeErrors with every collected diagnostic.
CapsuleNetwork parse_graph_document(std::string_view text);

/// Canonical text: sorted keys, two-space indentation, shortest round-trip
/// floats, trailing newline. serialize(parse_document(serialize(d))) ==
/// serialize(d).
std::string serialize(const GraphDocument& doc);

/// Describes a network built from catalog operations as a document with
/// inline parameters. Throws Unsupported for operations outside the catalog.
GraphDocument document_from_network(const CapsuleNetwork& net, std::string name = {});

/// Copies the network's current parameters into the document payloads.
/// The network must have been lowered from this document.
void embed_parameters(GraphDocument& doc, const CapsuleNetwork& net);

/// Lowercase hex SHA-256 of arbitrary bytes.
std::string sha256_hex(std::string_view bytes);
/// Hash of the document's canonical text.
std::string document_hash(const GraphDocument& doc);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws FormatError on invalid input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Graphviz digraph: one node per vertex labeled with its kind and output
/// shape, one edge per connection labeled with its operation. `kinds`
/// overrides the per-vertex kind text (for example the symbol kinds of a
/// document).
std::string export_dot(const CapsuleNetwork& net,
                       const std::map<VertexId, std::string>& kinds = {});

/// Where dataset records go in the network.
struct DatasetSpec {
  VertexId input;
  Shape feature_shape;
  VertexId output;
  Shape target_shape;
  DType dtype = DType::f64;
};

/// Spec for a network with exactly one input and one output.
DatasetSpec dataset_spec_for(const CapsuleNetwork& net);

/// One record per line, features then targets, comma separated. Blank lines
/// and lines starting with '#' are skipped. Throws FormatError with the line
/// number on ragged rows or non-numeric fields.
std::vector<TrainingPair> parse_csv_dataset(std::string_view text, const DatasetSpec& spec);

struct IdxHeader {
  std::uint8_t type_code = 0;  // 0x08 u8, 0x09 i8, 0x0B i16, 0x0C i32, 0x0D f32, 0x0E f64
  std::vector<std::uint32_t> dims;
  std::size_t data_offset = 0;

  std::size_t element_size() const;
  std::size_t element_count() const;
};

/// Reads the magic number and big-endian dimension header. Throws
/// FormatError.
IdxHeader read_idx_header(std::span<const std::uint8_t> bytes);

struct IdxArray {
  IdxHeader header;
  std::vector<double> values;
};

/// Full parse; the payload must exactly fill the declared dimensions.
IdxArray parse_idx(std::span<const std::uint8_t> bytes);

/// Images (N x ...) and labels (N) to pairs; labels become one-hot targets
/// and image values are multiplied by `scale`.
std::vector<TrainingPair> idx_dataset(const IdxArray& images, const IdxArray& labels,
                                      const DatasetSpec& spec, double scale = 1.0);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Dispatches on extension: ".csv" is parsed as CSV; anything else must be
/// an IDX file pair given as "images.idx,labels.idx".
std::vector<TrainingPair> load_dataset(const std::string& path, const DatasetSpec& spec);

struct Checkpoint {
  std::string document_hash;  // 64 hex chars
  std::uint64_t iteration = 0;
  std::vector<double> loss_history;
  /// "w:tail->head" and "b:id" in network order.
  std::vector<std::pair<std::string, Tensor>> parameters;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint make_checkpoint(const CapsuleNetwork& net, std::string document_hash,
                           std::uint64_t iteration, std::vector<double> loss_history);

/// Loads the checkpoint's parameters into `net`. Throws HashMismatch when
/// the hashes differ and FormatError when keys or shapes do not match.
void apply_checkpoint(const Checkpoint& ckpt, CapsuleNetwork& net, std::string_view document_hash);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError with the byte offset of the problem.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The symbol catalog as a canonical JSON document, and its inverse.
std::string serialize_catalog(const std::vector<SymbolDef>& defs);
std::vector<SymbolDef> parse_catalog(std::string_view text);

}  // namespace capsforge
