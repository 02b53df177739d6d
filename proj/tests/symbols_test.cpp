#include <gtest/gtest.h>

#include <random>

#include "capsforge/model_io.hpp"
#include "capsforge/symbols.hpp"
#include "test_util.hpp"

using namespace capsforge;
using testutil::error_code;

namespace {

CapsuleSymbol vec(VertexId id, CapsuleKind kind, std::size_t n, DType dtype = DType::f64) {
  CapsuleSymbol c{std::move(id), kind, {}, {}};
  c.attrs.dimension = n;
  c.attrs.dtype = dtype;
  return c;
}

CapsuleSymbol map(VertexId id, CapsuleKind kind, std::size_t d, std::size_t h, std::size_t w) {
  CapsuleSymbol c{std::move(id), kind, {}, {}};
  c.attrs.channels = d;
  c.attrs.height = h;
  c.attrs.width = w;
  if (kind == CapsuleKind::maxpool_2d) c.attrs.window_height = c.attrs.window_width = 2;
  return c;
}

ConnectionSymbol full(VertexId tail, VertexId head, std::size_t height, std::size_t width = 0) {
  ConnectionSymbol c{std::move(tail), std::move(head), ConnectionKind::full, {}, {}};
  c.attrs.height = height;
  c.attrs.width = width;
  return c;
}

ConnectionSymbol conv(VertexId tail, VertexId head, std::size_t k, std::size_t m, std::size_t s = 1) {
  ConnectionSymbol c{std::move(tail), std::move(head), ConnectionKind::convolutional, {}, {}};
  c.attrs.kernels = k;
  c.attrs.kernel_height = c.attrs.kernel_width = m;
  c.attrs.stride = s;
  return c;
}

ConnectionSymbol plain(VertexId tail, VertexId head, ConnectionKind kind) {
  return {std::move(tail), std::move(head), kind, {}, {}};
}

}  // namespace

TEST(Catalog, KindCounts) {
  std::size_t capsules = 0, connections = 0, plains = 0;
  for (const auto& def : catalog()) {
    capsules += def.category == SymbolCategory::capsule;
    connections += def.category == SymbolCategory::connection;
    plains += def.category == SymbolCategory::plain;
  }
  EXPECT_EQ(capsules, 7u);
  EXPECT_EQ(connections, 4u);
  EXPECT_EQ(plains, 5u);
  for (auto kind : {"data_1d", "data_2d", "relu_2d", "maxpool_2d", "identity_1d", "relu_1d", "softmax_1d"}) {
    EXPECT_NE(find_symbol(kind), nullptr) << kind;
  }
  for (auto kind : {"convolutional", "transfer", "reshaping", "full"}) EXPECT_NE(find_symbol(kind), nullptr) << kind;
  EXPECT_EQ(find_symbol("dot_product"), nullptr);
}

TEST(Catalog, MaxpoolCarriesAWindow) {
  const auto* def = find_symbol("maxpool_2d");
  ASSERT_NE(def, nullptr);
  bool window = false;
  for (const auto& a : def->attributes) window = window || a.name == "window_height";
  EXPECT_TRUE(window);
}

TEST(InferFront, Examples) {
  const auto back = map("x", CapsuleKind::data_2d, 1, 28, 28);
  EXPECT_EQ(infer_front_attrs(conv("x", "c", 32, 5), back).shape, (Shape{32, 24, 24}));
  EXPECT_EQ(infer_front_attrs(plain("x", "t", ConnectionKind::transfer), back).shape, (Shape{1, 28, 28}));
  const auto pool = map("p", CapsuleKind::maxpool_2d, 32, 24, 24);
  EXPECT_EQ(infer_front_attrs(plain("p", "f", ConnectionKind::reshaping), pool).shape, (Shape{4608}));
  EXPECT_EQ(infer_front_attrs(full("a", "b", 6, 2), vec("a", CapsuleKind::data_1d, 2)).shape, (Shape{6}));
}

TEST(InferFront, Errors) {
  const auto small = map("x", CapsuleKind::data_2d, 1, 3, 3);
  EXPECT_EQ(error_code([&] { infer_front_attrs(conv("x", "c", 1, 5), small); }), Errc::incompatible_back_end);
  EXPECT_EQ(error_code([&] { infer_front_attrs(conv("x", "c", 1, 2, 2), small); }), Errc::stride_mismatch);
  EXPECT_EQ(error_code([&] { infer_front_attrs(conv("x", "c", 1, 1), vec("x", CapsuleKind::data_1d, 4)); }),
            Errc::incompatible_back_end);
  EXPECT_EQ(error_code([&] { infer_front_attrs(full("x", "c", 2, 5), vec("x", CapsuleKind::data_1d, 4)); }),
            Errc::incompatible_back_end);
}

TEST(ConnectionCompat, Examples) {
  const auto x = vec("x", CapsuleKind::data_1d, 2);
  EXPECT_TRUE(check_connection_compat(full("x", "h", 6, 2), x, vec("h", CapsuleKind::relu_1d, 6)).empty());
  const auto errs = check_connection_compat(full("x", "h", 6, 2), vec("x", CapsuleKind::data_1d, 2, DType::f32),
                                            vec("h", CapsuleKind::relu_1d, 6));
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_EQ(errs[0].code, Errc::data_type_mismatch);
  const auto both = check_connection_compat(full("x", "h", 5, 2), vec("x", CapsuleKind::data_1d, 2, DType::f32),
                                            vec("h", CapsuleKind::relu_1d, 6));
  EXPECT_EQ(both.size(), 2u);
}

TEST(ConnectionCompat, InferenceIsSelfConsistent) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng() % 3, M = 3 + rng() % 8, N = 3 + rng() % 8;
    const auto back = map("b", CapsuleKind::relu_2d, d, M, N);
    std::vector<ConnectionSymbol> conns{plain("b", "f", ConnectionKind::transfer),
                                        plain("b", "f", ConnectionKind::reshaping)};
    const std::size_t m = 1 + rng() % std::min(M, N);
    conns.push_back(conv("b", "f", 1 + rng() % 4, m));
    for (const auto& c : conns) {
      const auto front_structure = infer_front_attrs(c, back);
      CapsuleSymbol front;
      front.id = "f";
      front.attrs.dtype = front_structure.dtype;
      if (front_structure.shape.size() == 1) {
        front.kind = CapsuleKind::relu_1d;
        front.attrs.dimension = front_structure.shape[0];
      } else {
        front.kind = CapsuleKind::relu_2d;
        front.attrs.channels = front_structure.shape[0];
        front.attrs.height = front_structure.shape[1];
        front.attrs.width = front_structure.shape[2];
      }
      EXPECT_TRUE(check_connection_compat(c, back, front).empty());
    }
  }
}

TEST(Lower, BundledMlpChainIsTheMlpPath) {
  SymbolGraph g{{vec("x", CapsuleKind::data_1d, 2), vec("h1", CapsuleKind::relu_1d, 6),
                 vec("h2", CapsuleKind::relu_1d, 4), vec("o", CapsuleKind::identity_1d, 2)},
                {full("x", "h1", 6, 2), full("h1", "h2", 4, 6), full("h2", "o", 2, 4)},
                7};
  const auto net = lower_symbols(g);
  const auto reference =
      build_mlp_path({2, 6, 4, 2}, {CapsuleFn::relu(), CapsuleFn::relu(), CapsuleFn::identity()}, 7);
  ASSERT_EQ(net.connection_count(), 3u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(net.weight(e), reference.weight(e));
  for (std::size_t v = 0; v < 4; ++v) EXPECT_EQ(net.fn(v), reference.fn(v));
}

TEST(Lower, BundledLenetDocumentIsTheLenetPath) {
  const auto net = parse_graph_document(testutil::data_text("fig21_lenet.json"));
  const auto reference = build_lenet_path({});
  ASSERT_EQ(net.vertex_count(), reference.vertex_count());
  for (std::size_t v = 0; v < net.vertex_count(); ++v) {
    const auto& id = net.dag().vertices()[v];
    const auto& ref_id = reference.dag().vertices()[v];
    EXPECT_EQ(net.fn(v), reference.fn(v));
    EXPECT_EQ(net.shape_report().output_shape.at(id), reference.shape_report().output_shape.at(ref_id));
  }
  for (std::size_t e = 0; e < net.connection_count(); ++e) {
    EXPECT_EQ(net.connection(e).op, reference.connection(e).op);
    EXPECT_EQ(net.weight(e).shape(), reference.weight(e).shape());
  }
}

TEST(Lower, SingleDataCapsule) {
  const auto net = lower_symbols({{vec("x", CapsuleKind::data_1d, 3)}, {}, 0});
  EXPECT_EQ(net.vertex_count(), 1u);
  EXPECT_TRUE(net.roles().outputs.empty());
}

TEST(Lower, AggregatesEveryDiagnostic) {
  SymbolGraph g{{vec("x", CapsuleKind::data_1d, 2), vec("h", CapsuleKind::relu_1d, 6),
                 vec("o", CapsuleKind::identity_1d, 3)},
                {full("x", "h", 5, 2), full("h", "o", 2, 6)},
                0};
  try {
    lower_symbols(g);
    FAIL() << "expected ShapeErrors";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::shape_errors);
    EXPECT_EQ(e.diagnostics().size(), 2u);
    EXPECT_EQ(e.diagnostics()[0].where, "x->h");
    EXPECT_EQ(e.diagnostics()[1].where, "h->o");
  }
}

TEST(Lower, UnresolvedReference) {
  SymbolGraph g{{vec("x", CapsuleKind::data_1d, 2)}, {full("x", "h9", 2, 2)}, 0};
  EXPECT_EQ(error_code([&] { lower_symbols(g); }), Errc::unresolved_reference);
}

TEST(Lower, CompatibleRandomChainsPassShapeValidation) {
  std::mt19937_64 rng(52);
  for (int trial = 0; trial < 100; ++trial) {
    SymbolGraph g;
    g.seed = trial;
    std::size_t size = 2 + rng() % 8;
    const std::size_t M = 6 + 2 * (rng() % 4);
    std::size_t h = M, channels = 1 + rng() % 2;
    g.capsules.push_back(map("x", CapsuleKind::data_2d, channels, M, M));
    const std::size_t m = 1 + 2 * (rng() % 2);
    const std::size_t k = 1 + rng() % 3;
    g.capsules.push_back(map("c", CapsuleKind::relu_2d, k, h - m + 1, h - m + 1));
    g.connections.push_back(conv("x", "c", k, m));
    h = h - m + 1;
    std::string last = "c";
    if (h % 2 == 0) {
      g.capsules.push_back(map("p", CapsuleKind::maxpool_2d, k, h, h));
      g.connections.push_back(plain("c", "p", ConnectionKind::transfer));
      h /= 2;
      last = "p";
    }
    g.capsules.push_back(vec("f", CapsuleKind::identity_1d, k * h * h));
    g.connections.push_back(plain(last, "f", ConnectionKind::reshaping));
    g.capsules.push_back(vec("o", CapsuleKind::softmax_1d, size));
    g.connections.push_back(full("f", "o", size));
    const auto net = lower_symbols(g);
    EXPECT_TRUE(validate_shapes(net).ok());
  }
}
