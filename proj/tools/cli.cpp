#include "cli.hpp"

#include <charconv>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "capsforge/backprop.hpp"
#include "capsforge/generation.hpp"
#include "capsforge/model_io.hpp"
#include "capsforge/report.hpp"
#include "capsforge/service.hpp"

namespace capsforge::cli {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, end) : std::to_string(v);
}

/// Thrown for usage problems detected after CLI11 parsing.
struct UsageError {
  std::string message;
};

GraphDocument load_document(const std::string& path) { return parse_document(read_text_file(path)); }

std::map<VertexId, std::string> kinds_of(const GraphDocument& doc) {
  std::map<VertexId, std::string> kinds;
  for (const auto& c : doc.graph.capsules) kinds[c.id] = std::string(to_string(c.kind));
  return kinds;
}

int cmd_validate(const std::string& path, bool as_json, std::ostream& out) {
  const auto report = validate_document(load_document(path));
  out << (as_json ? to_json(report) : to_text(report));
  return report.valid ? 0 : 1;
}

int cmd_enumerate(int inputs, int generations, bool dedup, bool as_json, std::ostream& out) {
  const auto counts = enumerate_growth(single_neuron_network(static_cast<std::size_t>(inputs)), generations, dedup);
  if (as_json) {
    json rows = json::array();
    for (const auto& c : counts) {
      json row{{"generation", c.generation}, {"labeled", c.labeled}};
      if (dedup) row["distinct"] = c.distinct;
      rows.push_back(row);
    }
    out << json{{"inputs", inputs}, {"counts", rows}}.dump(2) << "\n";
    return 0;
  }
  out << (dedup ? "generation,labeled,distinct\n" : "generation,labeled\n");
  for (const auto& c : counts) {
    out << c.generation << "," << c.labeled;
    if (dedup) out << "," << c.distinct;
    out << "\n";
  }
  return 0;
}

int cmd_derive(const std::string& path, bool verify, bool as_json, std::ostream& out, std::ostream& err) {
  const auto doc = load_document(path);
  std::vector<VertexId> vertices;
  for (const auto& c : doc.graph.capsules) vertices.push_back(c.id);
  std::vector<Edge> edges;
  for (const auto& c : doc.graph.connections) edges.push_back({c.tail, c.head});
  const auto g = Dag::build(std::move(vertices), std::move(edges));
  const auto steps = derive_generation_sequence(g);
  std::optional<bool> verified;
  if (verify) verified = same_graph(replay(steps).graph(), g);
  if (as_json) {
    json list = json::array();
    for (const auto& s : steps) list.push_back(s.describe());
    out << json{{"steps", list}, {"verified", verified ? json(*verified) : json(nullptr)}}.dump(2) << "\n";
  } else {
    for (std::size_t i = 0; i < steps.size(); ++i) out << i + 1 << ". " << steps[i].describe() << "\n";
    if (verified) out << "# replay " << (*verified ? "matches" : "DIFFERS FROM") << " the document graph\n";
  }
  if (verified && !*verified) {
    err << "replayed network differs from the document graph\n";
    return 1;
  }
  return 0;
}

struct TrainOptions {
  std::string graph;
  std::string data;
  double lr = 0.01;
  int iters = 100;
  std::string loss = "sse";
  std::optional<std::uint64_t> seed;
  int log_every = 1;
  std::string checkpoint_out;
  std::string resume;
  std::string doc_out;
  bool json = false;
};

LossFn loss_or_usage(const std::string& name) {
  const auto fn = parse_loss(name);
  if (!fn) throw UsageError{"--loss must be sse or cross_entropy"};
  return *fn;
}

json eval_json(const EvalMetrics& m) {
  json j{{"mean_loss", m.mean_loss}, {"total", m.total}};
  j["correct"] = m.correct ? json(*m.correct) : json(nullptr);
  return j;
}

void print_eval(const EvalMetrics& m, std::ostream& out, std::string_view prefix) {
  out << prefix << "mean_loss " << fmt(m.mean_loss) << "\n";
  if (m.correct) out << prefix << "accuracy " << *m.correct << "/" << m.total << "\n";
}

int cmd_train(const TrainOptions& o, std::ostream& out) {
  auto doc = load_document(o.graph);
  const auto hash = document_hash(doc);
  TrainConfig cfg;
  cfg.learning_rate = o.lr;
  cfg.max_iter = o.iters;
  cfg.loss = loss_or_usage(o.loss);
  cfg.seed = o.seed.value_or(doc.graph.seed);
  cfg.log_every = o.log_every;
  cfg.initialize = false;
  cfg.validate();

  auto graph = doc.graph;
  graph.seed = cfg.seed;
  auto net = lower_symbols(graph);
  const auto pairs = load_dataset(o.data, dataset_spec_for(net));
  if (pairs.empty()) throw Error(Errc::format_error, "dataset is empty", o.data);

  std::uint64_t offset = 0;
  std::vector<double> history;
  if (!o.resume.empty()) {
    const auto ckpt = load_checkpoint(o.resume);
    apply_checkpoint(ckpt, net, hash);
    offset = ckpt.iteration;
    history = ckpt.loss_history;
  }

  if (!o.json) {
    out << "# document " << hash << "\n";
    out << "# pairs " << pairs.size() << ", lr " << fmt(cfg.learning_rate) << ", iters " << cfg.max_iter
        << ", loss " << to_string(cfg.loss) << ", seed " << cfg.seed << "\n";
    out << "iter,loss\n";
  }
  auto result = train(std::move(net), pairs, cfg, [&](int iter, double loss) {
    if (!o.json) out << offset + static_cast<std::uint64_t>(iter) << "," << fmt(loss) << "\n";
  });
  history.insert(history.end(), result.loss_history.begin(), result.loss_history.end());
  const auto total_iters = offset + static_cast<std::uint64_t>(cfg.max_iter);
  const auto metrics = evaluate(result.network, pairs, cfg.loss);

  if (!o.checkpoint_out.empty()) {
    save_checkpoint(o.checkpoint_out, make_checkpoint(result.network, hash, total_iters, history));
  }
  if (!o.doc_out.empty()) {
    embed_parameters(doc, result.network);
    write_text_file(o.doc_out, serialize(doc));
  }

  if (o.json) {
    json losses = json::array();
    for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
      losses.push_back({{"iteration", offset + i + 1}, {"loss", result.loss_history[i]}});
    }
    json j{{"document_hash", hash},
           {"iterations", total_iters},
           {"losses", losses},
           {"eval", eval_json(metrics)}};
    j["checkpoint"] = o.checkpoint_out.empty() ? json(nullptr) : json(o.checkpoint_out);
    out << j.dump(2) << "\n";
  } else {
    out << "# final_loss " << fmt(result.loss_history.back()) << "\n";
    print_eval(metrics, out, "# ");
    if (!o.checkpoint_out.empty()) out << "# checkpoint " << o.checkpoint_out << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& graph_path, const std::string& ckpt_path, const std::string& data,
             const std::string& loss, bool as_json, std::ostream& out) {
  const auto doc = load_document(graph_path);
  auto net = lower_symbols(doc.graph);
  if (!ckpt_path.empty()) apply_checkpoint(load_checkpoint(ckpt_path), net, document_hash(doc));
  const auto pairs = load_dataset(data, dataset_spec_for(net));
  const auto metrics = evaluate(net, pairs, loss_or_usage(loss));
  if (as_json) {
    out << eval_json(metrics).dump(2) << "\n";
  } else {
    out << "pairs " << metrics.total << "\n";
    print_eval(metrics, out, "");
  }
  return 0;
}

int cmd_export_dot(const std::string& path, const std::string& output, bool as_json, std::ostream& out) {
  const auto doc = load_document(path);
  const auto net = lower_symbols(doc.graph);
  const auto dot = export_dot(net, kinds_of(doc));
  if (!output.empty()) {
    write_text_file(output, dot);
  } else if (as_json) {
    out << json{{"dot", dot}}.dump(2) << "\n";
  } else {
    out << dot;
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"capsforge: capsule network graph tools"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  bool as_json = false;
  auto add_json = [&](CLI::App* sub) { sub->add_flag("--json", as_json, "Machine-readable JSON output"); };

  std::string graph;
  auto* validate = app.add_subcommand("validate", "Check shapes and classify a graph document");
  validate->add_option("graph", graph, "Graph document")->required();
  add_json(validate);

  int inputs = 1, generations = 2;
  bool dedup = false;
  auto* enumerate = app.add_subcommand("enumerate", "Count networks reachable by the growth rule");
  enumerate->add_option("--inputs", inputs, "Number of input variables")->check(CLI::Range(1, 2));
  enumerate->add_option("--generations", generations, "Growth rounds")->check(CLI::Range(1, 3));
  enumerate->add_flag("--dedup", dedup, "Also count networks up to isomorphism");
  add_json(enumerate);

  bool verify = false;
  auto* derive = app.add_subcommand("derive", "Derive a generation sequence for a document's graph");
  derive->add_option("graph", graph, "Graph document")->required();
  derive->add_flag("--verify", verify, "Replay the sequence and compare edge sets");
  add_json(derive);

  TrainOptions t;
  std::uint64_t seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Full-batch gradient descent on a dataset");
  train_cmd->add_option("graph", t.graph, "Graph document")->required();
  train_cmd->add_option("--data", t.data, "CSV file, or images.idx,labels.idx")->required();
  train_cmd->add_option("--lr", t.lr, "Learning rate");
  train_cmd->add_option("--iters", t.iters, "Iterations")->check(CLI::PositiveNumber);
  train_cmd->add_option("--loss", t.loss, "sse or cross_entropy");
  auto* seed_opt = train_cmd->add_option("--seed", seed, "Weight initialization seed (default: document seed)");
  train_cmd->add_option("--log-every", t.log_every, "Loss line stride")->check(CLI::PositiveNumber);
  train_cmd->add_option("--checkpoint-out", t.checkpoint_out, "Write a checkpoint here");
  train_cmd->add_option("--resume", t.resume, "Continue from a checkpoint");
  train_cmd->add_option("--out", t.doc_out, "Write the trained document here");
  add_json(train_cmd);

  std::string ckpt, data, eval_loss = "sse";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a document (optionally with a checkpoint)");
  eval_cmd->add_option("graph", graph, "Graph document")->required();
  eval_cmd->add_option("checkpoint", ckpt, "Checkpoint file");
  eval_cmd->add_option("--data", data, "CSV file, or images.idx,labels.idx")->required();
  eval_cmd->add_option("--loss", eval_loss, "sse or cross_entropy");
  add_json(eval_cmd);

  std::string dot_out;
  auto* dot = app.add_subcommand("export-dot", "Render a document as Graphviz DOT");
  dot->add_option("graph", graph, "Graph document")->required();
  dot->add_option("-o,--output", dot_out, "Write to a file instead of stdout");
  add_json(dot);

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_root;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--data-root", data_root, "Directory for server-side dataset references");
  add_json(serve_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const bool help = e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success);
    app.exit(e, out, err);
    return help ? 0 : 2;
  }

  try {
    if (*validate) return cmd_validate(graph, as_json, out);
    if (*enumerate) return cmd_enumerate(inputs, generations, dedup, as_json, out);
    if (*derive) return cmd_derive(graph, verify, as_json, out, err);
    if (*train_cmd) {
      t.json = as_json;
      if (*seed_opt) t.seed = seed;
      return cmd_train(t, out);
    }
    if (*eval_cmd) return cmd_eval(graph, ckpt, data, eval_loss, as_json, out);
    if (*dot) return cmd_export_dot(graph, dot_out, as_json, out);
    if (*serve_cmd) {
      ServiceConfig config;
      config.data_root = data_root;
      return serve(host, port, config) == 0 ? 0 : 1;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.message << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == Errc::io_error ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace capsforge::cli
