#include "capsforge/service.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <iostream>

#include <httplib.h>
#include <json.hpp>

#include "capsforge/report.hpp"

namespace capsforge {

using nlohmann::json;

std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::pending: return "pending";
    case JobState::running: return "running";
    case JobState::finished: return "finished";
    case JobState::failed: return "failed";
  }
  return "?";
}

struct TrainingService::Job {
  JobRecord record;
  GraphDocument document;
  std::vector<TrainingPair> pairs;
};

namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

HttpResponse json_response(int status, const json& body) { return {status, body.dump(2) + "\n"}; }

HttpResponse error_response(int status, std::string_view code, const std::string& message,
                            const std::string& where = {}) {
  return json_response(status, {{"error", {{"code", code}, {"message", message}, {"where", where}}}});
}

HttpResponse error_response(int status, const Error& e) {
  json body{{"error", {{"code", to_string(e.code())}, {"message", e.message()}, {"where", e.where()}}}};
  if (!e.diagnostics().empty()) body["errors"] = json::parse(diagnostics_json(e.diagnostics()));
  return json_response(status, body);
}

json record_json(const JobRecord& r) {
  json j{{"job_id", r.id},
         {"document_hash", r.document_hash},
         {"state", to_string(r.state)},
         {"created_at", r.created_at},
         {"updated_at", r.updated_at},
         {"config",
          {{"learning_rate", r.config.learning_rate},
           {"max_iter", r.config.max_iter},
           {"loss", to_string(r.config.loss)},
           {"seed", r.config.seed}}},
         {"iterations_completed", r.loss_history.size()}};
  j["last_loss"] = r.loss_history.empty() ? json(nullptr) : json(r.loss_history.back());
  j["error"] = r.error.empty() ? json(nullptr) : json(r.error);
  if (r.eval) {
    json e{{"mean_loss", r.eval->mean_loss}, {"total", r.eval->total}};
    e["correct"] = r.eval->correct ? json(*r.eval->correct) : json(nullptr);
    j["eval"] = e;
  } else {
    j["eval"] = nullptr;
  }
  j["checkpoint"] = r.state == JobState::finished ? json("/api/jobs/" + r.id + "/checkpoint") : json(nullptr);
  return j;
}

struct Cancelled {};

}  // namespace

TrainingService::TrainingService(ServiceConfig config) : config_(std::move(config)) {
  worker_ = std::thread([this] { worker_loop(); });
}

TrainingService::~TrainingService() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  changed_.notify_all();
  worker_.join();
}

HttpResponse TrainingService::validate(std::string_view body) const {
  if (body.size() > config_.max_body_bytes) return error_response(413, "PayloadTooLarge", "request body too large");
  try {
    const auto doc = parse_document(body);
    return {200, to_json(validate_document(doc))};
  } catch (const Error& e) {
    return error_response(400, e);
  }
}

HttpResponse TrainingService::submit(std::string_view body) {
  if (body.size() > config_.max_body_bytes) return error_response(413, "PayloadTooLarge", "request body too large");
  json req;
  try {
    req = json::parse(body.begin(), body.end());
  } catch (const json::parse_error& e) {
    return error_response(400, "SyntaxError", e.what());
  }
  if (!req.is_object()) return error_response(400, "SyntaxError", "body must be a JSON object");
  for (const auto& [key, _] : req.items()) {
    if (key != "job_id" && key != "document" && key != "config" && key != "dataset") {
      return error_response(400, "SyntaxError", "unknown field", key);
    }
  }

  auto job = std::make_shared<Job>();
  auto& rec = job->record;
  if (auto it = req.find("job_id"); it != req.end()) {
    if (!it->is_string() || it->get<std::string>().empty()) {
      return error_response(400, "SyntaxError", "job_id must be a non-empty string", "job_id");
    }
    rec.id = it->get<std::string>();
  }

  if (!req.contains("document")) return error_response(400, "SyntaxError", "missing field", "document");
  try {
    job->document = parse_document(req["document"].dump());
  } catch (const Error& e) {
    return error_response(400, e);
  }

  const json cfg = req.value("config", json::object());
  if (!cfg.is_object()) return error_response(400, "SyntaxError", "config must be an object", "config");
  auto& tc = rec.config;
  tc.seed = job->document.graph.seed;
  tc.initialize = false;
  if (!cfg.contains("learning_rate") || !cfg["learning_rate"].is_number()) {
    return error_response(422, "InvalidConfig", "learning_rate must be a number", "config.learning_rate");
  }
  tc.learning_rate = cfg["learning_rate"].get<double>();
  if (!(tc.learning_rate > 0.0) || !std::isfinite(tc.learning_rate)) {
    return error_response(422, "InvalidConfig", "learning_rate must be positive", "config.learning_rate");
  }
  if (cfg.contains("max_iter")) {
    if (!cfg["max_iter"].is_number_integer() || cfg["max_iter"].get<std::int64_t>() < 1 ||
        cfg["max_iter"].get<std::int64_t>() > 10'000'000) {
      return error_response(422, "InvalidConfig", "max_iter must be an integer in [1, 1e7]", "config.max_iter");
    }
    tc.max_iter = cfg["max_iter"].get<int>();
  }
  if (cfg.contains("loss")) {
    const auto fn = cfg["loss"].is_string() ? parse_loss(cfg["loss"].get<std::string>()) : std::nullopt;
    if (!fn) return error_response(422, "InvalidConfig", "loss must be sse or cross_entropy", "config.loss");
    tc.loss = *fn;
  }
  if (cfg.contains("seed")) {
    if (!cfg["seed"].is_number_unsigned()) {
      return error_response(422, "InvalidConfig", "seed must be a non-negative integer", "config.seed");
    }
    tc.seed = cfg["seed"].get<std::uint64_t>();
  }

  CapsuleNetwork net;
  try {
    auto graph = job->document.graph;
    graph.seed = tc.seed;
    net = lower_symbols(graph);
  } catch (const Error& e) {
    return error_response(422, e);
  }

  const json ds = req.value("dataset", json());
  if (!ds.is_object()) return error_response(400, "SyntaxError", "dataset must be an object", "dataset");
  try {
    const auto spec = dataset_spec_for(net);
    if (auto it = ds.find("csv"); it != ds.end() && it->is_string()) {
      const auto& text = it->get_ref<const std::string&>();
      if (text.size() > config_.max_inline_dataset_bytes) {
        return error_response(413, "PayloadTooLarge", "inline dataset exceeds the inline cap", "dataset.csv");
      }
      job->pairs = parse_csv_dataset(text, spec);
    } else if (auto p = ds.find("path"); p != ds.end() && p->is_string()) {
      if (config_.data_root.empty()) {
        return error_response(422, "InvalidConfig", "server-side datasets are disabled", "dataset.path");
      }
      const auto root = std::filesystem::weakly_canonical(config_.data_root);
      // "images,labels" names an IDX pair; each part must stay below the root.
      const std::string_view ref = p->get_ref<const std::string&>();
      std::string resolved;
      std::size_t start = 0;
      while (true) {
        const auto comma = ref.find(',', start);
        const std::filesystem::path name(std::string(ref.substr(start, comma - start)));
        const bool escapes = name.is_absolute() || name.has_root_name() ||
                             std::any_of(name.begin(), name.end(), [](const auto& part) { return part == ".."; });
        if (escapes) {
          return error_response(422, "InvalidConfig", "dataset path must stay below the data root", "dataset.path");
        }
        if (!resolved.empty()) resolved += ",";
        resolved += (root / name).string();
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
      job->pairs = load_dataset(resolved, spec);
    } else {
      return error_response(400, "SyntaxError", "dataset needs a csv string or a path", "dataset");
    }
  } catch (const Error& e) {
    return error_response(422, e);
  }
  if (job->pairs.empty()) return error_response(422, "InvalidConfig", "dataset is empty", "dataset");
  rec.document_hash = document_hash(job->document);

  std::lock_guard lock(mutex_);
  if (rec.id.empty()) {
    do {
      rec.id = "job-" + std::to_string(next_id_++);
    } while (jobs_.contains(rec.id));
  } else if (auto it = jobs_.find(rec.id); it != jobs_.end()) {
    const auto state = it->second->record.state;
    if (state == JobState::pending || state == JobState::running) {
      return error_response(409, "Conflict", "a job with this id is still " + std::string(to_string(state)), rec.id);
    }
  }
  if (queue_.size() >= config_.max_pending_jobs) {
    return error_response(503, "QueueFull", "too many pending jobs");
  }
  rec.created_at = rec.updated_at = now_iso8601();
  jobs_[rec.id] = job;
  queue_.push_back(job);
  changed_.notify_all();
  return json_response(202, record_json(rec));
}

HttpResponse TrainingService::job(std::string_view id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(std::string(id));
  if (it == jobs_.end()) return error_response(404, "NotFound", "unknown job", std::string(id));
  return json_response(200, record_json(it->second->record));
}

HttpResponse TrainingService::job_loss(std::string_view id, std::size_t from) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(std::string(id));
  if (it == jobs_.end()) return error_response(404, "NotFound", "unknown job", std::string(id));
  const auto& history = it->second->record.loss_history;
  json rows = json::array();
  for (std::size_t i = from; i < history.size(); ++i) rows.push_back({{"iteration", i + 1}, {"loss", history[i]}});
  return json_response(200, {{"job_id", std::string(id)},
                             {"from", from},
                             {"next", std::max(from, history.size())},
                             {"state", to_string(it->second->record.state)},
                             {"rows", rows}});
}

HttpResponse TrainingService::job_checkpoint(std::string_view id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(std::string(id));
  if (it == jobs_.end()) return error_response(404, "NotFound", "unknown job", std::string(id));
  const auto& rec = it->second->record;
  if (rec.state != JobState::finished) {
    return error_response(409, "Conflict", "job is " + std::string(to_string(rec.state)), rec.id);
  }
  return {200, std::string(rec.checkpoint.begin(), rec.checkpoint.end()), "application/octet-stream"};
}

HttpResponse TrainingService::symbols() const {
  static const std::string body = serialize_catalog(catalog());
  return {200, body};
}

std::optional<JobRecord> TrainingService::record(std::string_view id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(std::string(id));
  if (it == jobs_.end()) return std::nullopt;
  return it->second->record;
}

bool TrainingService::wait_idle(std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  return changed_.wait_for(lock, timeout, [this] { return queue_.empty() && active_ == 0; });
}

void TrainingService::worker_loop() {
  while (true) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(mutex_);
      changed_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = queue_.front();
      queue_.pop_front();
      ++active_;
      job->record.state = JobState::running;
      job->record.updated_at = now_iso8601();
    }
    run(*job);
    {
      std::lock_guard lock(mutex_);
      --active_;
      job->record.updated_at = now_iso8601();
    }
    changed_.notify_all();
  }
}

void TrainingService::run(Job& job) {
  TrainConfig cfg;
  {
    std::lock_guard lock(mutex_);
    cfg = job.record.config;
  }
  cfg.log_every = 1;
  try {
    auto graph = job.document.graph;
    graph.seed = cfg.seed;
    auto net = lower_symbols(graph);
    auto result = train(std::move(net), job.pairs, cfg, [&](int, double loss) {
      if (stopping_) throw Cancelled{};
      std::lock_guard lock(mutex_);
      job.record.loss_history.push_back(loss);
      job.record.updated_at = now_iso8601();
    });
    const auto metrics = evaluate(result.network, job.pairs, cfg.loss);
    auto ckpt = encode_checkpoint(make_checkpoint(result.network, job.record.document_hash,
                                                  static_cast<std::uint64_t>(cfg.max_iter), result.loss_history));
    std::lock_guard lock(mutex_);
    job.record.eval = metrics;
    job.record.checkpoint = std::move(ckpt);
    job.record.state = JobState::finished;
  } catch (const Cancelled&) {
    std::lock_guard lock(mutex_);
    job.record.state = JobState::failed;
    job.record.error = "service stopped";
  } catch (const std::exception& e) {
    std::lock_guard lock(mutex_);
    job.record.state = JobState::failed;
    job.record.error = e.what();
  }
}

namespace {

void reply(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

}  // namespace

void mount_routes(httplib::Server& server, TrainingService& service) {
  const auto origin = service.config().cors_origin;
  server.set_default_headers({{"Access-Control-Allow-Origin", origin}});
  server.set_payload_max_length(service.config().max_body_bytes);
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.Post("/api/validate", [&service](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.validate(req.body));
  });
  server.Post("/api/jobs", [&service](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.submit(req.body));
  });
  server.Get(R"(/api/jobs/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.job(req.matches[1].str()));
  });
  server.Get(R"(/api/jobs/([^/]+)/loss)", [&service](const httplib::Request& req, httplib::Response& res) {
    std::size_t from = 0;
    if (req.has_param("from")) {
      const auto text = req.get_param_value("from");
      try {
        std::size_t used = 0;
        const auto v = std::stoll(text, &used);
        if (used != text.size() || v < 0) throw std::invalid_argument(text);
        from = static_cast<std::size_t>(v);
      } catch (const std::exception&) {
        reply(res, error_response(400, "SyntaxError", "from must be a non-negative integer", "from"));
        return;
      }
    }
    reply(res, service.job_loss(req.matches[1].str(), from));
  });
  server.Get(R"(/api/jobs/([^/]+)/checkpoint)", [&service](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.job_checkpoint(req.matches[1].str()));
  });
  server.Get("/api/symbols", [&service](const httplib::Request&, httplib::Response& res) {
    reply(res, service.symbols());
  });
}

int serve(const std::string& host, int port, const ServiceConfig& config) {
  TrainingService service(config);
  httplib::Server server;
  mount_routes(server, service);
  std::cerr << "listening on " << host << ":" << port << "\n";
  return server.listen(host, port) ? 0 : 1;
}

}  // namespace capsforge
