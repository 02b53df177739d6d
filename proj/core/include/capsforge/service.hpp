#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "capsforge/backprop.hpp"
#include "capsforge/model_io.hpp"

namespace httplib {
class Server;
}

namespace capsforge {

struct ServiceConfig {
  /// Requests with larger bodies get 413.
  std::size_t max_body_bytes = 8 << 20;
  /// Inline CSV datasets larger than this get 413.
  std::size_t max_inline_dataset_bytes = 1 << 20;
  /// Pending jobs beyond this get 503.
  std::size_t max_pending_jobs = 16;
  /// Server-side dataset references resolve below this directory; empty
  /// disables them.
  std::filesystem::path data_root;
  std::string cors_origin = "*";
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

enum class JobState { pending, running, finished, failed };

std::string_view to_string(JobState s);

struct JobRecord {
  std::string id;
  std::string document_hash;
  JobState state = JobState::pending;
  TrainConfig config;
  std::vector<double> loss_history;
  std::string created_at;
  std::string updated_at;
  std::string error;
  std::optional<EvalMetrics> eval;
  /// Encoded checkpoint, set once finished.
  std::vector<std::uint8_t> checkpoint;
};

/// Job registry plus request handlers. Jobs run one at a time on a single
/// worker thread; the registry mutex guards every record.
class TrainingService {
 public:
  explicit TrainingService(ServiceConfig config = {});
  ~TrainingService();

  TrainingService(const TrainingService&) = delete;
  TrainingService& operator=(const TrainingService&) = delete;

  HttpResponse validate(std::string_view body) const;
  HttpResponse submit(std::string_view body);
  HttpResponse job(std::string_view id) const;
  HttpResponse job_loss(std::string_view id, std::size_t from) const;
  HttpResponse job_checkpoint(std::string_view id) const;
  HttpResponse symbols() const;

  /// Snapshot of one record.
  std::optional<JobRecord> record(std::string_view id) const;
  /// Blocks until no job is pending or running, or the timeout passes.
  bool wait_idle(std::chrono::milliseconds timeout) const;

  const ServiceConfig& config() const noexcept { return config_; }

 private:
  struct Job;

  void worker_loop();
  void run(Job& job);

  ServiceConfig config_;
  mutable std::mutex mutex_;
  mutable std::condition_variable changed_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::uint64_t next_id_ = 1;
  std::size_t active_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread worker_;
};

/// Registers the HTTP routes (with CORS headers) on `server`.
void mount_routes(httplib::Server& server, TrainingService& service);

/// Serves until the process is stopped. Returns nonzero when the port cannot
/// be bound.
int serve(const std::string& host, int port, const ServiceConfig& config);

}  // namespace capsforge
