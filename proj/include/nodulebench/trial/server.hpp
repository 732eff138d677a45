#pragma once

#include <memory>
#include <string>

#include "nodulebench/trial/service.hpp"

namespace nb {

struct ServerOptions {
  /// Reader endpoints require "Authorization: Bearer <reader token>".
  bool require_reader_tokens = true;
  /// When set, trial creation, export and report require this bearer token.
  std::string admin_token;
  BootstrapOptions report_bootstrap;
};

/// HTTP status for a service error.
int http_status(TrialErrorCode code);

/// "host:port" -> (host, port); throws std::invalid_argument.
std::pair<std::string, int> parse_address(const std::string& addr);

/// JSON-over-HTTP front of a TrialService:
///   POST /trials                               create (admin)
///   GET  /trials/{id}/readers/{rid}/next       next assignment (reader)
///   POST /readings                             submit a reading (reader)
///   GET  /cases/{id}/slices/{axis}/{index}     PNG, ?window=lung|mediastinum
///   GET  /trials/{id}/export                   JSON-lines readings (admin)
///   GET  /trials/{id}/report                   report JSON with SVG plots (admin)
class TrialServer {
 public:
  TrialServer(TrialService& service, ServerOptions options = {});
  ~TrialServer();
  TrialServer(const TrialServer&) = delete;
  TrialServer& operator=(const TrialServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port; throws std::runtime_error.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Call after bind().
  void run();
  /// run() on a background thread; returns once the server accepts connections.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace nb
