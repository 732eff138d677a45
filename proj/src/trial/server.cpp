#include "nodulebench/trial/server.hpp"

#include <thread>

#include <httplib.h>

namespace nb {

int http_status(TrialErrorCode code) {
  switch (code) {
    case TrialErrorCode::bad_request: return 400;
    case TrialErrorCode::unauthorized: return 401;
    case TrialErrorCode::not_found: return 404;
    case TrialErrorCode::conflict: return 409;
    case TrialErrorCode::complete: return 410;
    case TrialErrorCode::washout: return 425;  // Too Early
  }
  return 500;
}

std::pair<std::string, int> parse_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0) throw std::invalid_argument("address must be HOST:PORT, got '" + addr + "'");
  try {
    std::size_t used = 0;
    const int port = std::stoi(addr.substr(colon + 1), &used);
    if (used != addr.size() - colon - 1 || port < 0 || port > 65535) throw std::invalid_argument("port");
    return {addr.substr(0, colon), port};
  } catch (const std::exception&) {
    throw std::invalid_argument("bad port in address '" + addr + "'");
  }
}

struct TrialServer::Impl {
  TrialService& service;
  ServerOptions options;
  httplib::Server http;
  std::thread thread;

  static std::string bearer(const httplib::Request& req) {
    const auto h = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    return h.rfind(prefix, 0) == 0 ? h.substr(prefix.size()) : std::string();
  }

  void require_admin(const httplib::Request& req) const {
    if (!options.admin_token.empty() && bearer(req) != options.admin_token) {
      throw TrialError(TrialErrorCode::unauthorized, "admin token required");
    }
  }

  void require_reader(const httplib::Request& req, const std::string& trial_id, const std::string& reader_id) const {
    if (options.require_reader_tokens && !service.token_valid(trial_id, reader_id, bearer(req))) {
      throw TrialError(TrialErrorCode::unauthorized, "invalid reader token");
    }
  }

  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <class F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const TrialError& e) {
        nlohmann::json body = {{"error", to_string(e.code)}, {"message", e.what()}};
        if (e.eligible_at) {
          body["eligible_at"] = *e.eligible_at;
          body["eligible_at_iso"] = iso8601(*e.eligible_at);
        }
        send_json(res, http_status(e.code), body);
      } catch (const nlohmann::json::exception& e) {
        send_json(res, 400, {{"error", "bad_request"}, {"message", std::string("malformed JSON: ") + e.what()}});
      } catch (const std::invalid_argument& e) {
        send_json(res, 400, {{"error", "bad_request"}, {"message", e.what()}});
      } catch (const std::exception& e) {
        send_json(res, 500, {{"error", "internal"}, {"message", e.what()}});
      }
    };
  }

  void routes() {
    http.Post("/trials", guarded([this](const httplib::Request& req, httplib::Response& res) {
      require_admin(req);
      const TrialConfig cfg = nlohmann::json::parse(req.body).get<TrialConfig>();
      const std::string id = service.create_trial(cfg);
      nlohmann::json readers = nlohmann::json::array();
      for (const auto& r : cfg.readers) {
        readers.push_back({{"reader_id", r.reader_id}, {"group", to_string(r.group)}, {"token", service.reader_token(id, r.reader_id)}});
      }
      send_json(res, 201, {{"trial_id", id}, {"readers", readers}});
    }));
    http.Get(R"(/trials/([^/]+)/readers/([^/]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string trial = req.matches[1], reader = req.matches[2];
      require_reader(req, trial, reader);
      send_json(res, 200, assignment_payload(service.next_assignment(trial, reader)));
    }));
    http.Post("/readings", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const ReadingSubmission sub = nlohmann::json::parse(req.body).get<ReadingSubmission>();
      require_reader(req, sub.trial_id, sub.reader_id);
      send_json(res, 201, service.record_reading(sub));
    }));
    http.Get(R"(/cases/([^/]+)/slices/([a-z]+)/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string window = req.has_param("window") ? req.get_param_value("window") : "lung";
      const auto index = static_cast<std::size_t>(std::stoull(req.matches[3]));
      res.set_content(service.slice_png(req.matches[1], req.matches[2], index, window), "image/png");
    }));
    http.Get(R"(/trials/([^/]+)/export)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      require_admin(req);
      res.set_content(service.export_trial(req.matches[1]), "application/x-ndjson");
    }));
    http.Get(R"(/trials/([^/]+)/report)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      require_admin(req);
      const TrialReport report = service.trial_report(req.matches[1], options.report_bootstrap);
      nlohmann::json body = report;
      body["plots"] = report_plots(report);
      send_json(res, 200, body);
    }));
  }
};

TrialServer::TrialServer(TrialService& service, ServerOptions options) : impl_(new Impl{service, std::move(options), {}, {}}) {
  impl_->routes();
}

TrialServer::~TrialServer() { stop(); }

int TrialServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->http.bind_to_any_port(host);
    if (bound < 0) throw std::runtime_error("cannot bind " + host);
    return bound;
  }
  if (!impl_->http.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void TrialServer::run() { impl_->http.listen_after_bind(); }

void TrialServer::start() {
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
}

void TrialServer::stop() {
  impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace nb
