#include "bases/oracle.hpp"

#include <httplib.h>
#include <json.hpp>

#include "bases/base64.hpp"
#include "bases/binary_io.hpp"

namespace bases {

using nlohmann::json;

std::string to_string(OracleMode m) { return m == OracleMode::soft ? "soft" : "hard"; }

OracleMode oracle_mode_from_string(const std::string& s) {
  if (s == "soft") return OracleMode::soft;
  if (s == "hard") return OracleMode::hard;
  throw ConfigError("unknown oracle mode '" + s + "'");
}

int OracleResponse::predicted() const {
  return kind == OracleMode::hard ? label : static_cast<int>(argmax(logits));
}

bool is_success(const OracleResponse& response, const AttackGoal& goal) {
  return goal.satisfied_by(response.predicted());
}

OracleResponse Oracle::query(const ImageTensor& image) {
  if (image.shape != input_shape()) {
    throw ShapeError("query image shape " + shape_string(image.shape) + " does not match victim input " +
                     shape_string(input_shape()));
  }
  if ((image.data.array() < 0.0f).any() || (image.data.array() > 1.0f).any() || !image.all_finite()) {
    throw Error("query image outside the [0,1] pixel range");
  }
  ++count_;
  const auto start = std::chrono::steady_clock::now();
  OracleResponse response = do_query(image);
  response.latency = std::chrono::steady_clock::now() - start;
  records_.push_back({digest(image), response, response.latency.count()});
  return response;
}

OracleResponse LocalOracle::do_query(const ImageTensor& image) {
  OracleResponse r;
  r.kind = mode_;
  Vector<float> logits = forward(model_, image).data;
  if (mode_ == OracleMode::soft) {
    r.logits = std::move(logits);
  } else {
    r.label = static_cast<int>(argmax(logits));
  }
  return r;
}

namespace wire {

std::string encode_predict_request(const ImageTensor& image) {
  io::Writer w;
  w.f32_range(image.data.data(), image.data.data() + image.size());
  return json{{"shape", image.shape}, {"pixels", base64::encode(w.buffer())}}.dump();
}

ImageTensor decode_predict_request(const std::string& body) {
  Shape shape;
  std::string raw;
  try {
    const json j = json::parse(body);
    shape = j.at("shape").get<Shape>();
    raw = base64::decode(j.at("pixels").get<std::string>());
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed predict request: ") + e.what());
  }
  for (int d : shape) {
    if (d <= 0) throw ProtocolError("non-positive dimension in request shape");
  }
  const std::size_t n = shape_size(shape);
  if (raw.size() != 4 * n) {
    throw ProtocolError("pixel payload has " + std::to_string(raw.size()) + " bytes, shape needs " +
                        std::to_string(4 * n));
  }
  io::Reader r(raw);
  Vector<float> data(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) data[static_cast<Eigen::Index>(i)] = r.f32("pixel");
  if (!data.allFinite()) throw ProtocolError("non-finite pixel value");
  return ImageTensor(std::move(shape), std::move(data));
}

}  // namespace wire

OracleServer::OracleServer(Model model, ServerOptions options)
    : model_(std::move(model)), options_(options), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

OracleServer::~OracleServer() { stop(); }

void OracleServer::install_routes() {
  server_->Get("/v1/meta", [this](const httplib::Request&, httplib::Response& res) {
    const json meta{{"num_classes", model_.num_classes()},
                    {"mode", to_string(options_.mode)},
                    {"input_shape", model_.input_shape()}};
    res.set_content(meta.dump(), "application/json");
  });

  server_->Post("/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    auto fail = [&res](int status, const std::string& msg) {
      res.status = status;
      res.set_content(json{{"error", msg}}.dump(), "application/json");
    };
    if (options_.budget) {
      const std::string client = req.has_header("X-Client-Id") ? req.get_header_value("X-Client-Id") : req.remote_addr;
      std::lock_guard lock(budget_mutex_);
      auto& used = per_client_[client];
      if (used >= *options_.budget) {
        fail(429, "budget_exhausted");
        return;
      }
      ++used;
    }
    ImageTensor image;
    try {
      image = wire::decode_predict_request(req.body);
    } catch (const ProtocolError& e) {
      fail(400, e.what());
      return;
    }
    if (image.shape != model_.input_shape()) {
      fail(400, "shape " + shape_string(image.shape) + " does not match model input " +
                    shape_string(model_.input_shape()));
      return;
    }
    const Vector<float> logits = forward(model_, image).data;
    json reply;
    if (options_.mode == OracleMode::soft) {
      // float -> double is exact and the JSON writer emits round-trip digits.
      std::vector<double> values(logits.data(), logits.data() + logits.size());
      reply["logits"] = values;
    } else {
      reply["label"] = static_cast<int>(argmax(logits));
    }
    ++served_;
    res.set_content(reply.dump(), "application/json");
  });
}

int OracleServer::bind(const std::string& host, int port) {
  host_ = host;
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw Error("cannot bind oracle server to " + host + ":" + std::to_string(port));
  return port_;
}

void OracleServer::start() {
  if (port_ < 0) throw Error("oracle server must be bound before start()");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void OracleServer::run() {
  if (port_ < 0) throw Error("oracle server must be bound before run()");
  server_->listen_after_bind();
}

void OracleServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string OracleServer::url() const {
  const std::string host = host_ == "0.0.0.0" ? "127.0.0.1" : host_;
  return "http://" + host + ":" + std::to_string(port_);
}

RemoteOracle::~RemoteOracle() = default;

std::unique_ptr<RemoteOracle> RemoteOracle::connect(const std::string& url, const ConnectOptions& options) {
  std::unique_ptr<RemoteOracle> oracle(new RemoteOracle());
  oracle->client_ = std::make_unique<httplib::Client>(url);
  if (!oracle->client_->is_valid()) throw TransportError("invalid oracle URL '" + url + "'");
  const auto timeout = std::chrono::duration<double>(options.timeout_seconds);
  oracle->client_->set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  oracle->client_->set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  oracle->client_->set_keep_alive(true);
  oracle->client_id_ = options.client_id;

  auto res = oracle->client_->Get("/v1/meta");
  if (!res) throw TransportError("cannot reach " + url + ": " + httplib::to_string(res.error()));
  if (res->status != 200) throw ProtocolError("/v1/meta answered HTTP " + std::to_string(res->status));
  try {
    const json meta = json::parse(res->body);
    oracle->classes_ = meta.at("num_classes").get<int>();
    oracle->server_mode_ = oracle_mode_from_string(meta.at("mode").get<std::string>());
    oracle->input_shape_ = meta.at("input_shape").get<Shape>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed /v1/meta reply: ") + e.what());
  } catch (const ConfigError& e) {
    throw ProtocolError(std::string("malformed /v1/meta reply: ") + e.what());
  }
  if (options.mode == OracleMode::soft && oracle->server_mode_ == OracleMode::hard) {
    throw CapabilityError("server at " + url + " only returns labels; logits were requested");
  }
  if (options.expected_classes && *options.expected_classes != oracle->classes_) {
    throw ConfigError("server reports " + std::to_string(oracle->classes_) + " classes, expected " +
                      std::to_string(*options.expected_classes));
  }
  oracle->mode_ = options.mode;
  return oracle;
}

OracleResponse RemoteOracle::do_query(const ImageTensor& image) {
  httplib::Headers headers;
  if (!client_id_.empty()) headers.emplace("X-Client-Id", client_id_);
  auto res = client_->Post("/v1/predict", headers, wire::encode_predict_request(image), "application/json");
  if (!res) throw TransportError("predict request failed: " + httplib::to_string(res.error()));

  if (res->status == 429) throw BudgetExhausted("victim query budget exhausted");
  json body;
  try {
    body = json::parse(res->body);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed predict reply: ") + e.what());
  }
  if (res->status != 200) {
    throw ProtocolError("predict answered HTTP " + std::to_string(res->status) + ": " + body.value("error", ""));
  }

  OracleResponse r;
  r.kind = mode_;
  try {
    if (server_mode_ == OracleMode::soft) {
      const auto values = body.at("logits").get<std::vector<double>>();
      if (static_cast<int>(values.size()) != classes_) throw ProtocolError("logit vector has the wrong length");
      Vector<float> logits(classes_);
      for (int i = 0; i < classes_; ++i) logits[i] = static_cast<float>(values[i]);
      if (!logits.allFinite()) throw ProtocolError("non-finite logits");
      if (mode_ == OracleMode::soft) {
        r.logits = std::move(logits);
      } else {
        r.label = static_cast<int>(argmax(logits));
      }
    } else {
      r.label = body.at("label").get<int>();
      if (r.label < 0 || r.label >= classes_) throw ProtocolError("label out of range");
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed predict reply: ") + e.what());
  }
  return r;
}

}  // namespace bases
