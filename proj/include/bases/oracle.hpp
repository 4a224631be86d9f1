#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bases/loss.hpp"
#include "bases/zoo.hpp"

namespace httplib {
class Server;
class Client;
}  // namespace httplib

namespace bases {

enum class OracleMode { soft, hard };

std::string to_string(OracleMode m);
OracleMode oracle_mode_from_string(const std::string& s);

struct OracleResponse {
  OracleMode kind = OracleMode::soft;
  Vector<float> logits;  // soft responses only
  int label = -1;        // hard responses only
  std::chrono::duration<double> latency{};

  /// Predicted class: the label, or the argmax of the logits (ties to lowest index).
  int predicted() const;
};

bool is_success(const OracleResponse& response, const AttackGoal& goal);

/// One entry per oracle call, in call order.
struct OracleRecord {
  std::uint64_t image_digest = 0;
  OracleResponse response;
  double wall_seconds = 0.0;
};

/// Blackbox access to a victim. Every call to query() counts as one query,
/// whether or not the backend answers.
class Oracle {
 public:
  virtual ~Oracle() = default;

  OracleResponse query(const ImageTensor& image);

  virtual OracleMode mode() const = 0;
  virtual int num_classes() const = 0;
  virtual Shape input_shape() const = 0;

  std::size_t query_count() const { return count_; }
  const std::vector<OracleRecord>& records() const { return records_; }

 protected:
  virtual OracleResponse do_query(const ImageTensor& image) = 0;

 private:
  std::size_t count_ = 0;
  std::vector<OracleRecord> records_;
};

/// In-process victim. Soft mode returns forward() logits verbatim.
class LocalOracle final : public Oracle {
 public:
  LocalOracle(Model model, OracleMode mode) : model_(std::move(model)), mode_(mode) {}

  OracleMode mode() const override { return mode_; }
  int num_classes() const override { return model_.num_classes(); }
  Shape input_shape() const override { return model_.input_shape(); }
  const Model& model() const { return model_; }

 protected:
  OracleResponse do_query(const ImageTensor& image) override;

 private:
  Model model_;
  OracleMode mode_;
};

/// Wire helpers shared by the server and the client.
namespace wire {
std::string encode_predict_request(const ImageTensor& image);
/// Throws ProtocolError on malformed bodies.
ImageTensor decode_predict_request(const std::string& body);
}  // namespace wire

struct ServerOptions {
  OracleMode mode = OracleMode::soft;
  /// Per-client cap on /v1/predict calls; clients are keyed by the
  /// X-Client-Id header, falling back to the remote address.
  std::optional<std::size_t> budget;
};

/// HTTP/1.1 host for one immutable model:
///   GET  /v1/meta    -> {"num_classes", "mode", "input_shape"}
///   POST /v1/predict -> {"logits": [...]} or {"label": k}; errors as {"error": msg}
class OracleServer {
 public:
  OracleServer(Model model, ServerOptions options);
  ~OracleServer();
  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  /// Binds host:port (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves on a background thread.
  void start();
  /// Serves on the calling thread until stop().
  void run();
  void stop();

  int port() const { return port_; }
  std::string url() const;
  /// Successfully answered /v1/predict requests.
  std::size_t served_count() const { return served_.load(); }
  /// All /v1/predict requests, including rejected ones.
  std::size_t request_count() const { return requests_.load(); }

 private:
  void install_routes();

  Model model_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_ = -1;
  std::atomic<std::size_t> served_{0};
  std::atomic<std::size_t> requests_{0};
  std::mutex budget_mutex_;
  std::map<std::string, std::size_t> per_client_;
};

struct ConnectOptions {
  /// Mode the caller needs. Hard callers accept soft servers (argmax is taken
  /// locally); soft callers require a soft server.
  OracleMode mode = OracleMode::soft;
  std::optional<int> expected_classes;
  std::string client_id;
  double timeout_seconds = 10.0;
};

class RemoteOracle final : public Oracle {
 public:
  /// Performs the /v1/meta handshake. Throws TransportError if unreachable,
  /// ProtocolError on a malformed reply, CapabilityError on a mode mismatch and
  /// ConfigError when the class count disagrees with `expected_classes`.
  static std::unique_ptr<RemoteOracle> connect(const std::string& url, const ConnectOptions& options = {});
  ~RemoteOracle() override;

  OracleMode mode() const override { return mode_; }
  int num_classes() const override { return classes_; }
  Shape input_shape() const override { return input_shape_; }
  OracleMode server_mode() const { return server_mode_; }

 protected:
  OracleResponse do_query(const ImageTensor& image) override;

 private:
  RemoteOracle() = default;

  std::unique_ptr<httplib::Client> client_;
  std::string client_id_;
  OracleMode mode_ = OracleMode::soft;
  OracleMode server_mode_ = OracleMode::soft;
  int classes_ = 0;
  Shape input_shape_;
};

}  // namespace bases
