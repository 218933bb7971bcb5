#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fmpca/linalg.hpp"
#include "fmpca/mpca.hpp"
#include "fmpca/tensor.hpp"

namespace fmpca::fed {

constexpr int kServerId = 0;

enum class PayloadKind {
  mask_tensor,
  masked_mean,
  singular_state,
  truncated_factor,
  scalar_scatter,
};

std::string_view payload_kind_name(PayloadKind kind);

struct RoundMessage {
  int sender = 0;
  int receiver = 0;
  std::string round;  // "centralize", "init:n", "localopt:k:n", "scatter:k"
  PayloadKind kind = PayloadKind::mask_tensor;
  std::vector<std::uint8_t> payload;
};

// Synchronous transport with FIFO delivery per (sender, receiver) pair and a
// full message log. Abstract so a wire implementation can be substituted
// without touching the protocol logic.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(RoundMessage msg) = 0;
  virtual RoundMessage receive(int sender, int receiver) = 0;
  virtual const std::vector<RoundMessage>& log() const = 0;
};

class InMemoryBus final : public Transport {
 public:
  void send(RoundMessage msg) override;
  RoundMessage receive(int sender, int receiver) override;
  const std::vector<RoundMessage>& log() const override;

 private:
  std::map<std::pair<int, int>, std::deque<RoundMessage>> queues_;
  std::vector<RoundMessage> log_;
};

struct Participant {
  int user_id = 0;  // >= 1; 0 is the server
  std::vector<Tensor> samples;
  std::vector<Tensor> centered;
};

struct Server {
  std::vector<std::pair<int, std::size_t>> users;  // (user_id, sample count)
  ProjectionSet projection;
  std::vector<double> scatter_history;
};

struct FedConfig {
  std::vector<std::size_t> ranks;  // empty: select from `variation`
  double variation = 0.0;
  double eta = 1e-6;  // relative, scaled by the initial scatter
  std::size_t max_iter = 10;
  std::uint64_t seed = 0;
  bool mask_scatter = false;           // optional scalar masking of scatters
  std::vector<int> chain;              // user order; empty = ascending id
};

// Secure centralization: every user masks its local mean with pairwise
// antisymmetric perturbations, the server's weighted average cancels them
// exactly, and each user centers locally against the returned global mean.
Tensor fed_centralize(std::vector<Participant>& participants, Server& server,
                      Transport& bus, std::uint64_t seed);

// Chain-incremental left factorization of the concatenated centered mode-n
// unfoldings; the last user truncates to p_n columns and the factor is
// distributed through the server.
Matrix fed_initialize(std::vector<Participant>& participants, Server& server,
                      Transport& bus, std::size_t mode, std::size_t p_n,
                      const std::vector<int>& chain = {});

// One cyclic update of the mode-n factor: users shrink their unfoldings with
// the Kronecker chain of the other factors, then run the same incremental
// chain as fed_initialize.
Matrix fed_local_opt_round(std::vector<Participant>& participants, Server& server,
                           Transport& bus, const ProjectionSet& current,
                           std::size_t mode, std::size_t p_n, std::size_t iteration,
                           const std::vector<int>& chain = {});

struct FedResult {
  ProjectionSet projection;
  std::vector<std::vector<Tensor>> features;  // per user, local order
  std::vector<double> scatter_history;
  std::size_t iterations_run = 0;
  bool converged = false;
  Tensor mean;
};

// Full protocol: centralize, per-mode initialization, cyclic local
// optimization with scatter aggregation, local projection of the uncentered
// data. With one participant this reduces to the exact centralized code path.
FedResult fed_mpca(std::vector<Participant>& participants, Server& server,
                   Transport& bus, const FedConfig& config);

// Exposed for the protocol tests: the singular state held by the last user of
// the chain, before truncation.
linalg::SingularState chain_state_for_mode(std::vector<Participant>& participants,
                                           Transport& bus, const std::string& round,
                                           std::size_t mode,
                                           const ProjectionSet* current,
                                           const std::vector<int>& chain = {});

// Payload codecs (little-endian, bit-exact round trips).
std::vector<std::uint8_t> encode_matrix(const Matrix& m);
Matrix decode_matrix(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_state(const linalg::SingularState& st);
linalg::SingularState decode_state(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_scalar(double v);
double decode_scalar(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_counted_tensor(const Tensor& t, std::uint64_t count);
std::pair<Tensor, std::uint64_t> decode_counted_tensor(std::span<const std::uint8_t> bytes);

// FNV-1a over the payload bytes; the log export writes digests, not payloads.
std::uint64_t payload_digest(std::span<const std::uint8_t> payload);
void write_message_log(std::ostream& out, const std::vector<RoundMessage>& log);

}  // namespace fmpca::fed
