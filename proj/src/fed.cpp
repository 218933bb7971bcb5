#include "fmpca/fed.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include "fmpca/kernels.hpp"
#include "fmpca/rng.hpp"

namespace fmpca::fed {

namespace {

constexpr std::uint64_t kMeanMaskTag = 0x6d61736b31ULL;     // centralization masks
constexpr std::uint64_t kScatterMaskTag = 0x6d61736b32ULL;  // optional scatter masks

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
  return v;
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

double get_f64(std::span<const std::uint8_t> bytes, std::size_t at) {
  const std::uint64_t bits = get_u64(bytes, at);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void check_header(std::span<const std::uint8_t> bytes, const char* magic, const char* what) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), magic, 4) != 0)
    throw std::invalid_argument(std::string("malformed payload: ") + what);
}

std::vector<int> resolve_chain(const std::vector<Participant>& participants,
                               const std::vector<int>& requested) {
  std::vector<int> chain;
  if (requested.empty()) {
    for (const auto& p : participants) chain.push_back(p.user_id);
    std::sort(chain.begin(), chain.end());
  } else {
    chain = requested;
  }
  if (chain.size() != participants.size())
    throw std::invalid_argument("chain order must list every participant exactly once");
  for (int id : chain) {
    const auto hits = std::count_if(participants.begin(), participants.end(),
                                    [&](const Participant& p) { return p.user_id == id; });
    if (hits != 1) throw std::invalid_argument("chain order does not match participant ids");
  }
  return chain;
}

Participant& participant_by_id(std::vector<Participant>& participants, int id) {
  for (auto& p : participants)
    if (p.user_id == id) return p;
  throw std::invalid_argument("unknown participant id");
}

void validate_participants(const std::vector<Participant>& participants) {
  if (participants.empty()) throw std::invalid_argument("no participants");
  const auto& dims = participants[0].samples.empty() ? std::vector<std::size_t>{}
                                                     : participants[0].samples[0].dims();
  for (const auto& p : participants) {
    if (p.user_id <= 0) throw std::invalid_argument("user ids must be positive");
    if (p.samples.empty()) throw std::invalid_argument("participant holds no samples");
    for (const auto& t : p.samples) {
      if (t.dims() != dims) throw std::invalid_argument("participants hold inconsistent dims");
      if (!all_finite(t.values()))
        throw std::invalid_argument("participant samples contain non-finite values");
    }
  }
  for (std::size_t i = 0; i < participants.size(); ++i)
    for (std::size_t j = i + 1; j < participants.size(); ++j)
      if (participants[i].user_id == participants[j].user_id)
        throw std::invalid_argument("duplicate user ids");
}

Tensor draw_mask(std::uint64_t seed, std::uint64_t tag, int from, int to,
                 const std::vector<std::size_t>& dims, std::uint64_t round_salt) {
  const std::uint64_t lo = static_cast<std::uint64_t>(std::min(from, to));
  const std::uint64_t hi = static_cast<std::uint64_t>(std::max(from, to));
  const std::uint64_t dir = from < to ? 0 : 1;
  rng::Stream stream(rng::derive_key({seed, tag, round_salt, lo, hi, dir}));
  Tensor s(dims);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = stream.next_double();
  return s;
}

struct ChainBuilder {
  std::size_t mode;
  const ProjectionSet* projection;  // null: plain unfoldings

  Matrix operator()(const Participant& user) const {
    if (user.centered.empty())
      throw std::invalid_argument("centered data unavailable; run centralization first");
    const std::span<const Tensor> centered(user.centered.data(), user.centered.size());
    if (projection == nullptr) return mpca::concat_unfoldings(centered, mode);
    return mpca::concat_projected_unfoldings(centered, mode, *projection);
  }
};

// Last user -> server -> every other user.
Matrix distribute_factor(std::vector<Participant>& participants, Transport& bus,
                         const std::string& round, int last_user, const Matrix& factor) {
  bus.send({last_user, kServerId, round, PayloadKind::truncated_factor, encode_matrix(factor)});
  const Matrix at_server = decode_matrix(bus.receive(last_user, kServerId).payload);
  for (const auto& p : participants) {
    if (p.user_id == last_user) continue;
    bus.send({kServerId, p.user_id, round, PayloadKind::truncated_factor,
              encode_matrix(at_server)});
    (void)bus.receive(kServerId, p.user_id);
  }
  return at_server;
}

double aggregate_scatter(std::vector<Participant>& participants, Server& server,
                         Transport& bus, const ProjectionSet& projection,
                         std::size_t iteration, const FedConfig& config) {
  const std::string round = "scatter:" + std::to_string(iteration);
  const bool mask = config.mask_scatter && participants.size() > 1;
  for (auto& user : participants) {
    double local = 0.0;
    for (const Tensor& t : user.centered) {
      const Tensor y = multi_mode_project(t, projection, true);
      local += inner_product(y, y);
    }
    if (mask) {
      for (const auto& other : participants) {
        if (other.user_id == user.user_id) continue;
        rng::Stream own(rng::derive_key(
            {config.seed, kScatterMaskTag, iteration,
             static_cast<std::uint64_t>(std::min(user.user_id, other.user_id)),
             static_cast<std::uint64_t>(std::max(user.user_id, other.user_id)),
             user.user_id < other.user_id ? 0ULL : 1ULL}));
        rng::Stream theirs(rng::derive_key(
            {config.seed, kScatterMaskTag, iteration,
             static_cast<std::uint64_t>(std::min(user.user_id, other.user_id)),
             static_cast<std::uint64_t>(std::max(user.user_id, other.user_id)),
             other.user_id < user.user_id ? 0ULL : 1ULL}));
        local += own.next_double() - theirs.next_double();
      }
    }
    bus.send({user.user_id, kServerId, round, PayloadKind::scalar_scatter,
              encode_scalar(local)});
  }
  double total = 0.0;
  for (const auto& user : participants)
    total += decode_scalar(bus.receive(user.user_id, kServerId).payload);
  server.scatter_history.push_back(total);
  return total;
}

}  // namespace

std::string_view payload_kind_name(PayloadKind kind) {
  switch (kind) {
    case PayloadKind::mask_tensor: return "mask-tensor";
    case PayloadKind::masked_mean: return "masked-mean";
    case PayloadKind::singular_state: return "singular-state";
    case PayloadKind::truncated_factor: return "truncated-factor";
    case PayloadKind::scalar_scatter: return "scalar-scatter";
  }
  return "unknown";
}

void InMemoryBus::send(RoundMessage msg) {
  if (msg.sender == msg.receiver) throw std::logic_error("message to self");
  log_.push_back(msg);
  queues_[{msg.sender, msg.receiver}].push_back(std::move(msg));
}

RoundMessage InMemoryBus::receive(int sender, int receiver) {
  auto it = queues_.find({sender, receiver});
  if (it == queues_.end() || it->second.empty())
    throw std::runtime_error("no pending message for this (sender, receiver) pair");
  RoundMessage msg = std::move(it->second.front());
  it->second.pop_front();
  return msg;
}

const std::vector<RoundMessage>& InMemoryBus::log() const { return log_; }

std::vector<std::uint8_t> encode_matrix(const Matrix& m) {
  return tnsr_encode(matrix_to_tensor(m));
}

Matrix decode_matrix(std::span<const std::uint8_t> bytes) {
  return tensor_to_matrix(tnsr_decode(bytes));
}

std::vector<std::uint8_t> encode_state(const linalg::SingularState& st) {
  std::vector<std::uint8_t> out = {'S', 'V', 'S', '1'};
  put_u64(out, st.s.size());
  for (double v : st.s) put_f64(out, v);
  const auto u_bytes = tnsr_encode(matrix_to_tensor(st.u));
  out.insert(out.end(), u_bytes.begin(), u_bytes.end());
  return out;
}

linalg::SingularState decode_state(std::span<const std::uint8_t> bytes) {
  check_header(bytes, "SVS1", "singular state");
  const std::size_t m = static_cast<std::size_t>(get_u64(bytes, 4));
  linalg::SingularState st;
  st.s.resize(m);
  std::size_t at = 12;
  for (std::size_t i = 0; i < m; ++i) {
    st.s[i] = get_f64(bytes, at);
    at += 8;
  }
  st.u = tensor_to_matrix(tnsr_decode(bytes.subspan(at)));
  return st;
}

std::vector<std::uint8_t> encode_scalar(double v) {
  std::vector<std::uint8_t> out = {'S', 'C', 'L', '1'};
  put_f64(out, v);
  return out;
}

double decode_scalar(std::span<const std::uint8_t> bytes) {
  check_header(bytes, "SCL1", "scalar");
  return get_f64(bytes, 4);
}

std::vector<std::uint8_t> encode_counted_tensor(const Tensor& t, std::uint64_t count) {
  std::vector<std::uint8_t> out = {'C', 'T', 'N', '1'};
  put_u64(out, count);
  const auto bytes = tnsr_encode(t);
  out.insert(out.end(), bytes.begin(), bytes.end());
  return out;
}

std::pair<Tensor, std::uint64_t> decode_counted_tensor(std::span<const std::uint8_t> bytes) {
  check_header(bytes, "CTN1", "counted tensor");
  const std::uint64_t count = get_u64(bytes, 4);
  return {tnsr_decode(bytes.subspan(12)), count};
}

std::uint64_t payload_digest(std::span<const std::uint8_t> payload) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : payload) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_message_log(std::ostream& out, const std::vector<RoundMessage>& log) {
  for (const auto& msg : log) {
    char digest[17];
    std::snprintf(digest, sizeof digest, "%016llx",
                  static_cast<unsigned long long>(payload_digest(msg.payload)));
    out << "{\"round\":\"" << msg.round << "\",\"sender\":" << msg.sender
        << ",\"receiver\":" << msg.receiver << ",\"kind\":\""
        << payload_kind_name(msg.kind) << "\",\"digest\":\"" << digest
        << "\",\"bytes\":" << msg.payload.size() << "}\n";
  }
}

Tensor fed_centralize(std::vector<Participant>& participants, Server& server,
                      Transport& bus, std::uint64_t seed) {
  validate_participants(participants);
  const std::size_t users = participants.size();
  const auto dims = participants[0].samples[0].dims();

  server.users.clear();
  for (const auto& p : participants) server.users.emplace_back(p.user_id, p.samples.size());

  std::vector<Tensor> local_mean;
  local_mean.reserve(users);
  for (const auto& p : participants)
    local_mean.push_back(tensor_mean({p.samples.data(), p.samples.size()}));

  std::vector<Tensor> masked = local_mean;
  if (users > 1) {
    // Every ordered pair exchanges a mask tensor drawn from its own stream.
    for (const auto& from : participants) {
      for (const auto& to : participants) {
        if (from.user_id == to.user_id) continue;
        const Tensor mask = draw_mask(seed, kMeanMaskTag, from.user_id, to.user_id, dims, 0);
        bus.send({from.user_id, to.user_id, "centralize", PayloadKind::mask_tensor,
                  tnsr_encode(mask)});
      }
    }
    for (std::size_t i = 0; i < users; ++i) {
      const Participant& user = participants[i];
      Tensor perturbation(dims);
      for (const auto& other : participants) {
        if (other.user_id == user.user_id) continue;
        const Tensor sent =
            draw_mask(seed, kMeanMaskTag, user.user_id, other.user_id, dims, 0);
        const Tensor received =
            tnsr_decode(bus.receive(other.user_id, user.user_id).payload);
        Tensor r = sent;  // R_{d,d'} = S_{d,d'} - S_{d',d}
        sub_in_place(r, received);
        add_in_place(perturbation, r);
      }
      scale_in_place(perturbation, 1.0 / static_cast<double>(user.samples.size()));
      add_in_place(masked[i], perturbation);
    }
    // The ordered-pair perturbations cancel pairwise by construction; verify
    // before any floating-point aggregation happens.
    for (std::size_t i = 0; i < users; ++i) {
      for (std::size_t j = i + 1; j < users; ++j) {
        const int a = participants[i].user_id;
        const int b = participants[j].user_id;
        const Tensor sab = draw_mask(seed, kMeanMaskTag, a, b, dims, 0);
        const Tensor sba = draw_mask(seed, kMeanMaskTag, b, a, dims, 0);
        for (std::size_t e = 0; e < sab.size(); ++e) {
          if ((sab[e] - sba[e]) + (sba[e] - sab[e]) != 0.0)
            throw std::logic_error("pairwise perturbations failed to cancel");
        }
      }
    }
  }

  std::uint64_t total_count = 0;
  for (std::size_t i = 0; i < users; ++i) {
    bus.send({participants[i].user_id, kServerId, "centralize", PayloadKind::masked_mean,
              encode_counted_tensor(masked[i], participants[i].samples.size())});
    total_count += participants[i].samples.size();
  }

  Tensor global;
  if (users == 1) {
    global = decode_counted_tensor(bus.receive(participants[0].user_id, kServerId).payload)
                 .first;
  } else {
    Tensor acc(dims);
    for (const auto& p : participants) {
      auto [mean_d, count_d] = decode_counted_tensor(bus.receive(p.user_id, kServerId).payload);
      kernels::axpy(static_cast<double>(count_d), mean_d.data(), acc.data(), acc.size());
    }
    scale_in_place(acc, 1.0 / static_cast<double>(total_count));
    global = std::move(acc);
  }

  for (auto& p : participants) {
    bus.send({kServerId, p.user_id, "centralize", PayloadKind::masked_mean,
              encode_counted_tensor(global, total_count)});
    const Tensor received = decode_counted_tensor(bus.receive(kServerId, p.user_id).payload).first;
    p.centered.clear();
    p.centered.reserve(p.samples.size());
    for (const Tensor& t : p.samples) {
      Tensor c = t;
      sub_in_place(c, received);
      p.centered.push_back(std::move(c));
    }
  }
  return global;
}

linalg::SingularState chain_state_for_mode(std::vector<Participant>& participants,
                                           Transport& bus, const std::string& round,
                                           std::size_t mode,
                                           const ProjectionSet* current,
                                           const std::vector<int>& chain) {
  const std::vector<int> order = resolve_chain(participants, chain);
  const ChainBuilder build{mode, current};

  linalg::SingularState state;
  for (std::size_t idx = 0; idx < order.size(); ++idx) {
    Participant& user = participant_by_id(participants, order[idx]);
    const Matrix local = build(user);
    if (idx == 0) {
      state = linalg::svd_full(local).state;
    } else {
      const auto upstream = decode_state(bus.receive(order[idx - 1], order[idx]).payload);
      state = linalg::incremental_update(upstream, local);
    }
    if (idx + 1 < order.size()) {
      bus.send({order[idx], order[idx + 1], round, PayloadKind::singular_state,
                encode_state(state)});
    }
  }
  return state;
}

Matrix fed_initialize(std::vector<Participant>& participants, Server& server,
                      Transport& bus, std::size_t mode, std::size_t p_n,
                      const std::vector<int>& chain) {
  (void)server;
  const std::vector<int> order = resolve_chain(participants, chain);
  const std::string round = "init:" + std::to_string(mode + 1);
  const auto state = chain_state_for_mode(participants, bus, round, mode, nullptr, order);
  const Matrix factor = linalg::truncate_left(state, p_n);
  return distribute_factor(participants, bus, round, order.back(), factor);
}

Matrix fed_local_opt_round(std::vector<Participant>& participants, Server& server,
                           Transport& bus, const ProjectionSet& current,
                           std::size_t mode, std::size_t p_n, std::size_t iteration,
                           const std::vector<int>& chain) {
  (void)server;
  const std::vector<int> order = resolve_chain(participants, chain);
  const std::string round =
      "localopt:" + std::to_string(iteration) + ":" + std::to_string(mode + 1);
  const auto state = chain_state_for_mode(participants, bus, round, mode, &current, order);
  const Matrix factor = linalg::truncate_left(state, p_n);
  return distribute_factor(participants, bus, round, order.back(), factor);
}

FedResult fed_mpca(std::vector<Participant>& participants, Server& server,
                   Transport& bus, const FedConfig& config) {
  if (config.ranks.empty() && config.variation <= 0.0)
    throw std::invalid_argument("either ranks or a variation fraction is required");

  FedResult result;
  result.mean = fed_centralize(participants, server, bus, config.seed);
  const std::vector<int> order = resolve_chain(participants, config.chain);
  const std::size_t modes = participants[0].samples[0].order();
  if (!config.ranks.empty() && config.ranks.size() != modes)
    throw std::invalid_argument("rank count does not match tensor order");

  std::vector<std::size_t> ranks = config.ranks;
  for (std::size_t n = 0; n < modes; ++n) {
    const std::string round = "init:" + std::to_string(n + 1);
    const auto state = chain_state_for_mode(participants, bus, round, n, nullptr, order);
    if (ranks.size() <= n)
      ranks.push_back(mpca::rank_for_variation(state.s, config.variation));
    if (ranks[n] == 0 || ranks[n] > state.u.rows())
      throw std::invalid_argument("rank out of range for mode " + std::to_string(n));
    const Matrix factor = linalg::truncate_left(state, ranks[n]);
    result.projection.factors.push_back(
        distribute_factor(participants, bus, round, order.back(), factor));
  }

  server.scatter_history.clear();
  const double psi0 =
      aggregate_scatter(participants, server, bus, result.projection, 0, config);
  result.scatter_history.push_back(psi0);
  const double eta_abs = config.eta * psi0;

  for (std::size_t k = 1; k <= config.max_iter; ++k) {
    for (std::size_t n = 0; n < modes; ++n) {
      const std::string round =
          "localopt:" + std::to_string(k) + ":" + std::to_string(n + 1);
      const auto state =
          chain_state_for_mode(participants, bus, round, n, &result.projection, order);
      const Matrix factor = linalg::truncate_left(state, ranks[n]);
      result.projection.factors[n] =
          distribute_factor(participants, bus, round, order.back(), factor);
    }
    const double psi =
        aggregate_scatter(participants, server, bus, result.projection, k, config);
    result.scatter_history.push_back(psi);
    result.iterations_run = k;
    if (psi - result.scatter_history[k - 1] <= eta_abs) {
      result.converged = true;
      break;
    }
  }

  server.projection = result.projection;
  result.features.reserve(participants.size());
  for (const auto& p : participants) {
    std::vector<Tensor> user_features;
    user_features.reserve(p.samples.size());
    for (const Tensor& t : p.samples)
      user_features.push_back(multi_mode_project(t, result.projection, true));
    result.features.push_back(std::move(user_features));
  }
  return result;
}

}  // namespace fmpca::fed
