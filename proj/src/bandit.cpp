// SPDX-License-Identifier: MIT

#include "fedban/bandit.hpp"

#include <algorithm>
#include <cmath>

namespace fedban {

int linucb_select(const LinUcbState& st, const DecisionSet& ds) {
  if (ds.num_arms() < 1) fail("OutOfDomain", "empty decision set");
  const Eigen::Index d = st.V.rows();
  const SymMatD A = SymMatD::Identity(d, d) + st.V;
  // A = I + V is PD for PSD V, so one Cholesky factorization serves both the
  // estimate solve and every arm's ||x||_{A^-1} (same math as
  // mahalanobis_inv_norm, sharing the factorization across arms).
  Eigen::LLT<SymMatD> llt(A);
  if (llt.info() != Eigen::Success) fail("NotPD", "I + V must be positive definite");
  const VecD theta_hat = llt.solve(st.Y);
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < ds.num_arms(); ++a) {
    const VecD& x = ds.arm(a);
    const double width = llt.matrixL().solve(x).norm();
    const double score = x.dot(theta_hat) + st.alpha * width;
    if (score > best_score) {
      best_score = score;
      best = a;
    }
  }
  return best;
}

LinUcbState linucb_update(LinUcbState st, const VecD& x, double r) {
  if (x.size() != st.V.rows()) fail("BadDimension", "linucb_update dimension mismatch");
  if (x.norm() > 1.0 + 1e-9) fail("OutOfDomain", "linucb_update requires ||x|| <= 1");
  st.V.noalias() += x * x.transpose();
  st.Y.noalias() += x * r;
  return st;
}

double compute_alpha(int M, double beta, double T_U, int d) {
  if (M < 1 || d < 1) fail("OutOfDomain", "compute_alpha requires M, d >= 1");
  if (!(beta > 0.0 && beta <= 1.0)) fail("OutOfDomain", "beta must be in (0, 1]");
  if (!(T_U >= 2.0)) fail("OutOfDomain", "compute_alpha requires T_U >= 2");
  return 1.0 + std::sqrt(2.0 * std::log(static_cast<double>(M) / beta) +
                         static_cast<double>(d) * std::log(T_U));
}

ComputeUResult compute_U(int d, int M, int P, double C0, double lambda0, double beta) {
  if (d < 1 || M < 1 || P < 1) fail("OutOfDomain", "compute_U requires d, M, P >= 1");
  if (!(C0 > 0.0) || !(lambda0 > 0.0) || !(beta > 0.0 && beta < 1.0))
    fail("OutOfDomain", "compute_U requires positive C0, lambda0 and beta in (0,1)");
  const double L =
      std::log(2.0 * static_cast<double>(d) * static_cast<double>(M) *
               static_cast<double>(P) / beta);
  const auto step = [&](int U) {
    const double u = static_cast<double>(U);
    const double t1 = std::log2(64.0 * L / (lambda0 * lambda0));
    const double t2 = std::log2(144.0 * static_cast<double>(d) * u * u *
                                (C0 + lambda0) * (C0 + lambda0) * L * std::log(2.0) /
                                (lambda0 * lambda0 * lambda0 * lambda0));
    return std::max(1, static_cast<int>(std::ceil(std::max(t1, t2))));
  };

  ComputeUResult res;
  res.U = 1;
  const int cap = std::max(1, P - 1);
  for (int it = 1; it <= 100; ++it) {
    res.iterations = it;
    const int next = step(res.U);
    if (next == res.U) return res;  // fixed point
    if (next >= P) {
      res.U = cap;
      res.capped = true;
      return res;
    }
    res.U = next;
  }
  res.U = cap;
  res.capped = true;
  return res;
}

double compute_c1(int d, int M, int P, double beta, double lambda0) {
  if (d < 1 || M < 1 || P < 1) fail("OutOfDomain", "compute_c1 requires d, M, P >= 1");
  if (!(beta > 0.0 && beta < 1.0)) fail("OutOfDomain", "beta must be in (0, 1)");
  if (!(lambda0 > 0.0)) fail("OutOfDomain", "compute_c1 requires lambda0 > 0");
  return 4.0 *
         std::sqrt(2.0 * static_cast<double>(d) *
                   std::log(16.0 * static_cast<double>(d) *
                            static_cast<double>(M + 1) * static_cast<double>(P) /
                            beta)) /
         lambda0;
}

RobinClientState make_robin_client(int client, int d, int U, double alpha) {
  if (client < 0) fail("OutOfDomain", "client id must be >= 0");
  if (U < 1) fail("OutOfDomain", "U must be >= 1");
  RobinClientState st;
  st.client = client;
  st.phase = 0;
  st.mode = RobinMode::Init;  // phase 0 <= U always
  st.U = U;
  st.acc = LinUcbState::zero(d, alpha);
  return st;
}

std::pair<int, RobinClientState> robin_client_step(const RobinClientState& st,
                                                   const DecisionSet& ds) {
  if (ds.num_arms() < 1) fail("OutOfDomain", "empty decision set");
  if (st.mode == RobinMode::Init) return {linucb_select(st.acc, ds), st};
  if (!st.theta_global.has_value())
    fail("MissingBroadcast", "Greedy mode requires a global estimate");
  int best = 0;
  double best_mean = ds.arm(0).dot(*st.theta_global);
  for (int a = 1; a < ds.num_arms(); ++a) {
    const double m = ds.arm(a).dot(*st.theta_global);
    if (m > best_mean) {
      best_mean = m;
      best = a;
    }
  }
  return {best, st};
}

RobinClientState robin_client_advance_phase(RobinClientState st,
                                            const std::optional<BroadcastMsg>& bc) {
  st.phase += 1;
  const RobinMode next_mode = (st.phase <= st.U) ? RobinMode::Init : RobinMode::Greedy;
  if (next_mode == RobinMode::Greedy) {
    if (!bc.has_value())
      fail("MissingBroadcast",
           "entering Greedy phase " + std::to_string(st.phase) + " without a broadcast");
    if (bc->phase != st.phase)
      fail("MissingBroadcast", "broadcast phase mismatch");
    st.theta_global = bc->theta_hat;
    // Fresh accumulator every Greedy phase: the uploaded estimate must
    // summarize exactly this phase's plays.
    st.acc = LinUcbState::zero(static_cast<int>(st.acc.V.rows()), st.acc.alpha);
  }
  st.mode = next_mode;
  return st;
}

UploadMsg robin_local_estimate(const RobinClientState& st, double rtol) {
  return UploadMsg{st.client, st.phase,
                   project_unit_ball(pinv_solve(st.acc.V, st.acc.Y, rtol))};
}

RobinServerState make_robin_server(int d, int M, int P, int U, PrivacyParams privacy,
                                   double beta, double lambda0) {
  if (d < 1 || M < 1) fail("OutOfDomain", "need d, M >= 1");
  if (P < 2 || U < 1 || U > P - 1)
    fail("OutOfDomain", "need P >= 2 and 1 <= U <= P-1");
  RobinServerState srv;
  srv.d = d;
  srv.M = M;
  srv.P = P;
  srv.U = U;
  srv.beta = beta;
  srv.split = robin_budget(privacy, P);
  srv.c1 = compute_c1(d, M, P, beta, lambda0);
  return srv;
}

namespace {

// Validates a complete synchronized round: exactly one message per client,
// all for the same phase. Returns that phase.
int validate_round(const std::vector<UploadMsg>& msgs, int M) {
  if (static_cast<int>(msgs.size()) != M)
    fail("IncompleteRound", "expected " + std::to_string(M) + " uploads, got " +
                                std::to_string(msgs.size()));
  std::vector<bool> seen(static_cast<size_t>(M), false);
  for (const UploadMsg& m : msgs) {
    if (m.client < 0 || m.client >= M) fail("IncompleteRound", "unknown client id");
    if (seen[static_cast<size_t>(m.client)])
      fail("IncompleteRound", "duplicate upload from client " + std::to_string(m.client));
    seen[static_cast<size_t>(m.client)] = true;
    if (m.phase != msgs.front().phase) fail("IncompleteRound", "mixed phases in round");
  }
  return msgs.front().phase;
}

}  // namespace

BroadcastMsg robin_server_aggregate(RobinServerState& srv,
                                    const std::vector<UploadMsg>& msgs,
                                    std::int64_t phase_len, RngStream& rng) {
  const int phase = validate_round(msgs, srv.M);
  if (phase < srv.U) fail("IncompleteRound", "aggregation before the upload phase");
  if (phase_len < 1) fail("OutOfDomain", "phase_len must be >= 1");

  const auto d_pad = next_pow2(srv.d);
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(d_pad, srv.M);
  for (const UploadMsg& m : msgs) {
    if (m.theta_tilde.size() != srv.d)
      fail("BadDimension", "upload dimension mismatch");
    if (m.theta_tilde.norm() > 1.0 + 1e-9)
      fail("OutOfDomain", "uploads must lie in the unit ball");
    X.col(m.client).head(srv.d) = m.theta_tilde;
  }

  const double r = srv.c1 / std::sqrt(static_cast<double>(phase_len));
  const VecD padded =
      winsorized_mean_highd(X, r, srv.beta / (16.0 * static_cast<double>(srv.P)),
                            srv.split.eps0, srv.split.delta0, rng);
  VecD theta = padded.head(srv.d);
  srv.theta_history.push_back(theta);
  return BroadcastMsg{phase + 1, std::move(theta)};
}

VecD nonprivate_average(const std::vector<UploadMsg>& msgs, int M) {
  validate_round(msgs, M);
  VecD sum = VecD::Zero(msgs.front().theta_tilde.size());
  for (const UploadMsg& m : msgs) sum += m.theta_tilde;
  return sum / static_cast<double>(M);
}

}  // namespace fedban
