// SPDX-License-Identifier: MIT
//
// Client and server decision logic: LinUCB, the phased federated learner's
// state machines (Init / Greedy modes, upload and broadcast messages), the
// parameter formulas (alpha, U, c1), and the non-private averaging used by
// a baseline.

#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "fedban/dp.hpp"
#include "fedban/env.hpp"
#include "fedban/linalg.hpp"

namespace fedban {

/// LinUCB sufficient statistics: Gram matrix V (sum of played outer
/// products since the last reset), response vector Y, and the exploration
/// width alpha.
struct LinUcbState {
  SymMatD V;
  VecD Y;
  double alpha = 1.0;

  static LinUcbState zero(int d, double alpha) {
    return LinUcbState{SymMatD::Zero(d, d), VecD::Zero(d), alpha};
  }
};

/// UCB arm selection: argmax over arms of x^T theta_hat + alpha ||x||_{A^-1}
/// with A = I + V and theta_hat = A^{-1} Y. Ties -> lowest index.
int linucb_select(const LinUcbState& st, const DecisionSet& ds);

/// Rank-one update: V += x x^T, Y += x * r.
LinUcbState linucb_update(LinUcbState st, const VecD& x, double r);

/// Exploration width alpha = 1 + sqrt(2 log(M/beta) + d log(T_U)).
/// T_U is the length of the last initialization phase (>= 2; accepted as a
/// real so the formula is testable at non-integer edge points).
double compute_alpha(int M, double beta, double T_U, int d);

/// Result of the initialization-phase-count fixed point.
struct ComputeUResult {
  int U = 1;
  bool capped = false;  ///< true when no fixed point exists below P-1
  int iterations = 0;

  operator int() const { return U; }  // NOLINT: deliberate shorthand
};

/// Number of initialization phases: the smallest U satisfying
///   U >= log2(64 L / lambda0^2)  and
///   U >= log2(144 d U^2 (C0 + lambda0)^2 L log(2) / lambda0^4),
/// with L = log(2 d M P / beta). The self-reference (U on both sides) is
/// resolved by fixed-point iteration from U = 1; capped at P-1 (with a
/// warning flag) when no fixed point exists below the phase count. Always
/// >= 1.
ComputeUResult compute_U(int d, int M, int P, double C0, double lambda0, double beta);

/// Aggregation clamp-radius constant c1 = 4 sqrt(2 d log(16 d (M+1) P / beta)) / lambda0.
double compute_c1(int d, int M, int P, double beta, double lambda0);

/// Client operating mode: Init (LinUCB exploration, phases p <= U) or Greedy
/// (exploitation of the broadcast global estimate, phases p > U).
enum class RobinMode { Init, Greedy };

/// Local-estimate upload: client id, the phase it summarizes, and the
/// unit-ball-projected local estimator. Never contains raw contexts/rewards.
struct UploadMsg {
  int client = 0;
  int phase = 0;
  VecD theta_tilde;
};

/// Server broadcast: the phase it opens and the new global estimate.
struct BroadcastMsg {
  int phase = 0;
  VecD theta_hat;
};

/// Per-client state of the phased learner.
/// Invariants: mode == Init iff phase <= U; acc is reset to zero at every
/// Greedy-phase start and accumulates within the phase.
struct RobinClientState {
  int client = 0;
  int phase = 0;
  RobinMode mode = RobinMode::Init;
  int U = 1;
  LinUcbState acc;
  std::optional<VecD> theta_global;  ///< current global estimate (Greedy mode)
};

RobinClientState make_robin_client(int client, int d, int U, double alpha);

/// One round's arm selection. Init mode delegates to linucb_select; Greedy
/// mode plays argmax x^T theta_global (ties -> lowest index). Selection is
/// pure: the returned state equals the input (accumulators are updated after
/// the reward via linucb_update; phase transitions via
/// robin_client_advance_phase). Throws "MissingBroadcast" in Greedy mode
/// without a global estimate.
std::pair<int, RobinClientState> robin_client_step(const RobinClientState& st,
                                                   const DecisionSet& ds);

/// Advances the client into phase st.phase + 1. Entering a Greedy phase
/// requires the opening broadcast (throws "MissingBroadcast" otherwise) and
/// resets the accumulator; Init phases keep accumulating.
RobinClientState robin_client_advance_phase(RobinClientState st,
                                            const std::optional<BroadcastMsg>& bc);

/// End-of-phase local estimate: theta_tilde = pinv(V) Y projected onto the
/// unit ball (the aggregation mechanism requires inputs in the unit ball).
UploadMsg robin_local_estimate(const RobinClientState& st, double rtol = kPinvRtol);

/// Server-side state: phase count P, initialization length U, the per-phase
/// budget split, confidence level beta, clamp constant c1, and the history
/// of global estimates (one per completed phase >= U).
struct RobinServerState {
  int d = 0;
  int M = 0;
  int P = 0;
  int U = 1;
  BudgetSplit split;
  double beta = 0.05;
  double c1 = 0.0;
  std::vector<VecD> theta_history;
};

RobinServerState make_robin_server(int d, int M, int P, int U, PrivacyParams privacy,
                                   double beta, double lambda0);

/// Privatized aggregation at the end of a completed phase of length
/// phase_len: runs the high-dimensional winsorized mean over the uploaded
/// estimates with radius c1 / sqrt(phase_len), confidence beta / (16 P), and
/// per-call budget (eps0, delta0); returns the broadcast opening the next
/// phase. Inputs are zero-padded to the next power of two internally and the
/// result truncated back. Requires exactly one message from every client,
/// all tagged with the same phase (throws "IncompleteRound" otherwise).
BroadcastMsg robin_server_aggregate(RobinServerState& srv,
                                    const std::vector<UploadMsg>& msgs,
                                    std::int64_t phase_len, RngStream& rng);

/// Exact (non-private) average of uploaded estimates — the aggregation rule
/// of the NonPrivateAvg baseline. Same round-completeness validation as
/// robin_server_aggregate.
VecD nonprivate_average(const std::vector<UploadMsg>& msgs, int M);

}  // namespace fedban
