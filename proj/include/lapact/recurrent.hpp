#pragma once

#include <vector>

#include "lapact/tensor.hpp"

namespace lapact::network {

enum class CellKind { lstm, gru };

// Gate rows are stacked: LSTM [input, forget, candidate, output],
// GRU [update, reset, candidate].
struct CellWeights {
  Tensor w_input;     // gates*H x In
  Tensor w_recurrent; // gates*H x H
  Tensor bias;        // gates*H x 1

  int units() const { return static_cast<int>(w_recurrent.cols()); }
};

int gate_count(CellKind kind);

// Per-step activations recorded for backpropagation, in processing order.
struct CellTrace {
  bool reverse = false;
  std::vector<Eigen::VectorXd> h_prev, c_prev, gates, c, h;
  std::vector<Eigen::VectorXd> recurrent_candidate; // GRU: W_n (r * h_prev)
};

// Runs one direction over the columns of `inputs` (In x T). With reverse=true
// the sequence is consumed from the last column to the first. Outputs are
// H x T aligned to input time, i.e. column t is the state after consuming
// input t.
Eigen::MatrixXd run_cell(CellKind kind, const CellWeights &weights, const Eigen::MatrixXd &inputs,
                         bool reverse, CellTrace *trace = nullptr);

// Backpropagates d_outputs (H x T, time-aligned like run_cell's result),
// accumulating into `grads` and returning d_inputs (In x T).
Eigen::MatrixXd backward_cell(CellKind kind, const CellWeights &weights,
                              const Eigen::MatrixXd &inputs, const CellTrace &trace,
                              const Eigen::MatrixXd &d_outputs, CellWeights &grads);

Eigen::MatrixXd reverse_columns(const Eigen::MatrixXd &m);

} // namespace lapact::network
