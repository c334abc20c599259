#include "lapact/recurrent.hpp"

#include "lapact/error.hpp"

namespace lapact::network {

namespace {

Eigen::VectorXd sigmoid(const Eigen::VectorXd &x) {
  return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Eigen::VectorXd tanh_v(const Eigen::VectorXd &x) { return x.array().tanh().matrix(); }

void check_shapes(CellKind kind, const CellWeights &w, const Eigen::MatrixXd &inputs) {
  const auto rows = static_cast<Eigen::Index>(gate_count(kind)) * w.units();
  if (w.w_input.rows() != rows || w.w_recurrent.rows() != rows || w.bias.rows() != rows ||
      w.bias.cols() != 1 || w.w_input.cols() != inputs.rows())
    throw PreconditionError("network", "recurrent weight shapes do not match the cell/input");
}

} // namespace

int gate_count(CellKind kind) { return kind == CellKind::lstm ? 4 : 3; }

Eigen::MatrixXd reverse_columns(const Eigen::MatrixXd &m) { return m.rowwise().reverse(); }

Eigen::MatrixXd run_cell(CellKind kind, const CellWeights &w, const Eigen::MatrixXd &inputs,
                         bool reverse, CellTrace *trace) {
  check_shapes(kind, w, inputs);
  const int H = w.units();
  const auto T = inputs.cols();
  Eigen::MatrixXd out(H, T);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(H);
  if (trace) *trace = CellTrace{reverse, {}, {}, {}, {}, {}, {}};

  for (Eigen::Index s = 0; s < T; ++s) {
    const auto t = reverse ? T - 1 - s : s;
    Eigen::VectorXd gates(gate_count(kind) * H);
    Eigen::VectorXd h_next, c_next, rec_candidate;
    if (kind == CellKind::lstm) {
      const Eigen::VectorXd a = w.w_input * inputs.col(t) + w.w_recurrent * h + w.bias;
      gates.segment(0, H) = sigmoid(a.segment(0, H));
      gates.segment(H, H) = sigmoid(a.segment(H, H));
      gates.segment(2 * H, H) = tanh_v(a.segment(2 * H, H));
      gates.segment(3 * H, H) = sigmoid(a.segment(3 * H, H));
      c_next = gates.segment(H, H).cwiseProduct(c) +
               gates.segment(0, H).cwiseProduct(gates.segment(2 * H, H));
      h_next = gates.segment(3 * H, H).cwiseProduct(tanh_v(c_next));
    } else {
      const Eigen::VectorXd ax = w.w_input * inputs.col(t) + w.bias;
      const Eigen::VectorXd ah = w.w_recurrent.topRows(2 * H) * h;
      gates.segment(0, H) = sigmoid(ax.segment(0, H) + ah.segment(0, H));
      gates.segment(H, H) = sigmoid(ax.segment(H, H) + ah.segment(H, H));
      rec_candidate = w.w_recurrent.bottomRows(H) * gates.segment(H, H).cwiseProduct(h);
      gates.segment(2 * H, H) = tanh_v(ax.segment(2 * H, H) + rec_candidate);
      const auto z = gates.segment(0, H).array();
      h_next = ((1.0 - z) * gates.segment(2 * H, H).array() + z * h.array()).matrix();
      c_next = c;
    }
    if (trace) {
      trace->h_prev.push_back(h);
      trace->c_prev.push_back(c);
      trace->gates.push_back(gates);
      trace->c.push_back(c_next);
      trace->h.push_back(h_next);
      trace->recurrent_candidate.push_back(rec_candidate);
    }
    h = std::move(h_next);
    c = std::move(c_next);
    out.col(t) = h;
  }
  return out;
}

Eigen::MatrixXd backward_cell(CellKind kind, const CellWeights &w, const Eigen::MatrixXd &inputs,
                              const CellTrace &trace, const Eigen::MatrixXd &d_outputs,
                              CellWeights &g) {
  const int H = w.units();
  const auto T = inputs.cols();
  if (static_cast<Eigen::Index>(trace.h.size()) != T || d_outputs.cols() != T ||
      d_outputs.rows() != H)
    throw PreconditionError("network", "recurrent trace does not match the inputs");
  Eigen::MatrixXd d_inputs = Eigen::MatrixXd::Zero(inputs.rows(), T);
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(H);

  for (Eigen::Index s = T - 1; s >= 0; --s) {
    const auto t = trace.reverse ? T - 1 - s : s;
    const auto &gates = trace.gates[s];
    const auto &h_prev = trace.h_prev[s];
    const Eigen::VectorXd dh = d_outputs.col(t) + dh_next;
    Eigen::VectorXd da(gate_count(kind) * H);

    if (kind == CellKind::lstm) {
      const auto i = gates.segment(0, H).array();
      const auto f = gates.segment(H, H).array();
      const auto cand = gates.segment(2 * H, H).array();
      const auto o = gates.segment(3 * H, H).array();
      const Eigen::ArrayXd tc = trace.c[s].array().tanh();
      const Eigen::ArrayXd dc = dh.array() * o * (1.0 - tc * tc) + dc_next.array();
      da.segment(0, H) = (dc * cand * i * (1.0 - i)).matrix();
      da.segment(H, H) = (dc * trace.c_prev[s].array() * f * (1.0 - f)).matrix();
      da.segment(2 * H, H) = (dc * i * (1.0 - cand * cand)).matrix();
      da.segment(3 * H, H) = (dh.array() * tc * o * (1.0 - o)).matrix();
      dc_next = (dc * f).matrix();
      g.w_recurrent.noalias() += da * h_prev.transpose();
      dh_next = w.w_recurrent.transpose() * da;
      g.w_input.noalias() += da * inputs.col(t).transpose();
      g.bias += da;
    } else {
      const auto z = gates.segment(0, H).array();
      const auto r = gates.segment(H, H).array();
      const auto n = gates.segment(2 * H, H).array();
      const Eigen::ArrayXd dn = dh.array() * (1.0 - z);
      const Eigen::ArrayXd dz = dh.array() * (h_prev.array() - n);
      da.segment(2 * H, H) = (dn * (1.0 - n * n)).matrix();
      const Eigen::VectorXd rh = (r * h_prev.array()).matrix();
      const Eigen::VectorXd d_rh = w.w_recurrent.bottomRows(H).transpose() * da.segment(2 * H, H);
      da.segment(0, H) = (dz * z * (1.0 - z)).matrix();
      da.segment(H, H) = (d_rh.array() * h_prev.array() * r * (1.0 - r)).matrix();
      g.w_recurrent.bottomRows(H).noalias() += da.segment(2 * H, H) * rh.transpose();
      g.w_recurrent.topRows(2 * H).noalias() += da.head(2 * H) * h_prev.transpose();
      dh_next = (dh.array() * z + d_rh.array() * r).matrix() +
                w.w_recurrent.topRows(2 * H).transpose() * da.head(2 * H);
      g.w_input.noalias() += da * inputs.col(t).transpose();
      g.bias += da;
    }
    d_inputs.col(t) = w.w_input.transpose() * da;
  }
  return d_inputs;
}

} // namespace lapact::network
