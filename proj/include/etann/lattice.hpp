#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "etann/symtensor.hpp"

namespace etann {

/// Periodic truss unit cell. The stock geometry is a cube with the eight
/// corners braced to a body-center node: 12 edges, 8 body diagonals and 4
/// face diagonals (X-braces on the two z-faces), 24 bars total. Corner nodes
/// are periodic images of each other; the center node carries the periodic
/// fluctuation field.
///
/// Bars follow a 1D elasto-viscoplastic law with linear hardening,
///   eps_pl_dot = sign(sigma) < |sigma| - (sig_y + H p) > / eta,
/// the uniaxial-stress reduction of the 3D shear-form von Mises /
/// overstress laws (sig_y = sqrt(3) c, H_axial = 3 H_shear, eta = 3 c mu).
struct LatticeCell {
  struct Node {
    std::array<double, 3> x;  // mm
  };
  struct Bar {
    int n1, n2;
    double area;  // mm^2
    int mat;
  };
  struct BarMaterial {
    double E;      // Pa
    double sig_y;  // Pa
    double H;      // Pa
    double eta;    // Pa*s (0 = rate independent)
  };

  std::vector<Node> nodes;
  std::vector<Bar> bars;
  std::vector<BarMaterial> materials;
  std::vector<std::pair<int, int>> periodic_pairs;  // (slave, master)
  double volume = 0.0;                              // mm^3

  // derived topology
  std::vector<int> node_class;  // independent displacement class per node
  int n_classes = 0;
  int pinned_class = 0;

  void finalize() {
    const int n = static_cast<int>(nodes.size());
    std::vector<int> parent(n);
    for (int i = 0; i < n; ++i) parent[i] = i;
    const auto find = [&](int i) {
      while (parent[i] != i) i = parent[i] = parent[parent[i]];
      return i;
    };
    for (const auto& [slave, master] : periodic_pairs) {
      const int a = find(slave);
      const int b = find(master);
      if (a == b)
        throw std::invalid_argument("LatticeCell: periodic pairing is not a bijection on nodes");
      parent[a] = b;
    }
    node_class.assign(n, -1);
    n_classes = 0;
    for (int i = 0; i < n; ++i) {
      const int root = find(i);
      if (node_class[root] < 0) node_class[root] = n_classes++;
      node_class[i] = node_class[root];
    }
    pinned_class = node_class[0];
    for (const Bar& b : bars) {
      if (b.n1 < 0 || b.n1 >= n || b.n2 < 0 || b.n2 >= n)
        throw std::invalid_argument("LatticeCell: bar references unknown node");
      if (b.mat < 0 || b.mat >= static_cast<int>(materials.size()))
        throw std::invalid_argument("LatticeCell: bar references unknown material");
    }
    if (volume <= 0.0) throw std::invalid_argument("LatticeCell: volume must be positive");
  }

  int n_free_dofs() const { return 3 * (n_classes - 1); }
  std::size_t n_bars() const { return bars.size(); }

  /// dof index of (class, axis) in the reduced system, -1 if pinned.
  int dof(int cls, int axis) const {
    if (cls == pinned_class) return -1;
    const int idx = cls < pinned_class ? cls : cls - 1;
    return 3 * idx + axis;
  }

  std::array<double, 3> bar_vector(const Bar& b) const {
    return {nodes[b.n2].x[0] - nodes[b.n1].x[0], nodes[b.n2].x[1] - nodes[b.n1].x[1],
            nodes[b.n2].x[2] - nodes[b.n1].x[2]};
  }

  /// Reference cube cell: side 10 mm, bar area 1 mm^2, bar law reduced from
  /// K = 167 GPa, G = 77 GPa, c = 100 MPa, H = 10 MPa, mu = 25 s.
  static LatticeCell cube_cell_24() {
    LatticeCell cell;
    const double L = 10.0;
    cell.volume = L * L * L;
    cell.nodes = {{{0, 0, 0}},
                  {{L, 0, 0}},
                  {{L, L, 0}},
                  {{0, L, 0}},
                  {{0, 0, L}},
                  {{L, 0, L}},
                  {{L, L, L}},
                  {{0, L, L}},
                  {{L / 2, L / 2, L / 2}}};
    const int edges[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
    for (const auto& e : edges) cell.bars.push_back({e[0], e[1], 1.0, 0});
    for (int i = 0; i < 8; ++i) cell.bars.push_back({8, i, 1.0, 0});
    const int faced[4][2] = {{0, 2}, {1, 3}, {4, 6}, {5, 7}};
    for (const auto& e : faced) cell.bars.push_back({e[0], e[1], 1.0, 0});
    const double K = 167e9, G = 77e9, c = 100e6, H = 10e6, mu = 25.0;
    const double E = 9.0 * K * G / (3.0 * K + G);
    cell.materials.push_back({E, std::sqrt(3.0) * c, 3.0 * H, 3.0 * c * mu});
    for (int i = 1; i < 8; ++i) cell.periodic_pairs.push_back({i, 0});
    cell.finalize();
    return cell;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("LatticeCell::save: cannot open " + path);
    os.precision(17);
    os << "# etann lattice cell v1\n";
    os << "# lengths mm, areas mm^2, E/sig_y/H in Pa, eta in Pa*s\n";
    os << "volume " << volume << "\n";
    os << "nodes " << nodes.size() << "\n";
    for (std::size_t i = 0; i < nodes.size(); ++i)
      os << i << " " << nodes[i].x[0] << " " << nodes[i].x[1] << " " << nodes[i].x[2] << "\n";
    os << "bars " << bars.size() << "\n";
    for (std::size_t i = 0; i < bars.size(); ++i)
      os << i << " " << bars[i].n1 << " " << bars[i].n2 << " " << bars[i].area << " " << bars[i].mat
         << "\n";
    os << "materials " << materials.size() << "\n";
    for (std::size_t i = 0; i < materials.size(); ++i)
      os << i << " " << materials[i].E << " " << materials[i].sig_y << " " << materials[i].H << " "
         << materials[i].eta << "\n";
    os << "periodic_pairs " << periodic_pairs.size() << "\n";
    for (const auto& [s, m] : periodic_pairs) os << s << " " << m << "\n";
  }

  static LatticeCell load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("LatticeCell::load: cannot open " + path);
    LatticeCell cell;
    std::string line;
    const auto next_content_line = [&]() {
      while (std::getline(is, line)) {
        if (!line.empty() && line[0] != '#') return true;
      }
      return false;
    };
    while (next_content_line()) {
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key == "volume") {
        ls >> cell.volume;
      } else if (key == "nodes") {
        std::size_t n;
        ls >> n;
        cell.nodes.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          next_content_line();
          std::istringstream rs(line);
          std::size_t id;
          rs >> id;
          rs >> cell.nodes[id].x[0] >> cell.nodes[id].x[1] >> cell.nodes[id].x[2];
        }
      } else if (key == "bars") {
        std::size_t n;
        ls >> n;
        cell.bars.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          next_content_line();
          std::istringstream rs(line);
          std::size_t id;
          rs >> id;
          rs >> cell.bars[id].n1 >> cell.bars[id].n2 >> cell.bars[id].area >> cell.bars[id].mat;
        }
      } else if (key == "materials") {
        std::size_t n;
        ls >> n;
        cell.materials.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          next_content_line();
          std::istringstream rs(line);
          std::size_t id;
          rs >> id;
          rs >> cell.materials[id].E >> cell.materials[id].sig_y >> cell.materials[id].H >>
              cell.materials[id].eta;
        }
      } else if (key == "periodic_pairs") {
        std::size_t n;
        ls >> n;
        cell.periodic_pairs.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          next_content_line();
          std::istringstream rs(line);
          rs >> cell.periodic_pairs[i].first >> cell.periodic_pairs[i].second;
        }
      } else {
        throw std::runtime_error("LatticeCell::load: unknown section '" + key + "'");
      }
    }
    cell.finalize();
    return cell;
  }
};

struct BarState {
  double eps = 0.0;
  double eps_pl = 0.0;
  double p = 0.0;  // accumulated |eps_pl| flow
  double sig = 0.0;
  double psi = 0.0;
  double work_inc = 0.0;
  double psi_inc = 0.0;
};

struct LatticeState {
  SymTensor6 eps{};                  // imposed average strain
  std::vector<BarState> bar;         // per-bar state
  std::vector<double> fluctuation;   // free-dof fluctuation displacements, mm
  SymTensor6 sig{};                  // <sigma>
  double psi = 0.0;                  // <psi>
  double d = 0.0;                    // <d> bookkept over the last step
  double work_inc = 0.0;             // <sigma_bar : d eps> over last step
  double psi_inc = 0.0;
};

struct LatticeStepResult {
  LatticeState state;
  int newton_iterations = 0;
};

namespace detail {

struct Bar1DResult {
  BarState s;
  double tangent;  // d sigma / d eps of the implicit update
};

inline Bar1DResult bar_step_1d(const BarState& s0, double eps_new, double dt,
                               const LatticeCell::BarMaterial& m, int depth = 0) {
  BarState s = s0;
  s.eps = eps_new;
  const double sig_tr = m.E * (eps_new - s0.eps_pl);
  const double f_tr = std::fabs(sig_tr) - (m.sig_y + m.H * s0.p);
  double tangent = m.E;
  if (f_tr > 0.0) {
    const double denom = m.eta + (m.E + m.H) * dt;
    const double dp = m.eta > 0.0 ? dt * f_tr / denom : f_tr / (m.E + m.H);
    const double sgn = sig_tr >= 0.0 ? 1.0 : -1.0;
    s.eps_pl = s0.eps_pl + sgn * dp;
    s.p = s0.p + dp;
    tangent = m.eta > 0.0 ? m.E * (1.0 - m.E * dt / denom) : m.E * m.H / (m.E + m.H);
  }
  s.sig = m.E * (s.eps - s.eps_pl);
  s.psi = 0.5 * m.E * (s.eps - s.eps_pl) * (s.eps - s.eps_pl);
  s.work_inc = 0.5 * (s0.sig + s.sig) * (eps_new - s0.eps);
  s.psi_inc = s.psi - s0.psi;
  const double diss = s.work_inc - s.psi_inc;
  const double scale = std::max({std::fabs(s.work_inc), std::fabs(s.psi_inc), 1e-300});
  if (diss < -1e-13 * scale && depth < 40) {
    // reversal through zero stress while flowing; resolve by bisection
    const double eps_mid = 0.5 * (s0.eps + eps_new);
    Bar1DResult a = bar_step_1d(s0, eps_mid, 0.5 * dt, m, depth + 1);
    Bar1DResult b = bar_step_1d(a.s, eps_new, 0.5 * dt, m, depth + 1);
    b.s.work_inc += a.s.work_inc;
    b.s.psi_inc += a.s.psi_inc;
    return b;
  }
  return {s, tangent};
}

}  // namespace detail

inline LatticeState lattice_initial_state(const LatticeCell& cell) {
  LatticeState st;
  st.bar.assign(cell.n_bars(), BarState{});
  st.fluctuation.assign(static_cast<std::size_t>(cell.n_free_dofs()), 0.0);
  return st;
}

/// One strain-driven step of the periodic cell: Newton on the fluctuation
/// field so every free node class is in equilibrium, bars advanced with the
/// implicit 1D law. Returns volume averages; work/energy bookkeeping uses
/// trapezoid stress work per bar so <work> = <dpsi> + <d> dt holds exactly.
inline LatticeStepResult lattice_solve(const LatticeCell& cell, const LatticeState& prev,
                                       const SymTensor6& deps, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("lattice_solve: dt must be positive");
  LatticeState st = prev;
  st.eps += deps;

  const int nf = cell.n_free_dofs();
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(prev.fluctuation.data(), nf);

  const auto mat3 = st.eps.to_matrix();

  std::vector<detail::Bar1DResult> results(cell.n_bars());
  double force_scale = 0.0;
  for (std::size_t ib = 0; ib < cell.n_bars(); ++ib) {
    const auto& b = cell.bars[ib];
    const auto& m = cell.materials[b.mat];
    force_scale += b.area * m.E;
  }

  Eigen::VectorXd r(nf);
  Eigen::MatrixXd Kmat(nf, nf);
  int iterations = 0;
  const int max_iter = 60;
  const double tol = 1e-12 * force_scale;
  for (;; ++iterations) {
    if (iterations >= max_iter)
      throw std::runtime_error("lattice_solve: Newton did not converge, |r| = " +
                               std::to_string(r.template lpNorm<Eigen::Infinity>()));
    r.setZero();
    Kmat.setZero();
    for (std::size_t ib = 0; ib < cell.n_bars(); ++ib) {
      const auto& b = cell.bars[ib];
      const auto& m = cell.materials[b.mat];
      const auto dx = cell.bar_vector(b);
      const double l = std::sqrt(dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]);
      const std::array<double, 3> n{dx[0] / l, dx[1] / l, dx[2] / l};
      double affine = 0.0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) affine += n[i] * mat3[i][j] * n[j];
      const int c1 = cell.node_class[b.n1];
      const int c2 = cell.node_class[b.n2];
      double fluct = 0.0;
      for (int ax = 0; ax < 3; ++ax) {
        const int d2 = cell.dof(c2, ax);
        const int d1 = cell.dof(c1, ax);
        const double w2 = d2 >= 0 ? w[d2] : 0.0;
        const double w1 = d1 >= 0 ? w[d1] : 0.0;
        fluct += (w2 - w1) * n[ax];
      }
      const double eps_b = affine + fluct / l;
      results[ib] = detail::bar_step_1d(prev.bar[ib], eps_b, dt, m);
      const double axial = b.area * results[ib].s.sig;  // force units Pa*mm^2
      const double kb = b.area * results[ib].tangent / l;
      for (int ax = 0; ax < 3; ++ax) {
        const int d2 = cell.dof(c2, ax);
        const int d1 = cell.dof(c1, ax);
        if (d2 >= 0) r[d2] += axial * n[ax];
        if (d1 >= 0) r[d1] -= axial * n[ax];
        for (int ay = 0; ay < 3; ++ay) {
          const double kij = kb * n[ax] * n[ay];
          const int e2 = cell.dof(c2, ay);
          const int e1 = cell.dof(c1, ay);
          if (d2 >= 0 && e2 >= 0) Kmat(d2, e2) += kij;
          if (d1 >= 0 && e1 >= 0) Kmat(d1, e1) += kij;
          if (d2 >= 0 && e1 >= 0) Kmat(d2, e1) -= kij;
          if (d1 >= 0 && e2 >= 0) Kmat(d1, e2) -= kij;
        }
      }
    }
    if (nf == 0 || r.template lpNorm<Eigen::Infinity>() <= tol) break;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(Kmat);
    const Eigen::VectorXd dw = lu.solve(r);
    if (!dw.allFinite())
      throw std::runtime_error("lattice_solve: singular constrained stiffness");
    w -= dw;
  }

  // commit
  st.fluctuation.assign(w.data(), w.data() + nf);
  SymTensor6 sig_avg{};
  double psi_avg = 0.0, work = 0.0, dpsi = 0.0, diss = 0.0;
  for (std::size_t ib = 0; ib < cell.n_bars(); ++ib) {
    const auto& b = cell.bars[ib];
    const auto dx = cell.bar_vector(b);
    const double l = std::sqrt(dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]);
    const std::array<double, 3> n{dx[0] / l, dx[1] / l, dx[2] / l};
    const double vb = b.area * l;  // bar volume, mm^3
    const BarState& bs = results[ib].s;
    const SymTensor6 nn{{n[0] * n[0], n[1] * n[1], n[2] * n[2], n[0] * n[1], n[0] * n[2],
                         n[1] * n[2]}};
    sig_avg += (vb / cell.volume) * bs.sig * nn;
    psi_avg += (vb / cell.volume) * bs.psi;
    work += (vb / cell.volume) * bs.work_inc;
    dpsi += (vb / cell.volume) * bs.psi_inc;
    diss += (vb / cell.volume) * (bs.work_inc - bs.psi_inc);
    st.bar[ib] = bs;
  }
  st.sig = sig_avg;
  st.psi = psi_avg;
  st.work_inc = work;
  st.psi_inc = dpsi;
  st.d = diss / dt;
  return {st, iterations};
}

/// Internal coordinates: per-bar total strain, inelastic strain and the
/// accumulated inelastic invariant, concatenated (3 * n_bars values).
inline std::vector<double> lattice_internal_coordinates(const LatticeState& st) {
  const std::size_t nb = st.bar.size();
  std::vector<double> xi(3 * nb);
  for (std::size_t i = 0; i < nb; ++i) {
    xi[i] = st.bar[i].eps;
    xi[nb + i] = st.bar[i].eps_pl;
    xi[2 * nb + i] = st.bar[i].p;
  }
  return xi;
}

/// Columns of the homogenized elastic stiffness via unit-strain probes at
/// amplitude h (small enough to stay elastic everywhere).
inline std::array<std::array<double, 6>, 6> homogenized_elastic_stiffness(const LatticeCell& cell,
                                                                          double h = 1e-9) {
  std::array<std::array<double, 6>, 6> C{};
  for (int j = 0; j < 6; ++j) {
    SymTensor6 probe{};
    probe.c[static_cast<std::size_t>(j)] = h;
    const auto res = lattice_solve(cell, lattice_initial_state(cell), probe, 1.0);
    for (int i = 0; i < 6; ++i) C[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
        res.state.sig.c[static_cast<std::size_t>(i)] / h;
  }
  return C;
}

/// Assembled elastic stiffness of the constrained (free-dof) system.
inline Eigen::MatrixXd constrained_elastic_stiffness(const LatticeCell& cell) {
  const int nf = cell.n_free_dofs();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nf, nf);
  for (const auto& b : cell.bars) {
    const auto& m = cell.materials[b.mat];
    const auto dx = cell.bar_vector(b);
    const double l = std::sqrt(dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]);
    const std::array<double, 3> n{dx[0] / l, dx[1] / l, dx[2] / l};
    const double kb = b.area * m.E / l;
    const int c1 = cell.node_class[b.n1];
    const int c2 = cell.node_class[b.n2];
    for (int ax = 0; ax < 3; ++ax)
      for (int ay = 0; ay < 3; ++ay) {
        const double kij = kb * n[ax] * n[ay];
        const int d2 = cell.dof(c2, ax), e2 = cell.dof(c2, ay);
        const int d1 = cell.dof(c1, ax), e1 = cell.dof(c1, ay);
        if (d2 >= 0 && e2 >= 0) K(d2, e2) += kij;
        if (d1 >= 0 && e1 >= 0) K(d1, e1) += kij;
        if (d2 >= 0 && e1 >= 0) K(d2, e1) -= kij;
        if (d1 >= 0 && e2 >= 0) K(d1, e2) -= kij;
      }
  }
  return K;
}

}  // namespace etann
