#pragma once

#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "etann/mlp.hpp"
#include "etann/normalize.hpp"
#include "etann/symtensor.hpp"

namespace etann {

/// A network together with its input normalization and output anchoring:
///   y(x) = out_scale .* ( net((x - beta)/alpha) - net((0 - beta)/alpha) ),
/// so the outputs vanish exactly at the physical zero state.
struct AnchoredNet {
  Mlp net;
  std::vector<double> in_alpha;
  std::vector<double> in_beta;
  std::vector<double> out_scale;
  std::vector<double> anchor_out;  // cached net output at the zero state

  AnchoredNet() = default;
  AnchoredNet(Mlp m, std::vector<double> alpha, std::vector<double> beta,
              std::vector<double> scale)
      : net(std::move(m)), in_alpha(std::move(alpha)), in_beta(std::move(beta)),
        out_scale(std::move(scale)) {
    if (static_cast<int>(in_alpha.size()) != net.n_in() || in_beta.size() != in_alpha.size())
      throw std::invalid_argument("AnchoredNet: input stats width mismatch");
    if (static_cast<int>(out_scale.size()) != net.n_out())
      throw std::invalid_argument("AnchoredNet: output scale width mismatch");
    refresh_anchor();
  }

  std::vector<double> anchor_input() const {
    std::vector<double> x0(in_alpha.size());
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = -in_beta[i] / in_alpha[i];
    return x0;
  }

  void refresh_anchor() {
    const std::vector<double> x0 = anchor_input();
    anchor_out = net.forward(std::span<const double>(x0));
  }

  std::vector<double> normalize_in(std::span<const double> x) const {
    std::vector<double> xs(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xs[i] = (x[i] - in_beta[i]) / in_alpha[i];
    return xs;
  }

  /// Anchored outputs in physical units.
  std::vector<double> value(std::span<const double> x) const {
    const std::vector<double> xs = normalize_in(x);
    std::vector<double> y = net.forward(std::span<const double>(xs));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = out_scale[i] * (y[i] - anchor_out[i]);
    return y;
  }

  /// Anchored outputs plus the Jacobian-vector product along x_dot.
  void value_and_jvp(std::span<const double> x, std::span<const double> x_dot,
                     std::vector<double>& y, std::vector<double>& y_dot) const {
    std::vector<ad::Dual> xs(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      xs[i] = ad::Dual((x[i] - in_beta[i]) / in_alpha[i], x_dot[i] / in_alpha[i]);
    const std::vector<ad::Dual> out = net.forward<ad::Dual>(xs);
    y.resize(out.size());
    y_dot.resize(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      y[i] = out_scale[i] * (out[i].v - anchor_out[i]);
      y_dot[i] = out_scale[i] * out[i].d;
    }
  }
};

namespace detail {

/// Scalar-output value plus input gradient by a reverse sweep; plain loops,
/// meant for single samples at inference.
inline double mlp_value_and_input_grad(const Mlp& m, std::span<const double> x,
                                       std::vector<double>& grad) {
  const std::size_t L = m.n_layers();
  if (m.n_out() != 1) throw std::invalid_argument("mlp_value_and_input_grad: scalar output only");
  std::vector<std::vector<double>> X(L + 1), Z(L);
  X[0].assign(x.begin(), x.end());
  for (std::size_t k = 0; k < L; ++k) {
    const int nin = m.widths[k];
    const int nout = m.widths[k + 1];
    Z[k].assign(static_cast<std::size_t>(nout), 0.0);
    X[k + 1].assign(static_cast<std::size_t>(nout), 0.0);
    for (int i = 0; i < nout; ++i) {
      double acc = m.b[k][static_cast<std::size_t>(i)];
      const double* wrow = &m.W[k][static_cast<std::size_t>(i) * nin];
      for (int j = 0; j < nin; ++j) acc += wrow[j] * X[k][static_cast<std::size_t>(j)];
      Z[k][static_cast<std::size_t>(i)] = acc;
      X[k + 1][static_cast<std::size_t>(i)] = act_value(m.activations[k], acc);
    }
  }
  std::vector<double> bar{1.0};
  for (std::size_t k = L; k-- > 0;) {
    const int nin = m.widths[k];
    const int nout = m.widths[k + 1];
    std::vector<double> s(static_cast<std::size_t>(nout));
    for (int i = 0; i < nout; ++i)
      s[static_cast<std::size_t>(i)] = bar[static_cast<std::size_t>(i)] *
                                       act_deriv(m.activations[k], Z[k][static_cast<std::size_t>(i)]);
    std::vector<double> nxt(static_cast<std::size_t>(nin), 0.0);
    for (int i = 0; i < nout; ++i) {
      const double* wrow = &m.W[k][static_cast<std::size_t>(i) * nin];
      const double si = s[static_cast<std::size_t>(i)];
      for (int j = 0; j < nin; ++j) nxt[static_cast<std::size_t>(j)] += si * wrow[j];
    }
    bar.swap(nxt);
  }
  grad = std::move(bar);
  return X[L][0];
}

}  // namespace detail

/// Free energy density block: scalar anchored network over (eps, z).
struct EnergyModel {
  AnchoredNet block;
  int nz = 0;

  int n_in() const { return 6 + nz; }
};

/// Evolution equation block: anchored network (eps, z) -> z_rate.
struct EvolutionModel {
  AnchoredNet block;
  int nz = 0;

  /// z_rate in physical units.
  std::vector<double> rate(const SymTensor6& eps, std::span<const double> z) const {
    std::vector<double> x(static_cast<std::size_t>(6 + nz));
    for (int i = 0; i < 6; ++i) x[static_cast<std::size_t>(i)] = eps.c[static_cast<std::size_t>(i)];
    for (int j = 0; j < nz; ++j) x[static_cast<std::size_t>(6 + j)] = z[static_cast<std::size_t>(j)];
    return block.value(x);
  }

  /// d(z_rate)/dz at fixed strain, by dual-number columns.
  std::vector<std::vector<double>> rate_jacobian_z(const SymTensor6& eps,
                                                   std::span<const double> z) const {
    std::vector<double> x(static_cast<std::size_t>(6 + nz));
    for (int i = 0; i < 6; ++i) x[static_cast<std::size_t>(i)] = eps.c[static_cast<std::size_t>(i)];
    for (int j = 0; j < nz; ++j) x[static_cast<std::size_t>(6 + j)] = z[static_cast<std::size_t>(j)];
    std::vector<std::vector<double>> jac(static_cast<std::size_t>(nz),
                                         std::vector<double>(static_cast<std::size_t>(nz)));
    std::vector<double> xdot(x.size(), 0.0), y, ydot;
    for (int j = 0; j < nz; ++j) {
      xdot[static_cast<std::size_t>(6 + j)] = 1.0;
      block.value_and_jvp(x, xdot, y, ydot);
      xdot[static_cast<std::size_t>(6 + j)] = 0.0;
      for (int i = 0; i < nz; ++i)
        jac[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = ydot[static_cast<std::size_t>(i)];
    }
    return jac;
  }
};

/// Encoder/decoder pair identifying internal variables from internal
/// coordinates. Both maps are anchored so z(xi=0) = 0 and xi_tilde(z=0) = 0.
struct CoderPair {
  AnchoredNet encoder;  // xi -> z
  AnchoredNet decoder;  // z -> xi_tilde
  int nz = 0;
  int nxi = 0;
};

struct EnergyOutputs {
  double psi = 0.0;
  SymTensor6 sig{};
  std::vector<double> dpsi_dz;  // thermodynamic-force conjugates, negated force
  double d = 0.0;
};

/// Constitutive restrictions evaluated from the energy network:
/// psi anchored, sigma = dpsi/deps via the chain rule through the input
/// normalization, d = -(dpsi/dz) . z_rate.
inline EnergyOutputs energy_outputs(const EnergyModel& m, const SymTensor6& eps,
                                    std::span<const double> z, std::span<const double> z_rate) {
  if (static_cast<int>(z.size()) != m.nz)
    throw std::invalid_argument("energy_outputs: z width mismatch");
  std::vector<double> x(static_cast<std::size_t>(m.n_in()));
  for (int i = 0; i < 6; ++i) x[static_cast<std::size_t>(i)] = eps.c[static_cast<std::size_t>(i)];
  for (int j = 0; j < m.nz; ++j) x[static_cast<std::size_t>(6 + j)] = z[static_cast<std::size_t>(j)];
  const std::vector<double> xs = m.block.normalize_in(x);
  std::vector<double> grad;
  const double raw = detail::mlp_value_and_input_grad(m.block.net, xs, grad);
  const double alpha_psi = m.block.out_scale[0];
  EnergyOutputs out;
  out.psi = alpha_psi * (raw - m.block.anchor_out[0]);
  for (int i = 0; i < 6; ++i)
    out.sig.c[static_cast<std::size_t>(i)] =
        alpha_psi / m.block.in_alpha[static_cast<std::size_t>(i)] * grad[static_cast<std::size_t>(i)];
  out.dpsi_dz.resize(static_cast<std::size_t>(m.nz));
  out.d = 0.0;
  for (int j = 0; j < m.nz; ++j) {
    const double f = alpha_psi / m.block.in_alpha[static_cast<std::size_t>(6 + j)] *
                     grad[static_cast<std::size_t>(6 + j)];
    out.dpsi_dz[static_cast<std::size_t>(j)] = f;
    if (!z_rate.empty()) out.d -= f * z_rate[static_cast<std::size_t>(j)];
  }
  return out;
}

struct EncodedRates {
  std::vector<double> z;
  std::vector<double> z_rate;
  std::vector<double> xi_tilde;
  std::vector<double> xi_tilde_rate;
};

/// z = h(xi), z_rate by the encoder JVP along xi_rate, then the decoded
/// low-rank coordinates and their rates through the decoder JVP.
inline EncodedRates encode_rates(const CoderPair& c, std::span<const double> xi,
                                 std::span<const double> xi_rate) {
  if (xi.size() != xi_rate.size()) throw std::invalid_argument("encode_rates: width mismatch");
  EncodedRates out;
  c.encoder.value_and_jvp(xi, xi_rate, out.z, out.z_rate);
  c.decoder.value_and_jvp(out.z, out.z_rate, out.xi_tilde, out.xi_tilde_rate);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container: structured-text header with the architecture, then
// all floating-point payloads (stats, scales, weights) as a raw 64-bit blob
// so the round trip is bit-exact.
// ---------------------------------------------------------------------------
struct ModelCheckpoint {
  std::optional<EnergyModel> energy;
  std::optional<EvolutionModel> evolution;
  std::optional<CoderPair> coder;
  nlohmann::json meta;

  static constexpr int format_version = 1;

  void save(const std::string& path) const {
    nlohmann::json header;
    header["format"] = "etann-checkpoint";
    header["format_version"] = format_version;
    header["meta"] = meta;
    std::vector<double> blob;
    nlohmann::json blocks = nlohmann::json::array();
    const auto put = [&](const std::string& name, const AnchoredNet& a) {
      nlohmann::json jb;
      jb["name"] = name;
      jb["widths"] = a.net.widths;
      std::vector<std::string> acts;
      for (Activation act : a.net.activations) acts.push_back(to_string(act));
      jb["activations"] = acts;
      blocks.push_back(jb);
      blob.insert(blob.end(), a.in_alpha.begin(), a.in_alpha.end());
      blob.insert(blob.end(), a.in_beta.begin(), a.in_beta.end());
      blob.insert(blob.end(), a.out_scale.begin(), a.out_scale.end());
      const std::vector<double> p = a.net.flatten();
      blob.insert(blob.end(), p.begin(), p.end());
    };
    if (energy) put("energy", energy->block);
    if (evolution) put("evolution", evolution->block);
    if (coder) {
      put("encoder", coder->encoder);
      put("decoder", coder->decoder);
    }
    header["blocks"] = blocks;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("ModelCheckpoint::save: cannot open " + path);
    os << "ETANN-CHECKPOINT v1\n" << header.dump() << "\n#BINARY " << blob.size() << "\n";
    os.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size() * sizeof(double)));
  }

  static ModelCheckpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("ModelCheckpoint::load: cannot open " + path);
    std::string line;
    std::getline(is, line);
    if (line != "ETANN-CHECKPOINT v1")
      throw std::runtime_error("ModelCheckpoint::load: bad magic in " + path);
    std::getline(is, line);
    const nlohmann::json header = nlohmann::json::parse(line);
    if (header.at("format_version").get<int>() != format_version)
      throw std::runtime_error("ModelCheckpoint::load: unsupported version");
    std::getline(is, line);
    if (line.rfind("#BINARY ", 0) != 0)
      throw std::runtime_error("ModelCheckpoint::load: missing blob");
    std::vector<double> blob(std::stoull(line.substr(8)));
    is.read(reinterpret_cast<char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(double)));
    if (!is) throw std::runtime_error("ModelCheckpoint::load: truncated blob");

    ModelCheckpoint ck;
    ck.meta = header.value("meta", nlohmann::json::object());
    std::size_t off = 0;
    const auto take = [&](std::size_t n) {
      if (off + n > blob.size()) throw std::runtime_error("ModelCheckpoint::load: blob underrun");
      std::vector<double> v(blob.begin() + static_cast<std::ptrdiff_t>(off),
                            blob.begin() + static_cast<std::ptrdiff_t>(off + n));
      off += n;
      return v;
    };
    for (const auto& jb : header.at("blocks")) {
      const std::string name = jb.at("name").get<std::string>();
      Mlp net;
      net.widths = jb.at("widths").get<std::vector<int>>();
      for (const auto& s : jb.at("activations"))
        net.activations.push_back(activation_from_string(s.get<std::string>()));
      const std::size_t L = net.widths.size() - 1;
      net.W.resize(L);
      net.b.resize(L);
      const std::size_t nin = static_cast<std::size_t>(net.widths.front());
      const std::size_t nout = static_cast<std::size_t>(net.widths.back());
      std::vector<double> alpha = take(nin);
      std::vector<double> beta = take(nin);
      std::vector<double> scale = take(nout);
      std::size_t np = 0;
      for (std::size_t k = 0; k < L; ++k)
        np += static_cast<std::size_t>(net.widths[k + 1]) * (net.widths[k] + 1);
      std::vector<double> params = take(np);
      for (std::size_t k = 0; k < L; ++k) {
        net.W[k].resize(static_cast<std::size_t>(net.widths[k + 1]) * net.widths[k]);
        net.b[k].resize(static_cast<std::size_t>(net.widths[k + 1]));
      }
      net.unflatten(params);
      AnchoredNet a(std::move(net), std::move(alpha), std::move(beta), std::move(scale));
      if (name == "energy") {
        ck.energy = EnergyModel{std::move(a), static_cast<int>(nin) - 6};
      } else if (name == "evolution") {
        ck.evolution = EvolutionModel{std::move(a), static_cast<int>(nout)};
      } else if (name == "encoder") {
        if (!ck.coder) ck.coder = CoderPair{};
        ck.coder->nxi = static_cast<int>(nin);
        ck.coder->nz = static_cast<int>(nout);
        ck.coder->encoder = std::move(a);
      } else if (name == "decoder") {
        if (!ck.coder) ck.coder = CoderPair{};
        ck.coder->decoder = std::move(a);
      } else {
        throw std::runtime_error("ModelCheckpoint::load: unknown block " + name);
      }
    }
    return ck;
  }
};

}  // namespace etann
