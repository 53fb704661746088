#pragma once

#include "chvel/grid.hpp"
#include "chvel/io.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace chvel {

class StreamFunctionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

/// Edge velocities of the stream function psi. psi is averaged to cell
/// centres; fluxes across the dual faces are differences of those averages
/// (or of the wall constants next to the walls), so the discrete weak
/// divergence telescopes to zero at every node.
inline Vector edge_velocity_from_stream(const Grid& g, const Vector& psi) {
  const int nx = g.nx();
  const int ny = g.ny();
  Eigen::MatrixXd centre(nx, ny - 1);
  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int ip = (i + 1) % nx;
      centre(i, j) = 0.25 * (psi[g.index(i, j)] + psi[g.index(ip, j)] + psi[g.index(i, j + 1)] +
                             psi[g.index(ip, j + 1)]);
    }
  }
  const double wall_bottom = psi[g.index(0, 0)];
  const double wall_top = psi[g.index(0, ny - 1)];
  Vector u(g.edge_count());
  int e = 0;
  for (int j = 0; j < ny; ++j) {
    const double omega = g.hy() * (g.is_wall_row(j) ? 0.5 : 1.0);
    for (int i = 0; i < nx; ++i, ++e) {
      const double top = j + 1 < ny ? centre(i, j) : wall_top;
      const double bottom = j > 0 ? centre(i, j - 1) : wall_bottom;
      u[e] = (top - bottom) / omega;
    }
  }
  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i < nx; ++i, ++e) {
      const int im = (i + nx - 1) % nx;
      u[e] = -(centre(i, j) - centre(im, j)) / g.hx();
    }
  }
  return u;
}

}  // namespace detail

/// Divergence-free, wall-tangential planar velocity given by a nodal stream
/// function that is constant along each wall. Components live on grid edges:
/// x-edges carry u1 = d psi/dy, y-edges carry u2 = -d psi/dx.
class VelocityField {
 public:
  VelocityField() = default;

  static VelocityField from_stream(GridPtr grid, Vector psi) {
    const Grid& g = *grid;
    if (psi.size() != g.node_count()) throw GridMismatch("velocity_from_stream: wrong stream size");
    if (!psi.allFinite()) throw StreamFunctionError("velocity_from_stream: non-finite stream value");
    const double scale = 1.0 + psi.cwiseAbs().maxCoeff();
    for (int j : {0, g.ny() - 1}) {
      const double ref = psi[g.index(0, j)];
      for (int i = 1; i < g.nx(); ++i) {
        if (std::abs(psi[g.index(i, j)] - ref) > 1e-12 * scale) {
          throw StreamFunctionError("velocity_from_stream: stream not constant along wall row " + std::to_string(j));
        }
        psi[g.index(i, j)] = ref;
      }
    }
    VelocityField v;
    v.edges_ = detail::edge_velocity_from_stream(g, psi);
    v.stream_ = std::move(psi);
    v.grid_ = std::move(grid);
    return v;
  }

  static VelocityField zero(GridPtr grid) {
    const int n = grid->node_count();
    return from_stream(std::move(grid), Vector::Zero(n));
  }

  static VelocityField from_function(GridPtr grid, const std::function<double(double, double)>& psi) {
    Vector v(grid->node_count());
    for (int k = 0; k < v.size(); ++k) v[k] = psi(grid->x(grid->ix(k)), grid->y(grid->iy(k)));
    return from_stream(std::move(grid), std::move(v));
  }

  [[nodiscard]] const GridPtr& grid() const { return grid_; }
  [[nodiscard]] const Vector& stream() const { return stream_; }
  /// Edge values in Grid::edges() order.
  [[nodiscard]] const Vector& edge_values() const { return edges_; }

  /// u1 at nodes: average of the two adjacent x-edges.
  [[nodiscard]] Vector nodal_u1() const {
    const Grid& g = *grid_;
    Vector u(g.node_count());
    for (int k = 0; k < u.size(); ++k) {
      const int i = g.ix(k);
      const int j = g.iy(k);
      const int im = (i + g.nx() - 1) % g.nx();
      u[k] = 0.5 * (edges_[g.index(im, j)] + edges_[g.index(i, j)]);
    }
    return u;
  }

  /// u2 at nodes: average of the two adjacent y-edges; zero on the walls.
  [[nodiscard]] Vector nodal_u2() const {
    const Grid& g = *grid_;
    Vector u = Vector::Zero(g.node_count());
    const int off = g.x_edge_count();
    for (int j = 1; j + 1 < g.ny(); ++j) {
      for (int i = 0; i < g.nx(); ++i) {
        u[g.index(i, j)] = 0.5 * (edges_[off + g.index(i, j - 1)] + edges_[off + g.index(i, j)]);
      }
    }
    return u;
  }

  [[nodiscard]] Vector magnitude() const {
    const Vector a = nodal_u1();
    const Vector b = nodal_u2();
    return (a.array().square() + b.array().square()).sqrt().matrix();
  }

  /// Nodal divergence: weak divergence divided by the nodal bulk weight.
  [[nodiscard]] Vector divergence() const {
    const Grid& g = *grid_;
    const Vector flux = g.edge_weights().cwiseProduct(edges_);
    return -(g.gradient().transpose() * flux).cwiseQuotient(g.bulk_weights());
  }

  /// Normal component at the wall nodes (bottom wall first).
  [[nodiscard]] Vector wall_normal() const {
    const Grid& g = *grid_;
    const Vector u2 = nodal_u2();
    Vector out(g.surface_count());
    for (int s = 0; s < out.size(); ++s) out[s] = u2[g.surface_to_node(s)];
    return out;
  }

  /// int_Omega u.w with the edge quadrature.
  [[nodiscard]] double inner(const VelocityField& w) const {
    return edges_.cwiseProduct(grid_->edge_weights()).dot(w.edges_);
  }

  /// ||u||_{L^3(Omega)} from the nodal magnitude.
  [[nodiscard]] double norm_l3() const {
    const Vector m = magnitude();
    return std::cbrt(grid_->bulk_weights().dot(m.cwiseProduct(m).cwiseProduct(m)));
  }

  VelocityField& operator+=(const VelocityField& o) {
    require_same_grid(*grid_, *o.grid_, "VelocityField +=");
    stream_ += o.stream_;
    edges_ += o.edges_;
    return *this;
  }
  VelocityField& operator-=(const VelocityField& o) {
    require_same_grid(*grid_, *o.grid_, "VelocityField -=");
    stream_ -= o.stream_;
    edges_ -= o.edges_;
    return *this;
  }
  VelocityField& operator*=(double s) {
    stream_ *= s;
    edges_ *= s;
    return *this;
  }
  friend VelocityField operator+(VelocityField a, const VelocityField& b) { return a += b; }
  friend VelocityField operator-(VelocityField a, const VelocityField& b) { return a -= b; }
  friend VelocityField operator*(double s, VelocityField a) { return a *= s; }

 private:
  GridPtr grid_;
  Vector stream_;
  Vector edges_;
};

inline VelocityField velocity_from_stream(GridPtr grid, Vector psi) {
  return VelocityField::from_stream(std::move(grid), std::move(psi));
}

/// Discrete norms of a control trajectory.
///   l2z:  space-time L2 norm
///   linf: max over nodes and levels of |u|
///   h1l3: (|u|_{L2(L3)}^2 + |d_t u|_{L2(L3)}^2)^{1/2}, forward differences
///   combined: max of the three
struct XNorm {
  double l2z = 0.0;
  double linf = 0.0;
  double h1l3 = 0.0;
  double combined = 0.0;
};

/// Velocity snapshots at levels t_0..t_N. Integrals over (0,T) use the
/// right-endpoint rule on levels 1..N, matching the state solver, which
/// samples the control at the new level of each step.
class ControlTrajectory {
 public:
  ControlTrajectory() = default;
  ControlTrajectory(std::vector<VelocityField> levels, double dt) : levels_(std::move(levels)), dt_(dt) {
    if (levels_.empty()) throw std::invalid_argument("ControlTrajectory: need at least one level");
    if (!(dt_ > 0.0)) throw std::invalid_argument("ControlTrajectory: dt must be positive");
    for (const auto& l : levels_) require_same_grid(*levels_.front().grid(), *l.grid(), "ControlTrajectory");
    norms_ = compute_norms();
  }

  static ControlTrajectory zero(const GridPtr& grid, int steps, double dt) {
    return {std::vector<VelocityField>(steps + 1, VelocityField::zero(grid)), dt};
  }

  /// psi(x, y, t) sampled at every level.
  static ControlTrajectory from_stream_function(const GridPtr& grid, int steps, double dt,
                                                const std::function<double(double, double, double)>& psi) {
    std::vector<VelocityField> lv;
    lv.reserve(steps + 1);
    for (int n = 0; n <= steps; ++n) {
      const double t = n * dt;
      lv.push_back(VelocityField::from_function(grid, [&](double x, double y) { return psi(x, y, t); }));
    }
    return {std::move(lv), dt};
  }

  [[nodiscard]] const GridPtr& grid() const { return levels_.front().grid(); }
  [[nodiscard]] int steps() const { return static_cast<int>(levels_.size()) - 1; }
  [[nodiscard]] double dt() const { return dt_; }
  [[nodiscard]] double final_time() const { return dt_ * steps(); }
  [[nodiscard]] const std::vector<VelocityField>& levels() const { return levels_; }
  [[nodiscard]] const VelocityField& at(int n) const { return levels_.at(n); }
  [[nodiscard]] const XNorm& norms() const { return norms_; }

  /// int_Q u.w with the right-endpoint rule.
  [[nodiscard]] double inner(const ControlTrajectory& w) const {
    check_compatible(w);
    double s = 0.0;
    for (int n = 1; n <= steps(); ++n) s += dt_ * levels_[n].inner(w.levels_[n]);
    return s;
  }

  ControlTrajectory& operator+=(const ControlTrajectory& o) {
    check_compatible(o);
    for (std::size_t n = 0; n < levels_.size(); ++n) levels_[n] += o.levels_[n];
    norms_ = compute_norms();
    return *this;
  }
  ControlTrajectory& operator-=(const ControlTrajectory& o) {
    check_compatible(o);
    for (std::size_t n = 0; n < levels_.size(); ++n) levels_[n] -= o.levels_[n];
    norms_ = compute_norms();
    return *this;
  }
  ControlTrajectory& operator*=(double s) {
    for (auto& l : levels_) l *= s;
    norms_.l2z *= std::abs(s);
    norms_.linf *= std::abs(s);
    norms_.h1l3 *= std::abs(s);
    norms_.combined *= std::abs(s);
    return *this;
  }
  friend ControlTrajectory operator+(ControlTrajectory a, const ControlTrajectory& b) { return a += b; }
  friend ControlTrajectory operator-(ControlTrajectory a, const ControlTrajectory& b) { return a -= b; }
  friend ControlTrajectory operator*(double s, ControlTrajectory a) { return a *= s; }

 private:
  void check_compatible(const ControlTrajectory& o) const {
    if (o.levels_.size() != levels_.size() || o.dt_ != dt_) {
      throw GridMismatch("ControlTrajectory: time levels differ");
    }
    require_same_grid(*grid(), *o.grid(), "ControlTrajectory");
  }

  [[nodiscard]] XNorm compute_norms() const {
    XNorm x;
    double l2 = 0.0;
    double l3 = 0.0;
    double dl3 = 0.0;
    for (std::size_t n = 0; n < levels_.size(); ++n) {
      x.linf = std::max(x.linf, levels_[n].magnitude().maxCoeff());
      if (n == 0) continue;
      l2 += dt_ * levels_[n].inner(levels_[n]);
      const double a = levels_[n].norm_l3();
      l3 += dt_ * a * a;
      const double d = (levels_[n] - levels_[n - 1]).norm_l3() / dt_;
      dl3 += dt_ * d * d;
    }
    x.l2z = std::sqrt(l2);
    x.h1l3 = std::sqrt(l3 + dl3);
    x.combined = std::max({x.l2z, x.linf, x.h1l3});
    return x;
  }

  std::vector<VelocityField> levels_;
  double dt_ = 1.0;
  XNorm norms_;
};

inline XNorm x_norm(const ControlTrajectory& u) { return u.norms(); }

/// |u| <= U_bar everywhere and ||u||_X <= R0.
struct AdmissibleSet {
  double U_bar = 1.0;
  double R0 = 10.0;
};

inline void validate(const AdmissibleSet& s) {
  if (!(s.U_bar > 0.0) || !(s.R0 > 0.0)) throw std::invalid_argument("admissible set: U_bar and R0 must be positive");
}

inline constexpr double kAdmissibleSlack = 1e-12;

inline bool linf_active(const ControlTrajectory& u, const AdmissibleSet& s) {
  return u.norms().linf >= s.U_bar * (1.0 - 1e-9);
}
inline bool xnorm_active(const ControlTrajectory& u, const AdmissibleSet& s) {
  return u.norms().combined >= s.R0 * (1.0 - 1e-9);
}

inline bool is_admissible(const ControlTrajectory& u, const AdmissibleSet& s) {
  return u.norms().linf <= s.U_bar * (1.0 + kAdmissibleSlack) &&
         u.norms().combined <= s.R0 * (1.0 + kAdmissibleSlack);
}

/// Scales the whole trajectory by the largest alpha in (0,1] that satisfies
/// both constraints. Scaling keeps every snapshot divergence free, which
/// pointwise clipping would not.
inline ControlTrajectory project_admissible(const ControlTrajectory& u, const AdmissibleSet& s) {
  const XNorm& x = u.norms();
  double alpha = 1.0;
  if (x.linf > s.U_bar) alpha = std::min(alpha, s.U_bar / x.linf);
  if (x.combined > s.R0) alpha = std::min(alpha, s.R0 / x.combined);
  if (alpha == 1.0) return u;
  return alpha * u;
}

/// Orthogonal projection (in the edge quadrature inner product) of an edge
/// vector field onto the span of stream-function velocities: a discrete
/// Leray projection. Parameters are the interior stream values plus one
/// constant per wall; the normal matrix is pseudo-inverted once per grid.
class LerayProjector {
 public:
  explicit LerayProjector(GridPtr grid) : grid_(std::move(grid)) {
    const Grid& g = *grid_;
    const int nx = g.nx();
    const int interior = nx * (g.ny() - 2);
    params_ = interior + 2;
    // Columns of B E: velocity of each parameter's unit stream function.
    basis_ = Eigen::MatrixXd::Zero(g.edge_count(), params_);
    for (int p = 0; p < params_; ++p) {
      const Vector psi = embed(Vector::Unit(params_, p));
      basis_.col(p) = detail::edge_velocity_from_stream(g, psi);
    }
    const Eigen::MatrixXd wb = g.edge_weights().asDiagonal() * basis_;
    Eigen::MatrixXd normal = basis_.transpose() * wb;
    normal = 0.5 * (normal + normal.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normal);
    if (es.info() != Eigen::Success) throw std::runtime_error("LerayProjector: eigensolver failed");
    const Vector& ev = es.eigenvalues();
    const double cut = 1e-11 * ev.maxCoeff();
    Vector inv = Vector::Zero(ev.size());
    for (int i = 0; i < ev.size(); ++i) {
      if (ev[i] > cut) inv[i] = 1.0 / ev[i];
    }
    // Maps W-weighted edge data to parameters.
    solve_ = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose() * wb.transpose();
  }

  [[nodiscard]] const GridPtr& grid() const { return grid_; }

  /// Stream function whose velocity is the projection of the edge field g.
  [[nodiscard]] VelocityField project(const Vector& edge_field) const {
    if (edge_field.size() != grid_->edge_count()) throw GridMismatch("LerayProjector: wrong edge vector size");
    return VelocityField::from_stream(grid_, embed(solve_ * edge_field));
  }

 private:
  [[nodiscard]] Vector embed(const Vector& theta) const {
    const Grid& g = *grid_;
    Vector psi(g.node_count());
    const int nx = g.nx();
    for (int i = 0; i < nx; ++i) {
      psi[g.index(i, 0)] = theta[params_ - 2];
      psi[g.index(i, g.ny() - 1)] = theta[params_ - 1];
    }
    for (int j = 1; j + 1 < g.ny(); ++j) {
      for (int i = 0; i < nx; ++i) psi[g.index(i, j)] = theta[(j - 1) * nx + i];
    }
    return psi;
  }

  GridPtr grid_;
  int params_ = 0;
  Eigen::MatrixXd basis_;
  Eigen::MatrixXd solve_;
};

// --- ControlTrajectory text format ---------------------------------------

inline constexpr const char* kControlSchema = "chvel.control";

inline void write_control(std::ostream& os, const ControlTrajectory& u) {
  const Grid& g = *u.grid();
  os << table_header(kControlSchema, 1, "time_index,ix,iy,psi",
                     "dt=" + format_double(u.dt()) + " steps=" + std::to_string(u.steps()) +
                         " nx=" + std::to_string(g.nx()) + " ny=" + std::to_string(g.ny()))
     << '\n';
  for (int n = 0; n <= u.steps(); ++n) {
    const Vector& psi = u.at(n).stream();
    for (int k = 0; k < g.node_count(); ++k) {
      os << n << ',' << g.ix(k) << ',' << g.iy(k) << ',' << format_double(psi[k]) << '\n';
    }
  }
}

inline ControlTrajectory read_control(std::istream& is, const GridPtr& grid) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# chvel.control", 0) != 0) throw FormatError("control: missing header");
  const Grid& g = *grid;
  if (header_value(line, "nx") != std::to_string(g.nx()) || header_value(line, "ny") != std::to_string(g.ny())) {
    throw GridMismatch("control: grid dimensions in header do not match");
  }
  const double dt = parse_double(header_value(line, "dt"));
  const long steps = parse_long(header_value(line, "steps"));
  if (steps < 0) throw FormatError("control: negative step count");
  std::vector<Vector> psi(steps + 1, Vector::Constant(g.node_count(), std::numeric_limits<double>::quiet_NaN()));
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cols = split(line);
    if (cols.size() != 4) throw FormatError("control: expected 4 columns in '" + line + "'");
    const long n = parse_long(cols[0]);
    const long i = parse_long(cols[1]);
    const long j = parse_long(cols[2]);
    if (n < 0 || n > steps || i < 0 || i >= g.nx() || j < 0 || j >= g.ny()) {
      throw FormatError("control: index out of range in '" + line + "'");
    }
    psi[n][g.index(static_cast<int>(i), static_cast<int>(j))] = parse_double(cols[3]);
  }
  std::vector<VelocityField> lv;
  lv.reserve(psi.size());
  for (auto& p : psi) {
    if (!p.allFinite()) throw FormatError("control: missing rows");
    lv.push_back(VelocityField::from_stream(grid, std::move(p)));
  }
  return {std::move(lv), dt};
}

}  // namespace chvel
