#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace chvel {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Geometry of the periodic channel: x is periodic with period length_x,
/// walls sit at y = 0 and y = height_y.
struct GridSpec {
  int nx = 16;
  int ny = 16;
  double length_x = 1.0;
  double height_y = 1.0;
};

class GridMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Edge of the nodal grid. x-edges join (i,j)-(i+1,j) (periodic), y-edges
/// join (i,j)-(i,j+1). Velocity components and discrete gradients live here.
struct Edge {
  int a;          // first node
  int b;          // second node
  double length;  // hx or hy
  double weight;  // quadrature weight of the edge for integrals over the bulk
  bool horizontal;
};

/// Discrete coupled bulk-surface space on a uniform nodal grid.
///
/// Unknowns are the nx*ny nodal values. The 2*nx surface values are the
/// wall rows of the same storage, so trace compatibility holds by
/// construction. Bulk quadrature is trapezoidal in y and the rectangle rule
/// in x; surface quadrature is the rectangle rule along each wall.
class Grid {
 public:
  explicit Grid(const GridSpec& spec) : spec_(spec) {
    if (spec.nx < 4 || spec.ny < 4) {
      throw std::invalid_argument("grid: nx and ny must be at least 4 (got nx=" +
                                  std::to_string(spec.nx) + ", ny=" + std::to_string(spec.ny) + ")");
    }
    if (!(spec.length_x > 0.0) || !(spec.height_y > 0.0)) {
      throw std::invalid_argument("grid: length_x and height_y must be positive");
    }
    nx_ = spec.nx;
    ny_ = spec.ny;
    hx_ = spec.length_x / nx_;
    hy_ = spec.height_y / (ny_ - 1);
    const int n = nx_ * ny_;

    bulk_w_ = Vector::Zero(n);
    surf_w_ = Vector::Zero(n);
    node_to_surface_.assign(n, -1);
    surface_to_node_.resize(2 * nx_);
    for (int j = 0; j < ny_; ++j) {
      const bool wall = is_wall_row(j);
      for (int i = 0; i < nx_; ++i) {
        const int k = index(i, j);
        bulk_w_[k] = hx_ * hy_ * (wall ? 0.5 : 1.0);
        if (wall) {
          surf_w_[k] = hx_;
          const int s = (j == 0 ? 0 : nx_) + i;
          surface_to_node_[s] = k;
          node_to_surface_[k] = s;
        }
      }
    }
    mass_ = bulk_w_ + surf_w_;

    // x-edges first (row by row), then y-edges.
    edges_.reserve(2 * n);
    for (int j = 0; j < ny_; ++j) {
      const double omega = hy_ * (is_wall_row(j) ? 0.5 : 1.0);
      for (int i = 0; i < nx_; ++i) {
        edges_.push_back({index(i, j), index((i + 1) % nx_, j), hx_, omega * hx_, true});
      }
    }
    for (int j = 0; j + 1 < ny_; ++j) {
      for (int i = 0; i < nx_; ++i) {
        edges_.push_back({index(i, j), index(i, j + 1), hy_, hx_ * hy_, false});
      }
    }

    std::vector<Triplet> grad, avg;
    grad.reserve(2 * edges_.size());
    avg.reserve(2 * edges_.size());
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      const Edge& ed = edges_[e];
      grad.emplace_back(static_cast<int>(e), ed.b, 1.0 / ed.length);
      grad.emplace_back(static_cast<int>(e), ed.a, -1.0 / ed.length);
      avg.emplace_back(static_cast<int>(e), ed.a, 0.5);
      avg.emplace_back(static_cast<int>(e), ed.b, 0.5);
    }
    gradient_.resize(static_cast<int>(edges_.size()), n);
    gradient_.setFromTriplets(grad.begin(), grad.end());
    average_.resize(static_cast<int>(edges_.size()), n);
    average_.setFromTriplets(avg.begin(), avg.end());

    // Bulk Dirichlet form uses the edge weights; wall x-edges additionally
    // carry the Laplace-Beltrami form with weight hx.
    Vector stiff_w(edges_.size());
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      stiff_w[e] = edges_[e].weight;
      if (edges_[e].horizontal && node_to_surface_[edges_[e].a] >= 0) stiff_w[e] += hx_;
    }
    stiffness_ = SparseMatrix(gradient_.transpose() * stiff_w.asDiagonal() * gradient_);
    stiffness_.makeCompressed();

    edge_w_.resize(edges_.size());
    for (std::size_t e = 0; e < edges_.size(); ++e) edge_w_[e] = edges_[e].weight;
  }

  [[nodiscard]] const GridSpec& spec() const { return spec_; }
  [[nodiscard]] int nx() const { return nx_; }
  [[nodiscard]] int ny() const { return ny_; }
  [[nodiscard]] double hx() const { return hx_; }
  [[nodiscard]] double hy() const { return hy_; }
  [[nodiscard]] int node_count() const { return nx_ * ny_; }
  [[nodiscard]] int surface_count() const { return 2 * nx_; }
  [[nodiscard]] int index(int i, int j) const { return j * nx_ + i; }
  [[nodiscard]] int ix(int k) const { return k % nx_; }
  [[nodiscard]] int iy(int k) const { return k / nx_; }
  [[nodiscard]] double x(int i) const { return i * hx_; }
  [[nodiscard]] double y(int j) const { return j * hy_; }
  [[nodiscard]] bool is_wall_row(int j) const { return j == 0 || j == ny_ - 1; }
  [[nodiscard]] bool is_wall_node(int k) const { return node_to_surface_[k] >= 0; }

  /// Surface index s in [0, 2nx): bottom wall first, then top wall.
  [[nodiscard]] int surface_to_node(int s) const { return surface_to_node_[s]; }
  [[nodiscard]] int node_to_surface(int k) const { return node_to_surface_[k]; }

  [[nodiscard]] const Vector& bulk_weights() const { return bulk_w_; }
  /// Surface weights expanded to node storage (zero off the walls).
  [[nodiscard]] const Vector& surface_weights() const { return surf_w_; }
  /// Lumped H mass: bulk + surface weights.
  [[nodiscard]] const Vector& mass() const { return mass_; }
  [[nodiscard]] double bulk_measure() const { return spec_.length_x * spec_.height_y; }
  [[nodiscard]] double surface_measure() const { return 2.0 * spec_.length_x; }

  /// Assembled matrix of the bilinear form int grad w.grad v + int_G grad_G w.grad_G v.
  [[nodiscard]] const SparseMatrix& stiffness() const { return stiffness_; }

  [[nodiscard]] const std::vector<Edge>& edges() const { return edges_; }
  [[nodiscard]] int edge_count() const { return static_cast<int>(edges_.size()); }
  [[nodiscard]] int x_edge_count() const { return nx_ * ny_; }
  [[nodiscard]] const Vector& edge_weights() const { return edge_w_; }
  /// Edge difference quotient (v_b - v_a)/h_e.
  [[nodiscard]] const SparseMatrix& gradient() const { return gradient_; }
  /// Edge midpoint average (v_a + v_b)/2.
  [[nodiscard]] const SparseMatrix& average() const { return average_; }

  [[nodiscard]] double inner_H(const Vector& a, const Vector& b) const {
    return a.cwiseProduct(mass_).dot(b);
  }
  [[nodiscard]] double norm_H(const Vector& a) const { return std::sqrt(inner_H(a, a)); }
  /// Energy-form value <A w, v>.
  [[nodiscard]] double form_A(const Vector& w, const Vector& v) const { return v.dot(stiffness_ * w); }
  /// V norm squared: |v|_H^2 + <A v, v>.
  [[nodiscard]] double norm_V(const Vector& v) const {
    return std::sqrt(inner_H(v, v) + form_A(v, v));
  }

  [[nodiscard]] bool same_shape(const Grid& other) const {
    return nx_ == other.nx_ && ny_ == other.ny_ && spec_.length_x == other.spec_.length_x &&
           spec_.height_y == other.spec_.height_y;
  }

 private:
  GridSpec spec_;
  int nx_ = 0;
  int ny_ = 0;
  double hx_ = 0.0;
  double hy_ = 0.0;
  Vector bulk_w_, surf_w_, mass_, edge_w_;
  std::vector<int> node_to_surface_;
  std::vector<int> surface_to_node_;
  std::vector<Edge> edges_;
  SparseMatrix gradient_, average_, stiffness_;
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr build_grid(const GridSpec& spec) { return std::make_shared<const Grid>(spec); }

inline void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (&a != &b && !a.same_shape(b)) throw GridMismatch(std::string(what) + ": grid mismatch");
}

/// A pair (v, v_Gamma) with v_Gamma = v on the walls. Stored as nodal values;
/// the surface part is the wall rows of the same storage.
class CoupledField {
 public:
  CoupledField() = default;
  CoupledField(GridPtr grid, Vector values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (!grid_) throw std::invalid_argument("CoupledField: null grid");
    if (values_.size() != grid_->node_count()) {
      throw GridMismatch("CoupledField: expected " + std::to_string(grid_->node_count()) +
                         " values, got " + std::to_string(values_.size()));
    }
    if (!values_.allFinite()) throw std::domain_error("CoupledField: non-finite value");
  }

  static CoupledField zero(GridPtr grid) {
    const int n = grid->node_count();
    return {std::move(grid), Vector::Zero(n)};
  }
  static CoupledField constant(GridPtr grid, double c) {
    const int n = grid->node_count();
    return {std::move(grid), Vector::Constant(n, c)};
  }
  static CoupledField from_function(GridPtr grid, const std::function<double(double, double)>& f) {
    Vector v(grid->node_count());
    for (int k = 0; k < grid->node_count(); ++k) v[k] = f(grid->x(grid->ix(k)), grid->y(grid->iy(k)));
    return {std::move(grid), std::move(v)};
  }

  [[nodiscard]] const GridPtr& grid() const { return grid_; }
  [[nodiscard]] const Vector& bulk() const { return values_; }
  [[nodiscard]] Vector surface() const {
    Vector s(grid_->surface_count());
    for (int i = 0; i < s.size(); ++i) s[i] = values_[grid_->surface_to_node(i)];
    return s;
  }
  [[nodiscard]] double at(int i, int j) const { return values_[grid_->index(i, j)]; }
  [[nodiscard]] double min() const { return values_.minCoeff(); }
  [[nodiscard]] double max() const { return values_.maxCoeff(); }

  CoupledField& operator+=(const CoupledField& o) {
    require_same_grid(*grid_, *o.grid_, "CoupledField +=");
    values_ += o.values_;
    return *this;
  }
  CoupledField& operator-=(const CoupledField& o) {
    require_same_grid(*grid_, *o.grid_, "CoupledField -=");
    values_ -= o.values_;
    return *this;
  }
  CoupledField& operator*=(double s) {
    values_ *= s;
    return *this;
  }
  friend CoupledField operator+(CoupledField a, const CoupledField& b) { return a += b; }
  friend CoupledField operator-(CoupledField a, const CoupledField& b) { return a -= b; }
  friend CoupledField operator*(double s, CoupledField a) { return a *= s; }

 private:
  GridPtr grid_;
  Vector values_;
};

/// int_Omega a b + int_Gamma a_G b_G
inline double inner_H(const CoupledField& a, const CoupledField& b) {
  require_same_grid(*a.grid(), *b.grid(), "inner_H");
  return a.grid()->inner_H(a.bulk(), b.bulk());
}

inline double norm_H(const CoupledField& a) { return std::sqrt(inner_H(a, a)); }

/// (int_Omega v + int_Gamma v_G) / (|Omega| + |Gamma|)
inline double mean(const CoupledField& v) {
  const Grid& g = *v.grid();
  return g.mass().dot(v.bulk()) / (g.bulk_measure() + g.surface_measure());
}

/// Riesz representative in H of the coupled Laplacian form: M^{-1} K w.
inline CoupledField apply_A(const CoupledField& w) {
  const Grid& g = *w.grid();
  Vector r = (g.stiffness() * w.bulk()).cwiseQuotient(g.mass());
  return {w.grid(), std::move(r)};
}

}  // namespace chvel
