#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pbo/format.hpp"
#include "pbo/policy.hpp"

namespace pbo {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Scalar = double>
struct Material {
  std::string name;
  Scalar n = Scalar(1);  // dispersion-free refractive index, n >= 1
};

template <typename Scalar = double>
std::vector<Material<Scalar>> default_materials() {
  return {{"TiO2", Scalar(2.4)}, {"MgF2", Scalar(1.38)}};
}

// Layers are listed from the light-incidence side; zero-thickness layers are
// collapsed out at evaluation time.
template <typename Scalar = double>
struct StackDesign {
  std::vector<std::pair<int, Scalar>> layers;  // (material index, thickness in nm)
  std::vector<Material<Scalar>> materials = default_materials<Scalar>();
  Scalar ambient = Scalar(1);
  Scalar substrate = Scalar(1.52);
};

template <typename Scalar = double>
struct SpectrumGrid {
  Scalar lambda_min = Scalar(300);
  Scalar lambda_max = Scalar(500);
  int samples = 101;  // uniform, endpoints inclusive

  void validate() const {
    if (!(lambda_min < lambda_max))
      throw std::invalid_argument("spectrum grid: need lambda_min < lambda_max");
    if (samples < 2) throw std::invalid_argument("spectrum grid: need at least two samples");
  }

  Scalar lambda(int i) const {
    return lambda_min + (lambda_max - lambda_min) * Scalar(i) / Scalar(samples - 1);
  }
};

template <typename Scalar = double>
using TransferMatrix = Eigen::Matrix<std::complex<Scalar>, 2, 2>;

// Characteristic matrix of one lossless dielectric layer at normal incidence:
// [[cos d, i sin d / n], [i n sin d, cos d]] with phase thickness
// d = 2 pi n t / lambda and admittance equal to the index.
template <typename Scalar>
TransferMatrix<Scalar> layer_matrix(Scalar n, Scalar t_nm, Scalar lambda_nm) {
  if (!(lambda_nm > Scalar(0))) throw std::domain_error("layer_matrix: wavelength must be positive");
  const Scalar delta = Scalar(kTwoPi) * n * t_nm / lambda_nm;
  const Scalar c = std::cos(delta);
  const Scalar s = std::sin(delta);
  TransferMatrix<Scalar> m;
  m << std::complex<Scalar>(c, 0), std::complex<Scalar>(0, s / n),
       std::complex<Scalar>(0, n * s), std::complex<Scalar>(c, 0);
  return m;
}

template <typename Scalar>
const Material<Scalar>& layer_material(const StackDesign<Scalar>& stack, int index) {
  if (index < 0 || index >= static_cast<int>(stack.materials.size()))
    throw std::invalid_argument("stack: material index " + std::to_string(index) +
                                " out of range");
  return stack.materials[index];
}

// Product of all layer matrices in incidence order.
template <typename Scalar>
TransferMatrix<Scalar> stack_matrix(const StackDesign<Scalar>& stack, Scalar lambda_nm) {
  TransferMatrix<Scalar> m = TransferMatrix<Scalar>::Identity();
  for (const auto& [index, thickness] : stack.layers) {
    if (thickness <= Scalar(0)) continue;
    m = m * layer_matrix(layer_material(stack, index).n, thickness, lambda_nm);
  }
  return m;
}

template <typename Scalar = double>
struct Response {
  Scalar rho;  // reflectance
  Scalar tau;  // transmittance
};

// (B, C)^T = (product of layer matrices)(1, n_substrate)^T, folded from the
// substrate side so only matrix-vector products are needed;
// r = (n0 B - C) / (n0 B + C), rho = |r|^2, tau = 4 n0 ns / |n0 B + C|^2.
template <typename Scalar>
Response<Scalar> stack_response(const StackDesign<Scalar>& stack, Scalar lambda_nm) {
  Eigen::Matrix<std::complex<Scalar>, 2, 1> v;
  v << std::complex<Scalar>(1, 0), std::complex<Scalar>(stack.substrate, 0);
  for (auto it = stack.layers.rbegin(); it != stack.layers.rend(); ++it) {
    if (it->second <= Scalar(0)) continue;
    v = layer_matrix(layer_material(stack, it->first).n, it->second, lambda_nm) * v;
  }
  const std::complex<Scalar> incoming = stack.ambient * v(0) + v(1);
  const std::complex<Scalar> r = (stack.ambient * v(0) - v(1)) / incoming;
  return {std::norm(r), Scalar(4) * stack.ambient * stack.substrate / std::norm(incoming)};
}

template <typename Scalar>
VectorX<Scalar> reflectance_spectrum(const StackDesign<Scalar>& stack,
                                     const SpectrumGrid<Scalar>& grid) {
  grid.validate();
  VectorX<Scalar> rho(grid.samples);
  for (int i = 0; i < grid.samples; ++i) rho(i) = stack_response(stack, grid.lambda(i)).rho;
  return rho;
}

template <typename Scalar>
Scalar mean_reflectance(const StackDesign<Scalar>& stack, const SpectrumGrid<Scalar>& grid) {
  return reflectance_spectrum(stack, grid).mean();
}

// The dielectric mirror design problem: one material choice and one thickness
// per layer, scored over a fixed wavelength band.
template <typename Scalar = double>
struct MirrorProblem {
  int n_l = 20;
  Scalar thickness_min = Scalar(50);
  Scalar thickness_max = Scalar(150);
  std::vector<Material<Scalar>> materials = default_materials<Scalar>();
  Scalar ambient = Scalar(1);
  Scalar substrate = Scalar(1.52);
  SpectrumGrid<Scalar> grid;
  Scalar alpha = Scalar(0.1);  // spectral-range penalty weight (flat variant)

  void validate() const {
    if (n_l < 1) throw std::invalid_argument("mirror problem: need at least one layer");
    if (!(thickness_min < thickness_max))
      throw std::invalid_argument("mirror problem: need thickness_min < thickness_max");
    if (materials.size() < 2)
      throw std::invalid_argument("mirror problem: need at least two materials");
    for (const auto& m : materials)
      if (!(m.n >= Scalar(1)))
        throw std::invalid_argument("mirror problem: refractive indices must be >= 1");
    if (!(alpha >= Scalar(0))) throw std::invalid_argument("mirror problem: alpha must be >= 0");
    grid.validate();
  }

  MixedSearchSpace<Scalar> space() const {
    MixedSearchSpace<Scalar> s;
    s.n_c = n_l;
    s.bounds.assign(n_l, {thickness_min, thickness_max});
    s.categories.assign(n_l, static_cast<int>(materials.size()));
    return s;
  }
};

template <typename Scalar>
StackDesign<Scalar> assemble_stack(const VectorX<Scalar>& thicknesses,
                                   const Eigen::VectorXi& material_choices,
                                   const MirrorProblem<Scalar>& problem) {
  if (thicknesses.size() != problem.n_l || material_choices.size() != problem.n_l)
    throw std::invalid_argument("assemble_stack: layer count mismatch");
  StackDesign<Scalar> stack;
  stack.materials = problem.materials;
  stack.ambient = problem.ambient;
  stack.substrate = problem.substrate;
  stack.layers.reserve(problem.n_l);
  for (int j = 0; j < problem.n_l; ++j)
    stack.layers.emplace_back(material_choices(j), thicknesses(j));
  return stack;
}

template <typename Scalar>
StackDesign<Scalar> decode_design(const MixedAction<Scalar>& action,
                                  const MirrorProblem<Scalar>& problem) {
  if (action.a_c.size() != problem.n_l || action.a_d.size() != problem.n_l)
    throw std::invalid_argument("decode_design: action does not match the layer count");
  return assemble_stack(map_to_physical(action.a_c, problem.space()), action.a_d, problem);
}

// c(x) = -<rho>_lambda: maximize the average reflectance.
template <typename Scalar>
Scalar cost_max(const VectorX<Scalar>& thicknesses, const Eigen::VectorXi& material_choices,
                const MirrorProblem<Scalar>& problem) {
  return -mean_reflectance(assemble_stack(thicknesses, material_choices, problem), problem.grid);
}

// c(x) = -<rho> + alpha (max rho - min rho): trade average level for flatness.
template <typename Scalar>
Scalar cost_flat(const VectorX<Scalar>& thicknesses, const Eigen::VectorXi& material_choices,
                 const MirrorProblem<Scalar>& problem) {
  const VectorX<Scalar> rho = reflectance_spectrum(
      assemble_stack(thicknesses, material_choices, problem), problem.grid);
  return -rho.mean() + problem.alpha * (rho.maxCoeff() - rho.minCoeff());
}

// Stack file format: `#` comments, `ambient <n>` / `substrate <n>` headers,
// optional `material <name> <n>` lines overriding the built-in table, then one
// `<material-name> <thickness-nm>` line per layer in incidence order.
template <typename Scalar = double>
StackDesign<Scalar> read_stack(std::istream& in, const std::string& label = "stack") {
  StackDesign<Scalar> stack;
  bool custom_materials = false;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string head;
    if (!(fields >> head)) continue;
    const std::string where = label + ":" + std::to_string(line_number);

    auto number_field = [&](const char* what) {
      std::string text;
      if (!(fields >> text))
        throw ParseError(where + ": missing " + std::string(what));
      try {
        return Scalar(parse_number(text));
      } catch (const std::invalid_argument&) {
        throw ParseError(where + ": bad " + std::string(what) + " '" + text + "'");
      }
    };

    if (head == "ambient") {
      stack.ambient = number_field("ambient index");
    } else if (head == "substrate") {
      stack.substrate = number_field("substrate index");
    } else if (head == "material") {
      std::string name;
      if (!(fields >> name)) throw ParseError(where + ": missing material name");
      if (!custom_materials) {
        stack.materials.clear();
        custom_materials = true;
      }
      stack.materials.push_back({name, number_field("refractive index")});
    } else {
      int index = -1;
      for (std::size_t i = 0; i < stack.materials.size(); ++i)
        if (stack.materials[i].name == head) index = static_cast<int>(i);
      if (index < 0) throw ParseError(where + ": unknown material '" + head + "'");
      const Scalar thickness = number_field("thickness");
      if (thickness < Scalar(0)) throw ParseError(where + ": negative thickness");
      stack.layers.emplace_back(index, thickness);
    }
    std::string extra;
    if (fields >> extra)
      throw ParseError(where + ": unexpected trailing field '" + extra + "'");
  }
  return stack;
}

template <typename Scalar = double>
StackDesign<Scalar> read_stack_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open stack file '" + path + "'");
  return read_stack<Scalar>(in, path);
}

template <typename Scalar>
void write_stack(std::ostream& out, const StackDesign<Scalar>& stack) {
  out << "# multilayer stack, light enters at the first layer\n";
  out << "ambient " << format_number(double(stack.ambient)) << "\n";
  out << "substrate " << format_number(double(stack.substrate)) << "\n";
  const auto defaults = default_materials<Scalar>();
  bool standard = stack.materials.size() == defaults.size();
  for (std::size_t i = 0; standard && i < defaults.size(); ++i)
    standard = stack.materials[i].name == defaults[i].name &&
               stack.materials[i].n == defaults[i].n;
  if (!standard)
    for (const auto& m : stack.materials)
      out << "material " << m.name << " " << format_number(double(m.n)) << "\n";
  for (const auto& [index, thickness] : stack.layers)
    out << layer_material(stack, index).name << " " << format_number(double(thickness)) << "\n";
}

template <typename Scalar>
void write_stack_file(const std::string& path, const StackDesign<Scalar>& stack) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write stack file '" + path + "'");
  write_stack(out, stack);
}

}  // namespace pbo
