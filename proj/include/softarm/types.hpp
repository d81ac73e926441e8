#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace softarm {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// Base of every error the library throws. The CLI maps the subclasses to
// exit codes, so keep the hierarchy flat and meaningful.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent user input (files, configs, parameters).
class InputError : public Error {
 public:
  using Error::Error;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& what, int line)
      : InputError("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class GenerationError : public InputError {
 public:
  using InputError::InputError;
};

class EmbeddingError : public InputError {
 public:
  EmbeddingError(const std::string& what, int point)
      : InputError("point " + std::to_string(point) + ": " + what), point_(point) {}
  int point() const { return point_; }

 private:
  int point_;
};

// Numerical failure inside a solver: singular systems, stale factorizations,
// failed convergence.
class SolverError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public SolverError {
 public:
  ConvergenceError(const std::string& what, double residual)
      : SolverError(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

}  // namespace softarm
