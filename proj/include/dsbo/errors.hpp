#pragma once

#include <stdexcept>
#include <string>

namespace dsbo {

// Bad argument passed to a builder or operation (sizes, probabilities, dims).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A randomized construction gave up after its retry budget.
class ConstructionFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class PartitionError : public std::runtime_error {
 public:
  PartitionError(int worker, const std::string& what)
      : std::runtime_error("worker " + std::to_string(worker) + ": " + what), worker_(worker) {}

  int worker() const { return worker_; }

 private:
  int worker_;
};

// Raised by the optimizer when a state coordinate becomes NaN or infinite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long iteration, int worker, const std::string& variable)
      : std::runtime_error("non-finite " + variable + " at iteration " + std::to_string(iteration) +
                           " on worker " + std::to_string(worker)),
        iteration_(iteration),
        worker_(worker) {}

  long iteration() const { return iteration_; }
  int worker() const { return worker_; }

 private:
  long iteration_;
  int worker_;
};

}  // namespace dsbo
