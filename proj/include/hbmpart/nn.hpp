#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hbmpart {

// Adam over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void step(std::span<double> params, std::span<const double> grads, double lr);
  std::int64_t steps() const { return t_; }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<double> m_, v_;
};

// View of one dense layer inside a flat parameter vector: `out x in`
// row-major weights followed by `out` biases.
struct DenseView {
  int in = 0;
  int out = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(out) * (in + 1); }
  // y = W x + b
  void forward(const double* params, const double* x, double* y) const;
  // Accumulates dW, db into `grads` and writes dx (if non-null) given dy.
  void backward(const double* params, const double* x, const double* dy,
                double* grads, double* dx) const;
  // Uniform(-scale/sqrt(in), scale/sqrt(in)) weights, zero biases.
  void init(double* params, double scale, std::mt19937_64& rng) const;
};

// Text checkpoint: a header line, then one "layer <name> <out> <in>" line
// per layer followed by its row-major weights and biases, %.17g each.
void write_layers(std::ostream& os, const std::string& header,
                  const std::vector<std::pair<std::string, DenseView>>& layers,
                  const std::vector<double>& params);
void read_layers(std::istream& is, const std::string& header,
                 const std::vector<std::pair<std::string, DenseView>>& layers,
                 std::vector<double>& params);

}  // namespace hbmpart
