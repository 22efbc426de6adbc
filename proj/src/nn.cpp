#include "hbmpart/nn.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hbmpart {

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads,
                double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("adam: size mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m_[i] = beta1_ * m_[i] + (1 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1 - beta2_) * g * g;
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

void DenseView::forward(const double* p, const double* x, double* y) const {
  const double* w = p + offset;
  const double* b = w + static_cast<std::size_t>(out) * in;
  for (int o = 0; o < out; ++o) {
    double acc = b[o];
    const double* row = w + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

void DenseView::backward(const double* p, const double* x, const double* dy,
                         double* g, double* dx) const {
  const double* w = p + offset;
  double* gw = g + offset;
  double* gb = gw + static_cast<std::size_t>(out) * in;
  if (dx) {
    for (int i = 0; i < in; ++i) dx[i] = 0.0;
  }
  for (int o = 0; o < out; ++o) {
    const double d = dy[o];
    if (d == 0.0) continue;
    gb[o] += d;
    const double* row = w + static_cast<std::size_t>(o) * in;
    double* grow = gw + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) {
      grow[i] += d * x[i];
      if (dx) dx[i] += d * row[i];
    }
  }
}

void DenseView::init(double* p, double scale, std::mt19937_64& rng) const {
  const double bound = scale / std::sqrt(static_cast<double>(in));
  double* w = p + offset;
  for (std::size_t i = 0; i < static_cast<std::size_t>(out) * in; ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    w[i] = (2.0 * u - 1.0) * bound;
  }
  for (int o = 0; o < out; ++o) w[static_cast<std::size_t>(out) * in + o] = 0.0;
}

void write_layers(std::ostream& os, const std::string& header,
                  const std::vector<std::pair<std::string, DenseView>>& layers,
                  const std::vector<double>& params) {
  os << header << '\n';
  char buf[40];
  for (const auto& [name, l] : layers) {
    os << "layer " << name << ' ' << l.out << ' ' << l.in << '\n';
    for (std::size_t i = 0; i < l.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", params[l.offset + i]);
      os << buf << ((i + 1) % l.in == 0 || i + 1 == l.size() ? '\n' : ' ');
    }
  }
}

void read_layers(std::istream& is, const std::string& header,
                 const std::vector<std::pair<std::string, DenseView>>& layers,
                 std::vector<double>& params) {
  std::string line;
  if (!std::getline(is, line) || line != header) {
    throw std::runtime_error("checkpoint: expected header '" + header + "'");
  }
  for (const auto& [name, l] : layers) {
    std::string tag, got_name;
    int out = 0, in = 0;
    if (!(is >> tag >> got_name >> out >> in) || tag != "layer" ||
        got_name != name || out != l.out || in != l.in) {
      throw std::runtime_error("checkpoint: layer '" + name + "' shape mismatch");
    }
    for (std::size_t i = 0; i < l.size(); ++i) {
      if (!(is >> params[l.offset + i])) {
        throw std::runtime_error("checkpoint: truncated weights in '" + name + "'");
      }
    }
  }
}

}  // namespace hbmpart
