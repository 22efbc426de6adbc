#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "hbmpart/hbm.hpp"
#include "hbmpart/nn.hpp"

namespace hbmpart {

// What a node measured over one decision epoch.
struct EpochObservation {
  std::int64_t n_requests = 0;  // completed + dropped
  double hot_ratio = 0;
  double kv_hit = 0;
  double emb_hit = 0;
  double mean_seq_len = 0;  // tokens
  double qos = 1;           // fraction within the SLO
  double p99 = 0;           // seconds
};

// Feature order: hot ratio, KV hit, EMB hit, mean sequence length, SLO
// violation rate, current alpha, P99. All in [0, 1].
using StateVector = std::array<double, 7>;

struct ObserveConfig {
  double tau_slo = 0.030;
  double seq_len_max = 20480;
  double p99_max = 0.090;  // 3 * tau_slo by default
};

// Normalizes one epoch. An empty epoch repeats `prev` with alpha refreshed.
StateVector observe(const EpochObservation& obs, const StateVector& prev,
                    double alpha, const ObserveConfig& cfg);

// QoS minus (1/tau) * max(0, p99 - tau); an empty epoch scores 1.
double reward(double qos, double p99, std::int64_t n_requests, double tau_slo);
double reward(const EpochObservation& obs, double tau_slo);

inline constexpr std::array<double, 7> kActions = {-0.06, -0.04, -0.02, 0.0,
                                                   0.02,  0.04,  0.06};
inline constexpr double kMaxStep = 0.06;

// Advantages before normalization. `values` carries one bootstrap value
// past the last reward.
std::vector<double> gae(const std::vector<double>& rewards,
                        const std::vector<double>& values, double gamma,
                        double lambda);
// Zero mean, unit variance; leaves the input centered only when the spread
// is below 1e-8.
void normalize_advantages(std::vector<double>& adv);

struct PpoConfig {
  double lr = 3e-4;
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_eps = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  int update_epochs = 4;
  int minibatch = 64;
};

struct PpoAct {
  int action = 0;
  double log_prob = 0;
  double value = 0;
};

struct Transition {
  StateVector state{};
  int action = 0;
  double log_prob = 0;
  double value = 0;
  double advantage = 0;
  double ret = 0;
};

struct PpoStats {
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double clip_fraction = 0;
};

// Shared-backbone actor-critic: 7 -> 64 -> 128 (tanh), actor head 7 logits,
// critic head 1 value.
class PpoPolicy {
 public:
  explicit PpoPolicy(std::uint64_t seed = 1);

  static constexpr int kHidden1 = 64;
  static constexpr int kHidden2 = 128;
  static constexpr const char* kFormat = "hbmpart-policy v1";

  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& mutable_params() { return params_; }

  void logits_value(const StateVector& s, std::array<double, 7>& logits,
                    double& value) const;
  PpoAct act_greedy(const StateVector& s) const;
  PpoAct act_sample(const StateVector& s, std::mt19937_64& rng) const;

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  // Clipped-surrogate update over `batch`; advantages are normalized here.
  PpoStats update(std::vector<Transition> batch, const PpoConfig& cfg,
                  std::mt19937_64& rng);

  void save(std::ostream& os) const;
  static PpoPolicy load(std::istream& is);
  void save_file(const std::string& path) const;
  static PpoPolicy load_file(const std::string& path);

 private:
  std::vector<std::pair<std::string, DenseView>> layers() const;

  DenseView l1_, l2_, actor_, critic_;
  std::vector<double> params_;
  Adam adam_;
  bool frozen_ = false;
};

// Residual corrector 5 -> 16 -> 1 with a zero-initialized output layer.
class OnlineAdapter {
 public:
  static constexpr int kInputs = 5;
  static constexpr int kHidden = 16;
  static constexpr std::size_t kBufferCap = 1000;
  static constexpr double kClamp = 0.06;

  explicit OnlineAdapter(std::uint64_t seed = 1, int batch = 16);

  using Features = std::array<double, kInputs>;
  static Features features(const StateVector& s);

  double raw(const Features& x) const;
  // Clamped to [-kClamp, kClamp].
  double correct(const Features& x) const;

  struct Record {
    Features x;
    double target;
  };
  // Appends the record, then takes one Adam step at rate `eta` on a
  // minibatch holding the new record plus samples from the buffer. A zero
  // rate leaves the parameters untouched.
  void update(const Record& r, double eta);

  std::size_t buffer_size() const { return buffer_.size(); }
  const std::deque<Record>& buffer() const { return buffer_; }
  const std::vector<double>& params() const { return params_; }

 private:
  DenseView l1_, l2_;
  std::vector<double> params_;
  Adam adam_;
  std::deque<Record> buffer_;
  std::mt19937_64 rng_;
  int batch_ = 16;
};

// eta_0 * |l - l_ema| / tau.
double adapter_rate(double eta0, double ell, double ell_ema, double tau_slo);

// Mean and standard deviation of P99 over the most recent `window` epochs.
class EmaTracker {
 public:
  explicit EmaTracker(int window = 10) : window_(window) {}

  void push(double ell);
  bool full() const { return static_cast<int>(hist_.size()) >= window_; }
  bool empty() const { return hist_.empty(); }
  std::size_t size() const { return hist_.size(); }
  double mean() const;
  double stddev() const;

 private:
  int window_;
  std::deque<double> hist_;
};

// Least-squares slope of score against alpha; 0 with fewer than three
// points or no spread in alpha.
double probe_slope(const std::deque<std::pair<double, double>>& pts);

enum class Override { None, StepDown, Hold };

// Fires when ell > mean + 3 sigma over a full window. With the hot ratio
// above `rho_star` the override steps alpha toward the KV side, otherwise
// it holds alpha.
Override recovery_check(const EmaTracker& ema, double ell, double hot_ratio,
                        double rho_star = 0.2);

struct DecisionTrace {
  double alpha_before = 0;
  double alpha_after = 0;
  int ppo_action = -1;
  double ppo_delta = 0;
  double adapt_delta = 0;
  Override override_kind = Override::None;
  double reward = 0;
  double eta = 0;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual double decide(const EpochObservation& obs, double alpha) = 0;
  virtual std::unique_ptr<Controller> clone() const = 0;
  const DecisionTrace& last() const { return trace_; }

 protected:
  DecisionTrace trace_;
};

class StaticController final : public Controller {
 public:
  explicit StaticController(double alpha);
  std::string name() const override { return "static"; }
  double decide(const EpochObservation& obs, double alpha) override;
  std::unique_ptr<Controller> clone() const override {
    return std::make_unique<StaticController>(*this);
  }

 private:
  double alpha_;
};

struct PidConfig {
  double kp = 0.10;
  double ki = 0.10;
  double kd = 0.0;
  double alpha0 = 0.5;
  double tau_slo = 0.030;
};

// alpha = clip(alpha0 - (Kp e + Ki sum e + Kd de)) with e = (p99 - tau)/tau;
// the integral stops accumulating while the output is saturated in the
// direction the error pushes.
class PidController final : public Controller {
 public:
  explicit PidController(const PidConfig& cfg);
  std::string name() const override { return "pid"; }
  double decide(const EpochObservation& obs, double alpha) override;
  std::unique_ptr<Controller> clone() const override {
    return std::make_unique<PidController>(*this);
  }
  double integral() const { return integral_; }

 private:
  PidConfig cfg_;
  double integral_ = 0;
  double prev_error_ = 0;
  bool has_prev_ = false;
};

struct SmartConfig {
  ObserveConfig observe;
  bool adapter_enabled = true;
  bool recovery_enabled = true;
  double eta0 = 1e-3;
  double target_step = 0.01;
  // Epochs in the local reward-vs-alpha fit behind the adapter target.
  int probe_window = 6;
  int ema_window = 10;
  double rho_star = 0.2;
  int adapter_batch = 16;
  std::uint64_t seed = 1;
};

// Frozen PPO policy alone (greedy).
class PpoController final : public Controller {
 public:
  PpoController(std::shared_ptr<const PpoPolicy> policy, const ObserveConfig& cfg);
  std::string name() const override { return "ppo_only"; }
  double decide(const EpochObservation& obs, double alpha) override;
  std::unique_ptr<Controller> clone() const override {
    return std::make_unique<PpoController>(*this);
  }

 private:
  std::shared_ptr<const PpoPolicy> policy_;
  ObserveConfig cfg_;
  StateVector prev_{};
};

// PPO base policy + online residual adapter + burst recovery override.
class SmartController final : public Controller {
 public:
  SmartController(std::shared_ptr<const PpoPolicy> policy, const SmartConfig& cfg);
  std::string name() const override { return "smart"; }
  double decide(const EpochObservation& obs, double alpha) override;
  std::unique_ptr<Controller> clone() const override {
    return std::make_unique<SmartController>(*this);
  }

  const OnlineAdapter& adapter() const { return adapter_; }
  const EmaTracker& ema() const { return ema_; }
  std::int64_t recovery_count() const { return recovery_count_; }

 private:
  std::shared_ptr<const PpoPolicy> policy_;
  SmartConfig cfg_;
  OnlineAdapter adapter_;
  EmaTracker ema_;
  StateVector prev_{};
  bool has_prev_ = false;
  OnlineAdapter::Features prev_x_{};
  double prev_adapt_ = 0;
  // (alpha in effect, score) for the most recent epochs.
  std::deque<std::pair<double, double>> probe_;
  std::int64_t recovery_count_ = 0;
};

}  // namespace hbmpart
