#include "hbmpart/controller.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace hbmpart {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double clip_alpha(double a) { return std::clamp(a, kAlphaMin, kAlphaMax); }

int sign(double v) { return (v > 0) - (v < 0); }

void softmax(const std::array<double, 7>& z, std::array<double, 7>& p,
             std::array<double, 7>& logp) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0;
  for (int i = 0; i < 7; ++i) sum += std::exp(z[i] - m);
  const double lse = m + std::log(sum);
  for (int i = 0; i < 7; ++i) {
    logp[i] = z[i] - lse;
    p[i] = std::exp(logp[i]);
  }
}

}  // namespace

StateVector observe(const EpochObservation& obs, const StateVector& prev,
                    double alpha, const ObserveConfig& cfg) {
  if (obs.n_requests == 0) {
    StateVector s = prev;
    s[5] = clamp01(alpha);
    return s;
  }
  return {clamp01(obs.hot_ratio),
          clamp01(obs.kv_hit),
          clamp01(obs.emb_hit),
          clamp01(obs.mean_seq_len / cfg.seq_len_max),
          clamp01(1.0 - obs.qos),
          clamp01(alpha),
          clamp01(obs.p99 / cfg.p99_max)};
}

double reward(double qos, double p99, std::int64_t n_requests, double tau_slo) {
  if (!(tau_slo > 0)) throw std::invalid_argument("reward: tau_slo must be > 0");
  if (n_requests == 0) return 1.0;
  return qos - std::max(0.0, p99 - tau_slo) / tau_slo;
}

double reward(const EpochObservation& obs, double tau_slo) {
  return reward(obs.qos, obs.p99, obs.n_requests, tau_slo);
}

std::vector<double> gae(const std::vector<double>& rewards,
                        const std::vector<double>& values, double gamma,
                        double lambda) {
  if (values.size() != rewards.size() + 1) {
    throw std::invalid_argument("gae: need exactly one bootstrap value");
  }
  std::vector<double> adv(rewards.size());
  double acc = 0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    const double delta = rewards[i] + gamma * values[i + 1] - values[i];
    acc = delta + gamma * lambda * acc;
    adv[i] = acc;
  }
  return adv;
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : adv) a = sd > 1e-8 ? (a - mean) / sd : a - mean;
}

// -------------------------------------------------------------- PpoPolicy

PpoPolicy::PpoPolicy(std::uint64_t seed) {
  std::size_t off = 0;
  auto place = [&off](int in, int out) {
    DenseView v{in, out, off};
    off += v.size();
    return v;
  };
  l1_ = place(7, kHidden1);
  l2_ = place(kHidden1, kHidden2);
  actor_ = place(kHidden2, 7);
  critic_ = place(kHidden2, 1);
  params_.assign(off, 0.0);
  std::mt19937_64 rng(seed);
  l1_.init(params_.data(), 1.0, rng);
  l2_.init(params_.data(), 1.0, rng);
  // Small actor head: the untrained policy starts close to uniform.
  actor_.init(params_.data(), 0.01, rng);
  critic_.init(params_.data(), 1.0, rng);
  adam_ = Adam(params_.size());
}

std::vector<std::pair<std::string, DenseView>> PpoPolicy::layers() const {
  return {{"backbone1", l1_}, {"backbone2", l2_}, {"actor", actor_}, {"critic", critic_}};
}

void PpoPolicy::logits_value(const StateVector& s, std::array<double, 7>& logits,
                             double& value) const {
  double h1[kHidden1], h2[kHidden2];
  l1_.forward(params_.data(), s.data(), h1);
  for (double& v : h1) v = std::tanh(v);
  l2_.forward(params_.data(), h1, h2);
  for (double& v : h2) v = std::tanh(v);
  actor_.forward(params_.data(), h2, logits.data());
  critic_.forward(params_.data(), h2, &value);
}

PpoAct PpoPolicy::act_greedy(const StateVector& s) const {
  std::array<double, 7> z, p, logp;
  PpoAct a;
  logits_value(s, z, a.value);
  softmax(z, p, logp);
  a.action = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  a.log_prob = logp[a.action];
  return a;
}

PpoAct PpoPolicy::act_sample(const StateVector& s, std::mt19937_64& rng) const {
  std::array<double, 7> z, p, logp;
  PpoAct a;
  logits_value(s, z, a.value);
  softmax(z, p, logp);
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double acc = 0;
  a.action = 6;
  for (int i = 0; i < 7; ++i) {
    acc += p[i];
    if (u < acc) {
      a.action = i;
      break;
    }
  }
  a.log_prob = logp[a.action];
  return a;
}

PpoStats PpoPolicy::update(std::vector<Transition> batch, const PpoConfig& cfg,
                           std::mt19937_64& rng) {
  if (frozen_) throw std::logic_error("ppo: update on a frozen policy");
  PpoStats stats;
  if (batch.empty()) return stats;
  std::vector<double> adv(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) adv[i] = batch[i].advantage;
  normalize_advantages(adv);

  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grads(params_.size());
  const std::size_t mb = static_cast<std::size_t>(std::max(1, cfg.minibatch));
  std::int64_t n_seen = 0, n_clipped = 0;

  for (int ep = 0; ep < cfg.update_epochs; ++ep) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::size_t end = std::min(order.size(), start + mb);
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grads.begin(), grads.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const Transition& t = batch[order[k]];
        const double a_hat = adv[order[k]];
        double z1[kHidden1], h1[kHidden1], z2[kHidden2], h2[kHidden2];
        std::array<double, 7> logits, p, logp;
        double v = 0;
        l1_.forward(params_.data(), t.state.data(), z1);
        for (int i = 0; i < kHidden1; ++i) h1[i] = std::tanh(z1[i]);
        l2_.forward(params_.data(), h1, z2);
        for (int i = 0; i < kHidden2; ++i) h2[i] = std::tanh(z2[i]);
        actor_.forward(params_.data(), h2, logits.data());
        critic_.forward(params_.data(), h2, &v);
        softmax(logits, p, logp);

        const double ratio = std::exp(logp[t.action] - t.log_prob);
        const double unclipped = ratio * a_hat;
        const double clipped =
            std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a_hat;
        // d(-min(unclipped, clipped)) / d log p(a)
        double g_logp = 0;
        if (unclipped <= clipped) {
          g_logp = -a_hat * ratio;
        } else {
          ++n_clipped;
        }
        ++n_seen;
        double entropy = 0;
        for (int j = 0; j < 7; ++j) entropy -= p[j] * logp[j];
        std::array<double, 7> dlogits;
        for (int j = 0; j < 7; ++j) {
          dlogits[j] = g_logp * ((j == t.action ? 1.0 : 0.0) - p[j]);
          if (cfg.entropy_coef != 0) {
            dlogits[j] += cfg.entropy_coef * p[j] * (logp[j] + entropy);
          }
          dlogits[j] *= scale;
        }
        const double dv = 2.0 * cfg.value_coef * (v - t.ret) * scale;
        stats.policy_loss += -std::min(unclipped, clipped);
        stats.value_loss += (v - t.ret) * (v - t.ret);
        stats.entropy += entropy;

        double dh2a[kHidden2], dh2c[kHidden2], dh1[kHidden1];
        actor_.backward(params_.data(), h2, dlogits.data(), grads.data(), dh2a);
        critic_.backward(params_.data(), h2, &dv, grads.data(), dh2c);
        for (int i = 0; i < kHidden2; ++i) {
          dh2a[i] = (dh2a[i] + dh2c[i]) * (1.0 - h2[i] * h2[i]);
        }
        l2_.backward(params_.data(), h1, dh2a, grads.data(), dh1);
        for (int i = 0; i < kHidden1; ++i) dh1[i] *= 1.0 - h1[i] * h1[i];
        l1_.backward(params_.data(), t.state.data(), dh1, grads.data(), nullptr);
      }
      adam_.step(params_, grads, cfg.lr);
    }
  }
  if (n_seen > 0) {
    const double n = static_cast<double>(n_seen);
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.clip_fraction = static_cast<double>(n_clipped) / n;
  }
  return stats;
}

void PpoPolicy::save(std::ostream& os) const {
  write_layers(os, kFormat, layers(), params_);
}

PpoPolicy PpoPolicy::load(std::istream& is) {
  PpoPolicy p(1);
  read_layers(is, kFormat, p.layers(), p.params_);
  return p;
}

void PpoPolicy::save_file(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  save(os);
  if (!os) throw std::runtime_error("write failed for checkpoint '" + path + "'");
}

PpoPolicy PpoPolicy::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("checkpoint not found: '" + path + "'");
  return load(is);
}

// ---------------------------------------------------------- OnlineAdapter

OnlineAdapter::OnlineAdapter(std::uint64_t seed, int batch)
    : rng_(seed), batch_(batch) {
  l1_ = DenseView{kInputs, kHidden, 0};
  l2_ = DenseView{kHidden, 1, l1_.size()};
  params_.assign(l1_.size() + l2_.size(), 0.0);
  std::mt19937_64 init_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  l1_.init(params_.data(), 1.0, init_rng);
  // Output layer stays zero, so the initial correction is exactly 0.
  adam_ = Adam(params_.size());
}

OnlineAdapter::Features OnlineAdapter::features(const StateVector& s) {
  return {s[0], s[1], s[2], s[3], s[4]};
}

double OnlineAdapter::raw(const Features& x) const {
  double h[kHidden], y = 0;
  l1_.forward(params_.data(), x.data(), h);
  for (double& v : h) v = std::tanh(v);
  l2_.forward(params_.data(), h, &y);
  return y;
}

double OnlineAdapter::correct(const Features& x) const {
  return std::clamp(raw(x), -kClamp, kClamp);
}

void OnlineAdapter::update(const Record& r, double eta) {
  buffer_.push_back(r);
  if (buffer_.size() > kBufferCap) buffer_.pop_front();
  if (!(eta > 0)) return;

  std::vector<const Record*> mb{&buffer_.back()};
  const int extra = std::min<int>(batch_ - 1, static_cast<int>(buffer_.size()) - 1);
  for (int i = 0; i < extra; ++i) {
    mb.push_back(&buffer_[rng_() % (buffer_.size() - 1)]);
  }
  std::vector<double> grads(params_.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(mb.size());
  for (const Record* rec : mb) {
    double z[kHidden], h[kHidden], y = 0;
    l1_.forward(params_.data(), rec->x.data(), z);
    for (int i = 0; i < kHidden; ++i) h[i] = std::tanh(z[i]);
    l2_.forward(params_.data(), h, &y);
    const double dy = 2.0 * (y - rec->target) * scale;
    double dh[kHidden];
    l2_.backward(params_.data(), h, &dy, grads.data(), dh);
    for (int i = 0; i < kHidden; ++i) dh[i] *= 1.0 - h[i] * h[i];
    l1_.backward(params_.data(), rec->x.data(), dh, grads.data(), nullptr);
  }
  adam_.step(params_, grads, eta);
}

double adapter_rate(double eta0, double ell, double ell_ema, double tau_slo) {
  return eta0 * std::abs(ell - ell_ema) / tau_slo;
}

// ------------------------------------------------------------- EmaTracker

void EmaTracker::push(double ell) {
  hist_.push_back(ell);
  while (static_cast<int>(hist_.size()) > window_) hist_.pop_front();
}

double EmaTracker::mean() const {
  if (hist_.empty()) return 0.0;
  return std::accumulate(hist_.begin(), hist_.end(), 0.0) /
         static_cast<double>(hist_.size());
}

double EmaTracker::stddev() const {
  if (hist_.empty()) return 0.0;
  const double m = mean();
  double acc = 0;
  for (double v : hist_) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(hist_.size()));
}

double probe_slope(const std::deque<std::pair<double, double>>& pts) {
  if (pts.size() < 3) return 0.0;
  double sx = 0, sy = 0;
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
  }
  const double n = static_cast<double>(pts.size());
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx < n * 1e-4) return 0.0;  // alpha spread under 0.01: no information
  return sxy / sxx;
}

Override recovery_check(const EmaTracker& ema, double ell, double hot_ratio,
                        double rho_star) {
  if (!ema.full()) return Override::None;
  if (!(ell > ema.mean() + 3.0 * ema.stddev())) return Override::None;
  return hot_ratio > rho_star ? Override::StepDown : Override::Hold;
}

// ------------------------------------------------------------ controllers

StaticController::StaticController(double alpha) : alpha_(alpha) {
  if (alpha < kAlphaMin || alpha > kAlphaMax) {
    throw std::invalid_argument("static controller: alpha outside [0.1, 0.9]");
  }
}

double StaticController::decide(const EpochObservation&, double alpha) {
  trace_ = {};
  trace_.alpha_before = alpha;
  trace_.alpha_after = alpha_;
  return alpha_;
}

PidController::PidController(const PidConfig& cfg) : cfg_(cfg) {
  if (!(cfg.tau_slo > 0)) throw std::invalid_argument("pid: tau_slo must be > 0");
}

double PidController::decide(const EpochObservation& obs, double alpha) {
  trace_ = {};
  trace_.alpha_before = alpha;
  if (obs.n_requests == 0) {
    trace_.alpha_after = alpha;
    return alpha;
  }
  const double e = (obs.p99 - cfg_.tau_slo) / cfg_.tau_slo;
  const double de = has_prev_ ? e - prev_error_ : 0.0;
  prev_error_ = e;
  has_prev_ = true;
  const double trial = integral_ + e;
  const double raw = cfg_.alpha0 - (cfg_.kp * e + cfg_.ki * trial + cfg_.kd * de);
  const double out = clip_alpha(raw);
  // Conditional integration: freeze the integral while saturated unless
  // the error would pull the output back inside.
  const bool saturated = raw != out;
  const bool deeper = (raw < kAlphaMin && cfg_.ki * e > 0) ||
                      (raw > kAlphaMax && cfg_.ki * e < 0);
  if (!(saturated && deeper)) integral_ = trial;
  trace_.alpha_after = out;
  return out;
}

PpoController::PpoController(std::shared_ptr<const PpoPolicy> policy,
                             const ObserveConfig& cfg)
    : policy_(std::move(policy)), cfg_(cfg) {
  if (!policy_) throw std::invalid_argument("ppo controller: null policy");
}

double PpoController::decide(const EpochObservation& obs, double alpha) {
  trace_ = {};
  trace_.alpha_before = alpha;
  const StateVector s = observe(obs, prev_, alpha, cfg_);
  prev_ = s;
  trace_.reward = reward(obs, cfg_.tau_slo);
  const PpoAct a = policy_->act_greedy(s);
  trace_.ppo_action = a.action;
  trace_.ppo_delta = kActions[a.action];
  trace_.alpha_after = clip_alpha(alpha + trace_.ppo_delta);
  return trace_.alpha_after;
}

SmartController::SmartController(std::shared_ptr<const PpoPolicy> policy,
                                 const SmartConfig& cfg)
    : policy_(std::move(policy)),
      cfg_(cfg),
      adapter_(cfg.seed, cfg.adapter_batch),
      ema_(cfg.ema_window) {
  if (!policy_) throw std::invalid_argument("smart controller: null policy");
}

double SmartController::decide(const EpochObservation& obs, double alpha) {
  const double tau = cfg_.observe.tau_slo;
  trace_ = {};
  trace_.alpha_before = alpha;
  const bool empty = obs.n_requests == 0;
  const StateVector s = observe(obs, prev_, alpha, cfg_.observe);
  prev_ = s;
  const auto x = OnlineAdapter::features(s);
  const double r = reward(obs, tau);
  trace_.reward = r;

  Override ov = Override::None;
  if (!empty) {
    const double ell = obs.p99;
    // Score: reward, with a small latency term so a saturated reward still
    // ranks epochs.
    probe_.emplace_back(alpha, r - 0.01 * ell / tau);
    if (static_cast<int>(probe_.size()) > cfg_.probe_window) probe_.pop_front();
    if (cfg_.adapter_enabled && has_prev_ && ema_.full()) {
      // Hill-climb target: fit score against alpha over the recent epochs
      // and nudge the residual one step up the fitted slope.
      const int dir = sign(probe_slope(probe_));
      const double target =
          std::clamp(prev_adapt_ + cfg_.target_step * dir, -OnlineAdapter::kClamp,
                     OnlineAdapter::kClamp);
      trace_.eta = adapter_rate(cfg_.eta0, ell, ema_.mean(), tau);
      adapter_.update({prev_x_, target}, trace_.eta);
    }
    if (cfg_.recovery_enabled) {
      ov = recovery_check(ema_, ell, obs.hot_ratio, cfg_.rho_star);
    }
    ema_.push(ell);
  }
  trace_.override_kind = ov;

  double next = alpha;
  double adapt = 0;
  if (ov == Override::StepDown) {
    next = clip_alpha(alpha - kMaxStep);
    ++recovery_count_;
  } else if (ov == Override::Hold) {
    next = alpha;
    ++recovery_count_;
  } else {
    const PpoAct a = policy_->act_greedy(s);
    trace_.ppo_action = a.action;
    trace_.ppo_delta = kActions[a.action];
    if (cfg_.adapter_enabled) adapt = adapter_.correct(x);
    trace_.adapt_delta = adapt;
    next = clip_alpha(alpha + trace_.ppo_delta + adapt);
  }
  trace_.alpha_after = next;

  if (!empty) {
    prev_x_ = x;
    prev_adapt_ = adapt;
    has_prev_ = true;
  }
  return next;
}

}  // namespace hbmpart
