#pragma once

#include "relgoal/checkpoint.hpp"
#include "relgoal/graph.hpp"
#include "relgoal/nn.hpp"
#include "relgoal/rng.hpp"
#include "relgoal/trajectory.hpp"

#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace relgoal::dyn {

using ad::Matrix;
using ad::Tensor;

// Recurrent graph-network dynamics model. Per object j it keeps a hidden
// state h_j; each step combines the weighted sum of pairwise interaction
// effects with the action effect in a GRU and predicts the position delta:
//
//   e_ij = interaction_effect(h_i, h_j)         w_ij = p(edge i->j active)
//   h_int_j = sum_{i != j} w_ij * e_ij          h_act_j = action_effect(s_j, a)
//   h_j' = GRU([h_int_j, h_act_j], h_j)         pos_j' = pos_j + predictor(h_j')
//
// The edge beliefs w_ij are trained toward a sparse Bernoulli prior; their
// dataset averages, thresholded, give the global interaction graph.
struct DynModelConfig {
  int identity_dim = 0;
  int hidden = 64;
  int mlp_hidden_layers = 2;
  double sigma2 = 0.01;  // fixed prediction variance, not trained

  int feature_dim() const { return 2 + identity_dim; }

  std::string describe() const {
    return "dyn id=" + std::to_string(identity_dim) + " h=" + std::to_string(hidden) +
           " layers=" + std::to_string(mlp_hidden_layers);
  }
};

struct DynModel {
  DynModelConfig cfg;
  nn::Mlp interaction_effect;    // [h_i, h_j] -> effect vector
  nn::Mlp interaction_presence;  // [h_i, h_j] -> 2 logits (absent, present)
  nn::Mlp action_effect;         // [s_j, a] -> effect vector
  nn::GruCell gru;
  nn::Mlp predictor;             // h_j -> position delta

  static DynModel make(const DynModelConfig& cfg, Rng& rng) {
    if (cfg.hidden <= 0) throw std::invalid_argument("dyn: hidden width must be positive");
    if (cfg.sigma2 <= 0.0) throw std::invalid_argument("dyn: sigma2 must be positive");
    DynModel m;
    m.cfg = cfg;
    auto widths = [&](Eigen::Index in, Eigen::Index out) {
      std::vector<Eigen::Index> w{in};
      for (int l = 0; l < cfg.mlp_hidden_layers; ++l) w.push_back(cfg.hidden);
      w.push_back(out);
      return w;
    };
    const Eigen::Index h = cfg.hidden;
    m.interaction_effect = nn::Mlp::make(widths(2 * h, h), nn::OutputActivation::identity, rng);
    m.interaction_presence =
        nn::Mlp::make(widths(2 * h, 2), nn::OutputActivation::identity, rng);
    m.action_effect =
        nn::Mlp::make(widths(cfg.feature_dim() + 2, h), nn::OutputActivation::identity, rng);
    m.gru = nn::GruCell::make(2 * h, h, rng);
    m.predictor = nn::Mlp::make(widths(h, 2), nn::OutputActivation::identity, rng);
    return m;
  }

  std::vector<Tensor> params() const {
    std::vector<std::pair<std::string, Tensor>> named;
    collect(named);
    std::vector<Tensor> out;
    for (auto& [n, t] : named) out.push_back(t);
    return out;
  }

  void collect(std::vector<std::pair<std::string, Tensor>>& out) const {
    interaction_effect.collect("interaction_effect", out);
    interaction_presence.collect("interaction_presence", out);
    action_effect.collect("action_effect", out);
    gru.collect("gru", out);
    predictor.collect("predictor", out);
  }
};

// Edge-presence probability from the two logits, component "present".
inline Tensor presence_probability(const Tensor& logits) {
  return sigmoid(sub(slice_cols(logits, 1, 2), slice_cols(logits, 0, 1)));
}

inline double interaction_weight(const DynModel& m, const Matrix& h_src, const Matrix& h_tgt) {
  ad::NoGradGuard ng;
  Tensor in = Tensor::constant((Matrix(1, 2 * m.cfg.hidden) << h_src, h_tgt).finished());
  return presence_probability(m.interaction_presence.forward(in)).item();
}

// sum_i w_i * e_i per output row; exposed separately so the aggregation can
// be exercised with hand-built effects and weights.
inline Tensor weighted_effect_sum(const Tensor& effects, const Tensor& weights,
                                  const std::vector<int>& groups, Eigen::Index out_rows) {
  return segment_sum_rows(mul(effects, weights), groups, out_rows);
}

// Flat-row indexing for a batch of scenes with equal object count: object j
// of segment b lives in row b*K + j. Pairs are grouped by target object.
struct PairIndex {
  std::vector<int> src, tgt, group;
  int rows = 0;

  static PairIndex build(int batch, int k) {
    PairIndex p;
    p.rows = batch * k;
    for (int b = 0; b < batch; ++b)
      for (int j = 0; j < k; ++j)
        for (int i = 0; i < k; ++i) {
          if (i == j) continue;
          p.src.push_back(b * k + i);
          p.tgt.push_back(b * k + j);
          p.group.push_back(b * k + j);
        }
    return p;
  }
};

struct StepResult {
  Tensor hidden;   // [B*K, H]
  Tensor weights;  // [pairs, 1] edge beliefs, empty when K == 1
  Tensor pred;     // [B*K, 2] predicted next positions
};

inline StepResult dyn_step_rows(const DynModel& m, const Tensor& features,
                                const Tensor& action_rows, const Tensor& positions,
                                const Tensor& hidden, const PairIndex& idx) {
  StepResult out;
  Tensor h_int;
  if (!idx.src.empty()) {
    Tensor pair_in = concat_cols(gather_rows(hidden, idx.src), gather_rows(hidden, idx.tgt));
    Tensor effects = m.interaction_effect.forward(pair_in);
    out.weights = presence_probability(m.interaction_presence.forward(pair_in));
    h_int = weighted_effect_sum(effects, out.weights, idx.group, idx.rows);
  } else {
    h_int = Tensor::zeros(idx.rows, m.cfg.hidden);
  }
  Tensor h_act = m.action_effect.forward(concat_cols(features, action_rows));
  out.hidden = m.gru.forward(concat_cols(h_int, h_act), hidden);
  out.pred = add(positions, m.predictor.forward(out.hidden));
  return out;
}

// Convenience single-scene step.
struct SceneStep {
  Matrix hidden;
  Matrix pred;
  Matrix weights;  // KxK, w(i,j) = belief in edge i->j, zero diagonal
};

inline SceneStep dyn_step(const DynModel& m, const Matrix& features, const env::Vec2& action,
                          const Matrix& hidden) {
  ad::NoGradGuard ng;
  const int k = int(features.rows());
  PairIndex idx = PairIndex::build(1, k);
  Matrix arep(k, 2);
  for (int r = 0; r < k; ++r) arep.row(r) = action.transpose();
  auto res = dyn_step_rows(m, Tensor::constant(features), Tensor::constant(arep),
                           Tensor::constant(features.leftCols(2)), Tensor::constant(hidden), idx);
  SceneStep out;
  out.hidden = res.hidden.value();
  out.pred = res.pred.value();
  out.weights = Matrix::Zero(k, k);
  for (std::size_t p = 0; p < idx.src.size(); ++p)
    out.weights(idx.src[p], idx.tgt[p]) = res.weights.value()(Eigen::Index(p), 0);
  return out;
}

// One sampled training window: `length` consecutive snapshots of an episode.
struct Segment {
  const traj::Episode* episode = nullptr;
  int start = 0;
};

namespace detail {

inline Matrix features_of(const traj::Episode& ep, int t, int identity_dim) {
  const int k = ep.object_count();
  Matrix f = Matrix::Zero(k, 2 + identity_dim);
  f.leftCols(2) = ep.positions[t];
  for (int r = 0; r < k; ++r) f(r, 2 + ep.ids[r] - 1) = 1.0;
  return f;
}

}  // namespace detail

struct LossParts {
  Tensor total;
  double recon = 0.0;
  double kl = 0.0;
};

// Negative evidence bound over segments that share an object count: summed
// squared prediction error over the unroll scaled by 1/(2 sigma^2), plus the
// per-edge per-step KL of the edge beliefs against Bernoulli(p_prior).
// Hidden states start at zero at the segment head. Returns the SUM over the
// given segments; callers divide by their total batch size.
inline LossParts elbo_loss_group(const DynModel& m, const std::vector<Segment>& segs, int length,
                                 double p_prior) {
  const int b = int(segs.size());
  const int k = segs.front().episode->object_count();
  const int id = m.cfg.identity_dim;
  PairIndex idx = PairIndex::build(b, k);

  Matrix feats(b * k, 2 + id), acts(b * k, 2), next_pos(b * k, 2);
  Tensor hidden = Tensor::zeros(b * k, m.cfg.hidden);
  Tensor recon, kl;
  for (int t = 0; t + 1 < length; ++t) {
    for (int s = 0; s < b; ++s) {
      const auto& ep = *segs[s].episode;
      int at = segs[s].start + t;
      feats.middleRows(s * k, k) = detail::features_of(ep, at, id);
      for (int r = 0; r < k; ++r) acts.row(s * k + r) = ep.actions[at].transpose();
      next_pos.middleRows(s * k, k) = ep.positions[at + 1];
    }
    auto res = dyn_step_rows(m, Tensor::constant(feats), Tensor::constant(acts),
                             Tensor::constant(feats.leftCols(2)), hidden, idx);
    hidden = res.hidden;
    Tensor err = squared_norm(sub(res.pred, Tensor::constant(next_pos)));
    recon = recon.defined() ? add(recon, err) : err;
    if (res.weights.defined()) {
      Tensor step_kl = sum(bernoulli_kl(res.weights, p_prior));
      kl = kl.defined() ? add(kl, step_kl) : step_kl;
    }
  }
  LossParts out;
  Tensor scaled = affine(recon, 1.0 / (2.0 * m.cfg.sigma2), 0.0);
  out.recon = scaled.value()(0, 0);
  if (kl.defined()) {
    out.kl = kl.value()(0, 0);
    out.total = add(scaled, kl);
  } else {
    out.total = scaled;
  }
  return out;
}

// Mean loss over an arbitrary batch of segments (grouped by object count).
inline LossParts elbo_loss(const DynModel& m, const std::vector<Segment>& batch, int length,
                           double p_prior) {
  std::map<int, std::vector<Segment>> by_k;
  for (const auto& s : batch) by_k[s.episode->object_count()].push_back(s);
  LossParts out;
  double inv = 1.0 / double(batch.size());
  for (auto& [k, group] : by_k) {
    auto part = elbo_loss_group(m, group, length, p_prior);
    out.recon += part.recon * inv;
    out.kl += part.kl * inv;
    Tensor scaled = affine(part.total, inv, 0.0);
    out.total = out.total.defined() ? add(out.total, scaled) : scaled;
  }
  return out;
}

struct GraphTrainConfig {
  double p_prior = 0.05;
  double threshold = 0.06;
  int sequence_length = 20;  // snapshots per training window
  long updates = 100000;
  int batch = 100;
  double lr = 5e-4;
  int hidden = 64;
  int mlp_hidden_layers = 2;
  double sigma2 = 0.01;
  long log_every = 500;

  void validate() const {
    if (p_prior <= 0.0 || p_prior >= 1.0) throw std::invalid_argument("dyn: p_prior in (0,1)");
    if (threshold <= 0.0 || threshold >= 1.0)
      throw std::invalid_argument("dyn: threshold in (0,1)");
    if (sequence_length < 2) throw std::invalid_argument("dyn: sequence_length >= 2");
    if (batch < 1 || updates < 0 || lr <= 0.0) throw std::invalid_argument("dyn: bad budget");
  }
};

struct TrainLogRow {
  long step = 0;
  double loss = 0.0, recon = 0.0, kl = 0.0;
};

// Uniform segment sampling that never crosses an episode boundary.
inline Segment sample_segment(const traj::Dataset& ds, int length, Rng& rng) {
  for (int guard = 0; guard < 10000; ++guard) {
    const auto& ep = ds.episodes[rng.below(ds.episodes.size())];
    int max_start = int(ep.positions.size()) - length;
    if (max_start < 0) continue;
    return Segment{&ep, int(rng.below(std::uint64_t(max_start + 1)))};
  }
  throw std::invalid_argument("dyn: no episode long enough for the requested window");
}

inline DynModel train_dynamics(const traj::Dataset& ds, const GraphTrainConfig& cfg,
                               std::uint64_t seed, std::vector<TrainLogRow>* log = nullptr) {
  cfg.validate();
  if (ds.episodes.empty()) throw std::invalid_argument("dyn: empty dataset");
  bool any = false;
  for (const auto& ep : ds.episodes) any = any || int(ep.positions.size()) >= cfg.sequence_length;
  if (!any) throw std::invalid_argument("dyn: every episode is shorter than the window");

  Rng root(seed);
  Rng init_rng = root.derive("dyn.init");
  Rng sample_rng = root.derive("dyn.segments");

  DynModelConfig mc;
  mc.identity_dim = ds.identity_dim;
  mc.hidden = cfg.hidden;
  mc.mlp_hidden_layers = cfg.mlp_hidden_layers;
  mc.sigma2 = cfg.sigma2;
  DynModel model = DynModel::make(mc, init_rng);

  auto params = model.params();
  auto adam = nn::AdamState::make(params, cfg.lr);

  for (long u = 0; u < cfg.updates; ++u) {
    std::vector<Segment> batch;
    batch.reserve(cfg.batch);
    for (int i = 0; i < cfg.batch; ++i)
      batch.push_back(sample_segment(ds, cfg.sequence_length, sample_rng));
    auto loss = elbo_loss(model, batch, cfg.sequence_length, cfg.p_prior);
    ad::backward(loss.total);
    nn::adam_step(params, adam);
    if (log && (u % cfg.log_every == 0 || u + 1 == cfg.updates))
      log->push_back({u, loss.total.value()(0, 0), loss.recon, loss.kl});
  }
  return model;
}

// Mean per-segment loss over a deterministic tiling of the dataset; handy as
// a held-out metric.
inline double dataset_loss(const DynModel& m, const traj::Dataset& ds,
                           const GraphTrainConfig& cfg, int max_segments = 256) {
  ad::NoGradGuard ng;
  std::vector<Segment> segs;
  for (const auto& ep : ds.episodes) {
    for (int start = 0; start + cfg.sequence_length <= int(ep.positions.size());
         start += cfg.sequence_length)
      segs.push_back({&ep, start});
    if (int(segs.size()) >= max_segments) break;
  }
  if (segs.empty()) throw std::invalid_argument("dyn: dataset has no full window");
  auto loss = elbo_loss(m, segs, cfg.sequence_length, cfg.p_prior);
  return loss.total.value()(0, 0);
}

// Mean edge beliefs over every step of every episode, indexed by global
// object node id (1-based ids map to 0-based rows/cols). Zero diagonal.
inline Matrix average_weights(const DynModel& m, const traj::Dataset& ds) {
  ad::NoGradGuard ng;
  const int n = ds.identity_dim;
  Matrix sums = Matrix::Zero(n, n);
  Matrix counts = Matrix::Zero(n, n);
  for (const auto& ep : ds.episodes) {
    const int k = ep.object_count();
    Matrix hidden = Matrix::Zero(k, m.cfg.hidden);
    for (int t = 0; t + 1 < int(ep.positions.size()); ++t) {
      auto step = dyn_step(m, detail::features_of(ep, t, m.cfg.identity_dim), ep.actions[t],
                           hidden);
      hidden = step.hidden;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          if (i == j) continue;
          sums(ep.ids[i] - 1, ep.ids[j] - 1) += step.weights(i, j);
          counts(ep.ids[i] - 1, ep.ids[j] - 1) += 1.0;
        }
    }
  }
  Matrix avg = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (counts(i, j) > 0.0) avg(i, j) = sums(i, j) / counts(i, j);
  return avg;
}

// The object most correlated with the action: argmax over objects of the
// summed absolute Pearson correlation between each action component and the
// object's one-step position delta in that component.
inline int identify_arm(const traj::Dataset& ds) {
  const int n = ds.identity_dim;
  struct Acc {
    double sa = 0, sd = 0, saa = 0, sdd = 0, sad = 0;
    long cnt = 0;
  };
  std::vector<std::array<Acc, 2>> acc(n);
  for (const auto& ep : ds.episodes) {
    for (int t = 0; t < ep.step_count(); ++t) {
      for (int r = 0; r < ep.object_count(); ++r) {
        int node = ep.ids[r] - 1;
        for (int d = 0; d < 2; ++d) {
          double a = ep.actions[t](d);
          double delta = ep.positions[t + 1](r, d) - ep.positions[t](r, d);
          auto& c = acc[node][d];
          c.sa += a;
          c.sd += delta;
          c.saa += a * a;
          c.sdd += delta * delta;
          c.sad += a * delta;
          c.cnt += 1;
        }
      }
    }
  }
  int best = -1;
  double best_score = -1.0;
  bool any_defined = false;
  for (int node = 0; node < n; ++node) {
    if (acc[node][0].cnt == 0) continue;
    double score = 0.0;
    for (int d = 0; d < 2; ++d) {
      const auto& c = acc[node][d];
      double m = double(c.cnt);
      double va = c.saa - c.sa * c.sa / m;
      double vd = c.sdd - c.sd * c.sd / m;
      double cov = c.sad - c.sa * c.sd / m;
      if (va <= 0.0 || vd <= 0.0) continue;
      any_defined = true;
      score += std::abs(cov / std::sqrt(va * vd));
    }
    if (score > best_score) {
      best_score = score;
      best = node;
    }
  }
  if (!any_defined || best < 0)
    throw std::runtime_error("dyn: no controllable object detected (all correlations undefined)");
  return best + 1;
}

inline graph::InteractionGraph extract_graph(const Matrix& avg, const traj::Dataset& ds,
                                             double threshold) {
  const int n = int(avg.rows());
  graph::InteractionGraph g(n);
  g.threshold = threshold;
  g.avg_weights = avg;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && avg(i, j) > threshold) g.set_edge(i + 1, j + 1, true);
  g.arm_index = identify_arm(ds);
  g.set_edge(0, g.arm_index, true);
  return g;
}

// --- model checkpointing; the architecture rides along as a tensor entry ---

inline void save_model(const std::string& path, const DynModel& m, std::uint64_t seed,
                       std::uint64_t step) {
  std::vector<std::pair<std::string, Tensor>> entries;
  m.collect(entries);
  Matrix meta(1, 4);
  meta << double(m.cfg.identity_dim), double(m.cfg.hidden), double(m.cfg.mlp_hidden_layers),
      m.cfg.sigma2;
  entries.emplace_back("__arch__", Tensor::constant(meta));
  ckpt::Metadata md{Rng::fnv1a(m.cfg.describe()), seed, step};
  ckpt::save(path, md, entries);
}

inline DynModel load_model(const std::string& path) {
  auto loaded = ckpt::load(path);
  auto it = loaded.tensors.find("__arch__");
  if (it == loaded.tensors.end()) throw std::runtime_error("dyn: checkpoint lacks architecture");
  DynModelConfig cfg;
  cfg.identity_dim = int(it->second(0, 0));
  cfg.hidden = int(it->second(0, 1));
  cfg.mlp_hidden_layers = int(it->second(0, 2));
  cfg.sigma2 = it->second(0, 3);
  Rng rng(0);
  DynModel m = DynModel::make(cfg, rng);
  std::vector<std::pair<std::string, Tensor>> entries;
  m.collect(entries);
  ckpt::restore(loaded, entries);
  return m;
}

}  // namespace relgoal::dyn
