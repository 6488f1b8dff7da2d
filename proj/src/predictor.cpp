#include "span/predictor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

#include "span/errors.hpp"

namespace span {

namespace {

constexpr double kDiagonalFloor = 1e-6;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Inverse of softplus for y > 0.
double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

}  // namespace

// ---------------------------------------------------------------------------
// Dataset construction

std::vector<Vec2> resample(const Track& track, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("resample step must be positive");
  if (track.empty()) return {};
  for (std::size_t i = 1; i < track.size(); ++i) {
    if (!(track[i].t > track[i - 1].t)) {
      throw std::invalid_argument("track timestamps must be strictly increasing");
    }
  }
  const double t0 = track.front().t;
  const double span_s = track.back().t - t0;
  const auto n = static_cast<std::size_t>(std::floor(span_s / dt + 1e-9)) + 1;
  std::vector<Vec2> out;
  out.reserve(n);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    while (seg + 1 < track.size() && track[seg + 1].t < t) ++seg;
    if (seg + 1 >= track.size()) {
      out.push_back(track.back().p);
      continue;
    }
    const auto& a = track[seg];
    const auto& b = track[seg + 1];
    const double w = std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0);
    out.push_back((1.0 - w) * a.p + w * b.p);
  }
  return out;
}

Dataset build_dataset(std::span<const Track> tracks, const BasisSpec& basis,
                      const DatasetConfig& cfg) {
  if (cfg.observations < 1) throw std::invalid_argument("window needs at least one observation");
  if (!(cfg.horizon > 0.0)) throw std::invalid_argument("prediction horizon must be positive");
  const int p = cfg.observations;
  const int h = static_cast<int>(std::lround(cfg.horizon / cfg.dt));
  Dataset out;
  std::vector<TimedPoint> future(static_cast<std::size_t>(h) + 1);
  for (const auto& track : tracks) {
    const std::vector<Vec2> samples = resample(track, cfg.dt);
    const int n = static_cast<int>(samples.size());
    if (n - p - h + 1 <= 0) {
      ++out.skipped_tracks;
      continue;
    }
    for (int last = p - 1; last + h < n; ++last) {
      const Vec2 origin = samples[static_cast<std::size_t>(last)];
      TrainingPair pair;
      pair.window.reserve(static_cast<std::size_t>(p));
      for (int k = last - p + 1; k <= last; ++k) {
        pair.window.push_back(samples[static_cast<std::size_t>(k)] - origin);
      }
      for (int k = 0; k <= h; ++k) {
        future[static_cast<std::size_t>(k)] = {k * cfg.dt,
                                               samples[static_cast<std::size_t>(last + k)] - origin};
      }
      pair.target = fit_weights(future, basis, cfg.lambda);
      out.pairs.push_back(std::move(pair));
    }
  }
  return out;
}

TrackSplit split_tracks(std::span<const Track> tracks, double train_fraction,
                        std::mt19937_64& rng) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw std::invalid_argument("train fraction must lie in [0, 1]");
  }
  std::vector<std::size_t> order(tracks.size());
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with explicit draws so the split does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  const auto n_train = static_cast<std::size_t>(
      std::lround(train_fraction * static_cast<double>(tracks.size())));
  TrackSplit split;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_train ? split.train : split.test).push_back(tracks[order[k]]);
  }
  return split;
}

std::vector<Track> synthetic_tracks(const SyntheticTrackConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-cfg.extent, cfg.extent);
  std::uniform_real_distribution<double> heading(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> speed(cfg.min_speed, cfg.max_speed);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  const int n = static_cast<int>(std::lround(cfg.duration / cfg.dt)) + 1;
  std::vector<Track> tracks;
  tracks.reserve(static_cast<std::size_t>(std::max(cfg.count, 0)));
  for (int i = 0; i < cfg.count; ++i) {
    const Vec2 start(pos(rng), pos(rng));
    const double th = heading(rng);
    const Vec2 vel = speed(rng) * Vec2(std::cos(th), std::sin(th));
    Track track;
    track.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      const double t = k * cfg.dt;
      const double nx = noise(rng);
      const double ny = noise(rng);
      track.push_back({t, start + vel * t + Vec2(nx, ny)});
    }
    tracks.push_back(std::move(track));
  }
  return tracks;
}

// ---------------------------------------------------------------------------
// Output head

MatrixNormalParams decode(const Eigen::VectorXd& raw, int m) {
  if (m < 1 || raw.size() != raw_output_size(m)) {
    throw DimensionError("raw output must have length " + std::to_string(raw_output_size(m)));
  }
  WeightMatrix M(m, 2);
  M.col(0) = raw.segment(0, m);
  M.col(1) = raw.segment(m, m);
  Eigen::MatrixXd L_U = Eigen::MatrixXd::Zero(m, m);
  Eigen::Index k = 2 * m;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < i; ++j) L_U(i, j) = raw(k++);
    L_U(i, i) = softplus(raw(k++)) + kDiagonalFloor;
  }
  Mat2 L_V = Mat2::Zero();
  L_V(0, 0) = softplus(raw(k)) + kDiagonalFloor;
  L_V(1, 0) = raw(k + 1);
  L_V(1, 1) = softplus(raw(k + 2)) + kDiagonalFloor;
  return MatrixNormalParams::from_cholesky(std::move(M), L_U, L_V);
}

Eigen::VectorXd encode(const MatrixNormalParams& params) {
  const int m = params.rows();
  Eigen::VectorXd raw(raw_output_size(m));
  raw.segment(0, m) = params.M().col(0);
  raw.segment(m, m) = params.M().col(1);
  const auto& L_U = params.chol_U();
  Eigen::Index k = 2 * m;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < i; ++j) raw(k++) = L_U(i, j);
    raw(k++) = softplus_inverse(L_U(i, i) - kDiagonalFloor);
  }
  const auto& L_V = params.chol_V();
  raw(k) = softplus_inverse(L_V(0, 0) - kDiagonalFloor);
  raw(k + 1) = L_V(1, 0);
  raw(k + 2) = softplus_inverse(L_V(1, 1) - kDiagonalFloor);
  return raw;
}

RawLossGradient nll_raw_gradient(const Eigen::VectorXd& raw, const WeightMatrix& target) {
  const int m = static_cast<int>(target.rows());
  const MatrixNormalParams params = decode(raw, m);
  const auto& L_U = params.chol_U();
  const auto& L_V = params.chol_V();
  const WeightMatrix E = target - params.M();

  // A = U^-1 E V^-1 via triangular solves.
  const auto lu = L_U.triangularView<Eigen::Lower>();
  const Eigen::MatrixX2d Uinv_E = lu.transpose().solve(lu.solve(E));
  const Mat2 V_inv = params.V().inverse();
  const Eigen::MatrixX2d A = Uinv_E * V_inv;

  const Eigen::MatrixXd dL_U = -(A * Uinv_E.transpose()) * L_U;
  const Mat2 dL_V = -(A.transpose() * (E * V_inv)) * L_V;

  RawLossGradient out{mn_nll(params, target), Eigen::VectorXd(raw.size())};
  Eigen::VectorXd& g = out.grad;
  g.segment(0, m) = -A.col(0);
  g.segment(m, m) = -A.col(1);
  Eigen::Index k = 2 * m;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < i; ++j) g(k++) = dL_U(i, j);
    g(k) = (dL_U(i, i) + 2.0 / L_U(i, i)) * sigmoid(raw(k));
    ++k;
  }
  g(k) = (dL_V(0, 0) + m / L_V(0, 0)) * sigmoid(raw(k));
  g(k + 1) = dL_V(1, 0);
  g(k + 2) = (dL_V(1, 1) + m / L_V(1, 1)) * sigmoid(raw(k + 2));
  return out;
}

// ---------------------------------------------------------------------------
// Network

PredictorModel::PredictorModel(int observations, double dt, BasisSpec basis,
                               const std::vector<int>& hidden, Activation activation,
                               std::mt19937_64& rng)
    : observations_(observations),
      dt_(dt),
      basis_(std::move(basis)),
      activation_(activation),
      output_frame_(Eigen::MatrixXd::Identity(basis_.size(), basis_.size())) {
  if (observations_ < 1) throw std::invalid_argument("model needs at least one observation");
  if (!(dt_ > 0.0)) throw std::invalid_argument("observation spacing must be positive");
  std::vector<int> sizes{input_size()};
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("hidden layer widths must be positive");
    sizes.push_back(h);
  }
  sizes.push_back(raw_output_size(basis_.size()));
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
    std::uniform_real_distribution<double> init(-bound, bound);
    Layer layer{Eigen::MatrixXd(sizes[l + 1], sizes[l]), Eigen::VectorXd(sizes[l + 1])};
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = init(rng);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = init(rng);
    layers_.push_back(std::move(layer));
  }
}

PredictorModel::PredictorModel(int observations, double dt, BasisSpec basis,
                               std::vector<Layer> layers, Activation activation)
    : observations_(observations),
      dt_(dt),
      basis_(std::move(basis)),
      layers_(std::move(layers)),
      activation_(activation),
      output_frame_(Eigen::MatrixXd::Identity(basis_.size(), basis_.size())) {
  if (observations_ < 1) throw std::invalid_argument("model needs at least one observation");
  if (!(dt_ > 0.0)) throw std::invalid_argument("observation spacing must be positive");
  if (layers_.empty()) throw std::invalid_argument("model needs at least one layer");
  Eigen::Index width = input_size();
  for (const auto& layer : layers_) {
    if (layer.weight.cols() != width || layer.bias.size() != layer.weight.rows()) {
      throw DimensionError("layer shapes do not chain");
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw std::invalid_argument("model parameters must be finite");
    }
    width = layer.weight.rows();
  }
  if (width != raw_output_size(basis_.size())) {
    throw DimensionError("output width does not match the basis size");
  }
}

void PredictorModel::set_output_frame(const Eigen::MatrixXd& frame) {
  const int m = basis_.size();
  if (frame.rows() != m || frame.cols() != m) throw DimensionError("output frame must be m x m");
  if (!frame.allFinite()) throw std::invalid_argument("output frame must be finite");
  double log_det = 0.0;
  for (int i = 0; i < m; ++i) {
    if (!(frame(i, i) > 0.0)) throw std::invalid_argument("output frame diagonal must be positive");
    for (int j = 0; j < i; ++j) {
      if (frame(i, j) != 0.0) throw std::invalid_argument("output frame must be upper triangular");
    }
    log_det += std::log(frame(i, i));
  }
  output_frame_ = frame;
  frame_log_det_ = log_det;
}

MatrixNormalParams PredictorModel::distribution(const Eigen::VectorXd& raw) const {
  const int m = basis_.size();
  MatrixNormalParams in_frame = decode(raw, m);
  if (output_frame_.isIdentity(0.0)) return in_frame;
  const auto Q = output_frame_.triangularView<Eigen::Upper>();
  WeightMatrix M = Q.solve(in_frame.M());
  // U = A A^T with A = Q^-1 L_z; a QR of A^T yields its Cholesky factor
  // without forming the (possibly ill-conditioned) product.
  const Eigen::MatrixXd A = Q.solve(in_frame.chol_U());
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A.transpose());
  Eigen::MatrixXd L_U = qr.matrixQR().triangularView<Eigen::Upper>().toDenseMatrix().transpose();
  for (int i = 0; i < m; ++i) {
    if (L_U(i, i) < 0.0) L_U.col(i) = -L_U.col(i);
  }
  return MatrixNormalParams::from_cholesky(std::move(M), L_U, in_frame.chol_V());
}

Eigen::MatrixXd whitening_frame(const BasisSpec& basis, const DatasetConfig& cfg) {
  if (!(cfg.dt > 0.0) || !(cfg.horizon > 0.0) || !(cfg.lambda >= 0.0)) {
    throw std::invalid_argument("whitening frame needs positive dt and horizon, lambda >= 0");
  }
  const int steps = static_cast<int>(std::lround(cfg.horizon / cfg.dt));
  const int m = basis.size();
  Eigen::MatrixXd gram = cfg.lambda * Eigen::MatrixXd::Identity(m, m);
  for (int k = 0; k <= steps; ++k) {
    const Eigen::VectorXd phi = basis_vector(k * cfg.dt, basis);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(phi);
  }
  gram /= static_cast<double>(steps + 1);
  Eigen::LLT<Eigen::MatrixXd> llt(gram.selfadjointView<Eigen::Lower>());
  if (llt.info() != Eigen::Success) {
    throw SingularSystemError("future-sample Gram matrix is not positive definite");
  }
  Eigen::MatrixXd frame = llt.matrixU();
  return frame;
}

Eigen::MatrixXd PredictorModel::forward(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != input_size()) throw DimensionError("input has the wrong length");
  Eigen::MatrixXd h = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * h;
    z.colwise() += layers_[l].bias;
    if (l + 1 < layers_.size()) {
      h = activation_ == Activation::tanh ? Eigen::MatrixXd(z.array().tanh())
                                          : Eigen::MatrixXd(z.array().max(0.0));
    } else {
      h = std::move(z);
    }
  }
  return h;
}

double PredictorModel::loss(std::span<const TrainingPair* const> batch,
                            Eigen::VectorXd* gradient) const {
  if (batch.empty()) throw std::invalid_argument("loss needs a nonempty batch");
  const auto B = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd x(input_size(), B);
  for (Eigen::Index b = 0; b < B; ++b) {
    x.col(b) = window_features(batch[static_cast<std::size_t>(b)]->window);
  }

  // Forward pass keeping every activation for backpropagation.
  std::vector<Eigen::MatrixXd> acts{x};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * acts.back();
    z.colwise() += layers_[l].bias;
    if (l + 1 < layers_.size()) {
      acts.push_back(activation_ == Activation::tanh ? Eigen::MatrixXd(z.array().tanh())
                                                     : Eigen::MatrixXd(z.array().max(0.0)));
    } else {
      acts.push_back(std::move(z));
    }
  }

  const Eigen::MatrixXd& raw = acts.back();
  Eigen::MatrixXd delta(raw.rows(), B);
  double total = 0.0;
  const auto Q = output_frame_.triangularView<Eigen::Upper>();
  for (Eigen::Index b = 0; b < B; ++b) {
    const WeightMatrix z = Q * batch[static_cast<std::size_t>(b)]->target;
    const auto lg = nll_raw_gradient(raw.col(b), z);
    // Jacobian of W -> z: the weight-space density picks up |Q|^2.
    total += lg.loss - 2.0 * frame_log_det_;
    delta.col(b) = lg.grad / static_cast<double>(B);
  }
  const double mean_loss = total / static_cast<double>(B);
  if (gradient == nullptr) return mean_loss;

  gradient->resize(num_parameters());
  std::vector<Eigen::Index> offsets(layers_.size());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    offsets[l] = off;
    off += layers_[l].weight.size() + layers_[l].bias.size();
  }
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Eigen::MatrixXd dW = delta * acts[l].transpose();
    const Eigen::Index rows = dW.rows();
    const Eigen::Index cols = dW.cols();
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        gradient->data() + offsets[l], rows, cols) = dW;
    gradient->segment(offsets[l] + rows * cols, rows) = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = layers_[l].weight.transpose() * delta;
    const Eigen::MatrixXd& h = acts[l];
    if (activation_ == Activation::tanh) {
      back.array() *= 1.0 - h.array().square();
    } else {
      back.array() *= (h.array() > 0.0).cast<double>();
    }
    delta = std::move(back);
  }
  return mean_loss;
}

Eigen::Index PredictorModel::num_parameters() const {
  Eigen::Index n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

Eigen::VectorXd PredictorModel::parameters() const {
  Eigen::VectorXd flat(num_parameters());
  Eigen::Index off = 0;
  for (const auto& layer : layers_) {
    const Eigen::Index r = layer.weight.rows();
    const Eigen::Index c = layer.weight.cols();
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        flat.data() + off, r, c) = layer.weight;
    off += r * c;
    flat.segment(off, r) = layer.bias;
    off += r;
  }
  return flat;
}

void PredictorModel::set_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != num_parameters()) throw DimensionError("parameter vector length mismatch");
  Eigen::Index off = 0;
  for (auto& layer : layers_) {
    const Eigen::Index r = layer.weight.rows();
    const Eigen::Index c = layer.weight.cols();
    layer.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                  Eigen::RowMajor>>(flat.data() + off, r, c);
    off += r * c;
    layer.bias = flat.segment(off, r);
    off += r;
  }
}

Eigen::VectorXd window_features(std::span<const Vec2> window) {
  Eigen::VectorXd x(2 * static_cast<Eigen::Index>(window.size()));
  for (std::size_t i = 0; i < window.size(); ++i) {
    x(2 * static_cast<Eigen::Index>(i)) = window[i].x();
    x(2 * static_cast<Eigen::Index>(i) + 1) = window[i].y();
  }
  return x;
}

TrainResult train(const PredictorModel& initial, std::span<const TrainingPair> pairs,
                  const TrainConfig& cfg, std::mt19937_64& rng) {
  if (pairs.empty()) throw std::invalid_argument("training needs a nonempty dataset");
  if (cfg.batch_size < 1 || cfg.epochs < 0 || !(cfg.learning_rate > 0.0)) {
    throw std::invalid_argument("invalid training configuration");
  }
  const int m = initial.basis().size();
  for (const auto& pair : pairs) {
    if (static_cast<int>(pair.window.size()) != initial.observations() ||
        pair.target.rows() != m) {
      throw DimensionError("training pair shape does not match the model");
    }
  }

  TrainResult result{initial, {}};
  Eigen::VectorXd theta = initial.parameters();
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd grad;
  std::vector<const TrainingPair*> order(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) order[i] = &pairs[i];

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count =
          std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      const std::span<const TrainingPair* const> batch(order.data() + start, count);
      const double loss = result.model.loss(batch, &grad);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << ", batch " << batches
            << ": loss = " << loss << ", gradient norm = " << grad.norm()
            << "; try a lower learning rate";
        throw TrainingDiverged(msg.str());
      }
      const double norm = grad.norm();
      if (cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm) grad *= cfg.max_grad_norm / norm;
      velocity = cfg.momentum * velocity - cfg.learning_rate * grad;
      theta += velocity;
      result.model.set_parameters(theta);
      epoch_loss += loss;
      ++batches;
    }
    result.loss_curve.push_back(epoch_loss / batches);
  }
  return result;
}

PedestrianPrediction predict(const PredictorModel& model, std::span<const Vec2> window) {
  if (static_cast<int>(window.size()) != model.observations()) {
    throw std::invalid_argument("window must hold exactly " +
                                std::to_string(model.observations()) + " points");
  }
  const Vec2 anchor = window.back();
  std::vector<Vec2> rel(window.begin(), window.end());
  for (auto& p : rel) {
    if (!p.allFinite()) throw std::invalid_argument("window points must be finite");
    p -= anchor;
  }
  const Eigen::VectorXd raw = model.forward(window_features(rel)).col(0);
  return {model.distribution(raw), model.basis(), anchor};
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'N', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void raw(const char* data, std::size_t n) { bytes_.append(data, n); }
  [[nodiscard]] const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool at_end() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("model file: " + msg + " at byte offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_model(const PredictorModel& model, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.observations()));
  w.u32(static_cast<std::uint32_t>(model.basis().size()));
  w.u32(model.activation() == Activation::tanh ? 0u : 1u);
  w.u32(static_cast<std::uint32_t>(model.layers().size()));
  w.u32(static_cast<std::uint32_t>(model.input_size()));
  for (const auto& layer : model.layers()) w.u32(static_cast<std::uint32_t>(layer.weight.rows()));
  w.f64(model.dt());
  w.f64(model.basis().gamma());
  for (Eigen::Index i = 0; i < model.basis().size(); ++i) w.f64(model.basis().centers()(i));
  const Eigen::MatrixXd& frame = model.output_frame();
  for (Eigen::Index i = 0; i < frame.rows(); ++i) {
    for (Eigen::Index j = i; j < frame.cols(); ++j) w.f64(frame(i, j));
  }
  const Eigen::VectorXd theta = model.parameters();
  for (Eigen::Index i = 0; i < theta.size(); ++i) w.f64(theta(i));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

PredictorModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  ByteReader r(ss.str());

  if (r.take(sizeof(kMagic), "magic") != std::string_view(kMagic, sizeof(kMagic))) {
    r.fail("bad magic");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kFormatVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t p = r.u32("observation count");
  const std::uint32_t m = r.u32("basis size");
  const std::uint32_t act = r.u32("activation");
  const std::uint32_t num_layers = r.u32("layer count");
  if (p < 1 || p > 10000 || m < 1 || m > 1000 || act > 1 || num_layers < 1 || num_layers > 64) {
    r.fail("implausible header values");
  }
  std::vector<std::uint32_t> widths(num_layers + 1);
  for (auto& wdt : widths) {
    wdt = r.u32("layer width");
    if (wdt < 1 || wdt > 100000) r.fail("implausible layer width");
  }
  const double dt = r.f64("dt");
  const double gamma = r.f64("gamma");
  Eigen::VectorXd centers(m);
  for (std::uint32_t i = 0; i < m; ++i) centers(i) = r.f64("basis center");
  Eigen::MatrixXd frame = Eigen::MatrixXd::Zero(m, m);
  for (std::uint32_t i = 0; i < m; ++i) {
    for (std::uint32_t j = i; j < m; ++j) frame(i, j) = r.f64("output frame");
  }

  std::vector<Layer> layers;
  for (std::uint32_t l = 0; l < num_layers; ++l) {
    Layer layer{Eigen::MatrixXd(widths[l + 1], widths[l]), Eigen::VectorXd(widths[l + 1])};
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = r.f64("weight");
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = r.f64("bias");
    layers.push_back(std::move(layer));
  }
  if (!r.at_end()) r.fail("trailing bytes after parameters");
  try {
    PredictorModel model(static_cast<int>(p), dt, BasisSpec(centers, gamma), std::move(layers),
                         act == 0 ? Activation::tanh : Activation::relu);
    model.set_output_frame(frame);
    return model;
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
}

}  // namespace span
