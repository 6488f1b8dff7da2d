#pragma once

// Learned map from a short window of observed pedestrian positions to a
// matrix-normal distribution over future trajectory weights.
//
// All learning happens in a relative frame: the window and its future are
// translated so the last observation is the origin and its time is 0.
// A fully connected network outputs an unconstrained vector that decode()
// turns into (M, L_U, L_V); training minimizes the matrix-normal negative
// log-likelihood of fitted future weights.
//
// The network may emit its distribution in a fixed linear frame z = Q W with
// Q upper triangular. Matrix-normal laws map exactly under such a change of
// coordinates, so this only rescales the learning problem: with Q^T Q equal to
// the regularized Gram matrix of the future samples divided by their count,
// the z coordinates are on the scale of trajectory positions, instead of the
// large, mutually cancelling weights that a wide basis produces.

#include <Eigen/Dense>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "span/prediction.hpp"
#include "span/sp_trajectory.hpp"

namespace span {

// ---------------------------------------------------------------------------
// Dataset construction

/// A timestamped trajectory (strictly increasing times).
using Track = std::vector<TimedPoint>;

struct DatasetConfig {
  double dt = 0.1;       ///< observation spacing, s
  int observations = 5;  ///< window length p
  double horizon = 4.0;  ///< future segment length, s
  double lambda = 1e-4;  ///< ridge weight for fitting future segments
};

/// Window positions relative to the last observation, oldest first, and
/// the weights fitted to the following `horizon` seconds in the same frame.
struct TrainingPair {
  std::vector<Vec2> window;
  WeightMatrix target;
};

struct Dataset {
  std::vector<TrainingPair> pairs;
  int skipped_tracks = 0;  ///< tracks too short for a single pair
};

/// Samples a track at t0, t0 + dt, ... up to its last time by linear
/// interpolation. Throws std::invalid_argument on non-increasing times.
[[nodiscard]] std::vector<Vec2> resample(const Track& track, double dt);

/// Sliding windows with stride dt over every resampled track. A track of n
/// samples yields n - p - H + 1 pairs with H = round(horizon / dt); each
/// future segment is the H + 1 samples from the last observation onward.
[[nodiscard]] Dataset build_dataset(std::span<const Track> tracks, const BasisSpec& basis,
                                    const DatasetConfig& cfg);

/// Deterministic track split: a seeded shuffle, then the first
/// round(train_fraction * n) tracks go to the first set.
struct TrackSplit {
  std::vector<Track> train;
  std::vector<Track> test;
};
[[nodiscard]] TrackSplit split_tracks(std::span<const Track> tracks, double train_fraction,
                                      std::mt19937_64& rng);

/// Straight constant-velocity walkers with Gaussian position noise, used for
/// synthetic training and evaluation.
struct SyntheticTrackConfig {
  int count = 100;
  double duration = 8.0;   ///< s
  double dt = 0.1;         ///< s
  double min_speed = 0.5;  ///< m/s
  double max_speed = 1.5;  ///< m/s
  double extent = 10.0;    ///< start positions uniform in [-extent, extent]^2
  double noise = 0.02;     ///< position noise standard deviation, m
};
[[nodiscard]] std::vector<Track> synthetic_tracks(const SyntheticTrackConfig& cfg,
                                                  std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Output head

/// Length of the raw network output for m basis functions:
/// 2m mean entries, m(m+1)/2 entries of L_U, 3 entries of L_V.
[[nodiscard]] constexpr int raw_output_size(int m) { return 2 * m + m * (m + 1) / 2 + 3; }

/// Maps an unconstrained vector to valid matrix-normal parameters.
///
/// Layout: M column by column (x weights, then y weights); L_U row by row
/// over its lower triangle; L_V as (0,0), (1,0), (1,1). Diagonal entries
/// of both factors pass through softplus(.) + 1e-6, so every input decodes.
[[nodiscard]] MatrixNormalParams decode(const Eigen::VectorXd& raw, int m);

/// Inverse of decode.
[[nodiscard]] Eigen::VectorXd encode(const MatrixNormalParams& params);

/// mn_nll(decode(raw), target) and its gradient with respect to raw.
struct RawLossGradient {
  double loss;
  Eigen::VectorXd grad;
};
[[nodiscard]] RawLossGradient nll_raw_gradient(const Eigen::VectorXd& raw,
                                               const WeightMatrix& target);

// ---------------------------------------------------------------------------
// Network

enum class Activation { tanh, relu };

struct Layer {
  Eigen::MatrixXd weight;  ///< out x in
  Eigen::VectorXd bias;
};

class PredictorModel {
 public:
  /// Fresh network with weights and biases drawn uniformly from
  /// [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  PredictorModel(int observations, double dt, BasisSpec basis, const std::vector<int>& hidden,
                 Activation activation, std::mt19937_64& rng);

  /// Network with given layers; validates that the shapes chain from 2p
  /// inputs to raw_output_size(m) outputs.
  PredictorModel(int observations, double dt, BasisSpec basis, std::vector<Layer> layers,
                 Activation activation);

  [[nodiscard]] int observations() const { return observations_; }
  [[nodiscard]] double dt() const { return dt_; }
  [[nodiscard]] const BasisSpec& basis() const { return basis_; }
  [[nodiscard]] Activation activation() const { return activation_; }
  [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }
  [[nodiscard]] int input_size() const { return 2 * observations_; }

  /// Fixed output frame Q (identity unless set). Throws
  /// std::invalid_argument unless Q is m x m upper triangular with a
  /// positive diagonal.
  [[nodiscard]] const Eigen::MatrixXd& output_frame() const { return output_frame_; }
  void set_output_frame(const Eigen::MatrixXd& frame);

  /// Weight-space distribution for one raw output column:
  /// decode(raw) in the output frame, mapped back through Q^-1.
  [[nodiscard]] MatrixNormalParams distribution(const Eigen::VectorXd& raw) const;

  /// Raw outputs for a batch: one input per column.
  [[nodiscard]] Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;

  /// Mean weight-space NLL over the given pairs and, if requested, its
  /// gradient with respect to parameters() (same layout).
  double loss(std::span<const TrainingPair* const> batch, Eigen::VectorXd* gradient) const;

  /// All weights and biases, layer by layer, each weight matrix row-major
  /// followed by its bias.
  [[nodiscard]] Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);
  [[nodiscard]] Eigen::Index num_parameters() const;

 private:
  int observations_;
  double dt_;
  BasisSpec basis_;
  std::vector<Layer> layers_;
  Activation activation_;
  Eigen::MatrixXd output_frame_;
  double frame_log_det_ = 0.0;
};

/// Output frame that whitens targets built with `cfg`: Q = L^T where
/// L L^T = (Phi^T Phi + lambda I) / n over the n future sample times
/// 0, dt, ..., horizon. Then |Q W|^2 is the mean squared position of the
/// trajectory plus the scaled ridge term.
[[nodiscard]] Eigen::MatrixXd whitening_frame(const BasisSpec& basis, const DatasetConfig& cfg);

/// Network input for a relative-frame window: x0, y0, x1, y1, ...
[[nodiscard]] Eigen::VectorXd window_features(std::span<const Vec2> window);

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch_size = 64;
  int epochs = 200;
  /// Rescales each mini-batch gradient to at most this Euclidean norm;
  /// 0 disables clipping.
  double max_grad_norm = 10.0;
};

struct TrainResult {
  PredictorModel model;
  std::vector<double> loss_curve;  ///< mean mini-batch loss per epoch
};

/// Raised when the training loss or parameters become non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mini-batch gradient descent with momentum from `initial`. Batches are
/// drawn from a seeded shuffle each epoch. Throws std::invalid_argument on
/// an empty dataset and TrainingDiverged on a non-finite loss.
[[nodiscard]] TrainResult train(const PredictorModel& initial,
                                std::span<const TrainingPair> pairs, const TrainConfig& cfg,
                                std::mt19937_64& rng);

/// Prediction for a world-frame window of exactly p points (oldest first).
/// The returned distribution lives in the frame anchored at the last point.
/// Throws std::invalid_argument on a wrong window length.
[[nodiscard]] PedestrianPrediction predict(const PredictorModel& model,
                                           std::span<const Vec2> window);

// ---------------------------------------------------------------------------
// Persistence

/// Binary model file, all fields little-endian:
///   8 bytes   magic "SPANMDL\0"
///   u32       format version (1)
///   u32 p, u32 m, u32 activation (0 tanh, 1 relu), u32 layer count L
///   u32 x (L+1) layer widths, input first
///   f64 dt, f64 gamma, f64 x m basis centers
///   f64 x m(m+1)/2 output frame, upper triangle row by row
///   f64 parameters in parameters() order
void save_model(const PredictorModel& model, const std::filesystem::path& path);

/// Throws ParseError (with byte offset) on malformed files.
[[nodiscard]] PredictorModel load_model(const std::filesystem::path& path);

}  // namespace span
