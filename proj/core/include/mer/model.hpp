#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mer/blocks.hpp"
#include "mer/params.hpp"
#include "mer/tensor.hpp"

namespace mer {

/// Architecture and loss hyperparameters.
struct ModelConfig {
  std::size_t num_classes = 3;
  std::vector<std::size_t> base_channels{16, 32, 64, 64};
  std::size_t grid = 4;
  std::size_t input_size = 48;
  std::size_t mag_channels = 16;
  double shift_fraction = 0.125;
  float alpha_amp = 2.0f;
  bool use_mag = true;
  bool use_eca = true;
  bool use_tsm = true;
  bool use_skd = true;
  float temperature = 3.0f;
  float lambda1 = 0.1f;
  float lambda2 = 1e-6f;
  float gamma_focal = 2.0f;

  /// Throws ParameterError on inconsistent settings.
  void validate() const;
  std::size_t hint_dim() const { return 3 * base_channels.back(); }
};

/// Per-batch network inputs. Shapes for batch N, grid n and input size s:
///   s_onset, s_apex  [N,1,s,s]
///   l_onset, l_apex  [N,n*n,s,s]
///   t_flow           [N,2,2,s,s]  (temporal domain, (u,v), rows, cols)
/// Onset tensors are only read when magnification is enabled.
struct ModelInputs {
  Tensor s_onset, s_apex, l_onset, l_apex, t_flow;
  std::size_t batch() const { return s_apex.dim(0); }
};

/// Classifier outputs ordered shallow to deep; the deepest classifier is
/// always last. Without self-distillation only the deepest is present.
struct ClassifierBundle {
  std::vector<Tensor> logits;  // each [N,K]
  std::vector<Tensor> hints;   // each [N,D]
  const Tensor& deepest_logits() const { return logits.back(); }
  std::size_t size() const { return logits.size(); }
};

enum class StreamKind { Spatial, Local, Temporal };

/// conv3x3 (+bias) -> relu -> [ECA] -> 2x2 max-pool, optionally preceded by a
/// temporal shift.
struct ConvBlock {
  Tensor weight, bias;
  std::optional<EcaLayer> eca;
  std::optional<TsmSpec> tsm;
  Tensor forward(const Tensor& x) const;
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;

  /// When `with_aux` is false the auxiliary branches are not evaluated and
  /// the bundle holds only the deepest classifier.
  ClassifierBundle forward(const ModelInputs& in, bool with_aux = true) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Names of the fully-connected classifier parameters (all classifiers).
  std::vector<std::string> head_names() const;
  /// Re-initialises every classifier head for `num_classes` outputs.
  void replace_heads(std::size_t num_classes, std::uint64_t seed);

  /// Magnification output of one stream, exposed for inspection.
  Tensor stream_magnified(StreamKind kind, const ModelInputs& in) const;

 private:
  struct Stream {
    StreamKind kind;
    std::optional<MagModule> mag;
    std::vector<ConvBlock> blocks;
  };
  struct Head {
    std::string name;
    Tensor weight, bias;
  };
  struct AuxBranch {
    std::size_t tap;                            // main block index the branch reads from
    std::vector<std::vector<ConvBlock>> paths;  // one per stream
    Head head;
  };

  Tensor stream_input(const Stream& s, const ModelInputs& in) const;
  Head make_head(const std::string& name, std::size_t num_classes, std::mt19937_64& rng);
  Tensor fuse(const std::vector<Tensor>& stream_features) const;
  void check_inputs(const ModelInputs& in) const;

  ModelConfig cfg_;
  ParamStore params_;
  std::vector<Stream> streams_;
  Head head_;
  std::vector<AuxBranch> aux_;
};

}  // namespace mer
