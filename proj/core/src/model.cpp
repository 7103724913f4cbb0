#include "mer/model.hpp"

#include <algorithm>

#include "mer/error.hpp"
#include "mer/ops.hpp"

namespace mer {

namespace {

const char* stream_prefix(StreamKind k) {
  switch (k) {
    case StreamKind::Spatial: return "s";
    case StreamKind::Local: return "l";
    case StreamKind::Temporal: return "t";
  }
  return "?";
}

// Taps for the two auxiliary classifiers: after the first and third blocks.
constexpr std::size_t kAuxTaps[2] = {0, 2};
constexpr std::size_t kTemporalFrames = 2;

}  // namespace

void ModelConfig::validate() const {
  if (num_classes < 2) throw ParameterError("num_classes must be >= 2");
  if (base_channels.size() != 4) throw ParameterError("base_channels must list exactly 4 block widths");
  for (std::size_t c : base_channels) {
    if (c < 1) throw ParameterError("block widths must be positive");
    if (use_tsm && c < 8) throw ParameterError("block widths must be >= 8 when use_tsm is set");
  }
  if (grid < 1 || grid > 16) throw ParameterError("grid must lie in [1,16]");
  if (input_size < 16 || input_size % 16 != 0) throw ParameterError("input_size must be a positive multiple of 16");
  if (mag_channels < 1) throw ParameterError("mag_channels must be positive");
  if (!(lambda1 >= 0.0f && lambda1 < 1.0f)) throw ParameterError("lambda1 must lie in [0,1)");
  if (!(lambda2 >= 0.0f)) throw ParameterError("lambda2 must be non-negative");
  if (!(temperature > 0.0f)) throw ParameterError("temperature must be positive");
  if (!(gamma_focal >= 0.0f)) throw ParameterError("gamma_focal must be non-negative");
  if (shift_fraction < 0.0 || shift_fraction > 0.5) throw ParameterError("shift_fraction must lie in [0,0.5]");
}

Tensor ConvBlock::forward(const Tensor& x) const {
  Tensor in = tsm ? tsm_shift(*tsm, x) : x;
  Tensor y = relu(conv2d(in, weight, bias, 1, 1));
  if (eca) y = eca->forward(y);
  return max_pool2d(y);
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const auto& widths = cfg_.base_channels;

  auto make_block = [&](const std::string& name, StreamKind kind, std::size_t cin, std::size_t cout, bool shift) {
    ConvBlock b;
    b.weight = params_.add(name + ".weight", {cout, cin, 3, 3}, Init::HeNormal, rng);
    b.bias = params_.add(name + ".bias", {cout}, Init::Zeros, rng);
    if (kind == StreamKind::Local && cfg_.use_eca) b.eca.emplace(cout, params_, name + ".eca", rng);
    if (kind == StreamKind::Temporal && cfg_.use_tsm && shift)
      b.tsm = TsmSpec::for_channels(cin, kTemporalFrames, cfg_.shift_fraction);
    return b;
  };

  for (StreamKind kind : {StreamKind::Spatial, StreamKind::Local, StreamKind::Temporal}) {
    Stream s{kind, std::nullopt, {}};
    const std::string p = stream_prefix(kind);
    const std::size_t raw = kind == StreamKind::Spatial ? 1 : kind == StreamKind::Local ? cfg_.grid * cfg_.grid : 2;
    if (cfg_.use_mag) s.mag.emplace(raw, cfg_.mag_channels, cfg_.alpha_amp, params_, p + ".mag", rng);
    std::size_t cin = cfg_.use_mag ? cfg_.mag_channels : raw;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      // The first block reads the (magnified) raw representation and is not shifted.
      s.blocks.push_back(make_block(p + ".block" + std::to_string(i), kind, cin, widths[i], i > 0));
      cin = widths[i];
    }
    streams_.push_back(std::move(s));
  }
  head_ = make_head("head", cfg_.num_classes, rng);

  if (cfg_.use_skd) {
    for (std::size_t a = 0; a < 2; ++a) {
      AuxBranch branch;
      branch.tap = kAuxTaps[a];
      const std::string ap = "aux" + std::to_string(a + 1);
      for (StreamKind kind : {StreamKind::Spatial, StreamKind::Local, StreamKind::Temporal}) {
        std::vector<ConvBlock> path;
        std::size_t cin = widths[branch.tap];
        for (std::size_t j = branch.tap + 1; j < widths.size(); ++j) {
          // Half the main width at equal depth; the last layer matches the
          // fused width so hints align with the deepest classifier.
          const std::size_t cout = j + 1 == widths.size() ? widths[j] : std::max<std::size_t>(1, widths[j] / 2);
          path.push_back(
              make_block(ap + "." + stream_prefix(kind) + ".block" + std::to_string(j), kind, cin, cout, true));
          cin = cout;
        }
        branch.paths.push_back(std::move(path));
      }
      branch.head = make_head(ap + ".head", cfg_.num_classes, rng);
      aux_.push_back(std::move(branch));
    }
  }
}

Model::Head Model::make_head(const std::string& name, std::size_t num_classes, std::mt19937_64& rng) {
  Head h;
  h.name = name;
  h.weight = params_.add(name + ".weight", {num_classes, cfg_.hint_dim()}, Init::HeNormal, rng);
  h.bias = params_.add(name + ".bias", {num_classes}, Init::Zeros, rng);
  return h;
}

std::vector<std::string> Model::head_names() const {
  std::vector<std::string> names{head_.name + ".bias", head_.name + ".weight"};
  for (const auto& a : aux_) {
    names.push_back(a.head.name + ".bias");
    names.push_back(a.head.name + ".weight");
  }
  std::sort(names.begin(), names.end());
  return names;
}

void Model::replace_heads(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ParameterError("num_classes must be >= 2");
  std::mt19937_64 rng(seed);
  auto redo = [&](Head& h) {
    h.weight = params_.replace(h.name + ".weight", {num_classes, cfg_.hint_dim()}, Init::HeNormal, rng);
    h.bias = params_.replace(h.name + ".bias", {num_classes}, Init::Zeros, rng);
  };
  redo(head_);
  for (auto& a : aux_) redo(a.head);
  cfg_.num_classes = num_classes;
}

void Model::check_inputs(const ModelInputs& in) const {
  const std::size_t n = in.s_apex.dim(0), s = cfg_.input_size, g2 = cfg_.grid * cfg_.grid;
  auto expect = [](const Tensor& t, const Shape& shape, const char* what) {
    if (!t.defined() || t.shape() != shape)
      throw DimensionError(std::string("model input ") + what + " must be " + shape_str(shape) + ", got " +
                           (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
  };
  expect(in.s_apex, {n, 1, s, s}, "s_apex");
  expect(in.l_apex, {n, g2, s, s}, "l_apex");
  expect(in.t_flow, {n, 2, 2, s, s}, "t_flow");
  if (cfg_.use_mag) {
    expect(in.s_onset, {n, 1, s, s}, "s_onset");
    expect(in.l_onset, {n, g2, s, s}, "l_onset");
  }
}

Tensor Model::stream_input(const Stream& st, const ModelInputs& in) const {
  switch (st.kind) {
    case StreamKind::Spatial: return st.mag ? st.mag->forward(in.s_onset, in.s_apex) : in.s_apex;
    case StreamKind::Local: return st.mag ? st.mag->forward(in.l_onset, in.l_apex) : in.l_apex;
    case StreamKind::Temporal: {
      const std::size_t n = in.t_flow.dim(0), s = cfg_.input_size;
      // Both temporal domains ride along the batch axis: [N*2, 2, s, s].
      Tensor flow = reshape(in.t_flow, {n * kTemporalFrames, 2, s, s});
      if (!st.mag) return flow;
      return st.mag->forward(Tensor::zeros(flow.shape()), flow);
    }
  }
  throw ContractError("unknown stream");
}

Tensor Model::stream_magnified(StreamKind kind, const ModelInputs& in) const {
  check_inputs(in);
  for (const auto& s : streams_)
    if (s.kind == kind) return stream_input(s, in);
  throw ContractError("unknown stream");
}

Tensor Model::fuse(const std::vector<Tensor>& features) const {
  std::vector<Tensor> pooled;
  for (const auto& f : features) pooled.push_back(flatten(global_pool(f, PoolMode::Avg)));
  return concat(pooled);
}

ClassifierBundle Model::forward(const ModelInputs& in, bool with_aux) const {
  check_inputs(in);
  const bool aux = with_aux && !aux_.empty();

  // taps[stream][block] holds each block output needed by an auxiliary branch.
  std::vector<std::vector<Tensor>> taps(streams_.size());
  std::vector<Tensor> finals;
  for (std::size_t si = 0; si < streams_.size(); ++si) {
    const Stream& s = streams_[si];
    Tensor x = stream_input(s, in);
    for (std::size_t b = 0; b < s.blocks.size(); ++b) {
      x = s.blocks[b].forward(x);
      taps[si].push_back(x);
    }
    if (s.kind == StreamKind::Temporal) x = frame_mean(x, kTemporalFrames);
    finals.push_back(x);
  }
  Tensor fused = fuse(finals);
  Tensor logits = linear(fused, head_.weight, head_.bias);

  ClassifierBundle bundle;
  if (aux) {
    for (const auto& branch : aux_) {
      std::vector<Tensor> outs;
      for (std::size_t si = 0; si < streams_.size(); ++si) {
        Tensor x = taps[si][branch.tap];
        for (const auto& blk : branch.paths[si]) x = blk.forward(x);
        if (streams_[si].kind == StreamKind::Temporal) x = frame_mean(x, kTemporalFrames);
        outs.push_back(x);
      }
      Tensor hint = fuse(outs);
      bundle.logits.push_back(linear(hint, branch.head.weight, branch.head.bias));
      bundle.hints.push_back(hint);
    }
  }
  bundle.logits.push_back(logits);
  bundle.hints.push_back(fused);
  return bundle;
}

}  // namespace mer
