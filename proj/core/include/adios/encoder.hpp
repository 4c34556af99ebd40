#pragma once

#include <vector>

#include "adios/layers.hpp"
#include "adios/types.hpp"

namespace adios {

/// Small 4-stage convolutional backbone plus MLP heads. Each stage is a
/// stride-2 convolution followed by one residual unit; features are
/// global-average-pooled into h.
struct EncoderConfig {
  int image_size = 32;
  std::vector<int> widths{16, 32, 64, 128};
  int proj_hidden = 128;
  int proj_dim = 64;
  int pred_hidden = 64;
  int gn_groups = 4;

  int feature_dim() const { return widths.back(); }
  std::vector<int64_t> stage_sizes() const {
    std::vector<int64_t> s;
    int64_t cur = image_size;
    for (size_t i = 0; i < widths.size(); ++i) {
      cur = (cur - 1) / 2 + 1;  // 3x3 conv, stride 2, pad 1
      s.push_back(cur);
    }
    return s;
  }
};

template <typename T>
struct Backbone {
  EncoderConfig cfg;
  struct Stage {
    Conv2dLayer<T> down;
    GroupNormLayer<T> down_gn;
    Conv2dLayer<T> res;
    GroupNormLayer<T> res_gn;
  };
  std::vector<Stage> stages;

  explicit Backbone(const EncoderConfig& c = {}) : cfg(c) {
    int cin = 3;
    for (size_t i = 0; i < cfg.widths.size(); ++i) {
      int cout = cfg.widths[i];
      std::string base = "backbone.s" + std::to_string(i);
      int groups = std::min(cfg.gn_groups, cout);
      stages.push_back(Stage{{base + ".down", cin, cout, 3, 2, 1},
                             {base + ".down_gn", cout, groups},
                             {base + ".res", cout, cout, 3, 1, 1},
                             {base + ".res_gn", cout, groups}});
      cin = cout;
    }
  }

  void init(ParamSet<T>& ps, Rng& rng) const {
    for (const auto& st : stages) {
      st.down.init(ps, rng);
      st.down_gn.init(ps, rng);
      st.res.init(ps, rng);
      st.res_gn.init(ps, rng);
    }
  }

  /// images [B,3,S,S] -> features [B, widths.back()]
  ag::Var<T> operator()(Workspace<T>& ws, ag::Var<T> x) const {
    for (const auto& st : stages) {
      x = ag::relu(st.down_gn(ws, st.down(ws, x)));
      auto r = st.res_gn(ws, st.res(ws, x));
      x = ag::relu(ag::add(x, r));
    }
    return ag::global_avg_pool(x);
  }
};

template <typename T>
struct MlpHead {
  LinearLayer<T> fc1, fc2;

  MlpHead(const std::string& name, int in, int hidden, int out)
      : fc1{name + ".fc1", in, hidden}, fc2{name + ".fc2", hidden, out} {}

  void init(ParamSet<T>& ps, Rng& rng) const {
    fc1.init(ps, rng);
    fc2.init(ps, rng);
  }
  ag::Var<T> operator()(Workspace<T>& ws, const ag::Var<T>& x) const {
    return fc2(ws, ag::relu(fc1(ws, x)));
  }
};

/// Transposed-convolution mirror of the backbone; reconstructs an image
/// from pooled features. Only built for the autoencoding objective.
template <typename T>
struct Decoder {
  EncoderConfig cfg;
  LinearLayer<T> fc;
  std::vector<ConvT2dLayer<T>> ups;
  std::vector<GroupNormLayer<T>> gns;  // all but the output layer
  std::vector<int64_t> out_sizes;
  int64_t start_size = 0;

  explicit Decoder(const EncoderConfig& c = {}) : cfg(c) {
    auto sizes = cfg.stage_sizes();  // e.g. 32 -> [16,8,4,2]
    start_size = sizes.back();
    fc = LinearLayer<T>{"decoder.fc", cfg.widths.back(),
                        static_cast<int>(cfg.widths.back() * start_size * start_size)};
    std::vector<int64_t> targets;
    for (size_t i = sizes.size() - 1; i-- > 0;) targets.push_back(sizes[i]);
    targets.push_back(cfg.image_size);
    int64_t cur = start_size;
    int cin = cfg.widths.back();
    for (size_t j = 0; j < targets.size(); ++j) {
      bool last = j + 1 == targets.size();
      int cout = last ? 3 : cfg.widths[cfg.widths.size() - 2 - j];
      int stride = targets[j] > cur ? 2 : 1;
      ups.push_back(ConvT2dLayer<T>{"decoder.u" + std::to_string(j), cin, cout, 3, stride, 1});
      if (!last)
        gns.push_back(GroupNormLayer<T>{"decoder.u" + std::to_string(j) + "_gn", cout,
                                        std::min(cfg.gn_groups, cout)});
      out_sizes.push_back(targets[j]);
      cur = targets[j];
      cin = cout;
    }
  }

  void init(ParamSet<T>& ps, Rng& rng) const {
    fc.init(ps, rng);
    for (const auto& u : ups) u.init(ps, rng);
    for (const auto& g : gns) g.init(ps, rng);
  }

  ag::Var<T> operator()(Workspace<T>& ws, const ag::Var<T>& h) const {
    int64_t b = h->value.dim(0);
    auto x = ag::reshape(ag::relu(fc(ws, h)),
                         {b, static_cast<int64_t>(cfg.widths.back()), start_size, start_size});
    for (size_t j = 0; j < ups.size(); ++j) {
      x = ups[j](ws, x, out_sizes[j], out_sizes[j]);
      if (j + 1 < ups.size()) x = ag::relu(gns[j](ws, x));
    }
    return ag::sigmoid(x);
  }
};

template <typename T>
struct Embeddings {
  ag::Var<T> h, z, y;  // y null unless the objective uses a predictor
};

/// All encoder-side networks for one objective, with their parameters.
/// BYOL additionally keeps a target copy of backbone+projector that is
/// updated by EMA only and never enters the gradient tape.
template <typename T>
struct EncoderNet {
  EncoderConfig cfg;
  Objective objective = Objective::simclr;
  Backbone<T> backbone;
  MlpHead<T> projector;
  MlpHead<T> predictor;
  Decoder<T> decoder;
  ParamSet<T> params;
  ParamSet<T> target;  // byol only

  EncoderNet(const EncoderConfig& c, Objective obj)
      : cfg(c),
        objective(obj),
        backbone(c),
        projector("projector", c.feature_dim(), c.proj_hidden, c.proj_dim),
        predictor("predictor", c.proj_dim, c.pred_hidden, c.proj_dim),
        decoder(c) {}

  bool has_predictor() const {
    return objective == Objective::simsiam || objective == Objective::byol;
  }
  bool has_decoder() const { return objective == Objective::ae; }

  void init(Rng& rng) {
    backbone.init(params, rng);
    projector.init(params, rng);
    if (has_predictor()) predictor.init(params, rng);
    if (has_decoder()) decoder.init(params, rng);
    if (objective == Objective::byol) {
      for (const auto& [name, e] : params)
        if (name.rfind("predictor.", 0) != 0) target.add(name, e.value, false);
    }
  }

  Embeddings<T> encode(Workspace<T>& ws, const ag::Var<T>& images,
                       bool with_predictor = true) const {
    Embeddings<T> e;
    e.h = backbone(ws, images);
    e.z = projector(ws, e.h);
    if (with_predictor && has_predictor()) e.y = predictor(ws, e.z);
    return e;
  }

  /// Target-branch embedding for BYOL: frozen parameters, no predictor.
  Embeddings<T> encode_target(Workspace<T>& ws, const ag::Var<T>& images) const {
    Embeddings<T> e;
    e.h = backbone(ws, images);
    e.z = projector(ws, e.h);
    return e;
  }
};

}  // namespace adios
