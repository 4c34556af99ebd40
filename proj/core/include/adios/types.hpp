#pragma once

#include <string>

#include "adios/tensor.hpp"

namespace adios {

enum class Objective { simclr, simsiam, byol, enc, ae };

enum class MaskScheme { adios, adios_s, none, mae, beit, gt_object, fg_bg, box, shuffled_gt };

inline Objective parse_objective(const std::string& s) {
  if (s == "simclr") return Objective::simclr;
  if (s == "simsiam") return Objective::simsiam;
  if (s == "byol") return Objective::byol;
  if (s == "enc") return Objective::enc;
  if (s == "ae") return Objective::ae;
  throw ConfigError("unknown objective: '" + s + "' (expected simclr|simsiam|byol|enc|ae)");
}

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::simclr: return "simclr";
    case Objective::simsiam: return "simsiam";
    case Objective::byol: return "byol";
    case Objective::enc: return "enc";
    case Objective::ae: return "ae";
  }
  return "?";
}

inline MaskScheme parse_mask_scheme(const std::string& s) {
  if (s == "adios") return MaskScheme::adios;
  if (s == "adios_s") return MaskScheme::adios_s;
  if (s == "none") return MaskScheme::none;
  if (s == "mae") return MaskScheme::mae;
  if (s == "beit") return MaskScheme::beit;
  if (s == "gt_object") return MaskScheme::gt_object;
  if (s == "fg_bg") return MaskScheme::fg_bg;
  if (s == "box") return MaskScheme::box;
  if (s == "shuffled_gt") return MaskScheme::shuffled_gt;
  throw ConfigError("unknown mask scheme: '" + s +
                    "' (expected adios|adios_s|none|mae|beit|gt_object|fg_bg|box|shuffled_gt)");
}

inline std::string to_string(MaskScheme m) {
  switch (m) {
    case MaskScheme::adios: return "adios";
    case MaskScheme::adios_s: return "adios_s";
    case MaskScheme::none: return "none";
    case MaskScheme::mae: return "mae";
    case MaskScheme::beit: return "beit";
    case MaskScheme::gt_object: return "gt_object";
    case MaskScheme::fg_bg: return "fg_bg";
    case MaskScheme::box: return "box";
    case MaskScheme::shuffled_gt: return "shuffled_gt";
  }
  return "?";
}

inline bool is_learned_scheme(MaskScheme m) {
  return m == MaskScheme::adios || m == MaskScheme::adios_s;
}

inline bool is_gt_scheme(MaskScheme m) {
  return m == MaskScheme::gt_object || m == MaskScheme::fg_bg || m == MaskScheme::box ||
         m == MaskScheme::shuffled_gt;
}

/// Encoder/projector/predictor outputs for a batch, as plain tensors.
struct EmbeddingBatch {
  TensorF h;  // backbone features, used for downstream evaluation
  TensorF z;  // projector outputs
  TensorF y;  // predictor outputs; empty unless the objective uses one
};

}  // namespace adios
