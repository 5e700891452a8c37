#pragma once

namespace psydef {

inline constexpr double kDefaultKappaThreshold = 0.60;

/// Quality-control scores attached to a gated synthetic batch.
struct QcVerdict {
    double self_bleu = 0.0;           // [0,1]
    double semantic_adherence = 0.0;  // [0,1]
    double kappa = 0.0;               // [-1,1]
    bool accepted = false;            // accepted <=> kappa >= threshold
};

}  // namespace psydef
