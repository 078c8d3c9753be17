#pragma once

// Generated by tools/compute_normalization (10000000 uniform samples, all cube vertices,
// published optima,
// pattern-search refinement from the best 100). Raw extrema over [0,1]^d.

namespace metapo::bench {

struct NormalizationConstants {
  const char* name;
  double raw_min;
  double raw_max;
};

inline constexpr NormalizationConstants kNormalization[] = {
    // argmax (0.1145888752066529, 0.55564889392978645, 0.85254698495100512)
    {"hartmann3", 3.7727185141626815e-05, 3.8627797873326628},
    // argmax (0.2016895091009967, 0.15001069232572195, 0.47687397032924023, 0.27533243042719446, 0.31165161592292051, 0.65730053597877514)
    {"hartmann6", 2.8124505439686521e-08, 3.3223680114155152},
    // argmax (0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5)
    {"isotropic_gaussian15", 0.0038659201394728076, 1},
    // argmax (0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625, 0.744140625)
    {"rosenbrock20", -74212.598309990397, -8.2333505122554333e-31},
};

}  // namespace metapo::bench
