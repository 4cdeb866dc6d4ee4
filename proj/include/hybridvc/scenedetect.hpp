#pragma once

#include <vector>

#include "hybridvc/frame.hpp"

namespace hvc::scenedetect {

inline constexpr double kDefaultThreshold = 27.0;
inline constexpr int kDefaultMinSceneLen = 15;

struct CutList {
  std::vector<int> cut_indices;  // first frame of each new scene, ascending
  double threshold = kDefaultThreshold;
  int frame_count = 0;
};

enum class ReferencePolicy { kFirstOnly, kSceneCut };

// Content score between two frames on a 0..255 scale: both frames are box
// downscaled to at most 128 px on the long side, mapped to hue / saturation /
// value, and the mean absolute difference of the three channels is averaged.
double content_score(const Frame& a, const Frame& b);

// Scores for every adjacent pair; entry t-1 compares frames t-1 and t.
std::vector<double> content_scores(const VideoSequence& video);

// Frame t starts a new scene when score(t-1, t) > threshold and at least
// min_scene_len frames have passed since the previous cut. The first cut is
// not spaced against frame 0.
CutList detect_cuts(const VideoSequence& video,
                    double threshold = kDefaultThreshold,
                    int min_scene_len = kDefaultMinSceneLen);
CutList cuts_from_scores(const std::vector<double>& scores, double threshold,
                         int min_scene_len);

// Reference frame indices: always 0, plus every cut under kSceneCut.
std::vector<int> select_references(int frame_count, const CutList& cuts,
                                   ReferencePolicy policy);

}  // namespace hvc::scenedetect
