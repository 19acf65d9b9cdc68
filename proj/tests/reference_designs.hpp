#pragma once

#include <iterator>
#include <utility>

#include "pbo/tmm.hpp"

// The two recorded 20-layer mirror designs shipped with this artifact
// (material 0 = TiO2, 1 = MgF2, thickness in nm, incidence order), together
// with the externally recorded scores they are said to achieve.
namespace reference {

inline pbo::StackDesign<double> design_max() {
  const std::pair<int, double> layers[] = {
      {1, 69.2685}, {0, 150.289}, {1, 69.8393}, {0, 72.822},  {1, 133.232},
      {1, 70.3743}, {0, 39.8179}, {1, 69.4554}, {0, 135.72},  {1, 24.1919},
      {1, 67.4575}, {0, 133.263}, {1, 94.0047}, {1, 68.5537}, {0, 116.029},
      {1, 64.3018}, {0, 55.6979}, {1, 95.5128}, {1, 67.4992}, {0, 66.764}};
  pbo::StackDesign<double> stack;
  stack.layers.assign(std::begin(layers), std::end(layers));
  return stack;
}

inline pbo::StackDesign<double> design_flat() {
  const std::pair<int, double> layers[] = {
      {0, 110.746}, {1, 110.376}, {0, 100.482}, {0, 111.693}, {1, 67.618},
      {0, 116.842}, {1, 66.2679}, {0, 114.859}, {1, 69.4919}, {0, 143.449},
      {1, 69.8565}, {0, 128.275}, {1, 54.3696}, {1, 68.9895}, {0, 73.5527},
      {1, 130.846}, {1, 73.6165}, {0, 152.288}, {1, 78.8352}, {0, 133.578}};
  pbo::StackDesign<double> stack;
  stack.layers.assign(std::begin(layers), std::end(layers));
  return stack;
}

inline constexpr double kRecordedMeanMax = 0.9306;
inline constexpr double kRecordedMeanMaxTol = 0.004;
inline constexpr double kRecordedMeanFlat = 0.907;
inline constexpr double kRecordedMeanFlatTol = 0.005;

// What the listings actually evaluate to on the default 101-point grid,
// pinned as regression values (cross-checked against an independent
// implementation of the same optics).
inline constexpr double kMeasuredMeanMax = 0.7663146004008171;
inline constexpr double kMeasuredMinMax = 0.026128192158687214;
inline constexpr double kMeasuredMaxMax = 0.9734614352991392;
inline constexpr double kMeasuredMeanFlat = 0.8114309031455922;

}  // namespace reference
