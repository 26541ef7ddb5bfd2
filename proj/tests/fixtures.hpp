#pragma once

// Frozen experiment fixtures shared by the unit suites and the acceptance
// runner. Values were chosen once by probing; tests assert against them
// deterministically.

#include "fedsim/toy.hpp"

namespace fixtures {

// Cosine motivation task: heterogeneous pair aligned by brute-force q.
inline fedsim::toy::ToyClientSpec cosine_client1() { return {{1.0}, 0.05, 160, 7}; }
inline fedsim::toy::ToyClientSpec cosine_client2() { return {{1.5}, 0.05, 160, 8}; }
constexpr double kCosineP = 0.1;

// Federated linear-regression pair: two samples per client make the joint
// (w, q1, q2) system exactly solvable, which is what the offsets exploit.
inline fedsim::toy::ToyClientSpec linear_client1() { return {{1.0, 2.0}, 0.05, 2, 12}; }
inline fedsim::toy::ToyClientSpec linear_client2() { return {{3.0, 1.0}, 0.05, 2, 13}; }
constexpr double kLinearLr = 0.01;
constexpr int kLinearRounds = 2000;

}  // namespace fixtures
