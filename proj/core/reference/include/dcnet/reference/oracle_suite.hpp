#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Seeded comparisons of the library against the reference implementations.
// Shared by `dcnet oracle` and the acceptance binary.
namespace dcnet::reference {

struct OracleReport {
  std::string name;
  int cases = 0;
  double max_error = 0.0;
  double tolerance = 0.0;  // 0 means exact equality is required
  double seconds = 0.0;
  bool passed = true;
  std::string detail;  // first failure, if any
};

// Vectorized distill vs the per-pixel loop; C <= 32, spatial <= 8x8, N <= 4.
OracleReport attention_oracle(std::uint64_t seed, int instances = 50);
// Random (feature, box, resolution) cases plus degenerate and out-of-bounds boxes.
OracleReport roi_align_oracle(std::uint64_t seed, int cases = 200);
OracleReport conv_oracle(std::uint64_t seed, int cases = 40);
OracleReport resize_oracle(std::uint64_t seed, int cases = 60);
OracleReport nms_oracle(std::uint64_t seed, int cases = 200);
OracleReport proposal_oracle(std::uint64_t seed, int cases = 60);
// Crafted and random detection scenarios against the exact rational scorer.
OracleReport ap_oracle(std::uint64_t seed, int cases = 300);

std::vector<OracleReport> run_oracle_suite(std::uint64_t seed);

}  // namespace dcnet::reference
