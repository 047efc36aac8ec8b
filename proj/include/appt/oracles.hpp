#pragma once

#include <vector>

#include "appt/backbone.hpp"
#include "appt/embed.hpp"
#include "appt/pointcloud.hpp"

namespace appt {

// Straight-line reference implementations, written with plain loops and kept
// independent of the tape/kernel code paths they are compared against.

// Classic i-j-k triple loop.
Tensor matmul_ref(const Tensor& a, const Tensor& b);

// Exact GELU through the error function.
double gelu_erf_ref(double x);

// Row softmax accumulated in extended precision after max subtraction.
std::vector<double> softmax_ref(const std::vector<double>& row);

// Single-head-at-a-time attention with explicit loops.
Tensor mhsa_ref(const Tensor& tokens, const BlockParams& block, const BackboneConfig& config);

// Full block (both wiring modes), plain loops only.
Tensor block_forward_ref(const Tensor& tokens, const BlockParams& block,
                         const BackboneConfig& config);

// Per-group embedding pipeline re-implemented directly.
Tensor point_embed_ref(const Tensor& group_rows, int group_size, const PointEmbedParams& params);

// Exhaustive greedy farthest point sampling; min-distances recomputed from
// scratch at every step.
std::vector<int> fps_ref(const PointCloud& cloud, int n_s, int start_index);

// Brute-force kNN by fully sorting (distance, index) pairs.
std::vector<std::vector<int>> knn_ref(const PointCloud& cloud, const std::vector<int>& centroids,
                                      int k);

} // namespace appt
