#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

#include "e2bki/gaussian.hpp"

namespace e2bki {

/// Raised on malformed frame or sidecar files; the message carries the path
/// and 1-based line number.
class FrameParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One sensor frame: evidential points plus the sensor origin they were
/// captured from.
struct Frame {
    int class_count = 0;
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    std::vector<EvidentialPoint> points;
};

/// Frame file format (version 1):
///   E2BKI-FRAME v1
///   classes C
///   points N
///   origin ox oy oz
///   x y z p1 ... pC u range      (N lines, decimal ASCII)
/// The parser rejects malformed headers, wrong field counts and non-numeric
/// fields with line-numbered errors.
Frame read_frame_file(const std::string& path);
void write_frame_file(const std::string& path, const Frame& frame);

/// Ground-truth sidecar (version 1): per-point true class, same ordering as
/// the frame file; -1 marks points without ground truth (spurious returns).
///   E2BKI-TRUTH v1
///   points N
///   c                            (N lines)
std::vector<int> read_truth_file(const std::string& path);
void write_truth_file(const std::string& path, const std::vector<int>& classes);

/// Full-precision decimal formatting that round-trips doubles exactly.
std::string format_double(double v);

} // namespace e2bki
