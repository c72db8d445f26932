#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spaqr {

using Index = int;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Parse/format problem in an input file; carries the 1-based line number.
struct ParseError : std::runtime_error {
    ParseError(const std::string& file, long line, const std::string& what)
        : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
          line(line) {}
    long line;
};

// A pivot block turned out numerically singular (zero or denormal diagonal).
struct SingularFrontError : std::runtime_error {
    SingularFrontError(int cluster, const std::string& reason)
        : std::runtime_error("singular front (cluster " + std::to_string(cluster) + "): " + reason),
          cluster(cluster),
          reason(reason) {}
    int cluster;
    std::string reason;
};

}  // namespace spaqr
