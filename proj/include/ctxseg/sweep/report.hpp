#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctxseg/sweep/study.hpp"

namespace ctxseg {

struct ReportRow {
    std::string strategy;
    std::vector<std::pair<std::string, double>> task_dice;  // best-trial test dice per task
    double mean = 0.0;
    std::optional<double> std;  // population std, absent for a single task
};

struct StudyResult {
    std::string strategy;
    std::string task;
    StudyState study;
};

std::vector<ReportRow> build_report(const std::vector<StudyResult>& results);
std::string format_report(const std::vector<ReportRow>& rows, const std::string& header = "");
std::string report_csv(const std::vector<ReportRow>& rows);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;  // NaN when y has no variance
    std::size_t n = 0;
};

/// Ordinary least squares y = a + b x. NaN slope when x is constant.
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

struct DepthScatter {
    std::vector<double> depth;
    std::vector<double> test_dice;
    LinearFit fit;
};

DepthScatter depth_scatter(const std::vector<StudyResult>& results);
std::string scatter_csv(const DepthScatter& scatter);

}  // namespace ctxseg
