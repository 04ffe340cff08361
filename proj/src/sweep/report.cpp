#include "ctxseg/sweep/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace ctxseg {

namespace {

std::string fixed(double v, int digits = 4) {
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::vector<std::string> task_order(const std::vector<ReportRow>& rows) {
    std::vector<std::string> tasks;
    for (const auto& r : rows)
        for (const auto& [t, d] : r.task_dice)
            if (std::find(tasks.begin(), tasks.end(), t) == tasks.end()) tasks.push_back(t);
    return tasks;
}

std::optional<double> lookup(const ReportRow& r, const std::string& task) {
    for (const auto& [t, d] : r.task_dice)
        if (t == task) return d;
    return std::nullopt;
}

}  // namespace

std::vector<ReportRow> build_report(const std::vector<StudyResult>& results) {
    std::vector<ReportRow> rows;
    // per (strategy, task): test dice of the trial with the best val dice
    std::vector<std::vector<std::pair<std::string, std::pair<double, double>>>> best;
    for (const auto& r : results) {
        const auto b = r.study.best();
        if (!b) continue;
        const auto& trial = r.study.trials[*b];
        auto row = std::find_if(rows.begin(), rows.end(), [&](const ReportRow& x) { return x.strategy == r.strategy; });
        if (row == rows.end()) {
            rows.push_back({r.strategy, {}, 0.0, std::nullopt});
            best.emplace_back();
            row = rows.end() - 1;
        }
        auto& slots = best[static_cast<std::size_t>(row - rows.begin())];
        auto slot = std::find_if(slots.begin(), slots.end(), [&](const auto& s) { return s.first == r.task; });
        if (slot == slots.end()) {
            slots.push_back({r.task, {trial.val_dice, trial.test_dice}});
        } else if (trial.val_dice > slot->second.first) {
            slot->second = {trial.val_dice, trial.test_dice};
        }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double sum = 0.0;
        for (const auto& [task, vt] : best[i]) {
            rows[i].task_dice.push_back({task, vt.second});
            sum += vt.second;
        }
        const double n = static_cast<double>(best[i].size());
        rows[i].mean = sum / n;
        if (best[i].size() > 1) {
            double var = 0.0;
            for (const auto& [task, d] : rows[i].task_dice) var += (d - rows[i].mean) * (d - rows[i].mean);
            rows[i].std = std::sqrt(var / n);
        }
    }
    return rows;
}

std::string format_report(const std::vector<ReportRow>& rows, const std::string& header) {
    const auto tasks = task_order(rows);
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> head{"strategy"};
    head.insert(head.end(), tasks.begin(), tasks.end());
    head.push_back("mean");
    head.push_back("std");
    cells.push_back(head);
    for (const auto& r : rows) {
        std::vector<std::string> line{r.strategy};
        for (const auto& t : tasks) {
            const auto d = lookup(r, t);
            line.push_back(d ? fixed(*d) : "-");
        }
        line.push_back(fixed(r.mean));
        line.push_back(r.std ? fixed(*r.std) : "");
        cells.push_back(line);
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& line : cells)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    std::ostringstream os;
    if (!header.empty()) os << header << '\n';
    for (std::size_t i = 0; i < cells.size(); ++i) {
        for (std::size_t c = 0; c < cells[i].size(); ++c) {
            if (c) os << "  ";
            os << std::left << std::setw(static_cast<int>(width[c])) << cells[i][c];
        }
        os << '\n';
        if (i == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w + 2;
            os << std::string(total - 2, '-') << '\n';
        }
    }
    return os.str();
}

std::string report_csv(const std::vector<ReportRow>& rows) {
    const auto tasks = task_order(rows);
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10);
    os << "strategy";
    for (const auto& t : tasks) os << ',' << t;
    os << ",mean,std\n";
    for (const auto& r : rows) {
        os << r.strategy;
        for (const auto& t : tasks) {
            os << ',';
            if (auto d = lookup(r, t)) os << *d;
        }
        os << ',' << r.mean << ',';
        if (r.std) os << *r.std;
        os << '\n';
    }
    return os.str();
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("fit_line: x and y differ in length");
    LinearFit fit;
    fit.n = x.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (x.empty()) {
        fit.slope = fit.intercept = fit.r_squared = nan;
        return fit;
    }
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) {
        fit.slope = fit.intercept = fit.r_squared = nan;
        return fit;
    }
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy == 0.0 ? nan : (sxy * sxy) / (sxx * syy);
    return fit;
}

DepthScatter depth_scatter(const std::vector<StudyResult>& results) {
    DepthScatter s;
    for (const auto& r : results) {
        for (const auto& t : r.study.trials) {
            if (t.status != TrialStatus::complete) continue;
            auto it = t.config.find("prompt_depth");
            if (it == t.config.end()) continue;
            s.depth.push_back(it->second);
            s.test_dice.push_back(t.test_dice);
        }
    }
    s.fit = fit_line(s.depth, s.test_dice);
    return s;
}

std::string scatter_csv(const DepthScatter& s) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10);
    os << "# slope=" << s.fit.slope << " intercept=" << s.fit.intercept << " r_squared=" << s.fit.r_squared
       << " n=" << s.fit.n << '\n';
    os << "prompt_depth,test_dice\n";
    for (std::size_t i = 0; i < s.depth.size(); ++i) os << s.depth[i] << ',' << s.test_dice[i] << '\n';
    return os.str();
}

}  // namespace ctxseg
