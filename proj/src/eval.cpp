#include "soapkd/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "soapkd/common.hpp"

namespace soapkd {

double mae_degrees(const std::vector<double>& preds_normalized,
                   const std::vector<AngleLabel>& truths, bool circular) {
    if (preds_normalized.empty() || preds_normalized.size() != truths.size())
        throw DataError("mae_degrees: length mismatch (" +
                        std::to_string(preds_normalized.size()) + " vs " +
                        std::to_string(truths.size()) + ")");
    double total = 0;
    for (std::size_t i = 0; i < preds_normalized.size(); ++i) {
        const double pred_deg = wrap_degrees(preds_normalized[i] * 180.0);
        if (circular)
            total += circular_distance_degrees(pred_deg, truths[i].degrees);
        else
            total += std::fabs(pred_deg - truths[i].degrees);
    }
    return total / double(preds_normalized.size());
}

double relative_reduction(double reference, double value) {
    return (reference - value) / reference;
}

namespace {

std::string fmt(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

}  // namespace

std::string report_csv(const EvalReport& report) {
    if (report.rows.empty()) throw DataError("report: no rows");
    const EvalRow& ref = report.rows[std::size_t(report.reference_row)];
    std::ostringstream os;
    os << "model,params_millions,macs_billions,test_mae_degrees,"
          "params_reduction_pct,macs_reduction_pct,mae_relative_pct,seeds,"
          "fingerprint\n";
    for (const auto& r : report.rows) {
        os << r.model << "," << fmt(r.params_millions, 3) << ","
           << fmt(r.macs_billions, 3) << "," << fmt(r.test_mae_degrees, 3) << ","
           << fmt(100.0 * relative_reduction(ref.params_millions, r.params_millions), 1)
           << ","
           << fmt(100.0 * relative_reduction(ref.macs_billions, r.macs_billions), 1)
           << ","
           << fmt(100.0 * (r.test_mae_degrees - ref.test_mae_degrees) /
                      ref.test_mae_degrees,
                  1)
           << "," << r.seeds << "," << r.fingerprint << "\n";
    }
    return os.str();
}

std::string report_table(const EvalReport& report) {
    if (report.rows.empty()) throw DataError("report: no rows");
    const EvalRow& ref = report.rows[std::size_t(report.reference_row)];
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-28s %12s %12s %10s %9s %8s\n", "model",
                  "params(x1e6)", "macs(x1e9)", "mae(deg)", "params-%", "macs-%");
    os << line;
    os << std::string(84, '-') << "\n";
    for (const auto& r : report.rows) {
        std::snprintf(line, sizeof(line), "%-28s %12.3f %12.3f %10.3f %8.1f%% %7.1f%%\n",
                      r.model.c_str(), r.params_millions, r.macs_billions,
                      r.test_mae_degrees,
                      100.0 * relative_reduction(ref.params_millions, r.params_millions),
                      100.0 * relative_reduction(ref.macs_billions, r.macs_billions));
        os << line;
    }
    return os.str();
}

void emit_report(const EvalReport& report, const std::string& path_prefix) {
    {
        std::ofstream f(path_prefix + ".csv", std::ios::binary);
        f << report_csv(report);
        if (!f) throw DataError("emit_report: cannot write " + path_prefix + ".csv");
    }
    {
        std::ofstream f(path_prefix + ".txt", std::ios::binary);
        f << report_table(report);
        if (!f) throw DataError("emit_report: cannot write " + path_prefix + ".txt");
    }
}

}  // namespace soapkd
