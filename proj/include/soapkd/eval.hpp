#pragma once

#include <string>
#include <vector>

#include "soapkd/data.hpp"

namespace soapkd {

// Mean absolute angular error in degrees. Circular mode measures
// min(d, 180 - d); plain mode uses |pred - truth| on wrapped angles.
double mae_degrees(const std::vector<double>& preds_normalized,
                   const std::vector<AngleLabel>& truths, bool circular = true);

struct EvalRow {
    std::string model;
    double params_millions = 0.0;
    double macs_billions = 0.0;
    double test_mae_degrees = 0.0;
    std::string seeds;
    std::string fingerprint;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    int reference_row = 0;  // reductions are relative to this row
};

// Relative reduction (a - b) / a, as used for the params/MACs columns.
double relative_reduction(double reference, double value);

std::string report_csv(const EvalReport& report);
std::string report_table(const EvalReport& report);
void emit_report(const EvalReport& report, const std::string& path_prefix);

}  // namespace soapkd
