#pragma once

#include <string>
#include <vector>

#include "recpriv/experiment.hpp"

namespace recpriv {

/// One aggregate cell: a (metric, group) value averaged over seeds at one
/// budget point of one (dataset, model, regime) curve.
struct AggregateRow {
  std::string dataset;
  std::string model;
  std::string regime;
  double budget = 0.0;
  double realized_epsilon = kInf;  // seed-mean
  std::string metric;
  std::string group;
  double mean = 0.0;
  double std_dev = 0.0;  // NaN when n == 1
  int n = 0;
};

extern const std::vector<std::string> kReportMetrics;  // ndcg, kld, ...
extern const std::vector<std::string> kReportGroups;   // overall, niche, ..., I1, I2

std::vector<AggregateRow> aggregate_records(const std::vector<RunRecord>& records);

/// One CSV per metric (columns: dataset,model,regime,budget,realized_epsilon,
/// group,mean,std,n; std blank when n == 1) and one SVG per
/// (metric, dataset, model) with mean +- std against realized epsilon on a
/// log axis, the non-private baseline drawn as a horizontal line.
/// Returns the list of files written. Throws when `records` is empty or has
/// no successful run.
std::vector<std::string> write_reports(const std::vector<RunRecord>& records,
                                       const std::string& reports_dir);

}  // namespace recpriv
