// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0

#include "ehrfuse/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "ehrfuse/ioutil.hpp"

namespace ehrfuse::report {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

}  // namespace

void write_training_log(const std::string& path, const std::string& fingerprint,
                        const std::vector<train::LogRow>& rows) {
  auto os = open_out(path);
  os << "# config_fingerprint=" << fingerprint << "\n";
  os << "run_id,lr,seed,epoch,train_loss,val_auprc,val_auroc,attn_ts,attn_img,attn_txt\n";
  for (const auto& r : rows) {
    os << r.run_id << ',' << io::fmt(r.lr) << ',' << r.seed << ',' << r.epoch << ','
       << io::fmt(r.train_loss) << ',' << io::fmt(r.val_auprc) << ',' << io::fmt(r.val_auroc);
    if (r.has_attn) {
      os << ',' << io::fmt(r.attn[0]) << ',' << io::fmt(r.attn[1]) << ',' << io::fmt(r.attn[2]);
    } else {
      os << ",,,";
    }
    os << "\n";
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

void write_summary(const std::string& path, const std::string& fingerprint,
                   const std::vector<train::TrainedRun>& runs) {
  auto os = open_out(path);
  os << "# config_fingerprint=" << fingerprint << "\n";
  os << "run_id,lr,seed,best_epoch,best_val_auprc,best_val_auroc,diverged\n";
  for (const auto& run : runs) {
    double best_auroc = 0.0;
    for (const auto& r : run.result.rows) {
      if (r.epoch == run.result.best_epoch) best_auroc = r.val_auroc;
    }
    os << run.result.run_id << ',' << io::fmt(run.lr) << ',' << run.seed << ','
       << run.result.best_epoch << ',' << io::fmt(run.result.best_val_auprc) << ','
       << io::fmt(best_auroc) << ',' << (run.result.diverged ? 1 : 0) << "\n";
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

void write_metric_report(const std::string& path, const std::string& fingerprint,
                         const metrics::MetricReport& report) {
  auto os = open_out(path);
  os << "# config_fingerprint=" << fingerprint << "\n";
  os << "condition,fraction,case_percent,metric,mean";
  const size_t n_seeds = report.rows.empty() ? 0 : report.rows.front().auprc_seeds.size();
  for (size_t i = 0; i < n_seeds; ++i) {
    if (i < report.seeds.size()) os << ",s" << report.seeds[i];
    else os << ",s" << i;
  }
  os << ",selected\n";
  auto emit = [&](const metrics::MetricRow& row, const char* metric,
                  const std::vector<double>& seeds, double mean) {
    os << row.condition << ',';
    if (!std::isnan(row.fraction)) os << io::fmt(row.fraction);
    os << ',';
    if (!std::isnan(row.case_percent)) os << io::fmt(row.case_percent);
    os << ',' << metric << ',' << io::fmt(mean);
    for (double v : seeds) os << ',' << io::fmt(v);
    os << ',' << (row.selected ? 1 : 0) << "\n";
  };
  for (const auto& row : report.rows) {
    emit(row, "auprc", row.auprc_seeds, row.auprc_mean);
    emit(row, "auroc", row.auroc_seeds, row.auroc_mean);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

void write_attention_report(const std::string& path, const std::string& fingerprint,
                            const std::vector<metrics::AttnRow>& rows) {
  auto os = open_out(path);
  os << "# config_fingerprint=" << fingerprint << "\n";
  os << "group,windows,attn_ts,attn_img,attn_txt\n";
  for (const auto& r : rows) {
    os << r.group << ',' << r.windows << ',' << io::fmt(r.attention[0]) << ','
       << io::fmt(r.attention[1]) << ',' << io::fmt(r.attention[2]) << "\n";
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

void write_sweep_svg(const std::string& path, const metrics::MetricReport& report,
                     const std::string& title) {
  constexpr int W = 640, H = 400, ML = 60, MR = 20, MT = 40, MB = 50;
  const int pw = W - ML - MR, ph = H - MT - MB;

  double xmax = 1.0;
  for (const auto& r : report.rows) {
    if (!std::isnan(r.case_percent)) xmax = std::max(xmax, r.case_percent);
  }
  auto x_of = [&](double pct) { return ML + pct / xmax * pw; };
  auto y_of = [&](double metric) { return MT + (1.0 - metric) * ph; };

  auto polyline = [&](const char* color, bool use_auprc) {
    std::string pts;
    for (const auto& r : report.rows) {
      if (std::isnan(r.case_percent)) continue;
      const double y = use_auprc ? r.auprc_mean : r.auroc_mean;
      pts += io::fmt(x_of(r.case_percent)) + "," + io::fmt(y_of(y)) + " ";
    }
    return "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
  };

  auto os = open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"14\">" << title << "</text>\n";
  // axes
  os << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << MT + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ML << "\" y1=\"" << MT + ph << "\" x2=\"" << ML + pw << "\" y2=\""
     << MT + ph << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    os << "<text x=\"" << ML - 8 << "\" y=\"" << y_of(v) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << io::fmt(v)
       << "</text>\n";
    const double pct = v * xmax;
    os << "<text x=\"" << x_of(pct) << "\" y=\"" << MT + ph + 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << io::fmt(pct)
       << "</text>\n";
  }
  os << "<text x=\"" << ML + pw / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">masked case "
        "percentage of test set</text>\n";
  os << polyline("#1f77b4", true);
  os << polyline("#2ca02c", false);
  os << "<text x=\"" << ML + 10 << "\" y=\"" << MT + 14
     << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#1f77b4\">AUPRC</text>\n";
  os << "<text x=\"" << ML + 70 << "\" y=\"" << MT + 14
     << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#2ca02c\">AUROC</text>\n";
  os << "</svg>\n";
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace ehrfuse::report
