// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic artifact writers. Every CSV starts with a comment line
// carrying the config fingerprint; numbers render via the shortest
// round-trip formatter so reruns are byte-identical.

#pragma once

#include <string>
#include <vector>

#include "ehrfuse/metrics.hpp"
#include "ehrfuse/train.hpp"

namespace ehrfuse::report {

void write_training_log(const std::string& path, const std::string& fingerprint,
                        const std::vector<train::LogRow>& rows);

void write_summary(const std::string& path, const std::string& fingerprint,
                   const std::vector<train::TrainedRun>& runs);

void write_metric_report(const std::string& path, const std::string& fingerprint,
                         const metrics::MetricReport& report);

void write_attention_report(const std::string& path, const std::string& fingerprint,
                            const std::vector<metrics::AttnRow>& rows);

// Self-contained line chart of mean AUPRC/AUROC against the case-percentage
// column of a sweep report.
void write_sweep_svg(const std::string& path, const metrics::MetricReport& report,
                     const std::string& title);

}  // namespace ehrfuse::report
