#pragma once

#include "segrob/attack.hpp"
#include "segrob/metrics.hpp"
#include "segrob/sea.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace segrob {

/// Fixed-format decimal for CSV cells so identical runs emit identical bytes.
std::string format_metric(double v);

void write_text_file(const std::string& path, const std::string& content);
void write_json_file(const nlohmann::json& j, const std::string& path);
nlohmann::json read_json_file(const std::string& path);

/// One CSV row per (epsilon, attack): aAcc, mIoU, balancedAcc, per-class IoU.
std::string metrics_csv_header(int num_classes);
std::string metrics_csv_row(double epsilon, const std::string& attack,
                            const ConfusionAccumulator& acc);

nlohmann::json counts_to_json(const ImageCounts& counts);
nlohmann::json accumulator_to_json(const ConfusionAccumulator& acc);

/// Per-image record block of the attack manifest.
nlohmann::json attack_records_json(const std::vector<AttackResult>& results, double epsilon,
                                   const std::string& loss);

struct SeaEpsilonRow {
  double epsilon = 0.0;
  double clean_accuracy = 0.0;
  double clean_miou = 0.0;
  std::vector<std::string> attack_names;
  std::vector<double> attack_accuracy;
  std::vector<double> attack_miou;
  double sea_accuracy = 0.0;
  double sea_miou = 0.0;
  std::vector<int> chosen_accuracy_histogram;
  std::vector<int> chosen_miou_histogram;
  int greedy_rounds = 0;
};

SeaEpsilonRow make_sea_row(double epsilon, const ConfusionAccumulator& clean,
                           const EnsembleResult& ensemble);

/// sea_report.json + sea_report.csv under dir; both timestamp free.
void write_sea_report(const std::string& dir, const nlohmann::json& config_echo,
                      const std::vector<SeaEpsilonRow>& rows);

}  // namespace segrob
