#include "segrob/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace segrob {

using nlohmann::json;

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
}

void write_json_file(const json& j, const std::string& path) {
  write_text_file(path, j.dump(2) + "\n");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return json::parse(in);
}

std::string metrics_csv_header(int num_classes) {
  std::string h = "epsilon,attack,aAcc,mIoU,balancedAcc";
  for (int s = 0; s < num_classes; ++s) h += ",IoU_" + std::to_string(s);
  return h + "\n";
}

std::string metrics_csv_row(double epsilon, const std::string& attack,
                            const ConfusionAccumulator& acc) {
  std::string row = format_metric(epsilon) + "," + attack + "," +
                    format_metric(pixel_accuracy(acc)) + "," + format_metric(miou(acc)) + "," +
                    format_metric(balanced_accuracy(acc));
  const Vector iou = per_class_iou(acc);
  for (Eigen::Index s = 0; s < iou.size(); ++s)
    row += "," + (std::isnan(iou[s]) ? std::string("n/a") : format_metric(iou[s]));
  return row + "\n";
}

json counts_to_json(const ImageCounts& counts) {
  auto vec = [](const Eigen::VectorX<std::int64_t>& v) {
    return std::vector<std::int64_t>(v.data(), v.data() + v.size());
  };
  return json{{"tp", vec(counts.tp)}, {"fp", vec(counts.fp)}, {"fn", vec(counts.fn)}};
}

json accumulator_to_json(const ConfusionAccumulator& acc) {
  auto vec = [](const Eigen::VectorX<std::int64_t>& v) {
    return std::vector<std::int64_t>(v.data(), v.data() + v.size());
  };
  return json{{"tp", vec(acc.tp)},
              {"fp", vec(acc.fp)},
              {"fn", vec(acc.fn)},
              {"aAcc", pixel_accuracy(acc)},
              {"mIoU", miou(acc)},
              {"balancedAcc", balanced_accuracy(acc)}};
}

json attack_records_json(const std::vector<AttackResult>& results, double epsilon,
                         const std::string& loss) {
  json records = json::array();
  for (const auto& r : results) {
    json rec{{"image_id", r.image_id},
             {"epsilon", epsilon},
             {"loss", loss},
             {"best_objective", r.best_objective},
             {"accuracy", r.accuracy},
             {"counts", counts_to_json(r.counts)}};
    records.push_back(std::move(rec));
  }
  return records;
}

SeaEpsilonRow make_sea_row(double epsilon, const ConfusionAccumulator& clean,
                           const EnsembleResult& ensemble) {
  SeaEpsilonRow row;
  row.epsilon = epsilon;
  row.clean_accuracy = pixel_accuracy(clean);
  row.clean_miou = miou(clean);
  for (std::size_t j = 0; j < ensemble.attacks.size(); ++j) {
    row.attack_names.push_back(loss_kind_name(ensemble.attacks[j]));
    row.attack_accuracy.push_back(ensemble.attack_accuracy[j]);
    row.attack_miou.push_back(ensemble.attack_miou[j]);
  }
  row.sea_accuracy = ensemble.worst_case_accuracy;
  row.sea_miou = ensemble.worst_case_miou;
  row.chosen_accuracy_histogram.assign(ensemble.attacks.size(), 0);
  row.chosen_miou_histogram.assign(ensemble.attacks.size(), 0);
  for (int c : ensemble.chosen_for_accuracy) row.chosen_accuracy_histogram[size_t(c)] += 1;
  for (int c : ensemble.chosen_for_miou) row.chosen_miou_histogram[size_t(c)] += 1;
  row.greedy_rounds = ensemble.greedy_rounds;
  return row;
}

void write_sea_report(const std::string& dir, const json& config_echo,
                      const std::vector<SeaEpsilonRow>& rows) {
  std::filesystem::create_directories(dir);

  json j{{"config", config_echo}, {"rows", json::array()}};
  std::string csv = "epsilon,clean_aAcc,clean_mIoU";
  if (!rows.empty())
    for (const auto& name : rows.front().attack_names)
      csv += "," + name + "_aAcc," + name + "_mIoU";
  csv += ",sea_aAcc,sea_mIoU\n";

  for (const auto& row : rows) {
    json r{{"epsilon", row.epsilon},
           {"clean", {{"aAcc", row.clean_accuracy}, {"mIoU", row.clean_miou}}},
           {"attacks", json::array()},
           {"sea", {{"aAcc", row.sea_accuracy}, {"mIoU", row.sea_miou}}},
           {"chosen_accuracy_histogram", row.chosen_accuracy_histogram},
           {"chosen_miou_histogram", row.chosen_miou_histogram},
           {"greedy_rounds", row.greedy_rounds}};
    for (std::size_t a = 0; a < row.attack_names.size(); ++a)
      r["attacks"].push_back(json{{"loss", row.attack_names[a]},
                                  {"aAcc", row.attack_accuracy[a]},
                                  {"mIoU", row.attack_miou[a]}});
    j["rows"].push_back(std::move(r));

    csv += format_metric(row.epsilon) + "," + format_metric(row.clean_accuracy) + "," +
           format_metric(row.clean_miou);
    for (std::size_t a = 0; a < row.attack_names.size(); ++a)
      csv += "," + format_metric(row.attack_accuracy[a]) + "," + format_metric(row.attack_miou[a]);
    csv += "," + format_metric(row.sea_accuracy) + "," + format_metric(row.sea_miou) + "\n";
  }

  write_json_file(j, (std::filesystem::path(dir) / "sea_report.json").string());
  write_text_file((std::filesystem::path(dir) / "sea_report.csv").string(), csv);
}

}  // namespace segrob
