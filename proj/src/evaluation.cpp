#include "nodebench/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "nodebench/ops.hpp"
#include "nodebench/rng.hpp"
#include "nodebench/text.hpp"

namespace nodebench {

namespace {
constexpr std::size_t kChunk = 100;
}

EvalRow robust_accuracy(const Classifier& model, const Dataset& data, const PerturbationSpec& spec,
                        std::uint64_t seed) {
  data.validate();
  spec.validate();
  EvalRow row;
  row.spec = spec;
  row.seed = seed;
  row.model_id = model.kind_name();
  row.rm_kind = model.kind_name();
  row.n_total = data.size();

  const auto clean_pred = predict(model, data.normalized_images());
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (clean_pred[i] == data.labels[i]) kept.push_back(i);
  }
  row.n_filtered = kept.size();
  if (kept.empty()) {
    row.degenerate = true;
    return row;
  }

  for (std::size_t start = 0, chunk = 0; start < kept.size(); start += kChunk, ++chunk) {
    const std::span<const std::size_t> idx(kept.data() + start, std::min(kChunk, kept.size() - start));
    const Dataset part = data.select(idx);
    const Tensor inputs = perturb_inputs(model, part.images, part.labels, spec, data.normalization,
                                         derive_seed(seed, "eval-chunk-" + std::to_string(chunk)));
    const auto pred = predict(model, inputs);
    for (std::size_t i = 0; i < pred.size(); ++i) row.n_robust += pred[i] == part.labels[i];
  }
  row.accuracy = static_cast<double>(row.n_robust) / static_cast<double>(row.n_filtered);
  return row;
}

std::string rows_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream os;
  os << "model_id,rm_kind,regime,perturbation_kind,magnitude,steps,seed,n_filtered,accuracy\n";
  for (const auto& r : rows) {
    const std::size_t steps = r.spec.kind == PerturbationKind::kPgd   ? r.spec.steps
                              : r.spec.kind == PerturbationKind::kFgsm ? 1
                                                                       : 0;
    os << r.model_id << ',' << r.rm_kind << ',' << r.regime << ',' << to_string(r.spec.kind) << ','
       << format_double(r.spec.magnitude) << ',' << steps << ',' << r.seed << ',' << r.n_filtered
       << ',' << (r.degenerate ? std::string("nan") : format_double(r.accuracy)) << '\n';
  }
  return os.str();
}

const TableCell& RobustnessTable::cell(const std::string& model, const std::string& column_label) const {
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (models[m] != model) continue;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (columns[c].label() == column_label || columns[c].to_string() == column_label) {
        return cells[m][c];
      }
    }
  }
  throw UsageError("no table cell for (" + model + ", " + column_label + ")");
}

std::string RobustnessTable::csv() const {
  std::ostringstream os;
  os << "model";
  for (const auto& c : columns) os << ',' << c.label() << "_mean," << c.label() << "_std";
  os << '\n';
  for (std::size_t m = 0; m < models.size(); ++m) {
    os << models[m];
    for (const auto& cell : cells[m]) {
      if (cell.per_seed.empty()) os << ",nan,nan";
      else os << ',' << format_double(cell.mean) << ',' << format_double(cell.std);
    }
    os << '\n';
  }
  return os.str();
}

std::string RobustnessTable::text() const {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"model"};
  for (const auto& c : columns) header.push_back(c.label());
  grid.push_back(header);
  for (std::size_t m = 0; m < models.size(); ++m) {
    std::vector<std::string> line{models[m]};
    for (const auto& cell : cells[m]) {
      if (cell.per_seed.empty()) {
        line.emplace_back("n/a");
        continue;
      }
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.1f ± %.1f", 100.0 * cell.mean, 100.0 * cell.std);
      line.emplace_back(buf);
    }
    grid.push_back(line);
  }
  // Width in code points; "±" is two bytes.
  auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(),
                                                  [](char ch) { return (ch & 0xC0) != 0x80; }));
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], width(line[i]));
  }
  std::ostringstream os;
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i) os << "  ";
      os << line[i];
      if (i + 1 < line.size()) os << std::string(widths[i] - width(line[i]), ' ');
    }
    os << '\n';
  }
  return os.str();
}

RobustnessTable summarize(const std::vector<EvalRow>& rows) {
  RobustnessTable t;
  auto model_index = [&](const std::string& id) {
    auto it = std::find(t.models.begin(), t.models.end(), id);
    if (it != t.models.end()) return static_cast<std::size_t>(it - t.models.begin());
    t.models.push_back(id);
    return t.models.size() - 1;
  };
  auto column_index = [&](const PerturbationSpec& s) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      if (t.columns[c].to_string() == s.to_string()) return c;
    }
    t.columns.push_back(s);
    return t.columns.size() - 1;
  };
  std::vector<std::pair<std::size_t, std::size_t>> where;
  for (const auto& r : rows) where.emplace_back(model_index(r.model_id), column_index(r.spec));
  t.cells.assign(t.models.size(), std::vector<TableCell>(t.columns.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].degenerate) t.cells[where[i].first][where[i].second].per_seed.push_back(rows[i].accuracy);
  }
  for (auto& line : t.cells) {
    for (auto& cell : line) {
      if (cell.per_seed.empty()) continue;
      const double n = static_cast<double>(cell.per_seed.size());
      double s = 0.0;
      for (double a : cell.per_seed) s += a;
      cell.mean = s / n;
      double v = 0.0;
      for (double a : cell.per_seed) v += (a - cell.mean) * (a - cell.mean);
      cell.std = std::sqrt(v / n);
    }
  }
  return t;
}

}  // namespace nodebench
