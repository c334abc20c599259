#include "lapact/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "lapact/error.hpp"
#include "lapact/sampler.hpp"

namespace lapact::evaluator {

namespace fs = std::filesystem;

namespace {
constexpr const char *kModule = "evaluator";

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int head_rank(const std::string &head) {
  try {
    return static_cast<int>(network::parse_head_kind(head));
  } catch (const Error &) {
    return 100;
  }
}

std::string backbone_title(const std::string &b) {
  try {
    return network::display_name(network::parse_backbone_kind(b));
  } catch (const Error &) {
    return b;
  }
}

std::string head_title(const std::string &h) {
  try {
    return network::display_name(network::parse_head_kind(h));
  } catch (const Error &) {
    return h;
  }
}
} // namespace

Metrics compute_metrics(const ConfusionCounts &c) {
  if (c.total() == 0) throw PreconditionError(kModule, "empty evaluation: no clips counted");
  Metrics m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  m.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
  return m;
}

ConfusionCounts count_predictions(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size())
    throw PreconditionError(kModule, "prediction and truth lists differ in length");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == 1) {
      (truth[i] == 1 ? c.tp : c.fp)++;
    } else {
      (truth[i] == 1 ? c.fn : c.tn)++;
    }
  }
  return c;
}

ConfusionCounts evaluate_clips(const network::Model &model,
                               std::span<const trainer::LabeledClip> test_clips,
                               const FrameStore &store, int sequence_length) {
  if (test_clips.empty()) throw PreconditionError(kModule, "empty evaluation: test split is empty");
  const sampler::SamplerConfig center{sequence_length, sampler::Mode::center, 0};
  std::vector<int> predicted, truth;
  for (const auto &lc : test_clips) {
    const auto seq = sampler::load_sequence(
        lc.clip, sampler::sample_indices(lc.clip.length, center), store);
    const auto p = model.forward(seq, false);
    predicted.push_back(p[1] > p[0] ? 1 : 0);
    truth.push_back(lc.label);
  }
  return count_predictions(predicted, truth);
}

double average_accuracy(std::span<const double> per_action) {
  if (per_action.size() != kTargetActions.size())
    throw PreconditionError(kModule, "average_accuracy needs exactly six per-action values, got " +
                                         std::to_string(per_action.size()));
  return std::accumulate(per_action.begin(), per_action.end(), 0.0) /
         static_cast<double>(per_action.size());
}

std::vector<std::int64_t> window_starts(std::int64_t frame_count, std::int64_t window_len,
                                        std::int64_t stride) {
  if (window_len < 1 || stride < 1)
    throw PreconditionError(kModule, "window length and stride must be >= 1");
  if (frame_count < window_len)
    throw PreconditionError(kModule, "video too short: " + std::to_string(frame_count) +
                                         " frames < window of " + std::to_string(window_len));
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s + window_len <= frame_count; s += stride) starts.push_back(s);
  return starts;
}

std::vector<ActionTimeline>
sliding_window_infer(const VideoManifest &video,
                     const std::map<ActionLabel, const network::Model *> &models,
                     std::int64_t window_len, std::int64_t stride, int sequence_length) {
  const auto starts = window_starts(video.frame_count, window_len, stride);
  FrameStore store;
  store.add_video(video.video_id, video.frame_dir);
  const sampler::SamplerConfig center{sequence_length, sampler::Mode::center, 0};
  const auto indices = sampler::sample_indices(window_len, center);

  std::vector<ActionTimeline> timelines;
  for (const auto &[action, model] : models) timelines.push_back({video.video_id, action, {}});
  for (const auto start : starts) {
    const Clip window{video.video_id, ActionLabel::other, start, window_len, std::nullopt};
    const auto seq = sampler::load_sequence(window, indices, store);
    std::size_t k = 0;
    for (const auto &[action, model] : models) {
      const auto p = model->forward(seq, false);
      timelines[k++].windows.push_back({start, start + window_len, p[1]});
    }
  }
  return timelines;
}

void write_timelines_csv(const std::vector<ActionTimeline> &timelines, const fs::path &path,
                         bool append) {
  const bool header = !append || !fs::exists(path);
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw IoError(kModule, "cannot write " + path.string());
  if (header) os << "video_id,action,start_frame,end_frame,probability\n";
  for (const auto &t : timelines)
    for (const auto &w : t.windows)
      os << t.video_id << ',' << to_string(t.action) << ',' << w.start_frame << ','
         << w.end_frame << ',' << fixed(w.probability, 6) << '\n';
}

namespace {

struct Architecture {
  std::string backbone, head;
  auto operator<=>(const Architecture &) const = default;
};

struct Grouped {
  std::vector<Architecture> order; // grouped by backbone, heads in table order
  std::vector<ActionLabel> actions;
  std::map<Architecture, std::map<ActionLabel, Metrics>> cells;
};

Grouped group(const MetricsReport &report) {
  if (report.rows.empty()) throw ValidationError(kModule, "report schema error: no rows");
  Grouped g;
  std::vector<std::string> backbones;
  for (const auto &r : report.rows) {
    const Architecture a{r.backbone, r.head};
    if (g.cells[a].count(r.action))
      throw ValidationError(kModule, "report schema error: duplicate row for " + r.backbone + "/" +
                                         r.head + "/" + std::string(to_string(r.action)));
    g.cells[a][r.action] = r.metrics;
    if (std::find(backbones.begin(), backbones.end(), r.backbone) == backbones.end())
      backbones.push_back(r.backbone);
  }
  std::set<ActionLabel> reference;
  for (const auto &[action, m] : g.cells.begin()->second) reference.insert(action);
  for (const auto &[arch, row] : g.cells) {
    std::set<ActionLabel> actions;
    for (const auto &[action, m] : row) actions.insert(action);
    if (actions != reference)
      throw ValidationError(kModule, "report schema error: " + arch.backbone + "/" + arch.head +
                                         " covers a different action set");
  }
  for (auto a : kTargetActions)
    if (reference.count(a)) g.actions.push_back(a);
  if (g.actions.size() != reference.size())
    throw ValidationError(kModule, "report schema error: 'other' is not a reportable action");
  for (const auto &b : backbones) {
    std::vector<Architecture> heads;
    for (const auto &[arch, row] : g.cells)
      if (arch.backbone == b) heads.push_back(arch);
    std::stable_sort(heads.begin(), heads.end(), [](const auto &x, const auto &y) {
      return std::pair(head_rank(x.head), x.head) < std::pair(head_rank(y.head), y.head);
    });
    g.order.insert(g.order.end(), heads.begin(), heads.end());
  }
  return g;
}

double row_average(const std::vector<double> &values) {
  if (values.size() == kTargetActions.size()) return average_accuracy(values);
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

std::string long_form_csv(const Grouped &g) {
  std::ostringstream os;
  os << "backbone,head,action,accuracy,precision,recall,f1\n";
  for (const auto &arch : g.order)
    for (auto action : g.actions) {
      const auto &m = g.cells.at(arch).at(action);
      os << arch.backbone << ',' << arch.head << ',' << to_string(action) << ','
         << fixed(m.accuracy, 6) << ',' << fixed(m.precision, 6) << ',' << fixed(m.recall, 6)
         << ',' << fixed(m.f1, 6) << '\n';
    }
  for (const auto &arch : g.order) {
    std::vector<double> acc;
    for (auto action : g.actions) acc.push_back(g.cells.at(arch).at(action).accuracy);
    os << arch.backbone << ',' << arch.head << ",average," << fixed(row_average(acc), 6)
       << ",,,\n";
  }
  return os.str();
}

} // namespace

void write_metrics_csv(const MetricsReport &report, const fs::path &path) {
  std::ofstream os(path);
  if (!os) throw IoError(kModule, "cannot write " + path.string());
  os << long_form_csv(group(report));
}

MetricsReport read_metrics_csv(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError(kModule, "cannot read metrics " + path.string());
  MetricsReport report;
  std::string line;
  std::getline(in, line);
  if (line != "backbone,head,action,accuracy,precision,recall,f1")
    throw ParseError(kModule, "unexpected metrics header in " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 7) throw ParseError(kModule, "malformed metrics row: " + line);
    if (cells[2] == "average") continue;
    try {
      report.rows.push_back({cells[0], cells[1], parse_action_label(cells[2]),
                             {std::stod(cells[3]), std::stod(cells[4]), std::stod(cells[5]),
                              std::stod(cells[6])}});
    } catch (const std::invalid_argument &) {
      throw ParseError(kModule, "malformed metrics row: " + line);
    }
  }
  return report;
}

RenderedReport render_report(const MetricsReport &report) {
  const auto g = group(report);
  RenderedReport out;
  out.metrics_csv = long_form_csv(g);

  // Percent table, one column per action plus the row average.
  std::vector<std::vector<double>> acc_rows, f1_rows;
  for (const auto &arch : g.order) {
    std::vector<double> acc, f1;
    for (auto action : g.actions) {
      acc.push_back(g.cells.at(arch).at(action).accuracy);
      f1.push_back(g.cells.at(arch).at(action).f1);
    }
    const double acc_avg = row_average(acc);
    const double f1_avg = std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
    acc.push_back(acc_avg);
    f1.push_back(f1_avg);
    for (auto &v : acc) v *= 100.0;
    for (auto &v : f1) v *= 100.0;
    acc_rows.push_back(std::move(acc));
    f1_rows.push_back(std::move(f1));
  }

  std::vector<std::string> columns;
  for (auto a : g.actions) columns.push_back(display_name(a));
  columns.push_back("Average");

  auto header_csv = [&](std::ostringstream &os) {
    os << "backbone,head";
    for (auto a : g.actions) os << ',' << to_string(a);
    os << ",average\n";
  };
  std::ostringstream table_csv, f1_csv;
  header_csv(table_csv);
  header_csv(f1_csv);
  for (std::size_t r = 0; r < g.order.size(); ++r) {
    table_csv << g.order[r].backbone << ',' << g.order[r].head;
    f1_csv << g.order[r].backbone << ',' << g.order[r].head;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      table_csv << ',' << fixed(acc_rows[r][c], 2);
      f1_csv << ',' << fixed(f1_rows[r][c], 2);
    }
    table_csv << '\n';
    f1_csv << '\n';
  }
  out.table_csv = table_csv.str();
  out.f1_csv = f1_csv.str();

  // Best value per column, compared at printed precision.
  std::vector<std::string> best(columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    double top = -1.0;
    for (const auto &row : acc_rows) top = std::max(top, row[c]);
    best[c] = fixed(top, 2);
  }
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"Backbone", "Head"});
  cells.back().insert(cells.back().end(), columns.begin(), columns.end());
  for (std::size_t r = 0; r < g.order.size(); ++r) {
    const bool first_of_group = r == 0 || g.order[r - 1].backbone != g.order[r].backbone;
    std::vector<std::string> row = {first_of_group ? backbone_title(g.order[r].backbone) : "",
                                    head_title(g.order[r].head)};
    for (std::size_t c = 0; c < columns.size(); ++c) {
      auto v = fixed(acc_rows[r][c], 2);
      if (v == best[c]) v += "*";
      row.push_back(v);
    }
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto &row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream text;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c > 0) text << "  ";
      if (c < 2)
        text << std::left << std::setw(static_cast<int>(width[c])) << cells[r][c];
      else
        text << std::right << std::setw(static_cast<int>(width[c])) << cells[r][c];
    }
    text << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      text << std::string(total - 2, '-') << '\n';
    }
  }
  text << "Accuracy (%), best per column marked *.\n";
  out.table_text = text.str();
  return out;
}

void write_report(const RenderedReport &rendered, const fs::path &dir) {
  fs::create_directories(dir);
  auto write = [&](const char *name, const std::string &body) {
    std::ofstream os(dir / name);
    if (!os) throw IoError(kModule, "cannot write " + (dir / name).string());
    os << body;
  };
  write("table.csv", rendered.table_csv);
  write("table.txt", rendered.table_text);
  write("f1_bars.csv", rendered.f1_csv);
  write("metrics.csv", rendered.metrics_csv);
}

} // namespace lapact::evaluator
