#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lapact/augment.hpp"
#include "lapact/cli.hpp"
#include "lapact/config.hpp"
#include "lapact/error.hpp"
#include "lapact/evaluator.hpp"
#include "lapact/seed.hpp"
#include "lapact/trainer.hpp"

namespace lapact::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunContext {
  ExperimentConfig config;
  std::vector<VideoManifest> manifests;
  std::ostream &out;
  std::ostream &err;

  fs::path stage_dir(std::string_view stage) const { return config.output_dir / stage; }
  fs::path clips_file() const { return stage_dir("extract-clips") / "clips.json"; }
  fs::path augmented_root() const { return stage_dir("balance") / "frame_dir_aug"; }
  fs::path dataset_file(ActionLabel a) const {
    return stage_dir("balance") / std::string(to_string(a)) / "dataset.json";
  }
  std::string architecture(network::HeadKind head) const {
    return std::string(network::to_string(config.model.backbone.kind)) + "_" +
           std::string(network::to_string(head));
  }

  FrameStore frame_store() const {
    FrameStore store;
    for (const auto &m : manifests) store.add_video(m.video_id, m.frame_dir);
    store.set_augmented_root(augmented_root());
    return store;
  }
};

json read_json(const fs::path &path, const char *module, const std::string &hint) {
  std::ifstream in(path);
  if (!in) throw IoError(module, "missing " + path.string() + " (" + hint + ")");
  try {
    return json::parse(in);
  } catch (const json::parse_error &e) {
    throw ParseError(module, "malformed " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path &path, const json &j) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cli", "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

int cmd_validate(RunContext &ctx) {
  ctx.manifests = load_manifests(ctx.config, true);
  std::int64_t frames = 0;
  for (const auto &m : ctx.manifests) frames += m.frame_count;
  ctx.out << "config valid: " << ctx.manifests.size() << " videos, " << frames << " frames\n";
  return 0;
}

int cmd_extract(RunContext &ctx) {
  const auto &b = ctx.config.dataset.bounds;
  json clips = json::array();
  json counts = json::object();
  std::size_t total = 0;
  for (const auto &m : ctx.manifests) {
    for (const auto &c : extract_clips(m, b.clip_len, b.min_clip_frames, b.max_clip_frames)) {
      clips.push_back(to_json(c));
      auto &slot = counts[m.video_id][std::string(to_string(c.label))];
      slot = slot.is_null() ? 1 : slot.get<int>() + 1;
      ++total;
    }
  }
  write_json(ctx.clips_file(), {{"clips", clips}});
  write_json(ctx.stage_dir("extract-clips") / "counts.json", counts);
  ctx.out << "extracted " << total << " clips from " << ctx.manifests.size() << " videos\n";
  return 0;
}

std::vector<Clip> read_clips(const RunContext &ctx) {
  const auto j = read_json(ctx.clips_file(), "dataset_model", "run extract-clips first");
  std::vector<Clip> clips;
  for (const auto &c : j.at("clips")) clips.push_back(clip_from_json(c));
  return clips;
}

int cmd_balance(RunContext &ctx) {
  const auto clips = read_clips(ctx);
  const auto store = ctx.frame_store();
  json summary = json::object();
  int ok = 0;
  for (const auto action : ctx.config.actions) {
    const std::string name(to_string(action));
    try {
      auto dataset = build_one_vs_rest(clips, action, ctx.config.dataset.train_videos,
                                       ctx.config.dataset.test_videos,
                                       ctx.config.dataset.validation_fraction,
                                       derive_seed(ctx.config.stage_seed("split"), fnv1a(name)));
      const auto targets = dataset.select(Split::train, true);
      const auto plan = augment::plan_balance(targets, dataset.count(Split::train, false),
                                              ctx.config.augment,
                                              derive_seed(ctx.config.stage_seed("augment"), fnv1a(name)));
      for (auto &c : augment::materialize(plan, store, ctx.augmented_root()))
        dataset.target_clips.push_back({std::move(c), Split::train});
      const auto dir = ctx.dataset_file(action).parent_path();
      write_json(ctx.dataset_file(action), to_json(dataset));
      augment::write_plan_jsonl(plan, dir / "plan.jsonl");
      json row = json::object();
      row["train_target"] = dataset.count(Split::train, true);
      row["train_rest"] = dataset.count(Split::train, false);
      row["validation_target"] = dataset.count(Split::validation, true);
      row["validation_rest"] = dataset.count(Split::validation, false);
      row["test_target"] = dataset.count(Split::test, true);
      row["test_rest"] = dataset.count(Split::test, false);
      row["augmented"] = plan.entries.size();
      summary[name] = row;
      ctx.out << name << ": " << targets.size() << " target clips + " << plan.entries.size()
              << " augmented = " << dataset.count(Split::train, false) << " rest clips\n";
      ++ok;
    } catch (const Error &e) {
      std::error_code ec;
      fs::remove(ctx.dataset_file(action), ec);
      summary[name] = {{"error", e.what()}};
      ctx.err << "error [" << e.module() << "]: " << name << ": " << e.what() << '\n';
    }
  }
  write_json(ctx.stage_dir("balance") / "summary.json", summary);
  return ok > 0 ? 0 : 1;
}

int cmd_train(RunContext &ctx) {
  const auto store = ctx.frame_store();
  int ok = 0;
  for (const auto head : ctx.config.heads) {
    auto model = ctx.config.model;
    model.head.kind = head;
    const auto dir = ctx.stage_dir("train") / ctx.architecture(head);
    const auto runs = trainer::train_all(
        ctx.config.actions,
        [&](ActionLabel a) {
          return dataset_from_json(read_json(ctx.dataset_file(a), "trainer", "run balance first"));
        },
        store, model, ctx.config.trainer, dir);
    for (const auto &r : runs) {
      if (r.error.empty()) {
        ++ok;
        ctx.out << ctx.architecture(head) << "/" << to_string(r.action) << ": best epoch "
                << r.best_epoch << ", val loss " << r.best_val_loss << '\n';
      } else {
        ctx.err << "error [trainer]: " << ctx.architecture(head) << "/" << to_string(r.action)
                << ": " << r.error << '\n';
      }
    }
  }
  return ok > 0 ? 0 : 1;
}

fs::path checkpoint_path(const RunContext &ctx, network::HeadKind head, ActionLabel a) {
  return ctx.stage_dir("train") / ctx.architecture(head) / std::string(to_string(a)) /
         "checkpoint.bin";
}

int cmd_evaluate(RunContext &ctx) {
  const auto store = ctx.frame_store();
  evaluator::MetricsReport report;
  json confusion = json::object();
  for (const auto head : ctx.config.heads) {
    for (const auto action : ctx.config.actions) {
      const auto ckpt = checkpoint_path(ctx, head, action);
      if (!fs::exists(ckpt)) {
        ctx.err << "warning: no checkpoint for " << ctx.architecture(head) << "/"
                << to_string(action) << ", skipped\n";
        continue;
      }
      const auto model = network::load_checkpoint(ckpt);
      if (model.config().head.kind != head)
        throw ConfigError("evaluator", "incompatible checkpoint " + ckpt.string() +
                                           ": head does not match the architecture");
      const auto dataset =
          dataset_from_json(read_json(ctx.dataset_file(action), "evaluator", "run balance first"));
      const auto test = trainer::labeled_split(dataset, Split::test);
      const auto counts = evaluator::evaluate_clips(model, test, store, ctx.config.sequence_length);
      const auto metrics = evaluator::compute_metrics(counts);
      report.rows.push_back({std::string(network::to_string(ctx.config.model.backbone.kind)),
                             std::string(network::to_string(head)), action, metrics});
      confusion[ctx.architecture(head)][std::string(to_string(action))] = {
          {"tp", counts.tp}, {"fp", counts.fp}, {"fn", counts.fn}, {"tn", counts.tn}};
    }
  }
  if (report.rows.empty()) throw IoError("evaluator", "no trained checkpoints found; run train first");
  evaluator::write_metrics_csv(report, ctx.stage_dir("evaluate") / "metrics.csv");
  write_json(ctx.stage_dir("evaluate") / "confusion.json", confusion);
  ctx.out << "evaluated " << report.rows.size() << " (architecture, action) pairs\n";
  return 0;
}

int cmd_infer(RunContext &ctx) {
  std::map<std::string, const VideoManifest *> by_id;
  for (const auto &m : ctx.manifests) by_id[m.video_id] = &m;
  for (const auto &v : ctx.config.infer_videos)
    if (!by_id.count(v)) throw ConfigError("config", "evaluator.videos: no manifest for video " + v);
  int written = 0;
  for (const auto head : ctx.config.heads) {
    std::vector<network::Model> models;
    std::vector<ActionLabel> actions;
    for (const auto action : ctx.config.actions) {
      const auto ckpt = checkpoint_path(ctx, head, action);
      if (!fs::exists(ckpt)) continue;
      models.push_back(network::load_checkpoint(ckpt));
      actions.push_back(action);
    }
    if (models.empty()) continue;
    std::map<ActionLabel, const network::Model *> lookup;
    for (std::size_t i = 0; i < models.size(); ++i) lookup[actions[i]] = &models[i];
    const auto dir = ctx.stage_dir("infer") / ctx.architecture(head);
    fs::create_directories(dir);
    const auto path = dir / "timelines.csv";
    fs::remove(path);
    for (const auto &v : ctx.config.infer_videos) {
      const auto timelines = evaluator::sliding_window_infer(
          *by_id.at(v), lookup, ctx.config.window_len, ctx.config.stride, ctx.config.sequence_length);
      evaluator::write_timelines_csv(timelines, path, true);
    }
    ++written;
    ctx.out << "wrote " << path.string() << '\n';
  }
  if (written == 0) throw IoError("evaluator", "no trained checkpoints found; run train first");
  return 0;
}

int cmd_report(RunContext &ctx) {
  auto inputs = ctx.config.report_inputs;
  if (inputs.empty()) inputs.push_back(ctx.stage_dir("evaluate") / "metrics.csv");
  evaluator::MetricsReport merged;
  for (const auto &in : inputs) {
    const auto r = evaluator::read_metrics_csv(in);
    merged.rows.insert(merged.rows.end(), r.rows.begin(), r.rows.end());
  }
  const auto rendered = evaluator::render_report(merged);
  evaluator::write_report(rendered, ctx.stage_dir("report"));
  ctx.out << rendered.table_text;
  return 0;
}

const std::vector<std::pair<std::string, std::string>> kSubcommands = {
    {"validate", "Check the config, manifests and frame stores"},
    {"extract-clips", "Cut annotated intervals into fixed-length clips"},
    {"balance", "Build one-vs-rest splits and augment target clips to parity"},
    {"train", "Train one binary classifier per action and head"},
    {"evaluate", "Score test clips: accuracy, precision, recall, F1"},
    {"infer", "Sliding-window action timelines over whole videos"},
    {"report", "Render the backbone x head x action comparison tables"},
};

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Laparoscopic action recognition pipeline", "lapact"};
  app.require_subcommand(1, 1);
  std::string config_path, actions, out_dir;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  for (const auto &[name, help] : kSubcommands) {
    auto *sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--set", sets, "Override a config value, e.g. trainer.batch_size=4");
    sub->add_option("--actions", actions, "Comma-separated target actions");
    sub->add_option("--seed", seed, "Global seed");
    sub->add_option("--out", out_dir, "Output directory");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError &e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  }
  const auto subcommand = app.get_subcommands().front()->get_name();

  try {
    auto j = load_config_json(config_path);
    for (const auto &s : sets) apply_override(j, s);
    if (seed) j["seed"] = *seed;
    if (!actions.empty()) {
      json list = json::array();
      std::stringstream ss(actions);
      std::string a;
      while (std::getline(ss, a, ','))
        if (!a.empty()) list.push_back(a);
      j["actions"] = list;
    }
    if (!out_dir.empty()) j["output_dir"] = fs::absolute(out_dir).lexically_normal().string();

    const auto base = fs::absolute(config_path).parent_path();
    RunContext ctx{parse_experiment_config(j, base), {}, out, err};
    ctx.manifests = load_manifests(ctx.config);
    write_json(ctx.stage_dir(subcommand) / "resolved_config.json", ctx.config.resolved);

    if (subcommand == "validate") return cmd_validate(ctx);
    if (subcommand == "extract-clips") return cmd_extract(ctx);
    if (subcommand == "balance") return cmd_balance(ctx);
    if (subcommand == "train") return cmd_train(ctx);
    if (subcommand == "evaluate") return cmd_evaluate(ctx);
    if (subcommand == "infer") return cmd_infer(ctx);
    if (subcommand == "report") return cmd_report(ctx);
  } catch (const Error &e) {
    err << "error [" << e.module() << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run(int argc, char **argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

} // namespace lapact::cli
