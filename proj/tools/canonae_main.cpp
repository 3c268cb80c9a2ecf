#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "canonae/data.hpp"
#include "canonae/model.hpp"
#include "canonae/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace canonae;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Run configuration: the model spec plus file paths and worker count, read
// from JSON with flag overrides. Unknown keys are rejected.
struct RunConfig {
  ModelSpec model;
  std::string dataset;
  std::string outdir = "out";
  std::string resume;  // checkpoint to continue from
  int workers = 1;

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    json j;
    try {
      j = json::parse(ss.str());
    } catch (const json::exception& e) {
      throw UsageError("config parse error: " + std::string(e.what()));
    }
    RunConfig c;
    bool saw_model = false;
    for (const auto& [key, value] : j.items()) {
      if (key == "model") {
        c.model = ModelSpec::from_json(value.dump());
        saw_model = true;
      } else if (key == "dataset") {
        c.dataset = value.get<std::string>();
      } else if (key == "outdir") {
        c.outdir = value.get<std::string>();
      } else if (key == "resume") {
        c.resume = value.get<std::string>();
      } else if (key == "workers") {
        c.workers = value.get<int>();
      } else {
        throw UsageError("config: unknown key '" + key + "'");
      }
    }
    if (!saw_model) throw UsageError("config: missing 'model' section");
    if (c.workers < 1) throw UsageError("config: workers must be >= 1");
    return c;
  }

  json to_json() const {
    json j;
    j["model"] = json::parse(model.to_json());
    j["dataset"] = dataset;
    j["outdir"] = outdir;
    if (!resume.empty()) j["resume"] = resume;
    j["workers"] = workers;
    return j;
  }
};

void apply_env_seed(ModelSpec& spec) {
  if (const char* env = std::getenv("CANONAE_SEED")) {
    spec.seed = std::strtoull(env, nullptr, 10);
  }
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,loss,inv_gap,acc_or_mse,chirality\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << fmt17(r.loss) << ',' << fmt17(r.inv_gap) << ',' << fmt17(r.acc_or_mse) << ','
        << fmt17(r.chirality) << '\n';
}

void write_manifest(const std::string& path, const std::string& command, const RunConfig& cfg,
                    const std::string& dataset_path) {
  json j;
  j["command"] = command;
  j["config"] = cfg.to_json();
  j["seed"] = cfg.model.seed;
  j["config_hash"] = string_hash(cfg.to_json().dump());
  if (!dataset_path.empty() && fs::exists(dataset_path)) j["dataset_hash"] = file_hash(dataset_path);
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

std::string csv_quote(const std::string& s) {
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += "\"\"";
    q += c;
  }
  q += '"';
  return q;
}

int cmd_gen(const std::string& task, int count, double sigma, std::uint64_t seed, bool augment, int n, int d,
            int classes, const std::string& out) {
  Dataset ds;
  if (task == "tetris") {
    ds = gen_tetris(count, sigma, seed, augment);
  } else if (task == "digit-sets") {
    ds = gen_digit_sets(n, d, count, seed);
  } else if (task == "clouds2d") {
    ds = gen_clouds2d(count, n, classes, sigma, seed, augment);
  } else {
    throw UsageError("unknown task '" + task + "' (expected tetris|digit-sets|clouds2d)");
  }
  save_dataset(out, ds);
  std::printf("wrote %zu samples to %s\ncontent hash %s\n", ds.size(), out.c_str(), file_hash(out).c_str());
  return 0;
}

int cmd_train(RunConfig cfg) {
  if (cfg.dataset.empty()) throw UsageError("train: config needs a 'dataset' path");
  const Dataset ds = load_dataset(cfg.dataset);
  fs::create_directories(cfg.outdir);

  TrainResult res;
  if (!cfg.resume.empty()) {
    std::ifstream in(cfg.resume);
    if (!in) throw UsageError("cannot open checkpoint '" + cfg.resume + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    ModelState st = ModelState::from_json(ss.str());
    res = train_continue(std::move(st), ds, cfg.model.epochs, cfg.workers);
  } else {
    res = train(cfg.model, ds, cfg.workers);
  }

  const std::string ckpt = cfg.outdir + "/checkpoint.json";
  {
    std::ofstream out(ckpt);
    out << res.state.to_json() << '\n';
  }
  write_metrics_csv(cfg.outdir + "/metrics.csv", res.log);
  write_manifest(cfg.outdir + "/manifest.json", "train", cfg, cfg.dataset);

  if (res.aborted) {
    std::fprintf(stderr, "training aborted: %s (last good checkpoint written)\n", res.abort_reason.c_str());
    return 1;
  }
  if (!res.log.empty()) {
    const auto& last = res.log.back();
    std::printf("trained %lld steps; final loss %s, acc_or_mse %s\n", static_cast<long long>(res.state.step),
                fmt17(last.loss).c_str(), fmt17(last.acc_or_mse).c_str());
  }
  std::printf("checkpoint %s\n", ckpt.c_str());
  return 0;
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ModelState::from_json(ss.str());
}

int cmd_eval(const std::string& ckpt, const std::string& dataset, const std::string& report, int sweep,
             std::uint64_t seed, const std::string& out_json) {
  const ModelState st = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(dataset);
  const EvalMetrics m = evaluate(st, ds, sweep, seed);
  json j;
  j["samples"] = m.samples;
  j["mse"] = m.mse;
  j["accuracy"] = m.accuracy;
  j["inv_gap"] = m.inv_gap;
  j["equi_gap"] = m.equi_gap;
  j["chirality_margin"] = m.chirality;
  const std::string text = j.dump(2);
  if (!out_json.empty()) {
    std::ofstream f(out_json);
    f << text << '\n';
  }
  std::printf("%s\n", text.c_str());

  if (!report.empty()) {
    const auto rows = per_sample_report(st, ds);
    std::ofstream f(report);
    if (!f) throw std::runtime_error("cannot write " + report);
    f << "index,label,recon_error";
    const int zdim = rows.empty() ? 0 : static_cast<int>(rows[0].z.size());
    for (int i = 0; i < zdim; ++i) f << ",z" << i;
    f << ",g\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      f << i << ',' << rows[i].label << ',' << fmt17(rows[i].recon_error);
      for (double v : rows[i].z) f << ',' << fmt17(v);
      f << ',' << csv_quote(rows[i].g_json) << '\n';
    }
  }
  return 0;
}

int cmd_embed(const std::string& ckpt, const std::string& dataset, const std::string& out) {
  const ModelState st = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(dataset);
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out);
  const bool digit = st.spec.task == Task::DigitSets || st.spec.task == Task::DigitSetsBaseline;
  f << "index,label";
  for (int i = 0; i < st.spec.zdim; ++i) f << ",z" << i;
  if (digit)
    for (int c = 0; c < st.spec.set_d; ++c) f << ",count" << c;
  f << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const EncodeOut enc = encode(st, ds[i]);
    int label = -1;
    if (ds[i].kind == Sample::Kind::PointCloud && ds[i].cloud.label) label = *ds[i].cloud.label;
    f << i << ',' << label;
    for (int c = 0; c < enc.z.size(); ++c) f << ',' << fmt17(enc.z.at(c));
    if (digit) {
      // class histogram: the set's composition, for colouring embeddings
      std::vector<int> hist(static_cast<std::size_t>(st.spec.set_d), 0);
      for (int r = 0; r < st.spec.set_n; ++r)
        for (int c = 0; c < st.spec.set_d; ++c)
          if (ds[i].digits.rows.at(r, c) == 1.0) ++hist[static_cast<std::size_t>(c)];
      for (int c : hist) f << ',' << c;
    }
    f << '\n';
  }
  std::printf("wrote %zu embeddings to %s\n", ds.size(), out.c_str());
  return 0;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
  std::vector<std::string> suites;
  if (suite == "all")
    suites = {"groups", "eqnn", "props"};
  else
    suites = {suite};
  bool ok = true;
  for (const auto& name : suites) {
    const SuiteReport rep = verify_suite(name, seed);
    std::printf("%s", format_report(rep).c_str());
    ok = ok && rep.all_pass();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"group-invariant autoencoder toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a dataset file");
  std::string gen_task = "tetris", gen_out = "dataset.jsonl";
  int gen_count = 800, gen_n = 20, gen_d = 10, gen_classes = 3;
  double gen_sigma = 0.01;
  std::uint64_t gen_seed = 1;
  bool gen_no_augment = false;
  gen->add_option("--task", gen_task, "tetris|digit-sets|clouds2d");
  gen->add_option("--count", gen_count, "sample count");
  gen->add_option("--sigma", gen_sigma, "position noise std");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--n", gen_n, "set size / points per cloud");
  gen->add_option("--d", gen_d, "digit classes");
  gen->add_option("--classes", gen_classes, "2d base shape count");
  gen->add_flag("--no-augment", gen_no_augment, "skip random rotation/translation");
  gen->add_option("--out", gen_out, "output path (.jsonl)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  std::string cfg_path;
  std::string ovr_dataset, ovr_outdir, ovr_resume;
  int ovr_epochs = -1, ovr_batch = -1, ovr_workers = -1;
  double ovr_lr = -1;
  std::int64_t ovr_seed = -1;
  train_cmd->add_option("--config", cfg_path, "JSON run config")->required();
  train_cmd->add_option("--dataset", ovr_dataset, "override dataset path");
  train_cmd->add_option("--outdir", ovr_outdir, "override output directory");
  train_cmd->add_option("--resume", ovr_resume, "continue from a checkpoint");
  train_cmd->add_option("--epochs", ovr_epochs, "override epoch count");
  train_cmd->add_option("--batch", ovr_batch, "override batch size");
  train_cmd->add_option("--workers", ovr_workers, "batch-parallel gradient workers");
  train_cmd->add_option("--lr", ovr_lr, "override learning rate");
  train_cmd->add_option("--seed", ovr_seed, "override seed");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_report, ev_out;
  int ev_sweep = 10;
  std::uint64_t ev_seed = 1;
  eval_cmd->add_option("--checkpoint", ev_ckpt)->required();
  eval_cmd->add_option("--dataset", ev_data)->required();
  eval_cmd->add_option("--report", ev_report, "per-sample CSV path");
  eval_cmd->add_option("--group-sweep", ev_sweep, "random group elements per sample");
  eval_cmd->add_option("--seed", ev_seed);
  eval_cmd->add_option("--out", ev_out, "metrics JSON path");

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run a property suite");
  std::string vf_suite = "all";
  std::uint64_t vf_seed = 1;
  verify_cmd->add_option("suite", vf_suite, "groups|eqnn|props|all");
  verify_cmd->add_option("--seed", vf_seed);

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "export embeddings as CSV");
  std::string em_ckpt, em_data, em_out = "embeddings.csv";
  embed_cmd->add_option("--checkpoint", em_ckpt)->required();
  embed_cmd->add_option("--dataset", em_data)->required();
  embed_cmd->add_option("--out", em_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen(gen_task, gen_count, gen_sigma, gen_seed, !gen_no_augment, gen_n, gen_d, gen_classes, gen_out);
    if (train_cmd->parsed()) {
      RunConfig cfg = RunConfig::load(cfg_path);
      if (!ovr_dataset.empty()) cfg.dataset = ovr_dataset;
      if (!ovr_outdir.empty()) cfg.outdir = ovr_outdir;
      if (!ovr_resume.empty()) cfg.resume = ovr_resume;
      if (ovr_epochs >= 0) cfg.model.epochs = ovr_epochs;
      if (ovr_batch > 0) cfg.model.batch = ovr_batch;
      if (ovr_workers > 0) cfg.workers = ovr_workers;
      if (ovr_lr > 0) cfg.model.lr = ovr_lr;
      if (ovr_seed >= 0) cfg.model.seed = static_cast<std::uint64_t>(ovr_seed);
      apply_env_seed(cfg.model);
      cfg.model.validate();
      return cmd_train(std::move(cfg));
    }
    if (eval_cmd->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_report, ev_sweep, ev_seed, ev_out);
    if (verify_cmd->parsed()) return cmd_verify(vf_suite, vf_seed);
    if (embed_cmd->parsed()) return cmd_embed(em_ckpt, em_data, em_out);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
