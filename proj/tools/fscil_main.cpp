// Command-line front end: run / metrics / angles / gradcheck.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or validation failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fscil/analysis.hpp"
#include "fscil/config.hpp"
#include "fscil/fscil.hpp"
#include "fscil/gradcheck_suite.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

bool is_usage_error(const fscil::Error& e) {
  return dynamic_cast<const fscil::ConfigError*>(&e) != nullptr ||
         dynamic_cast<const fscil::ParseError*>(&e) != nullptr ||
         dynamic_cast<const fscil::SchemaError*>(&e) != nullptr ||
         dynamic_cast<const fscil::CapacityError*>(&e) != nullptr ||
         dynamic_cast<const fscil::UndefinedMetricError*>(&e) != nullptr ||
         dynamic_cast<const fscil::LabelError*>(&e) != nullptr ||
         dynamic_cast<const fscil::BoundsError*>(&e) != nullptr;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw fscil::IoError("cannot write " + path);
  out << text;
  if (!out) throw fscil::IoError("short write to " + path);
}

void write_json(const std::string& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

// flag > BSC_OUTPUT_DIR > config > built-in default
std::string resolve_output_dir(const std::string& from_config, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("BSC_OUTPUT_DIR"); env && *env) return env;
  return from_config;
}

struct RunArgs {
  std::string config_path;
  std::string output_dir_flag;
};

int cmd_run(const RunArgs& args) {
  fscil::RunSettings settings;
  try {
    settings = fscil::load_run_config(args.config_path);
    settings.output_dir = resolve_output_dir(settings.output_dir, args.output_dir_flag);
  } catch (const fscil::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    fscil::Dataset ds = settings.load_data();
    fscil::SessionPlan plan = settings.build_plan(ds);
    fscil::ProtocolConfig cfg = settings.protocol_config(ds);
    cfg.validate();

    fscil::Network net(cfg.model);
    net.init(cfg.seeds.init);

    fscil::RunRecord record = fscil::run_full(net, ds, plan, cfg);
    record.resolved_config = fscil::resolved_config_json(settings);

    std::filesystem::create_directories(settings.output_dir);
    std::string record_path = (std::filesystem::path(settings.output_dir) / "run_record.json").string();
    std::string metrics_path = (std::filesystem::path(settings.output_dir) / "metrics.csv").string();
    write_json(record_path, record.to_json());
    fscil::write_matrix_csv(record.matrix(), metrics_path);

    if (settings.analysis.psi_trace && !record.checkpoints.empty()) {
      auto ids = plan.train_ids_for(plan.base_classes, false);
      std::vector<double> trace = fscil::psi_trace(record.checkpoints, ds, ids);
      std::string out = "checkpoint,psi_degrees\n";
      for (std::size_t i = 0; i < trace.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", trace[i]);
        out += record.checkpoints[i] + "," + buf + "\n";
      }
      write_text((std::filesystem::path(settings.output_dir) / "psi_trace.csv").string(), out);
    }
    if (settings.analysis.export_embeddings) {
      std::vector<std::size_t> test_idx = plan.test_indices_for(plan.classes_up_to(plan.num_sessions()));
      fscil::export_embeddings(net, ds, test_idx,
                               (std::filesystem::path(settings.output_dir) / "embeddings.csv").string());
    }

    const fscil::AccuracyMatrix matrix = record.matrix();
    for (const auto& e : record.sessions) {
      std::cout << "session " << e.t << ": acc_all " << fscil::format_pct(e.acc_all) << "  acc_base "
                << fscil::format_pct(e.acc_base);
      if (e.acc_new) std::cout << "  acc_new " << fscil::format_pct(*e.acc_new);
      std::cout << "  (" << e.active_classes << " classes)\n";
    }
    if (matrix.sessions() >= 2) {
      std::cout << "PD  " << fscil::format_pct(fscil::pd(matrix)) << "\n";
      std::cout << "NLA " << fscil::format_pct(fscil::nla(matrix)) << "\n";
    }
    std::cout << "BMA " << fscil::format_pct(fscil::bma(matrix)) << "\n";
    for (const auto& [phase, seconds] : record.phase_seconds) {
      std::fprintf(stdout, "time %-9s %.2fs\n", phase.c_str(), seconds);
    }
    std::cout << "wrote " << record_path << " and " << metrics_path << "\n";
    return kExitOk;
  } catch (const fscil::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_usage_error(e) ? kExitUsage : kExitRuntime;
  }
}

int cmd_metrics(const std::string& csv_path, const std::string& out_path) {
  try {
    fscil::AccuracyMatrix m = fscil::read_matrix_csv(csv_path);
    nlohmann::json summary;
    auto report = [&](const char* name, double (*fn)(const fscil::AccuracyMatrix&)) {
      try {
        double v = fn(m);
        std::cout << name << " " << fscil::format_pct(v) << "\n";
        summary[name] = std::stod(fscil::format_pct(v));
      } catch (const fscil::UndefinedMetricError&) {
        std::cout << name << " na\n";
        summary[name] = nullptr;
      }
    };
    report("pd", fscil::pd);
    report("nla", fscil::nla);
    report("bma", fscil::bma);
    std::string out = out_path.empty() ? csv_path + ".summary.json" : out_path;
    write_json(out, summary);
    return kExitOk;
  } catch (const fscil::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_usage_error(e) ? kExitUsage : kExitRuntime;
  }
}

// Shared by angles psi / trace / export: rebuild the dataset and plan
// described by a run config, or load a bare CSV (all samples, class scope =
// every class in the file).
struct AnglesData {
  fscil::Dataset dataset;
  std::map<int, std::vector<std::size_t>> ids_by_class;
  std::vector<std::size_t> all_indices;
};

AnglesData load_angles_data(const std::string& config_path, const std::string& csv_path, const std::string& split) {
  AnglesData out;
  if (!csv_path.empty()) {
    out.dataset = fscil::load_csv(csv_path);
    out.ids_by_class = out.dataset.indices_by_class();
    for (std::size_t i = 0; i < out.dataset.samples.size(); ++i) out.all_indices.push_back(i);
    return out;
  }
  if (config_path.empty()) {
    throw fscil::ConfigError("angles: provide --config or --data");
  }
  fscil::RunSettings settings = fscil::load_run_config(config_path);
  out.dataset = settings.load_data();
  fscil::SessionPlan plan = settings.build_plan(out.dataset);
  bool train = split != "test";
  out.ids_by_class = plan.train_ids_for(plan.base_classes, false);
  if (!train) {
    out.ids_by_class.clear();
    for (int c : plan.base_classes) out.ids_by_class[c] = plan.test_ids.at(c);
  }
  for (const auto& [c, ids] : out.ids_by_class) {
    out.all_indices.insert(out.all_indices.end(), ids.begin(), ids.end());
  }
  return out;
}

int cmd_angles_psi(const std::string& checkpoint, const std::string& config_path, const std::string& csv_path,
                   const std::string& split, const std::string& out_path) {
  try {
    fscil::Network net = fscil::Network::load(checkpoint);
    AnglesData data = load_angles_data(config_path, csv_path, split);
    fscil::AngleReport report = fscil::angle_report(net, data.dataset, data.ids_by_class);
    nlohmann::json j = {{"psi_degrees", report.psi_degrees},
                        {"n_classes", report.class_count},
                        {"dim", report.feature_dim}};
    std::cout << j.dump(2) << "\n";
    if (!out_path.empty()) write_json(out_path, j);
    return kExitOk;
  } catch (const fscil::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_usage_error(e) ? kExitUsage : kExitRuntime;
  }
}

int cmd_angles_minangle(std::size_t n, std::size_t d, std::uint64_t seed, std::size_t chunk_mb,
                        const std::string& out_path) {
  try {
    double phi = fscil::min_angle_study(n, d, seed, chunk_mb << 20);
    nlohmann::json j = {{"phi_degrees", phi}, {"n", n}, {"d", d}};
    std::cout << j.dump(2) << "\n";
    if (!out_path.empty()) write_json(out_path, j);
    return kExitOk;
  } catch (const fscil::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_usage_error(e) ? kExitUsage : kExitRuntime;
  }
}

int cmd_angles_trace(const std::string& record_path, const std::string& config_path, const std::string& out_path) {
  try {
    std::ifstream in(record_path);
    if (!in) throw fscil::ConfigError("cannot open " + record_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw fscil::ParseError(record_path + ": " + e.what());
    }
    if (!j.contains("checkpoints")) throw fscil::SchemaError(record_path + ": no checkpoints field");
    std::vector<std::string> checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    if (checkpoints.empty()) throw fscil::ConfigError(record_path + ": run saved no checkpoints");

    AnglesData data = load_angles_data(config_path, "", "train");
    std::vector<double> trace = fscil::psi_trace(checkpoints, data.dataset, data.ids_by_class);
    std::string out = "checkpoint,psi_degrees\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", trace[i]);
      out += checkpoints[i] + "," + buf + "\n";
      std::cout << checkpoints[i] << " " << buf << "\n";
    }
    if (!out_path.empty()) write_text(out_path, out);
    return kExitOk;
  } catch (const fscil::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_usage_error(e) ? kExitUsage : kExitRuntime;
  }
}

int cmd_angles_export(const std::string& checkpoint, const std::string& config_path, const std::string& csv_path,
                      const std::string& split, const std::string& out_path) {
  try {
    fscil::Network net = fscil::Network::load(checkpoint);
    AnglesData data = load_angles_data(config_path, csv_path, split);
    fscil::export_embeddings(net, data.dataset, data.all_indices, out_path);
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
  } catch (const fscil::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_usage_error(e) ? kExitUsage : kExitRuntime;
  }
}

int cmd_gradcheck(const std::string& config_path) {
  fscil::GradcheckSuiteConfig cfg;
  try {
    std::ifstream in(config_path);
    if (!in) throw fscil::ConfigError("cannot open " + config_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw fscil::ParseError(config_path + ": " + e.what());
    }
    fscil::detail::StrictObject o(j, "gradcheck");
    cfg.seed = o.get<std::uint64_t>("seed", cfg.seed);
    cfg.eps = o.get<double>("eps", cfg.eps);
    cfg.sample_fraction = o.get<double>("sample_fraction", cfg.sample_fraction);
    cfg.threshold = o.get<double>("threshold", cfg.threshold);
    cfg.model.d_in = o.get<std::size_t>("d_in", cfg.model.d_in);
    cfg.model.extractor_dims = o.get<std::vector<std::size_t>>("extractor_dims", cfg.model.extractor_dims);
    cfg.model.head_hidden = o.get<std::size_t>("head_hidden", cfg.model.head_hidden);
    cfg.model.head_dim = o.get<std::size_t>("head_dim", cfg.model.head_dim);
    cfg.model.tau_ce = o.get<double>("tau_ce", cfg.model.tau_ce);
    cfg.batch_sources = o.get<std::size_t>("batch_sources", cfg.batch_sources);
    cfg.views = o.get<int>("views", cfg.views);
    cfg.num_classes = o.get<std::size_t>("num_classes", cfg.num_classes);
    cfg.tau = o.get<double>("tau", cfg.tau);
    cfg.alpha = o.get<double>("alpha", cfg.alpha);
    cfg.lambda = o.get<double>("lambda", cfg.lambda);
    cfg.corruption_scale = o.get<double>("corruption_scale", cfg.corruption_scale);
    cfg.losses = o.get<std::vector<std::string>>("losses", cfg.losses);
    o.finish();
    cfg.model.validate();
  } catch (const fscil::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    std::vector<fscil::GradcheckCase> cases = fscil::run_gradcheck_suite(cfg);
    std::printf("%-10s %-14s %-8s %s\n", "loss", "max_rel_error", "coords", "status");
    bool all_ok = true;
    for (const auto& c : cases) {
      std::printf("%-10s %-14.3e %-8zu %s\n", c.loss.c_str(), c.result.max_rel_error,
                  c.result.coordinates_checked, c.passed ? "ok" : "FAIL");
      if (!c.passed) {
        all_ok = false;
        std::printf("  worst coordinate: %s[%zu] analytic %.6e numeric %.6e\n", c.result.worst_param.c_str(),
                    c.result.worst_index, c.result.worst_analytic, c.result.worst_numeric);
      }
    }
    return all_ok ? kExitOk : kExitRuntime;
  } catch (const fscil::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_usage_error(e) ? kExitUsage : kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot class-incremental learning engine"};
  app.require_subcommand(1);

  RunArgs run_args;
  CLI::App* run = app.add_subcommand("run", "execute the full training protocol from a JSON config");
  run->add_option("config", run_args.config_path, "run config path")->required();
  run->add_option("--output-dir", run_args.output_dir_flag, "override the config's output_dir");

  std::string metrics_csv, metrics_out;
  CLI::App* metrics = app.add_subcommand("metrics", "compute PD/NLA/BMA from an accuracy matrix CSV");
  metrics->add_option("matrix", metrics_csv, "accuracy matrix CSV path")->required();
  metrics->add_option("--out", metrics_out, "summary JSON path (default: <matrix>.summary.json)");

  CLI::App* angles = app.add_subcommand("angles", "angular analyses");
  angles->require_subcommand(1);

  std::string psi_checkpoint, psi_config, psi_data, psi_split = "train", psi_out;
  CLI::App* psi_cmd = angles->add_subcommand("psi", "mean inter-class angle of class mean features");
  psi_cmd->add_option("--checkpoint", psi_checkpoint, "network checkpoint")->required();
  psi_cmd->add_option("--config", psi_config, "run config describing the dataset");
  psi_cmd->add_option("--data", psi_data, "dataset CSV (alternative to --config)");
  psi_cmd->add_option("--split", psi_split, "train|test (with --config)");
  psi_cmd->add_option("--out", psi_out, "angle report JSON path");

  std::size_t ma_n = 0, ma_d = 0, ma_chunk_mb = 256;
  std::uint64_t ma_seed = 0;
  std::string ma_out;
  CLI::App* minangle = angles->add_subcommand("minangle", "mean minimum pairwise angle of random unit vectors");
  minangle->add_option("--n", ma_n, "number of vectors")->required();
  minangle->add_option("--d", ma_d, "dimension")->required();
  minangle->add_option("--seed", ma_seed, "rng seed");
  minangle->add_option("--chunk-mb", ma_chunk_mb, "memory cap for the pairwise pass");
  minangle->add_option("--out", ma_out, "result JSON path");

  std::string trace_record, trace_config, trace_out;
  CLI::App* trace = angles->add_subcommand("trace", "psi at each checkpoint of a run record");
  trace->add_option("--run-record", trace_record, "run_record.json path")->required();
  trace->add_option("--config", trace_config, "run config describing the dataset")->required();
  trace->add_option("--out", trace_out, "trace CSV path");

  std::string exp_checkpoint, exp_config, exp_data, exp_split = "test", exp_out;
  CLI::App* exp = angles->add_subcommand("export", "write feature embeddings CSV");
  exp->add_option("--checkpoint", exp_checkpoint, "network checkpoint")->required();
  exp->add_option("--config", exp_config, "run config describing the dataset");
  exp->add_option("--data", exp_data, "dataset CSV (alternative to --config)");
  exp->add_option("--split", exp_split, "train|test (with --config)");
  exp->add_option("--out", exp_out, "embeddings CSV path")->required();

  std::string gradcheck_config;
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss variant");
  gc->add_option("config", gradcheck_config, "gradcheck config JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ? kExitOk : kExitUsage;
  }

  if (run->parsed()) return cmd_run(run_args);
  if (metrics->parsed()) return cmd_metrics(metrics_csv, metrics_out);
  if (angles->parsed()) {
    if (psi_cmd->parsed()) return cmd_angles_psi(psi_checkpoint, psi_config, psi_data, psi_split, psi_out);
    if (minangle->parsed()) return cmd_angles_minangle(ma_n, ma_d, ma_seed, ma_chunk_mb, ma_out);
    if (trace->parsed()) return cmd_angles_trace(trace_record, trace_config, trace_out);
    if (exp->parsed()) return cmd_angles_export(exp_checkpoint, exp_config, exp_data, exp_split, exp_out);
  }
  if (gc->parsed()) return cmd_gradcheck(gradcheck_config);
  std::cerr << "error: no command\n";
  return kExitUsage;
}
