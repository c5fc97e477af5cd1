#include "lowrank/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "lowrank/error.hpp"

namespace lowrank {

namespace fs = std::filesystem;

std::string RunKey::dir_name() const {
  std::ostringstream os;
  os << variant_name(variant) << "_k" << rank << "_afc" << format_double(alpha_fc) << "_seed"
     << seed;
  return os.str();
}

std::vector<RunKey> enumerate_runs(const RunConfig& cfg) {
  std::vector<RunKey> keys;
  for (Variant v : cfg.variants)
    for (int k : cfg.ranks)
      for (double a : cfg.alpha_fcs)
        for (uint64_t s : cfg.seeds) keys.push_back({v, k, a, s});
  return keys;
}

namespace {

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_datasets(const RunConfig& cfg) {
  LoadedData d;
  if (cfg.dataset == "idx") {
    d.train = load_idx(cfg.train_images, cfg.train_labels);
    d.test = load_idx(cfg.test_images, cfg.test_labels);
  } else {
    d.train = load_cifar10(cfg.train_files);
    d.test = load_cifar10(cfg.test_files);
  }
  d.train = subset_first(d.train, cfg.train_limit);
  d.test = subset_first(d.test, cfg.test_limit);
  if (cfg.standardize) {
    const ChannelStats stats = channel_stats(d.train);
    standardize(d.train, stats);
    standardize(d.test, stats);
  }
  if (d.train.size() == 0) throw ConfigError("training dataset is empty after slicing");
  d.test.class_count = d.train.class_count =
      std::max(d.train.class_count, d.test.class_count);
  return d;
}

Hyperparams hyperparams_for(const RunConfig& cfg, const RunKey& key) {
  Hyperparams hp;
  hp.batch_size = key.variant == Variant::sbpcav ? cfg.batch_size - 1 : cfg.batch_size;
  hp.block_size = cfg.block_size;
  hp.rank = key.rank;
  hp.alpha_fc = key.alpha_fc;
  hp.alpha_conv = cfg.alpha_conv;
  hp.epochs = cfg.epochs;
  hp.variant = key.variant;
  hp.dropout = cfg.dropout;
  hp.dropout_fraction = cfg.dropout_fraction;
  hp.seed = key.seed;
  hp.sigma_floor = cfg.sigma_floor;
  return hp;
}

struct LayerDims {
  int m, n;
};

std::vector<LayerDims> dense_dims(const Network& net) {
  std::vector<LayerDims> dims;
  for (const Layer& layer : net.layers)
    if (const auto* d = std::get_if<DenseLayer>(&layer))
      dims.push_back({d->weights.rows(), d->weights.cols()});
  return dims;
}

void write_cost_report(const fs::path& path, const Network& net, const Hyperparams& hp,
                       const TrainResult& result) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(strfmt("cannot open %s for writing", path.string().c_str()));
  const int B = hp.batch_size;
  const int b = effective_block_size(hp);
  os << "cost report: variant=" << variant_name(hp.variant) << " B=" << B << " b=" << b
     << " k=" << hp.rank << "\n\n";
  os << "per-batch closed-form model, per dense layer:\n";
  uint64_t mbgd_total = 0, sbpca_total = 0, tape_total = 0, sbpca_aux_total = 0;
  for (const LayerDims& d : dense_dims(net)) {
    const int k = std::min({hp.rank > 0 ? hp.rank : 1, d.m, d.n});
    const CostModel cm = cost_model(d.m, d.n, B, b, k);
    os << "  " << d.m << "x" << d.n << ": mbgd_flops=" << cm.mbgd_flops
       << " sbpca_flops=" << cm.sbpca_flops << " (stream=" << cm.sbpca_stream_flops
       << " qr=" << cm.sbpca_qr_flops << " recompose=" << cm.sbpca_recompose_flops << ")\n"
       << "      tape_floats=" << cm.mbgd_tape_floats << " grad_floats=" << cm.mbgd_grad_floats
       << " sbpca_aux_floats=" << cm.sbpca_aux_floats << " (state=" << cm.sbpca_state_floats
       << " update=" << cm.sbpca_update_floats << " qr_ws=" << cm.sbpca_qr_workspace_floats
       << ")\n"
       << "      ratio_memory_batch=" << format_double(cm.ratio_memory_batch)
       << " ratio_memory_expanded=" << format_double(cm.ratio_memory_expanded) << "\n";
    mbgd_total += cm.mbgd_flops;
    sbpca_total += cm.sbpca_flops;
    tape_total += cm.mbgd_tape_floats;
    sbpca_aux_total += cm.sbpca_aux_floats;
  }
  os << "totals: mbgd_flops_per_batch=" << mbgd_total
     << " sbpca_flops_per_batch=" << sbpca_total << " tape_floats=" << tape_total
     << " sbpca_aux_floats=" << sbpca_aux_total << "\n";

  os << "\nmeasured ledger (whole run):\n";
  for (int c = 0; c < kFlopCategoryCount; ++c)
    os << "  " << flop_category_name(static_cast<FlopCategory>(c)) << " = "
       << result.ledger.flops[c] << "\n";
  os << "  total = " << result.ledger.total_flops() << "\n";
  os << "\naux floats (high-water marks):\n";
  for (const auto& [name, floats] : result.ledger.aux_floats)
    os << "  " << name << " = " << floats << "\n";
  os << "  peak_concurrent = " << result.ledger.peak_aux_floats << "\n";
  os << "\nsigma clamp events: " << result.sigma_clamp_events << "\n";
  if (!os) throw IoError(strfmt("write failed: %s", path.string().c_str()));
}

RunSummary execute_one(const RunConfig& cfg, const RunKey& key, const LoadedData& data,
                       const fs::path& run_dir) {
  RunSummary summary;
  summary.key = key;
  summary.run_dir = run_dir.string();

  const Hyperparams hp = hyperparams_for(cfg, key);
  Network net = make_preset(cfg.preset, hp.seed, cfg.dropout, cfg.dropout_fraction,
                            data.train.class_count);
  const int input_width = net.input_shape.flat();
  if (input_width != data.train.images.cols())
    throw ConfigError(strfmt("preset %s expects %d inputs, dataset provides %d",
                             cfg.preset.c_str(), input_width, data.train.images.cols()));

  TrainOptions opts;
  opts.tracking_cadence = cfg.tracking_cadence;

  const TrainResult result = key.variant == Variant::mbgd
                                 ? train_mbgd(net, data.train, data.test, hp, opts)
                                 : train_sbpca(net, data.train, data.test, hp, opts);

  write_metrics_csv(run_dir / "metrics.csv", result.metrics, result.instrumented_layers);
  write_cost_report(run_dir / "cost_report.txt", result.net, hp, result);
  save_model(result.net, run_dir / "model.bin");
  for (size_t i = 0; i < result.states.size(); ++i)
    save_state(result.states[i], run_dir / ("state_" + result.instrumented_layers[i] + ".bin"));

  summary.epochs = hp.epochs;
  if (!result.metrics.empty()) {
    summary.final_train_loss = result.metrics.back().train_loss;
    summary.final_test_loss = result.metrics.back().test_loss;
    summary.final_test_accuracy = result.metrics.back().test_accuracy;
    for (const MetricsRow& row : result.metrics)
      summary.best_test_accuracy = std::max(summary.best_test_accuracy, row.test_accuracy);
    summary.etc_epochs = epochs_to_converge(result.metrics);
  }

  const int B = hp.batch_size;
  const int b = effective_block_size(hp);
  for (const LayerDims& d : dense_dims(result.net)) {
    const int k = std::min({hp.rank > 0 ? hp.rank : 1, d.m, d.n});
    const CostModel cm = cost_model(d.m, d.n, B, b, k);
    summary.baseline_aux_floats += cm.mbgd_tape_floats;
    if (key.variant == Variant::mbgd) {
      summary.aux_floats += cm.mbgd_tape_floats;
      summary.flops_per_batch += cm.mbgd_flops;
    } else {
      summary.aux_floats += cm.sbpca_aux_floats;
      summary.flops_per_batch += cm.sbpca_flops;
    }
  }
  return summary;
}

int pool_width(const RunConfig& cfg, size_t jobs) {
  int width = cfg.workers > 0 ? cfg.workers
                              : static_cast<int>(std::thread::hardware_concurrency());
  if (width < 1) width = 1;
  if (const char* env = std::getenv("LOWRANK_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) width = std::min(width, cap);
  }
  return static_cast<int>(std::min<size_t>(width, jobs));
}

}  // namespace

std::vector<RunSummary> execute_all(const RunConfig& cfg) {
  const std::vector<RunKey> keys = enumerate_runs(cfg);
  const uint64_t hash = config_hash(cfg);
  char hash_hex[17];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(hash));
  const fs::path base = cfg.output_dir / std::string(hash_hex, 8);
  fs::create_directories(base);
  {
    std::ofstream os(base / "config.resolved", std::ios::binary);
    os << resolved_config_text(cfg);
  }

  const LoadedData data = load_datasets(cfg);

  std::vector<RunSummary> summaries(keys.size());
  std::atomic<size_t> next{0};
  const int width = pool_width(cfg, keys.size());

  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= keys.size()) return;
      const fs::path run_dir = base / keys[i].dir_name();
      fs::create_directories(run_dir);
      try {
        summaries[i] = execute_one(cfg, keys[i], data, run_dir);
      } catch (const std::exception& e) {
        summaries[i].key = keys[i];
        summaries[i].run_dir = run_dir.string();
        summaries[i].status = "failed";
        std::ofstream os(run_dir / "error.txt", std::ios::binary);
        os << e.what() << "\n";
      }
    }
  };

  if (width <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < width; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }

  write_summary_csv(base / "summary.csv", summaries);
  return summaries;
}

void write_summary_csv(const fs::path& path, const std::vector<RunSummary>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(strfmt("cannot open %s for writing", path.string().c_str()));
  os << "variant,rank,alpha_fc,seed,epochs,final_train_loss,final_test_loss,"
        "final_test_accuracy,best_test_accuracy,etc_epochs,aux_floats,baseline_aux_floats,"
        "flops_per_batch,status,run_dir\n";
  for (const RunSummary& r : rows) {
    os << variant_name(r.key.variant) << ',' << r.key.rank << ','
       << format_double(r.key.alpha_fc) << ',' << r.key.seed << ',' << r.epochs << ','
       << format_double(r.final_train_loss) << ',' << format_double(r.final_test_loss) << ','
       << format_double(r.final_test_accuracy) << ',' << format_double(r.best_test_accuracy)
       << ',' << r.etc_epochs << ',' << r.aux_floats << ',' << r.baseline_aux_floats << ','
       << r.flops_per_batch << ',' << r.status << ',' << r.run_dir << '\n';
  }
  if (!os) throw IoError(strfmt("write failed: %s", path.string().c_str()));
}

std::vector<RunSummary> read_summary_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(strfmt("cannot open %s", path.string().c_str()));
  std::string line;
  if (!std::getline(is, line) ||
      line.rfind("variant,rank,alpha_fc,seed,", 0) != 0)
    throw IoError(strfmt("corrupt summary header in %s", path.string().c_str()));
  std::vector<RunSummary> out;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 15)
      throw IoError(strfmt("%s:%d: expected 15 cells, found %zu", path.string().c_str(),
                           line_no, cells.size()));
    try {
      RunSummary r;
      r.key.variant = parse_variant(cells[0]);
      r.key.rank = std::stoi(cells[1]);
      r.key.alpha_fc = std::stod(cells[2]);
      r.key.seed = std::stoull(cells[3]);
      r.epochs = std::stoi(cells[4]);
      r.final_train_loss = std::stod(cells[5]);
      r.final_test_loss = std::stod(cells[6]);
      r.final_test_accuracy = std::stod(cells[7]);
      r.best_test_accuracy = std::stod(cells[8]);
      r.etc_epochs = std::stoi(cells[9]);
      r.aux_floats = std::stoull(cells[10]);
      r.baseline_aux_floats = std::stoull(cells[11]);
      r.flops_per_batch = std::stoull(cells[12]);
      r.status = cells[13];
      r.run_dir = cells[14];
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw IoError(strfmt("%s:%d: %s", path.string().c_str(), line_no, e.what()));
    }
  }
  return out;
}

int run_command(const fs::path& config_path, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = parse_run_config(config_path);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  }
  try {
    const std::vector<RunSummary> summaries = execute_all(cfg);
    size_t failed = 0;
    for (const RunSummary& s : summaries) {
      out << s.key.dir_name() << ": " << s.status;
      if (s.status == "ok")
        out << " final_acc=" << format_double(s.final_test_accuracy)
            << " etc=" << s.etc_epochs;
      out << "\n";
      if (s.status != "ok") ++failed;
    }
    if (failed > 0) {
      err << failed << " of " << summaries.size() << " runs failed\n";
      return 2;
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

int report_command(const fs::path& dir, std::ostream& out, std::ostream& err) {
  try {
    std::vector<fs::path> summary_files;
    if (fs::exists(dir)) {
      if (fs::is_regular_file(dir / "summary.csv")) summary_files.push_back(dir / "summary.csv");
      for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() == "summary.csv" &&
            std::find(summary_files.begin(), summary_files.end(), entry.path()) ==
                summary_files.end())
          summary_files.push_back(entry.path());
    }
    std::sort(summary_files.begin(), summary_files.end());
    if (summary_files.empty())
      throw IoError(strfmt("no runs found under %s (no summary.csv)", dir.string().c_str()));

    std::vector<RunSummary> rows;
    std::vector<std::string> broken;
    for (const fs::path& f : summary_files) {
      try {
        const std::vector<RunSummary> part = read_summary_csv(f);
        rows.insert(rows.end(), part.begin(), part.end());
      } catch (const std::exception& e) {
        broken.push_back(f.string() + ": " + e.what());
      }
    }
    if (!broken.empty()) {
      std::string msg = "corrupt summary files:";
      for (const std::string& b : broken) msg += "\n  " + b;
      throw IoError(msg);
    }

    out << std::left << std::setw(8) << "variant" << std::setw(6) << "rank" << std::setw(10)
        << "alpha_fc" << std::setw(6) << "seed" << std::setw(11) << "final_acc" << std::setw(6)
        << "etc" << std::setw(14) << "aux_floats" << std::setw(16) << "flops_per_batch"
        << std::setw(12) << "mem_ratio" << "status\n";
    for (const RunSummary& r : rows) {
      const double ratio = r.baseline_aux_floats > 0
                               ? static_cast<double>(r.aux_floats) /
                                     static_cast<double>(r.baseline_aux_floats)
                               : 0.0;
      std::ostringstream acc, rat, afc;
      acc << std::fixed << std::setprecision(4) << r.final_test_accuracy;
      rat << std::fixed << std::setprecision(4) << ratio;
      afc << format_double(r.key.alpha_fc);
      out << std::left << std::setw(8) << variant_name(r.key.variant) << std::setw(6)
          << r.key.rank << std::setw(10) << afc.str() << std::setw(6) << r.key.seed
          << std::setw(11) << acc.str() << std::setw(6) << r.etc_epochs << std::setw(14)
          << r.aux_floats << std::setw(16) << r.flops_per_batch << std::setw(12) << rat.str()
          << r.status << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace lowrank
