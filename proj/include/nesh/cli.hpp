#pragma once

// Command-line surface. Subcommands: simulate, train, eval, embed, project,
// synth, stats. Every flag can also be set through an environment variable
// named NESH_<FLAG> (dashes become underscores). Exit codes: 0 success,
// 1 runtime failure (one-line `error: ...` on stderr), 2 usage error.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nesh/checkpoint.hpp"
#include "nesh/common.hpp"
#include "nesh/data.hpp"
#include "nesh/eval.hpp"
#include "nesh/inference.hpp"
#include "nesh/procsim.hpp"

namespace nesh::cli {

namespace detail {

// `start:stop:count` -> inclusive linear grid.
inline std::vector<double> parse_grid(const std::string& text) {
  auto first = text.find(':');
  auto second = text.find(':', first + 1);
  if (first == std::string::npos || second == std::string::npos)
    throw CLI::ValidationError("--alpha", "expected start:stop:count");
  double start = std::stod(text.substr(0, first));
  double stop = std::stod(text.substr(first + 1, second - first - 1));
  int count = std::stoi(text.substr(second + 1));
  if (count < 1) throw CLI::ValidationError("--alpha", "count must be >= 1");
  std::vector<double> grid;
  for (int i = 0; i < count; ++i)
    grid.push_back(count == 1 ? start
                              : start + (stop - start) * i / (count - 1));
  return grid;
}

// Registers NESH_* environment fallbacks for every option of an app tree.
inline void add_env_fallbacks(CLI::App* app) {
  for (auto* option : app->get_options()) {
    std::string name = option->get_single_name();
    if (name.empty() || name == "help") continue;
    std::transform(name.begin(), name.end(), name.begin(), [](char c) {
      return c == '-' ? '_' : static_cast<char>(std::toupper(c));
    });
    option->envname("NESH_" + name);
  }
  for (auto* sub : app->get_subcommands({})) add_env_fallbacks(sub);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cli: cannot write '" + path + "'");
  return out;
}

}  // namespace detail

inline int run(std::vector<std::string> args) {
  CLI::App app{"NESH: sparse hypergraph process simulation and nonparametric "
               "embeddings of high-order interaction events"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags (--seed, --threads) work after a subcommand
  std::uint64_t seed = 1;
  int threads = 0;
  app.add_option("--seed", seed, "global random seed")->capture_default_str();
  app.add_option("--threads", threads,
                 "worker thread cap (0 = all cores); results do not depend on it")
      ->capture_default_str();

  // simulate
  auto* simulate = app.add_subcommand(
      "simulate", "sample hypergraphs over an alpha grid and write sparsity "
                  "ratios with their closed-form bounds");
  int sim_modes = 3, sim_rank = 1, sim_reps = 200;
  std::string sim_grid = "2:20:10", sim_out;
  double sim_tol = 1e-8;
  simulate->add_option("--k", sim_modes, "edge arity (number of node types)")
      ->capture_default_str();
  simulate->add_option("--r", sim_rank, "number of components")->capture_default_str();
  simulate->add_option("--alpha", sim_grid, "grid start:stop:count")
      ->capture_default_str();
  simulate->add_option("--reps", sim_reps, "replicates per grid value")
      ->capture_default_str();
  simulate->add_option("--tol", sim_tol, "stick truncation tolerance (R > 1)")
      ->capture_default_str();
  simulate->add_option("--out", sim_out, "output CSV")->required();

  // synth
  auto* synth = app.add_subcommand(
      "synth", "generate an event file from a known rate specification");
  std::string synth_spec, synth_out;
  synth->add_option("--spec", synth_spec, "generator spec file")->required();
  synth->add_option("--out", synth_out, "output event CSV")->required();

  // stats
  auto* stats = app.add_subcommand("stats", "summarize an event file");
  std::string stats_data;
  stats->add_option("--data", stats_data, "event CSV")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "fit the embedding model");
  std::string train_data, train_out, train_history, train_test_out, train_prior = "nesh";
  inference::TrainConfig config;
  double split_fraction = 0.0;
  train_cmd->add_option("--data", train_data, "training event CSV")->required();
  train_cmd->add_option("--rank", config.rank, "embedding dimension R")
      ->capture_default_str();
  train_cmd->add_option("--alpha", config.alpha, "stick-breaking concentration")
      ->capture_default_str();
  train_cmd->add_option("--inducing", config.inducing_count, "pseudo-input count")
      ->capture_default_str();
  train_cmd->add_option("--batch", config.batch_size, "interactions per minibatch")
      ->capture_default_str();
  train_cmd->add_option("--epochs", config.epochs, "training epochs")
      ->capture_default_str();
  train_cmd->add_option("--lr", config.learning_rate, "Adam learning rate")
      ->capture_default_str();
  train_cmd->add_option("--prior", train_prior, "embedding prior: nesh | gaussian")
      ->capture_default_str();
  train_cmd->add_option("--mc-samples", config.event_samples,
                        "Monte-Carlo draws for the event term (S)")
      ->capture_default_str();
  train_cmd->add_option("--time-samples", config.time_samples,
                        "Uniform(0,T) draws for the integral term (Q)")
      ->capture_default_str();
  train_cmd->add_option("--jitter", config.jitter, "kernel jitter")
      ->capture_default_str();
  train_cmd->add_option("--eps-f", config.eps_f, "guard inside log(f^2 + eps)")
      ->capture_default_str();
  train_cmd->add_option("--bn-eps", config.bn_eps, "batch-norm epsilon")
      ->capture_default_str();
  train_cmd
      ->add_option("--split-fraction", split_fraction,
                   "hold out 1-f of the sequences before training (0 = train on all)")
      ->capture_default_str();
  train_cmd->add_option("--test-out", train_test_out,
                        "write the held-out sequences to this event CSV");
  train_cmd->add_option("--history-out", train_history,
                        "write per-epoch mean ELBO as CSV");
  train_cmd->add_option("--out", train_out, "checkpoint file")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score held-out sequences");
  std::string eval_ck, eval_data, eval_out;
  int eval_s = 100, eval_q = 100;
  eval_cmd->add_option("--checkpoint", eval_ck, "trained checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "test event CSV")->required();
  eval_cmd->add_option("--mc-samples", eval_s, "event-term draws (S)")
      ->capture_default_str();
  eval_cmd->add_option("--time-samples", eval_q, "integral draws (Q)")
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "report CSV")->required();

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "export log-sociability embeddings");
  std::string embed_ck, embed_out;
  embed_cmd->add_option("--checkpoint", embed_ck, "trained checkpoint")->required();
  embed_cmd->add_option("--out", embed_out, "embedding CSV")->required();

  // project
  auto* project_cmd =
      app.add_subcommand("project", "kernel-PCA projection of the embeddings");
  std::string project_ck, project_out;
  int project_dim = 2;
  double project_len = 1.0, project_var = 1.0;
  project_cmd->add_option("--checkpoint", project_ck, "trained checkpoint")->required();
  project_cmd->add_option("--dim", project_dim, "output dimensions")
      ->capture_default_str();
  project_cmd->add_option("--lengthscale", project_len, "SE kernel lengthscale")
      ->capture_default_str();
  project_cmd->add_option("--variance", project_var, "SE kernel variance")
      ->capture_default_str();
  project_cmd->add_option("--out", project_out, "coordinates CSV")->required();

  detail::add_env_fallbacks(&app);

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands({}))
      if (sub->parsed()) target = sub;
    std::cout << target->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (simulate->parsed()) {
      auto grid = detail::parse_grid(sim_grid);
      auto rows = procsim::sweep(sim_modes, sim_rank, grid, sim_reps, seed, sim_tol,
                                 threads);
      auto out = detail::open_out(sim_out);
      procsim::write_sweep_csv(rows, out);
      std::cout << "wrote " << rows.size() << " rows to " << sim_out << '\n';
    } else if (synth->parsed()) {
      std::ifstream spec_in(synth_spec);
      if (!spec_in) throw Error("cli: cannot open '" + synth_spec + "'");
      auto rng = make_rng(seed, 0xba5e);
      auto spec = data::parse_generator_spec(spec_in, rng);
      auto ds = data::synth_from_model(spec, rng);
      if (ds.sequences.empty()) throw Error("cli: generator produced no events");
      data::save_events(ds, synth_out);
      auto summary = data::dataset_stats(ds);
      std::cout << "wrote " << summary.num_events << " events over "
                << summary.num_sequences << " interactions to " << synth_out << '\n';
    } else if (stats->parsed()) {
      auto ds = data::load_events(stats_data);
      auto s = data::dataset_stats(ds);
      std::cout << "modes: " << s.num_modes << "\nmode_sizes:";
      for (auto d : s.mode_sizes) std::cout << ' ' << d;
      std::cout << "\nsequences: " << s.num_sequences << "\nevents: " << s.num_events
                << "\nhorizon: " << format_g17(s.horizon)
                << "\nsparsity: " << format_g17(s.sparsity) << '\n';
    } else if (train_cmd->parsed()) {
      config.seed = seed;
      config.prior = inference::prior_mode_from_string(train_prior);
      auto ds = data::load_events(train_data);
      data::EventDataset train_ds = std::move(ds);
      if (split_fraction > 0.0) {
        auto [tr, te] = data::split_sequences(train_ds, split_fraction, seed);
        train_ds = std::move(tr);
        if (!train_test_out.empty()) data::save_events(te, train_test_out);
      }
      auto ck = inference::train(train_ds, config);
      checkpoint::save_checkpoint(train_out, ck);
      if (!train_history.empty()) {
        auto out = detail::open_out(train_history);
        out << "epoch,elbo_mean\n";
        for (std::size_t e = 0; e < ck.history.size(); ++e)
          out << e << ',' << format_g17(ck.history[e]) << '\n';
      }
      std::cout << "trained " << ck.history.size() << " epochs; checkpoint " << train_out;
      if (!ck.history.empty()) std::cout << "; final ELBO " << format_g17(ck.history.back());
      if (ck.aborted) std::cout << "; ABORTED on numerical failure (last good state)";
      std::cout << '\n';
      if (ck.aborted) return 1;
    } else if (eval_cmd->parsed()) {
      auto ck = checkpoint::load_checkpoint(eval_ck);
      auto ds = data::load_events(eval_data);
      auto report = eval::test_loglik(ck, ds, eval_s, eval_q, seed);
      auto out = detail::open_out(eval_out);
      eval::write_report(report, out);
      std::cout << "total=" << format_g17(report.total)
                << " mean=" << format_g17(report.mean)
                << " scored=" << report.per_sequence.size()
                << " dropped=" << report.dropped << '\n';
    } else if (embed_cmd->parsed()) {
      auto ck = checkpoint::load_checkpoint(embed_ck);
      auto rows = eval::export_embeddings(ck);
      auto out = detail::open_out(embed_out);
      eval::write_embeddings(rows, ck.state.rank, out);
      std::cout << "wrote " << rows.size() << " embeddings to " << embed_out << '\n';
    } else if (project_cmd->parsed()) {
      auto ck = checkpoint::load_checkpoint(project_ck);
      auto table = ck.state.embedding_table();
      std::vector<Eigen::MatrixXd> coords;
      for (int k = 0; k < ck.state.num_modes; ++k) {
        try {
          coords.push_back(
              eval::kpca_project(table.log_weights[k], project_dim, project_len,
                                 project_var));
        } catch (const Error& e) {
          throw Error("cli: mode " + std::to_string(k) + ": " + e.what());
        }
      }
      auto out = detail::open_out(project_out);
      eval::write_projection(ck, coords, out);
      std::cout << "wrote projections to " << project_out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace nesh::cli
