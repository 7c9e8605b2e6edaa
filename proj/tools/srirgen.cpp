// Command-line entry point: simulate, build-dataset, train-encoder,
// train-generator, infer, evaluate, report.

#include <cblas.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "srirgen/pipeline/stages.hpp"

namespace fs = std::filesystem;
using namespace srirgen;
using json = nlohmann::json;
using room::Vec3;

namespace {

struct Global {
  std::uint64_t seed = 0;
  std::string scale = "desk";
  std::string echo;  // config echo path; derived from --out when empty
};

Vec3 parse_vec(const std::string& text, const std::string& flag) {
  const auto parts = dataset::split_on(text, ',');
  double v[3];
  std::size_t used = 0;
  bool ok = parts.size() == 3;
  for (std::size_t i = 0; ok && i < 3; ++i) {
    try {
      v[i] = std::stod(parts[i], &used);
      ok = used == parts[i].size() && std::isfinite(v[i]);
    } catch (const std::exception&) {
      ok = false;
    }
  }
  if (!ok) throw CLI::ValidationError(flag, "expected x,y,z, got '" + text + "'");
  return {v[0], v[1], v[2]};
}

fs::path echo_path(const Global& g, const fs::path& out, bool out_is_dir) {
  if (!g.echo.empty()) return g.echo;
  return out_is_dir ? out / "config.json" : fs::path(out.string() + ".config.json");
}

void write_echo(const Global& g, const std::string& command, json cfg, const fs::path& out, bool out_is_dir) {
  cfg["command"] = command;
  cfg["seed"] = g.seed;
  cfg["scale"] = g.scale;
  const fs::path p = echo_path(g, out, out_is_dir);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  io::write_file_atomic(p, cfg.dump(2) + "\n");
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

// ---- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::string room, dims, source, receiver, out;
  double rt60 = 0.5, fs = 8000, duration = 0.25;
  int max_order = 12;
  bool no_tail = false;
};

int run_simulate(const Global& g, const SimulateArgs& a) {
  room::RoomSpec r;
  if (!a.room.empty()) {
    r = room::room_from_json(json::parse(io::read_file(a.room)));
  } else {
    if (a.dims.empty()) throw CLI::ValidationError("simulate", "one of --room or --dims is required");
    r = room::shoebox(parse_vec(a.dims, "--dims"));
    const auto alpha = room::sabine_absorption(dataset::synthetic_profile(a.rt60, 0).t60, r);
    if (!alpha) throw std::invalid_argument("no absorption in (0, 1] reaches rt60 " + dataset::fmt_number(a.rt60));
    room::set_uniform_absorption(r, *alpha);
  }
  const Vec3 s = parse_vec(a.source, "--source"), rc = parse_vec(a.receiver, "--receiver");
  room::SimConfig sc;
  sc.fs = a.fs;
  sc.duration = a.duration;
  sc.max_order = a.max_order;
  sc.tail = !a.no_tail;
  sc.seed = Rng::derive(g.seed, "simulate").next();
  const auto srir = room::simulate_srir(r, s, room::array_geometry(rc), sc);
  ensure_parent(a.out);
  room::write_srir(a.out, srir, {{"seed", g.seed}});
  write_echo(g, "simulate",
             {{"room", a.room}, {"dims", a.dims}, {"rt60", a.rt60}, {"source", room::vec_json(s)},
              {"receiver", room::vec_json(rc)}, {"fs", a.fs}, {"duration", a.duration}, {"max_order", a.max_order},
              {"tail", sc.tail}, {"out", a.out}},
             a.out, false);
  return 0;
}

// ---- build-dataset ----------------------------------------------------------

struct DatasetArgs {
  std::string out, corpus, profiles;
  std::optional<std::size_t> train, val, eval;
  std::optional<double> scene_seconds;
  std::optional<int> max_order;
};

int run_build_dataset(const Global& g, const DatasetArgs& a) {
  auto cfg = pipeline::presets(pipeline::parse_scale(g.scale)).dataset;
  cfg.seed = g.seed;
  if (a.train) cfg.train_rooms = *a.train;
  if (a.val) cfg.val_rooms = *a.val;
  if (a.eval) cfg.eval_rooms = *a.eval;
  if (a.scene_seconds) cfg.scene.scene_seconds = *a.scene_seconds;
  if (a.max_order) cfg.scene.max_order = *a.max_order;
  cfg.corpus_dir = a.corpus;
  cfg.profile_file = a.profiles;
  fs::create_directories(a.out);
  const auto m = dataset::build_dataset(a.out, cfg, log_line);
  write_echo(g, "build-dataset", dataset::to_json(cfg), a.out, true);
  std::cout << m.rows.size() << " rooms, " << m.lines.size() << " evaluation SRIRs -> " << a.out << '\n';
  return 0;
}

// ---- train-encoder ----------------------------------------------------------

struct EncoderArgs {
  std::string dataset, out;
  std::optional<int> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
};

int run_train_encoder(const Global& g, const EncoderArgs& a) {
  const auto pre = pipeline::presets(pipeline::parse_scale(g.scale));
  auto cfg = pre.encoder;
  auto sc = pre.features;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch) cfg.batch_size = *a.batch;
  if (a.lr) cfg.lr.initial = *a.lr;
  const auto m = dataset::read_manifest(a.dataset);
  const auto meta = json::parse(io::read_file(fs::path(a.dataset) / "dataset.json"));
  sc.sample_rate = meta.at("sample_rate").get<double>();
  sc.seconds = meta.at("scene_seconds").get<double>();
  const auto train_set = pipeline::load_scenes(m, "train", sc);
  const auto stats = pipeline::scene_stats(train_set, pipeline::digest(meta));
  const auto train = pipeline::scene_pairs(train_set, stats);
  const auto val = pipeline::scene_pairs(pipeline::load_scenes(m, "val", sc), stats);
  cfg.batch_size = std::min(cfg.batch_size, train.size());
  const auto seed = Rng::derive(g.seed, "train-encoder").next();
  auto trained = encoder::train_encoder(train, val, cfg, seed, [](const encoder::EpochLog& r) {
    std::fprintf(stderr, "epoch %d train %.5f val %.5f\n", r.epoch, r.train_loss, r.val_loss);
  });
  ensure_parent(a.out);
  encoder::save_encoder(a.out, *trained.model, stats, sc, {{"best_epoch", trained.best_epoch}, {"seed", g.seed}});
  io::write_file_atomic(a.out + ".log.csv", encoder::training_log_csv(trained.log));
  write_echo(g, "train-encoder", {{"dataset", a.dataset}, {"encoder", encoder::to_json(cfg)}, {"out", a.out}},
             a.out, false);
  return 0;
}

// ---- train-generator --------------------------------------------------------

struct GeneratorArgs {
  std::string dataset, encoder, out, variant = "proposed";
  std::optional<int> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> lr, lr_factor;
  std::optional<int> lr_every;
};

int run_train_generator(const Global& g, const GeneratorArgs& a) {
  auto cfg = pipeline::presets(pipeline::parse_scale(g.scale)).diffusion;
  cfg.variant = diffusion::parse_variant(a.variant);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch) cfg.batch_size = *a.batch;
  if (a.lr) cfg.lr.initial = *a.lr;
  if (a.lr_factor) cfg.lr.factor = *a.lr_factor;
  if (a.lr_every) cfg.lr.every_n_epochs = *a.lr_every;
  const auto m = dataset::read_manifest(a.dataset);
  const auto meta = json::parse(io::read_file(fs::path(a.dataset) / "dataset.json"));
  cfg.sample_rate = meta.at("sample_rate").get<double>();
  cfg.length = static_cast<std::size_t>(std::llround(meta.at("srir_seconds").get<double>() * cfg.sample_rate));
  auto enc = encoder::load_encoder(a.encoder);
  cfg.h_dim = enc.model->config().h_dim();
  const auto train = pipeline::generator_items(m, "train", enc, cfg);
  const auto val = pipeline::generator_items(m, "val", enc, cfg);
  const auto seed = Rng::derive(g.seed, "train-generator").next();
  auto trained = diffusion::train_generator(train, val, cfg, seed, [](const diffusion::GeneratorEpochLog& r) {
    std::fprintf(stderr, "epoch %d train %.5f val %.5f\n", r.epoch, r.train_loss, r.val_loss);
  });
  ensure_parent(a.out);
  diffusion::save_generator(a.out, *trained.model,
                            {{"best_epoch", trained.best_epoch}, {"seed", g.seed}, {"encoder", a.encoder}});
  io::write_file_atomic(a.out + ".log.csv", diffusion::generator_log_csv(trained.log));
  write_echo(g, "train-generator",
             {{"dataset", a.dataset}, {"encoder", a.encoder}, {"diffusion", diffusion::to_json(trained.model->config())},
              {"out", a.out}},
             a.out, false);
  return 0;
}

// ---- infer ------------------------------------------------------------------

struct InferArgs {
  std::string scene, model, encoder, source, receiver, out, dataset, split = "eval";
  std::optional<double> churn;
};

void write_generated(const fs::path& path, const room::Srir& s, const std::vector<float>& h,
                     const std::array<double, 3>& v, const diffusion::DiffusionConfig& cfg, std::uint64_t seed,
                     const std::string& stream) {
  ensure_parent(path);
  room::write_srir(path, s,
                   {{"h_hash", pipeline::digest(h)},
                    {"v", v},
                    {"variant", diffusion::variant_name(cfg.variant)},
                    {"seed", seed},
                    {"stream", stream},
                    {"config_digest", pipeline::digest(diffusion::to_json(cfg))}});
}

int run_infer(const Global& g, const InferArgs& a) {
  auto gen = diffusion::load_generator(a.model);
  auto enc = encoder::load_encoder(a.encoder);
  const auto& cfg = gen.model->config();
  if (enc.model->config().h_dim() != cfg.h_dim) {
    throw std::invalid_argument("encoder h has " + std::to_string(enc.model->config().h_dim()) +
                                " values, generator expects " + std::to_string(cfg.h_dim));
  }
  const double churn = a.churn.value_or(cfg.s_churn);
  json echo = {{"model", a.model}, {"encoder", a.encoder}, {"s_churn", churn}, {"out", a.out}};
  if (!a.dataset.empty()) {
    // Every evaluation-line position of the split, conditioned on the room's first scene.
    const auto m = dataset::read_manifest(a.dataset);
    std::map<std::string, const dataset::ManifestRow*> rows;
    for (const auto* r : m.split(a.split)) rows[r->room_id] = r;
    std::size_t n = 0;
    for (const auto& line : m.lines) {
      const auto it = rows.find(line.room_id);
      if (it == rows.end()) continue;
      const auto h = pipeline::embed_scene_file(enc, m.root / it->second->scenes[0].file);
      const auto v = diffusion::conditioning_vector(line.source, line.receiver);
      const std::string stream = "infer/" + line.srir_file;
      Rng rng = Rng::derive(g.seed, stream);
      const auto y = diffusion::sample_srir(*gen.model, h, v, 1, churn, rng);
      const fs::path rel = fs::path(line.srir_file).lexically_relative("eval");
      write_generated(fs::path(a.out) / rel, pipeline::generated_srir(y, 0, cfg, line.source, line.receiver), h, v,
                      cfg, g.seed, stream);
      ++n;
    }
    if (n == 0) throw std::invalid_argument("no evaluation lines in split '" + a.split + "'");
    echo["dataset"] = a.dataset;
    echo["split"] = a.split;
    write_echo(g, "infer", echo, a.out, true);
    std::cout << n << " SRIRs -> " << a.out << '\n';
    return 0;
  }
  if (a.scene.empty() || a.source.empty() || a.receiver.empty()) {
    throw CLI::ValidationError("infer", "--scene, --source and --receiver are required without --dataset");
  }
  const Vec3 s = parse_vec(a.source, "--source"), r = parse_vec(a.receiver, "--receiver");
  const auto h = pipeline::embed_scene_file(enc, a.scene);
  const auto v = diffusion::conditioning_vector(s, r);
  Rng rng = Rng::derive(g.seed, "infer");
  const auto y = diffusion::sample_srir(*gen.model, h, v, 1, churn, rng);
  write_generated(a.out, pipeline::generated_srir(y, 0, cfg, s, r), h, v, cfg, g.seed, "infer");
  echo["scene"] = a.scene;
  echo["source"] = room::vec_json(s);
  echo["receiver"] = room::vec_json(r);
  write_echo(g, "infer", echo, a.out, false);
  return 0;
}

// ---- evaluate / report --------------------------------------------------------

struct EvalArgs {
  std::string pred, truth, out;
};

int run_evaluate(const Global& g, const EvalArgs& a) {
  const auto rows = pipeline::analyze_dirs(a.pred, a.truth);
  const auto agg = analysis::metrics_report(rows.pred, rows.truth);
  ensure_parent(a.out);
  io::write_file_atomic(a.out, analysis::aggregate_csv(agg));
  const std::string stem = fs::path(a.out).replace_extension().string();
  io::write_file_atomic(stem + ".pred_rows.csv", analysis::rows_csv(rows.pred));
  io::write_file_atomic(stem + ".truth_rows.csv", analysis::rows_csv(rows.truth));
  write_echo(g, "evaluate", {{"pred", a.pred}, {"truth", a.truth}, {"out", a.out}}, a.out, false);
  return 0;
}

int run_report(const Global& g, const EvalArgs& a) {
  const auto rows = pipeline::analyze_dirs(a.pred, a.truth);
  std::vector<Vec3> receivers;
  for (const auto& n : rows.names) receivers.push_back(room::read_srir(fs::path(a.truth) / (n + ".wav")).receiver);
  const fs::path out(a.out);
  fs::create_directories(out);
  io::write_file_atomic(out / "rt_scatter.txt", pipeline::rt_scatter(rows));
  io::write_file_atomic(out / "drr_vs_position.txt", pipeline::drr_curves(rows));
  io::write_file_atomic(out / "doa_arrows.txt", pipeline::doa_arrows(rows, receivers));
  write_echo(g, "report", {{"pred", a.pred}, {"truth", a.truth}, {"out", a.out}}, out, true);
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  openblas_set_num_threads(1);  // keeps float reductions in a fixed order
  CLI::App app{"Spatial room impulse response generation from reverberant scenes"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--seed", g.seed, "Root seed; every stage derives named sub-streams from it");
  app.add_option("--scale", g.scale, "Preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--echo", g.echo, "Config echo path (default: next to --out)");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Simulate one SRIR");
  auto* room_opt = c_sim->add_option("--room", sim.room, "Room JSON")->check(CLI::ExistingFile);
  c_sim->add_option("--dims", sim.dims, "Shoebox dimensions x,y,z (instead of --room)")->excludes(room_opt);
  c_sim->add_option("--rt60", sim.rt60, "Shoebox target RT in seconds, flat across bands");
  c_sim->add_option("--source", sim.source, "Source position x,y,z")->required();
  c_sim->add_option("--receiver", sim.receiver, "Array center x,y,z")->required();
  c_sim->add_option("--out", sim.out, "Output WAV")->required();
  c_sim->add_option("--fs", sim.fs, "Sample rate");
  c_sim->add_option("--duration", sim.duration, "Seconds");
  c_sim->add_option("--max-order", sim.max_order, "Image source order");
  c_sim->add_flag("--no-tail", sim.no_tail, "Image sources only");

  DatasetArgs ds;
  auto* c_ds = app.add_subcommand("build-dataset", "Render rooms, scene pairs and evaluation lines");
  c_ds->add_option("--out", ds.out, "Dataset directory")->required();
  c_ds->add_option("--train-rooms", ds.train);
  c_ds->add_option("--val-rooms", ds.val);
  c_ds->add_option("--eval-rooms", ds.eval);
  c_ds->add_option("--scene-seconds", ds.scene_seconds);
  c_ds->add_option("--max-order", ds.max_order);
  c_ds->add_option("--corpus", ds.corpus, "Directory of mono WAVs (default: synthetic)")->check(CLI::ExistingDirectory);
  c_ds->add_option("--profiles", ds.profiles, "RT profile CSV (default: synthetic)")->check(CLI::ExistingFile);

  EncoderArgs ea;
  auto* c_enc = app.add_subcommand("train-encoder", "Contrastive training of the room encoder");
  c_enc->add_option("--dataset", ea.dataset)->required()->check(CLI::ExistingDirectory);
  c_enc->add_option("--out", ea.out, "Checkpoint path")->required();
  c_enc->add_option("--epochs", ea.epochs);
  c_enc->add_option("--batch-size", ea.batch);
  c_enc->add_option("--lr", ea.lr);

  GeneratorArgs ga;
  auto* c_gen = app.add_subcommand("train-generator", "Train the conditional SRIR diffusion model");
  c_gen->add_option("--dataset", ga.dataset)->required()->check(CLI::ExistingDirectory);
  c_gen->add_option("--encoder", ga.encoder, "Frozen encoder checkpoint")->required()->check(CLI::ExistingFile);
  c_gen->add_option("--out", ga.out, "Checkpoint path")->required();
  c_gen->add_option("--variant", ga.variant)->check(CLI::IsMember({"proposed", "concat-all", "with-toa"}));
  c_gen->add_option("--epochs", ga.epochs);
  c_gen->add_option("--batch-size", ga.batch);
  c_gen->add_option("--lr", ga.lr);
  c_gen->add_option("--lr-factor", ga.lr_factor);
  c_gen->add_option("--lr-every", ga.lr_every);

  InferArgs ia;
  auto* c_inf = app.add_subcommand("infer", "Generate SRIRs from a scene and positions");
  c_inf->add_option("--model", ia.model, "Generator checkpoint")->required()->check(CLI::ExistingFile);
  c_inf->add_option("--encoder", ia.encoder, "Frozen encoder checkpoint")->required()->check(CLI::ExistingFile);
  c_inf->add_option("--scene", ia.scene, "Reverberant 4-channel scene WAV")->check(CLI::ExistingFile);
  c_inf->add_option("--source", ia.source, "Source position x,y,z");
  c_inf->add_option("--receiver", ia.receiver, "Array center x,y,z");
  c_inf->add_option("--dataset", ia.dataset, "Generate every evaluation-line SRIR of a dataset instead")
      ->check(CLI::ExistingDirectory);
  c_inf->add_option("--split", ia.split, "Manifest split with --dataset (default: eval)");
  c_inf->add_option("--churn", ia.churn, "Sampler churn (default: model config)");
  c_inf->add_option("--out", ia.out, "Output WAV, or directory with --dataset")->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Acoustic metrics of predictions against ground truth");
  c_eval->add_option("--pred", ev.pred)->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--truth", ev.truth)->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--out", ev.out, "Aggregate CSV")->required();

  EvalArgs rp;
  auto* c_rep = app.add_subcommand("report", "Plot-data files for RT, DRR and DoA");
  c_rep->add_option("--pred", rp.pred)->required()->check(CLI::ExistingDirectory);
  c_rep->add_option("--truth", rp.truth)->required()->check(CLI::ExistingDirectory);
  c_rep->add_option("--out", rp.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "srirgen: usage-error: " << one_line(e.what()) << '\n' << app.help();
    return 2;
  }
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "simulate") return run_simulate(g, sim);
    if (name == "build-dataset") return run_build_dataset(g, ds);
    if (name == "train-encoder") return run_train_encoder(g, ea);
    if (name == "train-generator") return run_train_generator(g, ga);
    if (name == "infer") return run_infer(g, ia);
    if (name == "evaluate") return run_evaluate(g, ev);
    return run_report(g, rp);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "srirgen: usage-error: " << name << ": " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "srirgen: error: " << name << ": " << one_line(e.what()) << '\n';
    return 1;
  }
}
